import numpy as np
import pytest

from sensopt.errors import BadMagicError, ShapeError, TruncatedFileError, VersionMismatchError
from sensopt.nets import (
    Conv,
    Dense,
    Flatten,
    MaxPool2,
    ReLU,
    build_net,
    default_layers,
    forward,
    infer_shapes,
    load_checkpoint,
    save_checkpoint,
)

from conftest import TINY_CLASSES, TINY_LAYERS, TINY_SHAPE, random_image


class TestBuildNet:
    def test_same_seed_byte_identical(self):
        a = build_net(TINY_LAYERS, TINY_SHAPE, TINY_CLASSES, seed=3)
        b = build_net(TINY_LAYERS, TINY_SHAPE, TINY_CLASSES, seed=3)
        for ga, gb in zip(a.params, b.params):
            for pa, pb in zip(ga, gb):
                assert pa.data.tobytes() == pb.data.tobytes()

    def test_default_architecture_shape_contract(self, rng):
        net = build_net(default_layers(8), (3, 32, 32), [f"c{i}" for i in range(8)], seed=0)
        rec = forward(net, rng.uniform(0.1, 0.9, (1, 3, 32, 32)).astype(np.float32))
        assert rec.logits.shape == (1, 8)

    def test_parameter_std_tracks_fan_in(self):
        """Weight std within 20% of sqrt(2/fan_in) per layer, pooled over 10 seeds."""
        fan_ins = {0: 1 * 9, 3: 4 * 9, 6: 6 * 6 * 6}
        samples = {i: [] for i in fan_ins}
        for seed in range(10):
            net = build_net(TINY_LAYERS, TINY_SHAPE, TINY_CLASSES, seed=seed)
            for i in fan_ins:
                samples[i].append(net.params[i][0].data.ravel())
        for i, fan_in in fan_ins.items():
            std = np.concatenate(samples[i]).std()
            want = np.sqrt(2.0 / fan_in)
            assert abs(std - want) / want < 0.2

    def test_biases_zero(self):
        net = build_net(TINY_LAYERS, TINY_SHAPE, TINY_CLASSES, seed=1)
        for group in net.params:
            if group:
                assert np.all(group[1].data == 0.0)

    def test_class_count_mismatch(self):
        with pytest.raises(ShapeError, match="class count"):
            build_net(TINY_LAYERS, TINY_SHAPE, ["a", "b"], seed=0)

    def test_invalid_composition_names_first_bad_layer(self):
        with pytest.raises(ShapeError, match=r"layer 1 \(Dense\)"):
            infer_shapes([Conv(4, 3, 1, 1), Dense(3)], (1, 8, 8))
        with pytest.raises(ShapeError, match=r"layer 0 \(MaxPool2\)"):
            infer_shapes([MaxPool2(), Flatten(), Dense(2)], (1, 7, 8))
        with pytest.raises(ShapeError, match="end in Dense"):
            infer_shapes([Conv(4, 3, 1, 1), ReLU()], (1, 8, 8))

    def test_random_architectures_runtime_shapes_match_declared(self, rng):
        """20 random valid stacks: declared shapes equal runtime shapes."""
        for trial in range(20):
            layers = []
            c, h, w = 2, 16, 16
            n_conv = rng.integers(1, 4)
            for _ in range(n_conv):
                oc = int(rng.integers(2, 7))
                layers += [Conv(oc, 3, 1, 1), ReLU()]
                if h % 2 == 0 and rng.random() < 0.6:
                    layers.append(MaxPool2())
                    h //= 2
                    w //= 2
            k = int(rng.integers(2, 5))
            layers += [Flatten(), Dense(k)]
            net = build_net(layers, (2, 16, 16), [f"c{i}" for i in range(k)], seed=trial)
            x = rng.uniform(0.1, 0.9, (2, 2, 16, 16)).astype(np.float32)
            rec = forward(net, x)
            for i, shape in enumerate(net.layer_shapes):
                assert tuple(rec.activations[i].shape[1:]) == tuple(shape), f"layer {i}"


class TestForward:
    def test_repeat_call_identical(self, tiny_net, rng):
        x = random_image(rng)[None]
        a = forward(tiny_net, x)
        b = forward(tiny_net, x)
        for i in a.activations:
            assert a.activations[i].data.tobytes() == b.activations[i].data.tobytes()

    def test_zero_image_zero_biases_all_conv_activations_zero(self, tiny_net):
        rec = forward(tiny_net, np.zeros((1,) + TINY_SHAPE, dtype=np.float32))
        for i, spec in enumerate(tiny_net.layers):
            if isinstance(spec, Conv):
                assert np.all(rec.activations[i].data == 0.0)

    def test_probs_rows_sum_to_one(self, tiny_net, rng):
        x = rng.uniform(0, 1, (100,) + TINY_SHAPE).astype(np.float32)
        rec = forward(tiny_net, x)
        assert np.abs(rec.probs.data.sum(axis=1) - 1.0).max() <= 1e-6

    def test_record_has_entry_per_layer(self, tiny_net, rng):
        rec = forward(tiny_net, random_image(rng)[None])
        assert set(rec.activations) == set(range(len(tiny_net.layers)))

    def test_rejects_wrong_shape_and_range(self, tiny_net):
        with pytest.raises(ShapeError, match="input shape"):
            forward(tiny_net, np.zeros((1, 1, 10, 10), dtype=np.float32))
        with pytest.raises(ShapeError, match=r"\[0, 1\]"):
            forward(tiny_net, np.full((1,) + TINY_SHAPE, 1.5, dtype=np.float32))


class TestCheckpoint:
    def test_round_trip_forward_bit_exact(self, tiny_net, rng, tmp_path):
        path = tmp_path / "net.sopt"
        save_checkpoint(tiny_net, path)
        loaded = load_checkpoint(path)
        assert loaded.class_names == tiny_net.class_names
        x = random_image(rng)[None]
        a = forward(tiny_net, x).logits.data
        b = forward(loaded, x).logits.data
        assert a.tobytes() == b.tobytes()

    def test_round_trip_parameters_bit_exact(self, tiny_net, tmp_path):
        path = tmp_path / "net.sopt"
        save_checkpoint(tiny_net, path)
        loaded = load_checkpoint(path)
        for ga, gb in zip(tiny_net.params, loaded.params):
            for pa, pb in zip(ga, gb):
                assert pa.data.tobytes() == pb.data.tobytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.sopt"
        p.write_bytes(b"XXXX" + bytes(64))
        with pytest.raises(BadMagicError):
            load_checkpoint(p)

    def test_version_mismatch(self, tiny_net, tmp_path):
        p = tmp_path / "v.sopt"
        save_checkpoint(tiny_net, p)
        raw = bytearray(p.read_bytes())
        raw[4] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatchError):
            load_checkpoint(p)

    def test_truncation_no_partial_net(self, tiny_net, tmp_path):
        p = tmp_path / "t.sopt"
        save_checkpoint(tiny_net, p)
        p.write_bytes(p.read_bytes()[:-64])
        with pytest.raises(TruncatedFileError):
            load_checkpoint(p)

    def test_magic_is_sopt(self, tiny_net, tmp_path):
        p = tmp_path / "m.sopt"
        save_checkpoint(tiny_net, p)
        assert p.read_bytes()[:4] == b"SOPT"

    def test_unicode_class_names(self, tmp_path):
        net = build_net(TINY_LAYERS, TINY_SHAPE, ["círculo", "carré", "星"], seed=0)
        save_checkpoint(net, tmp_path / "u.sopt")
        assert load_checkpoint(tmp_path / "u.sopt").class_names == ["círculo", "carré", "星"]
