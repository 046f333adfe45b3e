import csv
import math

import numpy as np
import pytest

from sensopt.data import (
    ALL_CLASSES,
    LabeledImage,
    ShapesSpec,
    TrainConfig,
    cross_net_agreement,
    evaluate,
    generate_shapes,
    images_array,
    load_manifest,
    manifest_class_names,
    save_manifest,
    train,
)
from sensopt.autodiff import Tensor
from sensopt.errors import (
    LabelError,
    ManifestError,
    MissingFileError,
    ShapeError,
    TrainingDivergedError,
)
from sensopt.nets import Conv, Dense, Flatten, MaxPool2, ReLU, build_net

SMALL_LAYERS = [Conv(8, 3, 1, 1), ReLU(), MaxPool2(),
                Conv(12, 3, 1, 1), ReLU(), MaxPool2(), Flatten(), Dense(3)]

SPEC3 = ShapesSpec(classes=("circle", "square", "stripes"), size=16, color_mode="gray")


def small_net(seed=0, classes=("circle", "square", "stripes")):
    return build_net(SMALL_LAYERS, (1, 16, 16), sorted(classes), seed=seed)


class TestGenerateShapes:
    def test_same_seed_byte_identical(self):
        a = generate_shapes(SPEC3, 4, seed=11)
        b = generate_shapes(SPEC3, 4, seed=11)
        assert len(a) == len(b) == 12
        for ia, ib in zip(a, b):
            assert ia.image.data.tobytes() == ib.image.data.tobytes()
            assert (ia.label, ia.id) == (ib.label, ib.id)

    def test_class_histogram_exactly_uniform(self):
        data = generate_shapes(ShapesSpec(size=24), 5, seed=0)
        counts = np.bincount([d.label for d in data], minlength=8)
        assert np.all(counts == 5)

    def test_full_size_circle_area_fraction(self):
        spec = ShapesSpec(classes=("circle", "square"), size=32, color_mode="gray",
                          position_jitter=0.0, scale_range=(1.0, 1.0),
                          rotation_jitter=0.0, noise_std=0.0, fg=(1.0,), bg=(0.0,))
        data = [d for d in generate_shapes(spec, 3, seed=2) if d.label == 0]  # circle sorts first
        for item in data:
            fraction = float((item.image.data > 0.5).mean())
            assert abs(fraction - math.pi / 4) / (math.pi / 4) < 0.10

    def test_all_classes_render_distinct_foreground(self):
        data = generate_shapes(ShapesSpec(size=32, noise_std=0.0), 2, seed=5)
        for item in data:
            img = item.image.data
            assert img.min() >= 0.0 and img.max() <= 1.0
            assert img.std() > 0.01  # something visible on every canvas

    def test_rgb_mode_has_three_channels(self):
        data = generate_shapes(ShapesSpec(classes=("circle", "cross"), size=16,
                                          color_mode="rgb"), 1, seed=0)
        assert data[0].image.shape == (3, 16, 16)

    def test_unknown_class_rejected(self):
        with pytest.raises(ShapeError, match="unknown shape classes"):
            ShapesSpec(classes=("circle", "blob"))

    def test_pixels_in_unit_range(self):
        data = generate_shapes(ShapesSpec(size=16, noise_std=0.3), 3, seed=9)
        arr = images_array(data)
        assert arr.min() >= 0.0 and arr.max() <= 1.0


class TestManifest:
    def test_round_trip_order_and_pixels(self, tmp_path):
        data = generate_shapes(SPEC3, 2, seed=1)
        save_manifest(tmp_path, data, SPEC3.class_names)
        loaded = load_manifest(tmp_path)
        assert len(loaded) == len(data)
        assert [d.label for d in loaded] == [d.label for d in data]
        # a second save of the loaded (already quantized) corpus is bit-identical
        save_manifest(tmp_path / "again", loaded, SPEC3.class_names)
        for item in loaded:
            a = (tmp_path / item.id).read_bytes()
            b = (tmp_path / "again" / item.id).read_bytes()
            assert a == b

    def test_two_row_manifest_in_order(self, tmp_path):
        data = generate_shapes(ShapesSpec(classes=("circle", "square"), size=16,
                                          color_mode="gray"), 1, seed=0)
        save_manifest(tmp_path, data, ["circle", "square"])
        loaded = load_manifest(tmp_path)
        assert len(loaded) == 2
        assert [d.label for d in loaded] == [0, 1]

    def test_missing_file_names_row(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("filename,label\nnope.pgm,circle\n")
        with pytest.raises(MissingFileError, match="row 1.*nope.pgm"):
            load_manifest(tmp_path)

    def test_malformed_header(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("file,class\n")
        with pytest.raises(ManifestError, match="malformed manifest header"):
            load_manifest(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError, match="no manifest.csv"):
            load_manifest(tmp_path / "nowhere")

    def test_label_outside_class_set(self, tmp_path):
        data = generate_shapes(SPEC3, 1, seed=1)
        save_manifest(tmp_path, data, SPEC3.class_names)
        with pytest.raises(LabelError, match="not in class set"):
            load_manifest(tmp_path, class_names=["circle", "square"])

    def test_class_names_sorted_unique(self, tmp_path):
        data = generate_shapes(SPEC3, 1, seed=1)
        save_manifest(tmp_path, data, SPEC3.class_names)
        assert manifest_class_names(tmp_path) == ["circle", "square", "stripes"]


class TestTrain:
    def test_single_batch_overfit(self):
        data = generate_shapes(SPEC3, 3, seed=4)[:8]
        net = small_net(seed=2)
        cfg = TrainConfig(epochs=200, batch_size=8, learning_rate=0.05,
                          momentum=0.9, seed=0, val_fraction=0.05)
        trained, _ = train(net, data, cfg)
        acc, confusion = evaluate(trained, data)
        assert acc == 1.0
        assert np.all(confusion == np.diag(confusion.diagonal()))

    def test_loss_decreases_from_untrained_level(self):
        data = generate_shapes(SPEC3, 40, seed=7)
        net = small_net(seed=1)
        import sensopt.autodiff as ad
        from sensopt.nets import forward
        rec = forward(net, images_array(data))
        initial_loss, _ = ad.softmax_cross_entropy(rec.logits, [d.label for d in data])
        cfg = TrainConfig(epochs=2, batch_size=16, seed=3)
        _, metrics = train(net, data, cfg)
        assert metrics[0]["train_loss"] < initial_loss.item()
        assert metrics[1]["train_loss"] < metrics[0]["train_loss"]

    def test_determinism_bit_for_bit(self):
        data = generate_shapes(SPEC3, 10, seed=5)
        cfg = TrainConfig(epochs=2, batch_size=8, seed=9)
        a, _ = train(small_net(seed=3), data, cfg)
        b, _ = train(small_net(seed=3), data, cfg)
        for ga, gb in zip(a.params, b.params):
            for pa, pb in zip(ga, gb):
                assert pa.data.tobytes() == pb.data.tobytes()

    def test_original_net_unchanged(self):
        data = generate_shapes(SPEC3, 5, seed=5)
        net = small_net(seed=3)
        before = [p.data.copy() for g in net.params for p in g]
        train(net, data, TrainConfig(epochs=1, batch_size=8, seed=0))
        after = [p.data for g in net.params for p in g]
        for x, y in zip(before, after):
            assert np.array_equal(x, y)

    def test_divergence_reports_epoch(self):
        data = generate_shapes(SPEC3, 10, seed=5)
        cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=1e12, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError) as err:
                train(small_net(seed=0), data, cfg)
        assert err.value.epoch == 0

    def test_empty_data_rejected(self):
        with pytest.raises(ShapeError, match="empty"):
            train(small_net(), [], TrainConfig())


class TestEvaluate:
    def test_constant_predictor_accuracy_is_class_share(self):
        data = generate_shapes(SPEC3, 6, seed=8)
        net = small_net(seed=0)
        dense_idx = len(net.layers) - 1
        w, b = net.params[dense_idx]
        bias = np.zeros_like(b.data)
        bias[0] = 100.0
        net.params[dense_idx] = [Tensor(np.zeros_like(w.data)), Tensor(bias)]
        acc, confusion = evaluate(net, data)
        share = np.mean([d.label == 0 for d in data])
        assert acc == pytest.approx(share)
        assert confusion[:, 0].sum() == len(data)

    def test_confusion_rows_sum_to_class_counts(self):
        data = generate_shapes(SPEC3, 4, seed=2)
        _, confusion = evaluate(small_net(seed=1), data)
        counts = np.bincount([d.label for d in data], minlength=3)
        assert np.array_equal(confusion.sum(axis=1), counts)

    def test_order_invariance(self):
        data = generate_shapes(SPEC3, 5, seed=3)
        net = small_net(seed=2)
        acc1, conf1 = evaluate(net, data)
        shuffled = [data[i] for i in np.random.default_rng(0).permutation(len(data))]
        acc2, conf2 = evaluate(net, shuffled)
        assert acc1 == acc2
        assert np.array_equal(conf1, conf2)

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            evaluate(small_net(), [])


class TestCrossNetAgreement:
    def test_identical_nets_agree_fully(self):
        data = generate_shapes(SPEC3, 4, seed=6)
        net = small_net(seed=5)
        rate, pairs = cross_net_agreement(net, net, data)
        assert rate == 1.0
        assert all(a == b for a, b in pairs)

    def test_constant_predictor_agreement(self):
        data = generate_shapes(SPEC3, 4, seed=6)
        net_a = small_net(seed=5)
        net_b = small_net(seed=5)
        dense_idx = len(net_b.layers) - 1
        w, b = net_b.params[dense_idx]
        bias = np.zeros_like(b.data)
        bias[0] = 100.0
        net_b.params[dense_idx] = [Tensor(np.zeros_like(w.data)), Tensor(bias)]
        rate, pairs = cross_net_agreement(net_a, net_b, data)
        share_zero = np.mean([a == 0 for a, _ in pairs])
        assert rate == pytest.approx(share_zero)

    def test_class_set_mismatch(self):
        net_a = small_net(classes=("circle", "square", "stripes"))
        net_b = build_net(SMALL_LAYERS, (1, 16, 16), ["x", "y", "z"], seed=0)
        with pytest.raises(LabelError, match="class sets differ"):
            cross_net_agreement(net_a, net_b, generate_shapes(SPEC3, 1, seed=0))
