import io

import numpy as np
import pytest

from sensopt.errors import BadMagicError, ShapeError, TruncatedFileError, VersionMismatchError
from sensopt.imageio import (
    encode_image_bytes,
    load_tensor,
    read_image,
    read_tens1,
    save_tensor,
    write_image,
    write_tens1,
)


class TestTens1:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        arr = rng.normal(size=(3, 4, 5)).astype(np.float32)
        path = tmp_path / "t.tens"
        save_tensor(path, arr)
        back = load_tensor(path)
        assert back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_scalar_rank_zero(self, tmp_path):
        path = tmp_path / "s.tens"
        save_tensor(path, np.float32(2.5))
        assert load_tensor(path) == np.float32(2.5)

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            read_tens1(io.BytesIO(b"XXXX" + b"\x01\x00"))

    def test_version_mismatch(self):
        buf = io.BytesIO()
        write_tens1(buf, np.zeros(2, dtype=np.float32))
        raw = bytearray(buf.getvalue())
        raw[4] = 9
        with pytest.raises(VersionMismatchError):
            read_tens1(io.BytesIO(bytes(raw)))

    def test_truncation(self):
        buf = io.BytesIO()
        write_tens1(buf, np.arange(8, dtype=np.float32))
        with pytest.raises(TruncatedFileError):
            read_tens1(io.BytesIO(buf.getvalue()[:-5]))

    def test_header_layout(self):
        buf = io.BytesIO()
        write_tens1(buf, np.zeros((2, 3), dtype=np.float32))
        raw = buf.getvalue()
        assert raw[:4] == b"TENS"
        assert raw[4] == 1  # version
        assert raw[5] == 2  # rank
        assert raw[6:14] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert len(raw) == 14 + 4 * 6


class TestImages:
    def test_pgm_round_trip_lossless(self, rng, tmp_path):
        img = (rng.integers(0, 256, size=(1, 6, 5)).astype(np.float32)) / 255.0
        path = tmp_path / "g.pgm"
        write_image(path, img)
        first = path.read_bytes()
        again = tmp_path / "g2.pgm"
        write_image(again, read_image(path))
        assert again.read_bytes() == first

    def test_ppm_round_trip_lossless(self, rng, tmp_path):
        img = (rng.integers(0, 256, size=(3, 4, 7)).astype(np.float32)) / 255.0
        path = tmp_path / "c.ppm"
        write_image(path, img)
        write_image(tmp_path / "c2.ppm", read_image(path))
        assert (tmp_path / "c2.ppm").read_bytes() == path.read_bytes()

    def test_byte_255_reads_as_one(self, tmp_path):
        img = np.ones((1, 2, 2), dtype=np.float32)
        path = tmp_path / "w.pgm"
        write_image(path, img)
        assert path.read_bytes().endswith(b"\xff" * 4)
        assert np.all(read_image(path) == 1.0)

    def test_header_format(self, tmp_path):
        write_image(tmp_path / "h.ppm", np.zeros((3, 2, 5), dtype=np.float32))
        head = (tmp_path / "h.ppm").read_bytes()[:12]
        assert head.startswith(b"P6\n5 2\n255\n")

    def test_comment_lines_in_header(self, tmp_path):
        payload = b"P5\n# a comment\n2 2\n255\n" + bytes(4)
        (tmp_path / "c.pgm").write_bytes(payload)
        img = read_image(tmp_path / "c.pgm")
        assert img.shape == (1, 2, 2)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P3\n1 1\n255\n0")
        with pytest.raises(BadMagicError):
            read_image(tmp_path / "x.pgm")

    def test_truncated_payload(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(TruncatedFileError):
            read_image(tmp_path / "t.pgm")

    def test_two_channel_rejected(self):
        with pytest.raises(ShapeError):
            encode_image_bytes(np.zeros((2, 3, 3), dtype=np.float32))
