import numpy as np
import pytest

from dice.imageio import read_pgm, read_ppm, write_pgm, write_ppm


def test_ppm_round_trip(tmp_path):
    rgb = np.random.default_rng(1).random((12, 9, 3))
    p = tmp_path / "img.ppm"
    write_ppm(p, rgb)
    back = read_ppm(p)
    assert back.shape == (12, 9, 3)
    # one u8 quantization step of error at most
    assert np.max(np.abs(back - rgb)) <= 0.5 / 255 + 1e-12


def test_pgm_round_trip_exact(tmp_path):
    mask = np.random.default_rng(2).integers(0, 256, size=(7, 5), dtype=np.uint8)
    p = tmp_path / "m.pgm"
    write_pgm(p, mask)
    assert np.array_equal(read_pgm(p), mask)


def test_header_comments_and_whitespace(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n 3\t2 # trailing\n255\n" + bytes(range(6)))
    img = read_pgm(p)
    assert img.shape == (2, 3)
    assert img[1, 2] == 5


def test_ppm_values_scaled(tmp_path):
    img = np.zeros((1, 2, 3))
    img[0, 1] = 1.0
    p = tmp_path / "s.ppm"
    write_ppm(p, img)
    raw = p.read_bytes()
    assert raw.endswith(bytes([0, 0, 0, 255, 255, 255]))


def test_write_clips_out_of_range(tmp_path):
    img = np.array([[[-0.2, 0.5, 1.7]]])
    p = tmp_path / "clip.ppm"
    write_ppm(p, img)
    back = read_ppm(p)
    assert back[0, 0, 0] == 0.0
    assert back[0, 0, 2] == 1.0


def test_wrong_magic_raises(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P4\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ValueError):
        read_ppm(p)


def test_nonstandard_maxval_rejected(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(ValueError):
        read_pgm(p)


def test_truncated_pixels_rejected(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n2 2\n255\n\x00\x00\x00")
    with pytest.raises(ValueError):
        read_pgm(p)
