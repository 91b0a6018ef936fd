import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from otstereo.errors import FormatError, ValidationError
from otstereo.imageio import (StereoPair, as_plane, read_image, read_pfm, read_pgm,
                              write_pfm, write_pgm, write_png_visualization)


def _raw_pfm(path, tag, w, h, scale, payload):
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n{scale}\n".encode() + payload)


def test_bottom_up_payload_is_flipped(tmp_path):
    p = tmp_path / "a.pfm"
    _raw_pfm(p, b"Pf", 2, 2, -1.0, np.array([1, 2, 3, 4], "<f4").tobytes())
    np.testing.assert_array_equal(read_pfm(p), [[3, 4], [1, 2]])


def test_single_zero_pixel(tmp_path):
    p = tmp_path / "a.pfm"
    _raw_pfm(p, b"Pf", 1, 1, -1.0, np.zeros(1, "<f4").tobytes())
    np.testing.assert_array_equal(read_pfm(p), [[0.0]])


def test_big_endian_scale(tmp_path):
    p = tmp_path / "a.pfm"
    _raw_pfm(p, b"Pf", 2, 1, 1.0, np.array([1.5, -2.0], ">f4").tobytes())
    np.testing.assert_array_equal(read_pfm(p), [[1.5, -2.0]])


def test_round_trip_is_bitwise(tmp_path, rng):
    for k in range(64):
        h, w = rng.integers(1, 20, 2)
        shape = (h, w) if k % 2 else (h, w, 3)
        plane = rng.standard_normal(shape).astype(np.float32)
        p = tmp_path / f"{k}.pfm"
        write_pfm(plane, p)
        back = read_pfm(p)
        assert back.dtype == np.float32 and back.shape == plane.shape
        assert back.tobytes() == plane.tobytes()


def test_write_example_and_color_tag(tmp_path):
    p = tmp_path / "a.pfm"
    write_pfm(np.array([[3, 4], [1, 2]], np.float32), p)
    np.testing.assert_array_equal(read_pfm(p), [[3, 4], [1, 2]])
    q = tmp_path / "c.pfm"
    write_pfm(np.zeros((2, 3, 3), np.float32), q)
    assert q.read_bytes().startswith(b"PF\n")
    assert p.read_bytes().startswith(b"Pf\n")


def test_byte_length(tmp_path, rng):
    plane = rng.standard_normal((25, 40)).astype(np.float32)
    p = tmp_path / "a.pfm"
    write_pfm(plane, p)
    header = b"Pf\n40 25\n-1.0\n"
    assert p.read_bytes()[: len(header)] == header
    assert os.path.getsize(p) == len(header) + 4 * 1000


def test_malformed_header(tmp_path):
    p = tmp_path / "a.pfm"
    _raw_pfm(p, b"P7", 1, 1, -1.0, b"\0" * 4)
    with pytest.raises(FormatError):
        read_pfm(p)
    _raw_pfm(p, b"Pf", 1, 1, 0.0, b"\0" * 4)
    with pytest.raises(FormatError):
        read_pfm(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "a.pfm"
    _raw_pfm(p, b"Pf", 4, 4, -1.0, b"\0" * 20)
    with pytest.raises(OSError):
        read_pfm(p)


def test_nan_payload(tmp_path):
    p = tmp_path / "a.pfm"
    _raw_pfm(p, b"Pf", 2, 1, -1.0, np.array([1.0, np.nan], "<f4").tobytes())
    with pytest.raises(ValidationError):
        read_pfm(p)


finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


@settings(max_examples=120)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=12),
                  elements=finite32))
def test_round_trip_property(tmp_path_factory, plane):
    p = tmp_path_factory.mktemp("rt") / "p.pfm"
    write_pfm(plane, p)
    back = read_pfm(p)
    assert back.tobytes() == plane.tobytes()


@settings(max_examples=150)
@given(st.binary(max_size=64))
def test_fuzzed_files_rejected_cleanly(tmp_path_factory, blob):
    d = tmp_path_factory.mktemp("fz")
    for name, prefix in (("f.pfm", b"Pf\n"), ("g.pfm", b""), ("h.pgm", b"P5\n")):
        p = d / name
        p.write_bytes(prefix + blob)
        reader = read_pgm if name.endswith("pgm") else read_pfm
        try:
            out = reader(p)
        except (FormatError, ValidationError, OSError):
            continue
        assert out.size == np.prod(out.shape)
        assert np.all(np.isfinite(out))


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (7, 9)) / 255.0
    p = tmp_path / "a.pgm"
    write_pgm(img, p)
    np.testing.assert_allclose(read_pgm(p), img, atol=1e-6)
    write_pgm(img, p, bits=16)
    np.testing.assert_allclose(read_image(p), img, atol=1e-6)


def test_pgm_with_comment(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n# note\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(read_pgm(p), [[0.0, 1.0]])


def test_read_image_collapses_color_pfm(tmp_path):
    p = tmp_path / "c.pfm"
    write_pfm(np.stack([np.zeros((2, 2)), np.ones((2, 2)), 2 * np.ones((2, 2))], -1), p)
    np.testing.assert_allclose(read_image(p), np.ones((2, 2)))


@pytest.mark.parametrize("value,expected", [(0.0, 0), (1.0, 255)])
def test_png_extremes(tmp_path, value, expected):
    p = tmp_path / "a.png"
    write_png_visualization(np.full((4, 5), value), p, "gray", 0.0, 1.0)
    img = np.asarray(Image.open(p))
    assert img.dtype == np.uint8 and np.all(img == expected)


def test_png_midpoint_and_clamp(tmp_path):
    p = tmp_path / "a.png"
    write_png_visualization(np.full((3, 3), 3.0), p, "gray", 2.0, 4.0)
    assert np.all(np.abs(np.asarray(Image.open(p)).astype(int) - 128) <= 1)
    write_png_visualization(np.full((3, 3), 9.0), p, "gray", 2.0, 4.0)
    assert np.all(np.asarray(Image.open(p)) == 255)


def test_png_turbo_is_rgb(tmp_path):
    p = tmp_path / "a.png"
    write_png_visualization(np.linspace(0, 1, 16).reshape(4, 4), p, "turbo", 0.0, 1.0)
    assert np.asarray(Image.open(p)).shape == (4, 4, 3)


def test_png_bad_range(tmp_path):
    with pytest.raises(ValueError):
        write_png_visualization(np.zeros((2, 2)), tmp_path / "a.png", "gray", 1.0, 1.0)


def test_stereo_pair_checks():
    a = np.zeros((4, 4))
    with pytest.raises(ValidationError):
        StereoPair(a, np.zeros((4, 5)))
    with pytest.raises(ValidationError):
        StereoPair(a, a, gt_occlusion=np.full((4, 4), 0.5))
    with pytest.raises(ValidationError):
        StereoPair(a, a, gt_disparity=-np.ones((4, 4)), gt_occlusion=np.ones((4, 4)))
    # negative values are allowed where the pixel is occluded
    StereoPair(a, a, gt_disparity=-np.ones((4, 4)), gt_occlusion=np.zeros((4, 4)))


def test_as_plane_rejects_bad_input():
    with pytest.raises(ValidationError):
        as_plane(np.zeros((2, 2, 2)))
    with pytest.raises(ValidationError):
        as_plane([[np.inf]])
    assert as_plane(np.zeros((2, 2, 1))).shape == (2, 2)
