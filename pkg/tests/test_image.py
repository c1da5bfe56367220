import numpy as np
import pytest

from texturebank.errors import DegenerateImageError, EmptyLadderError, FormatError
from texturebank.image import (
    ImagePlane,
    read_pnm,
    rescale_image,
    scale_ladder,
    to_gray,
    write_pnm,
)

from reference import naive_rescale

rng = np.random.default_rng(7)


def random_image(h, w, c=1):
    return ImagePlane(rng.random((c, h, w), dtype=np.float32))


def test_rescale_identity_is_bit_identical():
    img = random_image(100, 100)
    out = rescale_image(img, 1.0)
    assert out.data is img.data or np.array_equal(out.data, img.data)


def test_rescale_exact_halving():
    img = random_image(100, 100)
    out = rescale_image(img, 0.5)
    assert (out.width, out.height) == (50, 50)


def test_rescale_constant_stays_constant():
    img = ImagePlane(np.full((1, 37, 23), 0.375, dtype=np.float32))
    for factor in (0.41, 0.5, 1.7, 2.3):
        out = rescale_image(img, factor)
        assert np.all(out.data == np.float32(0.375))


@pytest.mark.parametrize("factor", [0.33, 0.5, 1.5, 2.0])
def test_rescale_matches_naive_resampler(factor):
    img = random_image(13, 17, c=3)
    out = rescale_image(img, factor)
    ref = naive_rescale(img.data.astype(np.float64), out.height, out.width)
    assert np.max(np.abs(out.data - ref)) < 1e-6


def test_rescale_degenerate_output_errors():
    img = random_image(4, 4)
    with pytest.raises(DegenerateImageError):
        rescale_image(img, 0.01)
    with pytest.raises(ValueError):
        rescale_image(img, -1.0)


def test_scale_ladder_512_drops_top_scale():
    ladder = scale_ladder(512, 512)
    assert len(ladder) == 9
    assert ladder[0] == pytest.approx(2.0 ** -3)
    assert ladder[-1] == pytest.approx(2.0)


def test_scale_ladder_64_keeps_all_ten():
    ladder = scale_ladder(64, 64)
    assert len(ladder) == 10
    assert ladder[-1] == pytest.approx(2.0 ** 1.5)


def test_scale_ladder_single_point():
    assert scale_ladder(100, 100, s_min=0.0, s_max=0.0) == [1.0]


def test_scale_ladder_empty_errors():
    with pytest.raises(EmptyLadderError):
        scale_ladder(100000, 100000)


def test_gray_conversion_luma_weights():
    img = ImagePlane(np.stack([
        np.full((2, 2), 1.0, dtype=np.float32),
        np.zeros((2, 2), dtype=np.float32),
        np.zeros((2, 2), dtype=np.float32),
    ]))
    assert to_gray(img).data[0, 0, 0] == pytest.approx(0.299)


def test_pnm_round_trip_gray_and_color(tmp_path):
    img = random_image(9, 11)
    write_pnm(tmp_path / "g.pgm", img)
    back = read_pnm(tmp_path / "g.pgm")
    assert np.max(np.abs(back.data - img.data)) <= 0.5 / 255 + 1e-6

    color = random_image(6, 5, c=3)
    write_pnm(tmp_path / "c.ppm", color)
    back = read_pnm(tmp_path / "c.ppm")
    assert back.channels == 3
    assert np.max(np.abs(back.data - color.data)) <= 0.5 / 255 + 1e-6


def test_pnm_sixteen_bit(tmp_path):
    img = random_image(4, 4)
    write_pnm(tmp_path / "g16.pgm", img, maxval=65535)
    back = read_pnm(tmp_path / "g16.pgm")
    assert np.max(np.abs(back.data - img.data)) <= 0.5 / 65535 + 1e-7


def test_pnm_rejects_ascii_variant(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n2 2\n255\n0 1 2 3\n")
    with pytest.raises(FormatError):
        read_pnm(tmp_path / "a.pgm")
