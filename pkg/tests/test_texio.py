import numpy as np
import pytest
from PIL import Image

from tilenet.mrnet import StageConfig, init_mrnet
from tilenet.pinr import init_periodic, spatial_jacobian
from tilenet.texio import (
    ImageFormatError,
    ImageGrid,
    cell_centers,
    gradient_magnitude,
    load_png,
    mse,
    psnr,
    rgb_to_ycbcr,
    rgb_to_ycbcr_array,
    sample_grid,
    save_png,
    seam_score,
    ycbcr_to_rgb,
    ycbcr_to_rgb_array,
)
from tilenet.trainer import guidance_from_image


def tile_aligned(img, R):
    """2x2 tiling of an [-1, 1]^2 sample, rolled so its cell centers line up with [-2, 2]^2."""
    return np.roll(np.tile(img, (2, 2, 1)), (R // 2, R // 2), axis=(0, 1))


# -- grid -----------------------------------------------------------------------


def test_cell_centers():
    c = cell_centers((-1.0, -1.0, 1.0, 1.0), 2, 4)
    assert c[:, 0].tolist() == [-0.75, -0.25, 0.25, 0.75] * 2
    assert c[:, 1].tolist() == [-0.5] * 4 + [0.5] * 4


def test_grid_spacing_and_shape():
    g = ImageGrid(np.zeros((4, 8)), (0.0, 0.0, 2.0, 1.0))
    assert (g.H, g.W, g.C) == (4, 8, 1)
    assert g.spacing == (0.25, 0.25)


# -- PNG ------------------------------------------------------------------------


def test_png_round_trip_quantized(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.integers(0, 256, size=(5, 7, 3)) / 255.0
    save_png(ImageGrid(data), tmp_path / "a.png")
    back = load_png(tmp_path / "a.png")
    assert np.array_equal(back.data, data)


def test_png_gray_round_trip(tmp_path):
    data = np.arange(12).reshape(3, 4) / 255.0
    save_png(ImageGrid(data), tmp_path / "g.png")
    back = load_png(tmp_path / "g.png")
    assert back.C == 1 and np.array_equal(back.data[:, :, 0], data)


def test_png_black(tmp_path):
    save_png(ImageGrid(np.zeros((2, 2, 3))), tmp_path / "b.png")
    back = load_png(tmp_path / "b.png")
    assert back.data.shape == (2, 2, 3) and np.count_nonzero(back.data) == 0


def test_png_clamps_on_save(tmp_path):
    save_png(ImageGrid(np.array([[[-0.3, 0.5, 1.7]]])), tmp_path / "c.png")
    assert load_png(tmp_path / "c.png").data[0, 0].tolist() == [0.0, 128 / 255, 1.0]


def test_png_16bit_rejected(tmp_path):
    Image.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(ImageFormatError):
        load_png(tmp_path / "deep.png")


def test_png_rgba_rejected(tmp_path):
    Image.fromarray(np.zeros((4, 4, 4), dtype=np.uint8), mode="RGBA").save(tmp_path / "a.png")
    with pytest.raises(ImageFormatError):
        load_png(tmp_path / "a.png")


def test_non_png_rejected(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not an image at all")
    with pytest.raises(ImageFormatError):
        load_png(tmp_path / "x.png")


# -- color ----------------------------------------------------------------------


def test_ycbcr_black_and_white():
    np.testing.assert_allclose(rgb_to_ycbcr_array(np.zeros(3)), [0.0, 0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(rgb_to_ycbcr_array(np.ones(3)), [1.0, 0.5, 0.5], atol=1e-15)


def test_ycbcr_matches_bt601_formulas():
    rgb = np.random.default_rng(1).uniform(0, 1, (50, 3))
    R, G, B = rgb.T
    Y = 0.299 * R + 0.587 * G + 0.114 * B
    expected = np.stack([Y, 0.5 + (B - Y) * 0.5 / (1 - 0.114), 0.5 + (R - Y) * 0.5 / (1 - 0.299)], axis=1)
    np.testing.assert_allclose(rgb_to_ycbcr_array(rgb), expected, rtol=0, atol=1e-15)


def test_ycbcr_round_trip():
    img = ImageGrid(np.random.default_rng(2).uniform(0, 1, (9, 9, 3)))
    back = ycbcr_to_rgb(rgb_to_ycbcr(img))
    assert np.max(np.abs(back.data - img.data)) <= 1e-12
    assert np.max(np.abs(rgb_to_ycbcr_array(ycbcr_to_rgb_array(img.data)) - img.data)) <= 1e-12


def test_color_needs_three_channels():
    with pytest.raises(ValueError):
        rgb_to_ycbcr(ImageGrid(np.zeros((2, 2, 1))))


# -- metrics --------------------------------------------------------------------


def test_psnr_identical_is_inf():
    a = np.random.default_rng(3).uniform(0, 1, (4, 4, 3))
    assert psnr(a, a) == float("inf")


def test_psnr_uniform_offset():
    a = np.full((8, 8, 3), 0.3)
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-9


def test_psnr_matches_loop_oracle_and_is_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(0, 1, (6, 5, 3)), rng.uniform(0, 1, (6, 5, 3))
    total = 0.0
    for i in range(6):
        for j in range(5):
            for c in range(3):
                total += (a[i, j, c] - b[i, j, c]) ** 2
    ref = 10 * np.log10(1.0 / (total / a.size))
    assert abs(psnr(ImageGrid(a), ImageGrid(b)) - ref) <= 1e-12
    assert psnr(a, b) == psnr(b, a)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        mse(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_seam_score_periodic_vs_ramp():
    x = (np.arange(64) + 0.5) / 64
    periodic = np.sin(2 * np.pi * x)[None, :] * np.cos(2 * np.pi * x)[:, None]
    assert seam_score(periodic) < 1.5
    ramp = np.tile(x, (64, 1))
    assert seam_score(ramp) > 10


def test_gradient_magnitude_constant():
    g = gradient_magnitude(ImageGrid(np.full((5, 6, 3), 0.4)))
    assert np.array_equal(g.data, np.zeros((5, 6, 1)))


def test_gradient_magnitude_step_edge():
    d = np.zeros((8, 16))
    d[:, 8:] = 1.0
    g = gradient_magnitude(ImageGrid(d)).data[:, :, 0]
    assert g.max() == 1.0
    # The step at column 8 and the wrap seam between columns 15 and 0.
    assert set(np.flatnonzero(g[0] == 1.0)) == {0, 7, 8, 15}
    assert np.all(g[:, [1, 2, 3, 4, 5, 6, 9, 10, 11, 12, 13, 14]] == 0.0)


def test_gradient_magnitude_max_is_one():
    g = gradient_magnitude(ImageGrid(np.random.default_rng(5).uniform(0, 1, (7, 7, 3))))
    assert g.data.max() == 1.0


# -- sampling -------------------------------------------------------------------


def test_sample_constant_net():
    net = init_periodic(4, (1, 1), hidden_widths=[3])
    net.C.data[:] = 0.0
    net.c0.data[:] = [[0.2, 0.4, 0.6]]
    g = sample_grid(net, (-1, -1, 1, 1), 5, 4)
    assert g.data.shape == (5, 4, 3)
    assert np.all(g.data == np.array([0.2, 0.4, 0.6]))


def test_sample_converts_ycbcr():
    net = init_periodic(4, (1, 1))
    net.C.data[:] = 0.0
    net.c0.data[:] = [[0.0, 0.5, 0.5]]
    net.color_space = "ycbcr"
    g = sample_grid(net, (-1, -1, 1, 1), 2, 2)
    assert np.max(np.abs(g.data)) <= 1e-15


@pytest.mark.parametrize("R", [8, 32])
def test_extrapolation_equals_tiling(R):
    net = init_mrnet([StageConfig((3, 3), 24, (16,)), StageConfig((8, 8), 60, (16,))], seed=1)
    small = sample_grid(net, (-1, -1, 1, 1), R, R, clamp=False).data
    big = sample_grid(net, (-2, -2, 2, 2), 2 * R, 2 * R, clamp=False).data
    assert np.max(np.abs(big - tile_aligned(small, R))) <= 1e-9


def test_pixel_anchoring_matches_jacobian():
    """Finite differences of a rendered grid approximate the Jacobian at cell centers."""
    net = init_periodic(24, (3, 3), hidden_widths=[16], channels=3, seed=2)
    R = 512
    img = sample_grid(net, (-1, -1, 1, 1), R, R, clamp=False)
    U = guidance_from_image(img, period_aware=True).values
    J = spatial_jacobian(net, img.coords()).reshape(R, R, 3, 2)
    rel = np.linalg.norm(U - J) / np.linalg.norm(J)
    assert rel <= 0.05
