"""Images on rectangular domains: PNG I/O, YCbCr, PSNR and network sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .mrnet import as_mrnet, mrnet_eval


class ImageFormatError(ValueError):
    """The file is not an 8-bit RGB or grayscale PNG."""


@dataclass
class ImageGrid:
    """H x W x C samples; pixel (i, j) sits at the center of its cell in ``domain``.

    ``domain`` is ``(x_min, y_min, x_max, y_max)``; columns run along x and
    rows along y.
    """

    data: np.ndarray
    domain: tuple[float, float, float, float] = (-1.0, -1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"image data must be H x W x C, got shape {data.shape}")
        self.data = data
        self.domain = tuple(float(v) for v in self.domain)

    @property
    def H(self) -> int:
        return self.data.shape[0]

    @property
    def W(self) -> int:
        return self.data.shape[1]

    @property
    def C(self) -> int:
        return self.data.shape[2]

    @property
    def spacing(self) -> tuple[float, float]:
        """Cell size ``(dx, dy)`` in domain units."""
        x0, y0, x1, y1 = self.domain
        return (x1 - x0) / self.W, (y1 - y0) / self.H

    def coords(self) -> np.ndarray:
        return cell_centers(self.domain, self.H, self.W)

    def with_data(self, data) -> "ImageGrid":
        return ImageGrid(data, self.domain)


def cell_centers(domain, H: int, W: int) -> np.ndarray:
    """(H*W, 2) row-major array of cell-center coordinates."""
    x0, y0, x1, y1 = domain
    xs = x0 + (np.arange(W) + 0.5) * ((x1 - x0) / W)
    ys = y0 + (np.arange(H) + 0.5) * ((y1 - y0) / H)
    X, Y = np.meshgrid(xs, ys)
    return np.stack([X.ravel(), Y.ravel()], axis=1)


# -- PNG -----------------------------------------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def load_png(path, domain=(-1.0, -1.0, 1.0, 1.0)) -> ImageGrid:
    raw = Path(path).read_bytes()
    if raw[:8] != _PNG_SIG or raw[12:16] != b"IHDR":
        raise ImageFormatError(f"{path}: not a PNG file")
    bit_depth, color_type = raw[24], raw[25]
    if bit_depth != 8 or color_type not in (0, 2):
        raise ImageFormatError(
            f"{path}: unsupported PNG (bit depth {bit_depth}, color type {color_type}); "
            "need 8-bit RGB or grayscale"
        )
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB" if color_type == 2 else "L"), dtype=np.float64)
    return ImageGrid(arr / 255.0, domain)


def to_uint8(data) -> np.ndarray:
    return np.round(np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: ImageGrid, path) -> None:
    q = to_uint8(img.data)
    if img.C == 1:
        Image.fromarray(q[:, :, 0], mode="L").save(path)
    elif img.C == 3:
        Image.fromarray(q, mode="RGB").save(path)
    else:
        raise ImageFormatError(f"cannot write {img.C}-channel image as PNG")


# -- color ---------------------------------------------------------------------

# BT.601 full range.
_KR, _KB = 0.299, 0.114
_KG = 1.0 - _KR - _KB
_RGB2YCC = np.array(
    [
        [_KR, _KG, _KB],
        [-0.5 * _KR / (1 - _KB), -0.5 * _KG / (1 - _KB), 0.5],
        [0.5, -0.5 * _KG / (1 - _KR), -0.5 * _KB / (1 - _KR)],
    ]
)
_YCC2RGB = np.linalg.inv(_RGB2YCC)
_OFFSET = np.array([0.0, 0.5, 0.5])


def _check3(data: np.ndarray) -> None:
    if data.shape[-1] != 3:
        raise ValueError(f"color conversion needs 3 channels, got {data.shape[-1]}")


def rgb_to_ycbcr_array(rgb: np.ndarray) -> np.ndarray:
    _check3(rgb)
    return rgb @ _RGB2YCC.T + _OFFSET


def ycbcr_to_rgb_array(ycc: np.ndarray) -> np.ndarray:
    _check3(ycc)
    return (ycc - _OFFSET) @ _YCC2RGB.T


def rgb_to_ycbcr(img: ImageGrid) -> ImageGrid:
    return img.with_data(rgb_to_ycbcr_array(img.data))


def ycbcr_to_rgb(img: ImageGrid) -> ImageGrid:
    return img.with_data(ycbcr_to_rgb_array(img.data))


# -- metrics -------------------------------------------------------------------


def mse(a, b) -> float:
    a = a.data if isinstance(a, ImageGrid) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, ImageGrid) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB with peak 1; ``inf`` for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / err))


def seam_score(img) -> float:
    """Median wrap-around edge difference over median interior difference.

    Differences are per-pixel color-vector magnitudes between horizontal and
    vertical neighbours. About 1 for a seamless tile, large for a visible seam.
    """
    d = img.data if isinstance(img, ImageGrid) else np.asarray(img, dtype=np.float64)
    if d.ndim == 2:
        d = d[:, :, None]
    dx = np.linalg.norm(np.diff(d, axis=1), axis=2)
    dy = np.linalg.norm(np.diff(d, axis=0), axis=2)
    seam = np.concatenate(
        [np.linalg.norm(d[:, 0] - d[:, -1], axis=1), np.linalg.norm(d[0] - d[-1], axis=1)]
    )
    interior = np.concatenate([dx.ravel(), dy.ravel()])
    denom = np.median(interior)
    if denom == 0.0:
        return float("inf") if np.median(seam) > 0 else 1.0
    return float(np.median(seam) / denom)


def gradient_magnitude(img: ImageGrid) -> ImageGrid:
    """Frobenius norm of the wrap-around central-difference Jacobian, scaled to [0, 1]."""
    d = img.data
    dx, dy = img.spacing
    gx = (np.roll(d, -1, axis=1) - np.roll(d, 1, axis=1)) / (2 * dx)
    gy = (np.roll(d, -1, axis=0) - np.roll(d, 1, axis=0)) / (2 * dy)
    mag = np.sqrt((gx**2 + gy**2).sum(axis=2))
    top = mag.max()
    if top > 0:
        mag = mag / top
    return img.with_data(mag)


# -- sampling ------------------------------------------------------------------


def sample_grid(net, domain, H: int, W: int, t: float | None = None, clamp: bool = True) -> ImageGrid:
    """Evaluate ``net`` at cell centers of an H x W grid over ``domain``.

    ``t`` defaults to the finest level. Output is RGB; networks trained in
    YCbCr are converted back. ``clamp=False`` keeps the raw values.
    """
    if H < 1 or W < 1:
        raise ValueError("grid size must be positive")
    net = as_mrnet(net)
    t = float(net.N) if t is None else float(t)
    vals = mrnet_eval(net, cell_centers(domain, H, W), t)
    if net.color_space == "ycbcr":
        vals = ycbcr_to_rgb_array(vals)
    if clamp:
        vals = np.clip(vals, 0.0, 1.0)
    return ImageGrid(vals.reshape(H, W, net.channels), domain)
