"""Pixel-space Poisson solvers for the two classical ways of making a tile seamless.

``solve_torus`` integrates a gradient field on the torus (periodic 5-point
Laplacian); ``solve_average_border`` pins opposite borders to their average
and fills the interior by matching the image Laplacian. Both use plain
conjugate gradients on the negative Laplacian, which is symmetric positive
(semi)definite.

Gradients here are forward differences in pixel units, so that divergence by
backward differences reproduces the 5-point Laplacian exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .texio import ImageGrid
from .trainer import GuidanceField


class PoissonConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"CG did not converge after {iterations} iterations (relative residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residuals: list[float]


def conjugate_gradient(apply_A, b: np.ndarray, tol: float = 1e-10, max_iter: int = 10000, x0=None) -> CGResult:
    """Solve ``A x = b`` for symmetric positive (semi)definite ``A`` given as a function.

    Stops when ``||r|| <= tol * ||b||``. ``residuals`` records the residual
    norm at every iteration, starting with the initial one.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_A(x)
    p = r.copy()
    rr = float(np.vdot(r, r))
    bnorm = float(np.linalg.norm(b))
    history = [np.sqrt(rr)]
    if bnorm == 0.0:
        return CGResult(x, 0, history)
    for it in range(1, max_iter + 1):
        if np.sqrt(rr) <= tol * bnorm:
            return CGResult(x, it - 1, history)
        Ap = apply_A(p)
        alpha = rr / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(np.vdot(r, r))
        history.append(np.sqrt(rr_new))
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.sqrt(rr) <= tol * bnorm:
        return CGResult(x, max_iter, history)
    raise PoissonConvergenceError(np.sqrt(rr) / bnorm, max_iter)


# -- stencils --------------------------------------------------------------------


def forward_gradient(img, wrap: bool = True) -> GuidanceField:
    """Forward differences in pixel units; without ``wrap`` the seam difference
    is replaced by its neighbour so nothing crosses the tile border."""
    d = img.data if isinstance(img, ImageGrid) else np.asarray(img, dtype=np.float64)
    if d.ndim == 2:
        d = d[:, :, None]
    gx = np.roll(d, -1, axis=1) - d
    gy = np.roll(d, -1, axis=0) - d
    if not wrap:
        gx[:, -1] = gx[:, -2]
        gy[-1, :] = gy[-2, :]
    return GuidanceField(np.stack([gx, gy], axis=-1), (1.0, 1.0), "forward")


def periodic_divergence(U: GuidanceField) -> np.ndarray:
    if U.stencil != "forward":
        raise ValueError("torus solves need a forward-difference guidance field")
    gx, gy = U.values[..., 0], U.values[..., 1]
    return (gx - np.roll(gx, 1, axis=1)) + (gy - np.roll(gy, 1, axis=0))


def periodic_laplacian(u: np.ndarray) -> np.ndarray:
    return (
        np.roll(u, 1, axis=0) + np.roll(u, -1, axis=0) + np.roll(u, 1, axis=1) + np.roll(u, -1, axis=1) - 4.0 * u
    )


# -- solvers -------------------------------------------------------------------


def solve_torus(
    U: GuidanceField,
    mean,
    tol: float = 1e-10,
    max_iter: int = 10000,
    history: list | None = None,
    domain=(-1.0, -1.0, 1.0, 1.0),
) -> ImageGrid:
    """Integrate ``U`` on the torus: ``lap u = div U`` with each channel's mean set to ``mean``.

    The right-hand side is projected onto zero mean first, which makes any
    field integrable in the least-squares sense.
    """
    rhs = periodic_divergence(U)
    H, W, C = rhs.shape
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (C,))
    out = np.empty((H, W, C))
    for c in range(C):
        b = -(rhs[:, :, c] - rhs[:, :, c].mean())
        res = conjugate_gradient(lambda v: -periodic_laplacian(v), b, tol, max_iter)
        if history is not None:
            history.append(res.residuals)
        u = res.x
        out[:, :, c] = u - u.mean() + mean[c]
    return ImageGrid(out, domain)


def _interior_laplacian(u: np.ndarray) -> np.ndarray:
    """5-point Laplacian restricted to interior pixels, zero Dirichlet data outside."""
    p = np.pad(u, 1)
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * u


def average_border(d: np.ndarray) -> np.ndarray:
    """Copy of ``d`` with left/right and top/bottom borders replaced by their averages."""
    out = d.copy()
    lr = 0.5 * (d[:, 0] + d[:, -1])
    out[:, 0] = out[:, -1] = lr
    tb = 0.5 * (d[0, :] + d[-1, :])
    out[0, :] = out[-1, :] = tb
    corner = 0.25 * (d[0, 0] + d[0, -1] + d[-1, 0] + d[-1, -1])
    for i, j in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
        out[i, j] = corner
    return out


def solve_average_border(img, tol: float = 1e-10, max_iter: int = 10000, history: list | None = None) -> ImageGrid:
    """Dirichlet solve with averaged borders and the image's own Laplacian inside.

    Opposite borders come out identical, so the result tiles edge-to-edge.
    """
    d = img.data if isinstance(img, ImageGrid) else np.asarray(img, dtype=np.float64)
    if d.ndim == 2:
        d = d[:, :, None]
    H, W, C = d.shape
    if H < 3 or W < 3:
        raise ValueError("average-border solve needs at least a 3x3 image")
    bnd = average_border(d)
    # Laplacian of the image at interior pixels: div of its non-wrapped forward gradient.
    lap = d[:-2, 1:-1] + d[2:, 1:-1] + d[1:-1, :-2] + d[1:-1, 2:] - 4.0 * d[1:-1, 1:-1]
    out = bnd.copy()
    for c in range(C):
        # Boundary contributions move to the right-hand side.
        edge = np.zeros((H - 2, W - 2))
        edge[0, :] += bnd[0, 1:-1, c]
        edge[-1, :] += bnd[-1, 1:-1, c]
        edge[:, 0] += bnd[1:-1, 0, c]
        edge[:, -1] += bnd[1:-1, -1, c]
        b = -(lap[:, :, c] - edge)
        res = conjugate_gradient(lambda v: -_interior_laplacian(v), b, tol, max_iter)
        if history is not None:
            history.append(res.residuals)
        out[1:-1, 1:-1, c] = res.x
    return ImageGrid(out, img.domain if isinstance(img, ImageGrid) else (-1.0, -1.0, 1.0, 1.0))

