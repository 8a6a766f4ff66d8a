"""Ray-traced torus with the network evaluated at each hit's uv coordinates.

The torus lies in the xy-plane around the z-axis. ``u`` runs around the
major circle, ``v`` around the tube. Level of detail comes from the uv
footprint of one pixel, estimated by intersecting the neighbouring pixel
rays with the tangent plane at the hit point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mrnet import as_mrnet, blend_weights, stage_outputs
from .texio import ImageGrid, ycbcr_to_rgb_array


class SceneError(ValueError):
    """Degenerate camera or geometry."""


@dataclass
class TorusGeom:
    R: float = 2.0
    r: float = 1.0
    uv_scale: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if not self.R > self.r > 0:
            raise SceneError(f"need R > r > 0, got R={self.R}, r={self.r}")


@dataclass
class Camera:
    eye: tuple[float, float, float] = (0.0, -6.0, 4.0)
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    fov: float = math.radians(40.0)
    width: int = 256
    height: int = 256

    def __post_init__(self):
        if not 0 < self.fov < math.pi:
            raise SceneError(f"field of view must lie in (0, pi), got {self.fov}")
        if np.allclose(self.eye, self.target):
            raise SceneError("camera eye and target coincide")


def uv_to_domain(u, v, geom: TorusGeom) -> np.ndarray:
    """``(2*su*(2u - 1), sv*(2v - 1))``: unit square to [-1, 1]^2, u doubled for aspect."""
    su, sv = geom.uv_scale
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return np.stack([2.0 * su * (2.0 * u - 1.0), sv * (2.0 * v - 1.0)], axis=-1)


def lod_select(duv_dx, duv_dy, texture_base_res: float, N: int):
    """Mip-style level: ``N - log2(footprint in texels)``, clamped to [0, N].

    Footprints are given in texture periods per pixel, so multiplying by
    ``texture_base_res`` converts them to texels. Accepts batched (..., 2) input.
    """
    fx = np.linalg.norm(np.asarray(duv_dx, dtype=np.float64), axis=-1)
    fy = np.linalg.norm(np.asarray(duv_dy, dtype=np.float64), axis=-1)
    texels = np.maximum(fx, fy) * texture_base_res
    with np.errstate(divide="ignore"):
        t = N - np.log2(texels)
    return np.clip(t, 0.0, float(N))


def torus_sdf(p: np.ndarray, geom: TorusGeom) -> np.ndarray:
    q = np.hypot(p[..., 0], p[..., 1]) - geom.R
    return np.hypot(q, p[..., 2]) - geom.r


def torus_normal(p: np.ndarray, geom: TorusGeom) -> np.ndarray:
    rho = np.hypot(p[..., 0], p[..., 1])
    core = np.stack([p[..., 0] / rho * geom.R, p[..., 1] / rho * geom.R, np.zeros_like(rho)], axis=-1)
    n = p - core
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def torus_uv(p: np.ndarray, geom: TorusGeom) -> np.ndarray:
    rho = np.hypot(p[..., 0], p[..., 1])
    u = np.mod(np.arctan2(p[..., 1], p[..., 0]) / (2 * np.pi), 1.0)
    v = np.mod(np.arctan2(p[..., 2], rho - geom.R) / (2 * np.pi), 1.0)
    return np.stack([u, v], axis=-1)


def camera_rays(cam: Camera):
    """Ray origin and unit directions for every pixel center, plus the
    un-normalized per-pixel steps along the image axes."""
    eye = np.asarray(cam.eye, dtype=np.float64)
    fwd = np.asarray(cam.target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    half_h = math.tan(cam.fov / 2)
    half_w = half_h * cam.width / cam.height
    step_x = right * (2 * half_w / cam.width)
    step_y = -true_up * (2 * half_h / cam.height)
    js = np.arange(cam.width) + 0.5 - cam.width / 2
    is_ = np.arange(cam.height) + 0.5 - cam.height / 2
    raw = fwd + js[None, :, None] * step_x + is_[:, None, None] * step_y
    return eye, raw, step_x, step_y


def intersect(origin: np.ndarray, dirs: np.ndarray, geom: TorusGeom, max_steps: int = 512, t_max: float = 1e3):
    """Sphere-trace rays against the torus; returns (hit mask, distance along each ray).

    The distance function is exact for a torus, so marching never steps
    through the surface; a final bisection tightens the converged bracket.
    """
    n = dirs.shape[0]
    t = np.zeros(n)
    active = np.ones(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    eps = 1e-9 * max(1.0, geom.R)
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        d = torus_sdf(origin + t[idx, None] * dirs[idx], geom)
        done = d < eps
        hit[idx[done]] = True
        t[idx[~done]] += d[~done]
        escaped = t[idx] > t_max
        active[idx[done | escaped]] = False
    # Bracket [t - 1e-6, t + 1e-6] around the converged point and bisect on the sign.
    idx = np.flatnonzero(hit)
    lo, hi = t[idx] - 1e-6, t[idx] + 1e-6
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        inside = torus_sdf(origin + mid[:, None] * dirs[idx], geom) < 0
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    t[idx] = 0.5 * (lo + hi)
    return hit, t


@dataclass
class RenderResult:
    image: ImageGrid
    hit: np.ndarray
    lod: np.ndarray


def render_torus(
    net,
    geom: TorusGeom,
    cam: Camera,
    texture_base_res: float = 1024.0,
    light=(0.4, -0.5, 0.75),
    ambient: float = 0.2,
) -> RenderResult:
    """Render and also return the hit mask and per-pixel level of detail."""
    eye = np.asarray(cam.eye, dtype=np.float64)
    if torus_sdf(eye, geom) <= 0:
        raise SceneError("camera eye is inside the torus tube")
    mr = as_mrnet(net)
    origin, raw, step_x, step_y = camera_rays(cam)
    H, W = cam.height, cam.width
    raw = raw.reshape(-1, 3)
    dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    hit, t = intersect(origin, dirs, geom)
    out = np.zeros((H * W, mr.channels if mr.color_space != "ycbcr" else 3))
    lod = np.full(H * W, np.nan)
    idx = np.flatnonzero(hit)
    if idx.size:
        p = origin + t[idx, None] * dirs[idx]
        n = torus_normal(p, geom)
        uv = torus_uv(p, geom)
        # Neighbour rays meet the tangent plane at p; their uv offsets are the footprint.
        feet = []
        for step in (step_x, step_y):
            d2 = raw[idx] + step
            s = np.einsum("ij,ij->i", n, p - origin) / np.einsum("ij,ij->i", n, d2)
            uv2 = torus_uv(origin + s[:, None] * d2, geom)
            duv = uv2 - uv
            duv -= np.round(duv)
            feet.append(duv)
        P1, P2 = mr.period
        su, sv = geom.uv_scale
        to_periods = np.array([4.0 * su / P1, 2.0 * sv / P2])
        level = lod_select(feet[0] * to_periods, feet[1] * to_periods, texture_base_res, mr.N)
        lod[idx] = level
        x = uv_to_domain(uv[:, 0], uv[:, 1], geom)
        weights = blend_weights(level, mr.N)
        color = sum(w[:, None] * g for w, g in zip(weights.T, stage_outputs(mr, x)))
        if mr.color_space == "ycbcr":
            color = ycbcr_to_rgb_array(color)
        color = np.clip(color, 0.0, 1.0)
        L = np.asarray(light, dtype=np.float64)
        L = L / np.linalg.norm(L)
        shade = ambient + (1.0 - ambient) * np.clip(n @ L, 0.0, None)
        out[idx] = color * shade[:, None]
    img = ImageGrid(out.reshape(H, W, -1), (0.0, 0.0, float(W), float(H)))
    return RenderResult(img, hit.reshape(H, W), lod.reshape(H, W))


def rasterize_torus(net, geom: TorusGeom, cam: Camera, texture_base_res: float = 1024.0, **kw) -> ImageGrid:
    return render_torus(net, geom, cam, texture_base_res, **kw).image
