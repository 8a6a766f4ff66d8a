"""Masks, guidance fields, target pyramids, the Poisson-regularized loss and training loops.

The seamless loss over a batch is

    mean_b [ lam_b * ||J_f(x_b) - U_b||_F^2 + (1 - lam_b) * ||target_b - f(x_b)||^2 ]

where ``J_f`` is the exact spatial Jacobian and ``U`` a target gradient field.
With ``lam`` high near the tile border the network copies the image's
gradients there instead of its values, and since the network is periodic the
mismatch between opposite edges gets spread smoothly over the tile.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import texio
from .diffcore import AdamState, Tape, Tensor, adam_step, backward
from .mrnet import MrNet, as_mrnet, trace_sum
from .pinr import PeriodicInr, forward
from .texio import ImageGrid

log = logging.getLogger(__name__)

MASK_KINDS = ("binary", "soft", "periodic_class", "none")


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str = "non-finite loss"):
        super().__init__(f"{detail} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class MaskField:
    values: np.ndarray
    kind: str = "none"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("mask values must lie in [0, 1]")


@dataclass
class GuidanceField:
    """Target Jacobian per pixel: ``values[i, j, c, 0]`` is d/dx, ``[..., 1]`` is d/dy.

    Units are color per domain length.
    """

    values: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)
    stencil: str = "central"


# -- masks ---------------------------------------------------------------------


def no_mask(H: int, W: int) -> MaskField:
    return MaskField(np.zeros((H, W)), "none")


def soft_mask(H: int, W: int, gamma: float = 2.0, p: float = 2.0) -> MaskField:
    """Distance to the tile center, normalized so corner pixels reach 1, raised to ``gamma``.

    Pixel centers are mapped to [-1, 1] along each axis, so the center pixel
    of an odd-sized grid is exactly 0 and the four corner pixels exactly 1.
    """
    if gamma <= 0 or p < 1:
        raise ValueError(f"need gamma > 0 and p >= 1, got gamma={gamma}, p={p}")
    u = np.linspace(-1.0, 1.0, W) if W > 1 else np.zeros(1)
    v = np.linspace(-1.0, 1.0, H) if H > 1 else np.zeros(1)
    X, Y = np.meshgrid(u, v)
    if math.isinf(p):
        dist, radius = np.maximum(np.abs(X), np.abs(Y)), 1.0
    else:
        dist = (np.abs(X) ** p + np.abs(Y) ** p) ** (1.0 / p)
        radius = 2.0 ** (1.0 / p)
    return MaskField(np.clip(dist / radius, 0.0, 1.0) ** gamma, "soft")


def binary_border_mask(H: int, W: int, margin: int) -> MaskField:
    """Ones within ``margin`` pixels of any edge."""
    if not 0 < margin <= min(H, W) / 2:
        raise ValueError(f"margin {margin} out of range for a {H}x{W} grid")
    m = np.zeros((H, W))
    m[:margin] = m[-margin:] = 1.0
    m[:, :margin] = m[:, -margin:] = 1.0
    return MaskField(m, "binary")


def periodic_class_mask(H: int, W: int, repeats: tuple[int, int] = (2, 2), seed: int = 0) -> MaskField:
    """Drop indicator removing one pixel from every periodic equivalence class.

    The image is assumed to hold ``repeats[0] x repeats[1]`` copies of its
    fundamental tile; each tile pixel has that many copies and exactly one
    of them, chosen at random, is dropped.
    """
    r1, r2 = repeats
    if r1 < 1 or r2 < 1 or H % r1 or W % r2:
        raise ValueError(f"{H}x{W} grid is not divisible by repeats {repeats}")
    if r1 * r2 == 1:
        raise ValueError("repeats (1, 1) would drop every pixel")
    th, tw = H // r1, W // r2
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, r1 * r2, size=(th, tw))
    drop = np.zeros((H, W))
    ii, jj = np.mgrid[0:th, 0:tw]
    drop[ii + th * (pick // r2), jj + tw * (pick % r2)] = 1.0
    return MaskField(drop, "periodic_class")


# -- guidance ------------------------------------------------------------------


def guidance_from_image(img: ImageGrid, period_aware: bool = True) -> GuidanceField:
    """Central-difference Jacobian of ``img`` in color per domain length.

    ``period_aware`` wraps around the tile edges, so the field is the exact
    discrete gradient of the image on the torus. Otherwise edge pixels use
    one-sided differences and no difference ever crosses the seam.
    """
    d = img.data
    if img.H < 2 or img.W < 2:
        raise ValueError("guidance needs at least a 2x2 image")
    dx, dy = img.spacing
    if period_aware:
        gx = (np.roll(d, -1, axis=1) - np.roll(d, 1, axis=1)) / (2 * dx)
        gy = (np.roll(d, -1, axis=0) - np.roll(d, 1, axis=0)) / (2 * dy)
    else:
        gx = np.gradient(d, dx, axis=1, edge_order=1)
        gy = np.gradient(d, dy, axis=0, edge_order=1)
    return GuidanceField(np.stack([gx, gy], axis=-1), (dx, dy), "central")


# -- pyramid -------------------------------------------------------------------

_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def blur(d: np.ndarray) -> np.ndarray:
    """Separable [1 4 6 4 1]/16 blur with wrap-around borders."""
    out = np.zeros_like(d)
    for k, w in zip(range(-2, 3), _KERNEL):
        out += w * np.roll(d, k, axis=0)
    res = np.zeros_like(d)
    for k, w in zip(range(-2, 3), _KERNEL):
        res += w * np.roll(out, k, axis=1)
    return res


@dataclass
class Pyramid:
    levels: list[ImageGrid]
    keeps: list[np.ndarray]


def build_pyramid(img: ImageGrid, N: int, keep: np.ndarray | None = None) -> Pyramid:
    """Coarse-to-fine targets; level ``N-1`` is ``img`` itself.

    Each coarser level is the blurred image sampled at even pixels. Its
    domain is shifted by half a fine pixel so every coarse sample keeps the
    spatial position of the fine pixel it was taken from. With a ``keep``
    mask the blur is normalized over kept pixels only, so dropped values
    never leak into coarser levels.
    """
    if N < 1:
        raise ValueError("pyramid needs at least one level")
    keep = np.ones((img.H, img.W)) if keep is None else np.asarray(keep, dtype=np.float64)
    levels, keeps = [img], [keep]
    cur, cur_keep = img, keep
    for _ in range(N - 1):
        H, W = cur.H // 2, cur.W // 2
        if H < 8 or W < 8:
            raise ValueError(f"pyramid level would be {H}x{W}, below the 8x8 minimum")
        wsum = blur(cur_keep[:, :, None])
        num = blur(cur.data * cur_keep[:, :, None])
        with np.errstate(invalid="ignore", divide="ignore"):
            data = np.where(wsum > 0, num / np.where(wsum > 0, wsum, 1.0), 0.0)
        dx, dy = cur.spacing
        x0, y0, x1, y1 = cur.domain
        domain = (x0 - dx / 2, y0 - dy / 2, x1 - dx / 2, y1 - dy / 2)
        cur = ImageGrid(data[: 2 * H : 2, : 2 * W : 2], domain)
        cur_keep = (wsum[: 2 * H : 2, : 2 * W : 2, 0] > 0).astype(np.float64)
        levels.append(cur)
        keeps.append(cur_keep)
    return Pyramid(levels[::-1], keeps[::-1])


# -- loss ----------------------------------------------------------------------


def _const(a) -> Tensor:
    return Tensor._wrap(np.ascontiguousarray(a, dtype=np.float64))


def _rows(values: np.ndarray, C: int) -> np.ndarray:
    return np.repeat(np.asarray(values, dtype=np.float64).reshape(-1, 1), C, axis=1)


def loss_eval(
    tape: Tape,
    net,
    x,
    target,
    U=None,
    lam=None,
    grad_weight: float = 1.0,
    value_weight: float = 1.0,
    base=None,
):
    """Batch loss node; returns ``(loss, f)`` with ``f`` the (B, C) prediction tensor.

    ``net`` is a stage, an MrNet (all stages at full weight) or a list of
    stages. ``U`` is (B, C, 2) and ``lam`` (B,); with ``lam=None`` the loss is
    the plain value error and no Jacobian is built. ``base`` is an optional
    ``(f0, J0)`` pair of constants added to the network output, used for
    stages that are frozen during progressive fitting.
    """
    stages = net.stages if isinstance(net, MrNet) else ([net] if isinstance(net, PeriodicInr) else list(net))
    x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
    target = np.asarray(target, dtype=np.float64)
    B, C = target.shape
    if x.shape[0] != B:
        raise ValueError(f"batch length mismatch: {x.shape[0]} coords, {B} targets")
    if lam is not None:
        lam = np.asarray(lam, dtype=np.float64).reshape(-1)
        if lam.shape[0] != B or U is None or np.shape(U)[:2] != (B, C):
            raise ValueError("lambda and guidance must align with the batch")
    use_jac = lam is not None and np.any(lam != 0.0)
    f, jac = trace_sum(tape, stages, x, jacobian=use_jac)
    if base is not None:
        f = tape.add(f, _const(base[0]))
        if use_jac and base[1] is not None:
            jac = [tape.add(j, _const(base[1][..., d])) for d, j in enumerate(jac)]

    err = tape.sub(f, _const(target))
    sq = tape.mul(err, err)
    if lam is None:
        total = tape.scale(tape.sum(sq), value_weight / B)
        return total, f
    total = None
    if np.any(lam != 1.0):
        total = tape.scale(tape.sum(tape.mul(sq, _const(_rows(1.0 - lam, C)))), value_weight)
    if use_jac:
        lam_rows = _const(_rows(lam, C))
        U = np.asarray(U, dtype=np.float64)
        for d in range(2):
            e = tape.sub(jac[d], _const(U[:, :, d]))
            term = tape.scale(tape.sum(tape.mul(tape.mul(e, e), lam_rows)), grad_weight)
            total = term if total is None else tape.add(total, term)
    return tape.scale(total, 1.0 / B), f


# -- training ------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_pixels: int = 65536
    learning_rate: float = 1e-4
    seed: int = 0
    color_space: str = "ycbcr"
    mode: str = "fit"
    mask: str = "none"
    mask_margin: int = 8
    gamma: float = 2.0
    lp: float = 2.0
    repeats: tuple[int, int] = (2, 2)
    stage_epochs: list[int] | None = None
    grad_weight: float = 1.0
    value_weight: float = 1.0
    period_aware_guidance: bool = False
    progressive: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_pixels < 1:
            raise ValueError("epochs and batch_pixels must be >= 1")
        if self.mode not in ("fit", "seamless"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.color_space not in ("ycbcr", "rgb"):
            raise ValueError(f"unknown color space {self.color_space!r}")


@dataclass
class TrainReport:
    records: list[tuple[int, float, float]] = field(default_factory=list)
    final_psnr: float = float("nan")
    wall_time: float = 0.0
    seed: int = 0

    @property
    def losses(self) -> list[float]:
        return [r[1] for r in self.records]

    def to_text(self) -> str:
        lines = ["epoch,loss,psnr"]
        lines += [f"{e},{loss:.17g},{p:.17g}" for e, loss, p in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def make_mask(cfg: TrainConfig, H: int, W: int) -> MaskField:
    if cfg.mask == "none":
        return no_mask(H, W)
    if cfg.mask == "soft":
        return soft_mask(H, W, cfg.gamma, cfg.lp)
    if cfg.mask == "binary":
        return binary_border_mask(H, W, cfg.mask_margin)
    if cfg.mask in ("periodic", "periodic_class"):
        return periodic_class_mask(H, W, tuple(cfg.repeats), cfg.seed)
    raise ValueError(f"unknown mask {cfg.mask!r}")


def _check_domain(net: MrNet, img: ImageGrid) -> None:
    x0, y0, x1, y1 = img.domain
    for extent, period in zip((x1 - x0, y1 - y0), net.period):
        ratio = extent / period
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(f"domain extent {extent} is not a whole number of periods {period}")


def _psnr_from_sse(sse: float, count: int) -> float:
    if count == 0:
        return float("nan")
    m = sse / count
    return float("inf") if m == 0 else 10.0 * math.log10(1.0 / m)


def _epoch_batches(rng, idx: np.ndarray, batch: int):
    perm = idx[rng.permutation(len(idx))]
    for start in range(0, len(perm), batch):
        yield perm[start : start + batch]


def _to_space(img: ImageGrid, space: str) -> ImageGrid:
    return texio.rgb_to_ycbcr(img) if space == "ycbcr" else img


def train(net, data: ImageGrid, cfg: TrainConfig, drop: np.ndarray | None = None, lam: np.ndarray | None = None) -> TrainReport:
    """Optimize ``net`` in place on the RGB image ``data``.

    ``fit`` trains stage i against pyramid level i with the earlier stages
    frozen, value loss only, never touching pixels flagged in ``drop`` (or
    in the periodic-class mask when ``cfg.mask`` asks for one). ``seamless``
    fine-tunes every stage jointly on the full-resolution image with the
    Poisson-regularized loss, weighted by ``lam`` or the mask from ``cfg``.
    """
    mr = as_mrnet(net)
    _check_domain(mr, data)
    if cfg.color_space == "ycbcr" and data.C != 3:
        raise ValueError("YCbCr training needs an RGB image")
    if mr.channels != data.C:
        raise ValueError(f"network has {mr.channels} channels, image has {data.C}")
    mr.color_space = cfg.color_space
    for s in mr.stages:
        s.color_space = cfg.color_space
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport(seed=cfg.seed)
    t0 = time.perf_counter()
    target = _to_space(data, cfg.color_space)

    if cfg.mode == "fit":
        if drop is None and cfg.mask in ("periodic", "periodic_class"):
            drop = make_mask(cfg, data.H, data.W).values
        keep = np.ones((data.H, data.W)) if drop is None else 1.0 - (np.asarray(drop) > 0.5)
        _fit(mr, target, keep, cfg, rng, report)
    else:
        if lam is None:
            mask = make_mask(cfg, data.H, data.W) if cfg.mask != "none" else soft_mask(data.H, data.W, cfg.gamma, cfg.lp)
            lam = mask.values
        _seamless(mr, target, np.asarray(lam, dtype=np.float64), cfg, rng, report)

    recon = texio.sample_grid(mr, data.domain, data.H, data.W)
    report.final_psnr = texio.psnr(recon, data)
    report.wall_time = time.perf_counter() - t0
    return report


def _stage_epochs(cfg: TrainConfig, n: int) -> list[int]:
    if cfg.stage_epochs is None:
        return [cfg.epochs] * n
    if len(cfg.stage_epochs) != n:
        raise ValueError(f"stage schedule has {len(cfg.stage_epochs)} entries for {n} stages")
    return list(cfg.stage_epochs)


def _fit(mr: MrNet, target: ImageGrid, keep: np.ndarray, cfg, rng, report) -> None:
    N = mr.N
    if cfg.progressive:
        pyr = build_pyramid(target, N, keep)
        plan = [([i], pyr.levels[i], pyr.keeps[i], list(range(i))) for i in range(N)]
    else:
        plan = [(list(range(N)), target, keep, [])]
    epochs = _stage_epochs(cfg, len(plan)) if cfg.progressive else [cfg.epochs]
    epoch_no = 0
    for (train_ids, level, level_keep, frozen_ids), n_epochs in zip(plan, epochs):
        coords = level.coords()
        values = level.data.reshape(-1, level.C)
        idx = np.flatnonzero(level_keep.ravel() > 0.5)
        base = None
        if frozen_ids:
            base = sum(forward(mr.stages[j], coords) for j in frozen_ids)
        stages = [mr.stages[i] for i in train_ids]
        params = [p for s in stages for p in s.parameters()]
        state = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
        for _ in range(n_epochs):
            epoch_no += 1
            tot_loss = sse = 0.0
            for b, bidx in enumerate(_epoch_batches(rng, idx, cfg.batch_pixels)):
                tape = Tape()
                bb = None if base is None else (base[bidx], None)
                loss, f = loss_eval(tape, stages, coords[bidx], values[bidx], base=bb, value_weight=cfg.value_weight)
                lv = float(loss.data)
                if not math.isfinite(lv):
                    raise TrainingError(epoch_no, b)
                adam_step(params, backward(tape, loss, params), state)
                tot_loss += lv * len(bidx)
                sse += float(((f.data - values[bidx]) ** 2).sum())
            report.records.append((epoch_no, tot_loss / len(idx), _psnr_from_sse(sse, len(idx) * level.C)))
            log.info("stage %d epoch %d loss %.6g psnr %.2f", train_ids[-1], epoch_no, *report.records[-1][1:])


def _seamless(mr: MrNet, target: ImageGrid, lam: np.ndarray, cfg, rng, report) -> None:
    if (target.H, target.W) != lam.shape:
        raise ValueError(f"mask shape {lam.shape} does not match image {target.H}x{target.W}")
    guide = guidance_from_image(target, cfg.period_aware_guidance)
    coords = target.coords()
    values = target.data.reshape(-1, target.C)
    U = guide.values.reshape(-1, target.C, 2)
    lam_flat = lam.ravel()
    anchor = bool(np.all(lam_flat == 1.0))
    if anchor:
        log.warning("lambda is 1 everywhere: values are unconstrained, anchoring the mean color")
    params = mr.parameters()
    state = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    idx = np.arange(len(values))
    for epoch in range(1, cfg.epochs + 1):
        tot_loss = sse = 0.0
        for b, bidx in enumerate(_epoch_batches(rng, idx, cfg.batch_pixels)):
            tape = Tape()
            loss, f = loss_eval(
                tape, mr, coords[bidx], values[bidx], U[bidx], lam_flat[bidx],
                grad_weight=cfg.grad_weight, value_weight=cfg.value_weight,
            )
            if anchor:
                loss = tape.add(loss, _mean_penalty(tape, f, values[bidx], 1e-3))
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise TrainingError(epoch, b)
            adam_step(params, backward(tape, loss, params), state)
            tot_loss += lv * len(bidx)
            sse += float(((f.data - values[bidx]) ** 2).sum())
        report.records.append((epoch, tot_loss / len(idx), _psnr_from_sse(sse, len(idx) * target.C)))
        log.info("epoch %d loss %.6g psnr %.2f", epoch, *report.records[-1][1:])


def _mean_penalty(tape: Tape, f: Tensor, target: np.ndarray, weight: float) -> Tensor:
    B = target.shape[0]
    mean_f = tape.scale(tape.matmul(_const(np.ones((1, B))), f), 1.0 / B)
    diff = tape.sub(mean_f, _const(target.mean(axis=0, keepdims=True)))
    return tape.scale(tape.sum(tape.mul(diff, diff)), weight)

