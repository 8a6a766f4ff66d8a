"""Multiresolution sum of periodic stages, blended by a level-of-detail ``t``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffcore import Tape
from .pinr import (
    ConfigError,
    FrequencySet,
    PeriodicInr,
    _build,
    enumerate_band,
    forward,
    select_lowest,
    trace,
)

# Band limits, frequency counts and hidden widths of the six-stage reference model.
TABLE1 = (
    ((3, 3), 24, (32,)),
    ((6, 6), 48, (32,)),
    ((12, 12), 80, (64,)),
    ((24, 24), 192, (160,)),
    ((56, 56), 384, (256,)),
    ((128, 128), 1024, (512,)),
)


@dataclass
class StageConfig:
    band: tuple[int, int]
    freq_count: int
    hidden_widths: tuple[int, ...] = ()

    def __post_init__(self):
        self.band = (int(self.band[0]), int(self.band[1]))
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)


def table1_configs() -> list[StageConfig]:
    return [StageConfig(band, n, hidden) for band, n, hidden in TABLE1]


@dataclass
class MrNet:
    stages: list[PeriodicInr]
    color_space: str = "rgb"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("an MrNet needs at least one stage")
        p0, c0 = self.stages[0].period, self.stages[0].channels
        for s in self.stages[1:]:
            if s.period != p0 or s.channels != c0:
                raise ConfigError("all stages must share period and channel count")

    @property
    def N(self) -> int:
        return len(self.stages)

    @property
    def period(self) -> tuple[float, float]:
        return self.stages[0].period

    @property
    def channels(self) -> int:
        return self.stages[0].channels

    @property
    def periodic(self) -> bool:
        return all(s.periodic for s in self.stages)

    def parameters(self):
        return [p for s in self.stages for p in s.parameters()]


def as_mrnet(net) -> MrNet:
    if isinstance(net, MrNet):
        return net
    return MrNet([net], color_space=net.color_space)


def blend_weights(t, N: int) -> np.ndarray:
    """``c_i(t) = clamp01(t - i + 1)``: ``t = k + d`` gives ``g_0 + ... + g_k + d g_{k+1}``.

    ``t`` may be a scalar (returns shape (N,)) or an array (returns t.shape + (N,)).
    """
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, float(N))
    i = np.arange(N, dtype=np.float64)
    return np.clip(t[..., None] - i + 1.0, 0.0, 1.0)


def partition_frequencies(
    configs: Sequence[StageConfig],
    period: tuple[float, float] = (2.0, 2.0),
    seed: int | np.random.Generator = 0,
) -> list[FrequencySet]:
    """Lowest-norm frequencies per stage from its band minus every lower band."""
    rng = np.random.default_rng(seed)
    out = []
    used_band: set[tuple[int, int]] = set()
    prev = (-1, -1)
    for i, cfg in enumerate(configs):
        if cfg.band[0] <= prev[0] or cfg.band[1] <= prev[1]:
            raise ConfigError(f"stage {i}: band {cfg.band} does not increase over {prev}")
        available = [k for k in enumerate_band(*cfg.band) if k not in used_band]
        try:
            K = select_lowest(available, cfg.freq_count, rng)
        except ConfigError as exc:
            raise ConfigError(f"stage {i}: {exc}") from None
        out.append(FrequencySet(np.array(K, dtype=np.int64).reshape(-1, 2), period))
        used_band.update(enumerate_band(*cfg.band))
        prev = cfg.band
    return out


def init_mrnet(
    configs: Sequence[StageConfig],
    period: tuple[float, float] = (2.0, 2.0),
    channels: int = 3,
    seed: int = 0,
) -> MrNet:
    rng = np.random.default_rng(seed)
    freqs = partition_frequencies(configs, period, rng)
    stages = [
        _build(fs.omega, fs.period, fs, list(cfg.hidden_widths), channels, rng)
        for fs, cfg in zip(freqs, configs)
    ]
    return MrNet(stages)


def stage_outputs(net: MrNet, x) -> list[np.ndarray]:
    return [forward(s, x) for s in net.stages]


def mrnet_eval(net, x, t) -> np.ndarray:
    """``sum_i c_i(t) g_i(x)``; ``t`` is a scalar or one value per point."""
    net = as_mrnet(net)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
    c = blend_weights(t, net.N)
    out = np.zeros((x.shape[0], net.channels))
    for i, stage in enumerate(net.stages):
        ci = c[..., i]
        if np.ndim(ci) == 0:
            if ci == 0.0:
                continue
            g = forward(stage, x)
            out += g if ci == 1.0 else ci * g
        else:
            g = forward(stage, x)
            out += ci.reshape(-1, 1) * g
    return out


def trace_sum(tape: Tape, stages: Sequence[PeriodicInr], x, jacobian: bool = False):
    """Unit-weight sum of the given stages on a tape, with optional Jacobian."""
    f = jac = None
    for s in stages:
        fs, js = trace(tape, s, x, jacobian)
        f = fs if f is None else tape.add(f, fs)
        if jacobian:
            jac = js if jac is None else [tape.add(a, b) for a, b in zip(jac, js)]
    return f, jac
