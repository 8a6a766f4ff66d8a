"""Periodic sinusoidal INR: one stage of a multiresolution texture network.

The first layer projects 2D coordinates onto integer harmonics of a period
``P``; because every frequency is a multiple of ``2*pi/P`` the whole network
repeats with period ``P`` no matter what the hidden layers learn. That layer
is frozen. Phases, hidden layers and the linear output layer are trained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .diffcore import Tape, Tensor


class ConfigError(ValueError):
    """An architecture or initialization request cannot be satisfied."""


def enumerate_band(b1: int, b2: int) -> list[tuple[int, int]]:
    """Half-plane integer frequencies in ``[0, b1] x [-b2, b2]``.

    ``(0, 0)`` and ``(0, k2 < 0)`` are dropped so that no two entries are
    negatives of each other; the count is ``(b1+1)(2*b2+1) - (b2+1)``.
    """
    if b1 < 0 or b2 < 0:
        raise ConfigError(f"band limits must be nonnegative, got ({b1}, {b2})")
    return [
        (k1, k2)
        for k1 in range(b1 + 1)
        for k2 in range(-b2, b2 + 1)
        if k1 > 0 or k2 > 0
    ]


def band_size(b1: int, b2: int) -> int:
    return (b1 + 1) * (2 * b2 + 1) - (b2 + 1)


@dataclass
class FrequencySet:
    K: np.ndarray
    period: tuple[float, float]

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.int64).reshape(-1, 2)
        self.period = (float(self.period[0]), float(self.period[1]))
        if min(self.period) <= 0:
            raise ConfigError(f"periods must be positive, got {self.period}")

    def __len__(self) -> int:
        return len(self.K)

    @property
    def omega(self) -> np.ndarray:
        return self.K * (2.0 * np.pi / np.asarray(self.period))

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.K}

    def is_sound(self) -> bool:
        """No zero row, no duplicate, no sign-paired rows."""
        rows = [tuple(r) for r in self.K.tolist()]
        seen: set[tuple[int, int]] = set()
        for r in rows:
            if r == (0, 0) or r in seen or (-r[0], -r[1]) in seen:
                return False
            seen.add(r)
        return True


def select_lowest(candidates: Sequence[tuple[int, int]], count: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """The ``count`` candidates of smallest Euclidean norm; ties broken by ``rng``."""
    if count > len(candidates):
        raise ConfigError(
            f"requested {count} frequencies but only {len(candidates)} are available "
            f"(short by {count - len(candidates)})"
        )
    keys = rng.random(len(candidates))
    order = sorted(range(len(candidates)), key=lambda i: (candidates[i][0] ** 2 + candidates[i][1] ** 2, keys[i]))
    return [candidates[i] for i in order[:count]]


@dataclass
class PeriodicInr:
    """One sinusoidal MLP stage ``f(x) = c0 + C sin(W_L ... sin(omega x + phi) ... + b_L)``.

    ``omega`` is the frozen first-layer matrix (n x 2). ``freq`` holds the
    integer multipliers it was built from; it is ``None`` for SIREN-style
    networks whose frequencies are arbitrary reals.
    """

    omega: np.ndarray
    period: tuple[float, float]
    phi: Tensor
    hidden: list[tuple[Tensor, Tensor]]
    C: Tensor
    c0: Tensor
    freq: FrequencySet | None = None
    color_space: str = "rgb"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.omega.setflags(write=False)
        width = self.n_freq
        for W, b in self.hidden:
            if W.shape[1] != width or b.shape != (1, W.shape[0]):
                raise ConfigError(f"hidden layer {W.shape}/{b.shape} does not chain from width {width}")
            width = W.shape[0]
        if self.C.shape[1] != width or self.c0.shape != (1, self.C.shape[0]):
            raise ConfigError(f"output layer {self.C.shape} does not match width {width}")

    @property
    def periodic(self) -> bool:
        return self.freq is not None

    @property
    def n_freq(self) -> int:
        return self.omega.shape[0]

    @property
    def channels(self) -> int:
        return self.C.shape[0]

    @property
    def hidden_widths(self) -> list[int]:
        return [W.shape[0] for W, _ in self.hidden]

    def parameters(self) -> list[Tensor]:
        params = [self.phi]
        for W, b in self.hidden:
            params += [W, b]
        return params + [self.C, self.c0]


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def _build(omega, period, freq, hidden_widths, channels, rng) -> PeriodicInr:
    n = omega.shape[0]
    phi = Tensor(rng.uniform(-np.pi, np.pi, size=(1, n)), requires_grad=True, name="phi")
    hidden = []
    fan_in = n
    for i, m in enumerate(hidden_widths):
        W = Tensor(_uniform(rng, math.sqrt(6.0 / fan_in), (m, fan_in)), requires_grad=True, name=f"W{i}")
        b = Tensor(np.zeros((1, m)), requires_grad=True, name=f"b{i}")
        hidden.append((W, b))
        fan_in = m
    C = Tensor(_uniform(rng, math.sqrt(6.0 / fan_in), (channels, fan_in)), requires_grad=True, name="C")
    c0 = Tensor(np.zeros((1, channels)), requires_grad=True, name="c0")
    return PeriodicInr(omega=omega, period=period, phi=phi, hidden=hidden, C=C, c0=c0, freq=freq)


def init_periodic(
    freq_count: int,
    band: tuple[int, int],
    exclude: FrequencySet | Sequence[tuple[int, int]] | None = None,
    period: tuple[float, float] = (2.0, 2.0),
    hidden_widths: Sequence[int] = (),
    channels: int = 3,
    seed: int | np.random.Generator = 0,
) -> PeriodicInr:
    """Stage with the ``freq_count`` lowest-norm free frequencies of ``band``."""
    rng = np.random.default_rng(seed)
    excluded = set()
    if exclude is not None:
        excluded = exclude.as_set() if isinstance(exclude, FrequencySet) else {tuple(k) for k in exclude}
    available = [k for k in enumerate_band(*band) if k not in excluded]
    K = select_lowest(available, freq_count, rng)
    freq = FrequencySet(np.array(K, dtype=np.int64).reshape(-1, 2), period)
    return _build(freq.omega, freq.period, freq, list(hidden_widths), channels, rng)


def init_siren(
    freq_count: int,
    omega0: float = 30.0,
    hidden_widths: Sequence[int] = (),
    channels: int = 3,
    seed: int | np.random.Generator = 0,
    period: tuple[float, float] = (2.0, 2.0),
) -> PeriodicInr:
    """SIREN first layer: ``omega0 * U(-1/2, 1/2)`` per input dimension.

    The result is not periodic; ``period`` is only kept as the nominal
    training domain extent.
    """
    if omega0 < 0:
        raise ConfigError(f"omega0 must be nonnegative, got {omega0}")
    rng = np.random.default_rng(seed)
    omega = omega0 * rng.uniform(-0.5, 0.5, size=(freq_count, 2))
    net = _build(omega, (float(period[0]), float(period[1])), None, list(hidden_widths), channels, rng)
    net.meta["omega0"] = float(omega0)
    return net


# -- evaluation ---------------------------------------------------------------


def trace(tape: Tape, net: PeriodicInr, x: np.ndarray, jacobian: bool = False):
    """Build ``f(x)`` (and optionally both Jacobian columns) on ``tape``.

    Returns ``(f, jac)`` where ``f`` is a (B, channels) tensor and ``jac`` is
    ``[df/dx1, df/dx2]`` as (B, channels) tensors, or ``None``. The Jacobian
    is the forward-mode chain ``C diag(cos z_L) W_L ... diag(cos a) omega``
    written with the same primitives, so its parameter gradients come out of
    the ordinary reverse pass.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
    B = x.shape[0]
    ones = Tensor._wrap(np.ones((B, 1)))
    a = tape.add(Tensor._wrap(x @ net.omega.T), tape.matmul(ones, net.phi))
    h = tape.sin(a)
    tangents = None
    if jacobian:
        ca = tape.cos(a)
        tangents = [
            tape.mul(ca, Tensor._wrap(np.broadcast_to(net.omega[:, d], ca.shape).copy()))
            for d in range(2)
        ]
    for W, b in net.hidden:
        Wt = tape.transpose(W)
        z = tape.add(tape.matmul(h, Wt), tape.matmul(ones, b))
        h = tape.sin(z)
        if jacobian:
            cz = tape.cos(z)
            tangents = [tape.mul(cz, tape.matmul(t, Wt)) for t in tangents]
    Ct = tape.transpose(net.C)
    f = tape.add(tape.matmul(h, Ct), tape.matmul(ones, net.c0))
    jac = [tape.matmul(t, Ct) for t in tangents] if jacobian else None
    return f, jac


def forward(net: PeriodicInr, x) -> np.ndarray:
    """Evaluate the stage at a batch of points; returns (B, channels)."""
    f, _ = trace(Tape(record=False), net, x)
    return f.data


def spatial_jacobian(net: PeriodicInr, x) -> np.ndarray:
    """Exact spatial Jacobian; returns (B, channels, 2)."""
    _, jac = trace(Tape(record=False), net, x, jacobian=True)
    return np.stack([j.data for j in jac], axis=-1)


class ParamCount(NamedTuple):
    trainable: int
    frozen: int

    @property
    def total(self) -> int:
        return self.trainable + self.frozen


def param_count(net) -> ParamCount:
    """Trainable scalars (phi, W, b, C, c0) and frozen first-layer entries."""
    stages = getattr(net, "stages", None) or [net]
    trainable = sum(p.data.size for s in stages for p in s.parameters())
    frozen = sum(s.omega.size for s in stages)
    return ParamCount(trainable, frozen)
