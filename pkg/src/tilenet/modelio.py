"""Little-endian binary model files.

Layout::

    "PINR" u32 version u32 n_stages
    per stage:
        u32 n_freq, u32 n_hidden, u32 widths[n_hidden], u32 channels, f64 P[2],
        i32 K[n_freq*2]            (version 1; version 2 stores f64 omega instead)
        f64 phi[n_freq]
        per hidden layer: f64 W[out*in] (row-major), f64 b[out]
        f64 C[channels*last_width], f64 c0[channels]
    optional trailer: "META" u32 nbytes, UTF-8 JSON

Version 2 exists only for SIREN-initialized networks, whose first-layer
frequencies are not integers. The trailer carries the color space.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .diffcore import Tensor
from .mrnet import MrNet
from .pinr import FrequencySet, PeriodicInr

MAGIC = b"PINR"
VERSION_INTEGER = 1
VERSION_REAL = 2
META_TAG = b"META"


class ModelFileError(ValueError):
    code = "model-file"


class BadMagicError(ModelFileError):
    code = "bad-magic"


class VersionError(ModelFileError):
    code = "bad-version"


class TruncatedError(ModelFileError):
    code = "truncated"

    def __init__(self, stage: int | None, field: str):
        where = "header" if stage is None else f"stage {stage}"
        super().__init__(f"file truncated in {where} while reading {field}")
        self.stage = stage
        self.field = field


def save_model(net, path) -> None:
    stages = net.stages if isinstance(net, MrNet) else [net]
    real = any(not s.periodic for s in stages)
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION_REAL if real else VERSION_INTEGER, len(stages))
    for s in stages:
        widths = s.hidden_widths
        out += struct.pack(f"<II{len(widths)}II", s.n_freq, len(widths), *widths, s.channels)
        out += np.asarray(s.period, dtype="<f8").tobytes()
        if real:
            out += np.ascontiguousarray(s.omega, dtype="<f8").tobytes()
        else:
            out += np.ascontiguousarray(s.freq.K, dtype="<i4").tobytes()
        for p in s.parameters():
            out += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    meta = {"color_space": net.color_space, **net.meta}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += META_TAG + struct.pack("<I", len(blob)) + blob
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0
        self.stage: int | None = None

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(self.stage, field)
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, field: str, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count, field))
        return vals[0] if count == 1 else list(vals)

    def array(self, dtype: str, shape, field: str) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(n * np.dtype(dtype).itemsize, field)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(np.float64 if "f8" in dtype else np.int64)


def load_model(path):
    """Read a model file; one stage gives a PeriodicInr, several an MrNet."""
    r = _Reader(Path(path).read_bytes())
    magic = r.buf[:4]
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    r.pos = 4
    version = r.u32("version")
    if version not in (VERSION_INTEGER, VERSION_REAL):
        raise VersionError(f"unsupported model version {version}")
    n_stages = r.u32("n_stages")
    stages = []
    for i in range(n_stages):
        r.stage = i
        n = r.u32("n_freq")
        n_hidden = r.u32("n_hidden")
        widths = list(r.array("<u4", (n_hidden,), "widths").astype(int)) if n_hidden else []
        channels = r.u32("channels")
        period = tuple(r.array("<f8", (2,), "P"))
        if version == VERSION_INTEGER:
            K = r.array("<i4", (n, 2), "K")
            freq = FrequencySet(K, period)
            omega = freq.omega
        else:
            freq = None
            omega = r.array("<f8", (n, 2), "omega")
        phi = Tensor(r.array("<f8", (1, n), "phi"), requires_grad=True, name="phi")
        hidden = []
        fan_in = n
        for j, m in enumerate(widths):
            W = Tensor(r.array("<f8", (m, fan_in), f"W{j}"), requires_grad=True, name=f"W{j}")
            b = Tensor(r.array("<f8", (1, m), f"b{j}"), requires_grad=True, name=f"b{j}")
            hidden.append((W, b))
            fan_in = m
        C = Tensor(r.array("<f8", (channels, fan_in), "C"), requires_grad=True, name="C")
        c0 = Tensor(r.array("<f8", (1, channels), "c0"), requires_grad=True, name="c0")
        stages.append(PeriodicInr(omega, period, phi, hidden, C, c0, freq=freq))
    r.stage = None
    meta = {}
    if r.pos < len(r.buf):
        if r.take(4, "meta tag") != META_TAG:
            raise ModelFileError("trailing bytes after last stage")
        nbytes = r.u32("meta length")
        meta = json.loads(r.take(nbytes, "meta").decode("utf-8"))
    color = meta.pop("color_space", "rgb")
    for s in stages:
        s.color_space = color
    if n_stages == 1:
        stages[0].meta.update(meta)
        return stages[0]
    return MrNet(stages, color_space=color, meta=meta)
