"""Parameter storage, Adam, and a central finite-difference gradient checker."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np


class ParamStore:
    """Named float64 arrays with shapes fixed at registration."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, value in (arrays or {}).items():
            self.register(name, value)

    def register(self, name: str, value) -> None:
        if name in self._arrays:
            raise KeyError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite entries")
        self._arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._arrays:
            raise KeyError(f"unknown parameter {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._arrays[name].shape:
            raise ValueError(f"{name}: shape {arr.shape} != {self._arrays[name].shape}")
        self._arrays[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self) -> list[str]:
        return list(self._arrays)

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self._arrays.items()}

    def sq_norm(self, names=None) -> float:
        return float(sum(np.sum(self._arrays[n] ** 2) for n in (names or self._arrays)))

    def save(self, path) -> None:
        """Flat record: uint64 count, then per array uint64 ndim, dims, float64 row-major values.

        Names go in a length-prefixed UTF-8 field ahead of each array.
        """
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(self._arrays)))
            for name, arr in self._arrays.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<Q", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<Q", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        with open(path, "rb") as fh:
            (count,) = struct.unpack("<Q", fh.read(8))
            for _ in range(count):
                (nlen,) = struct.unpack("<Q", fh.read(8))
                name = fh.read(nlen).decode("utf-8")
                (ndim,) = struct.unpack("<Q", fh.read(8))
                shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
                size = int(np.prod(shape)) if ndim else 1
                values = np.frombuffer(fh.read(8 * size), dtype="<f8")
                store.register(name, values.reshape(shape))
        return store


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, **kw) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like(), **kw)


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Raises FloatingPointError before touching anything if a gradient is non-finite.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    bad = {n: int(np.size(g) - np.count_nonzero(np.isfinite(g))) for n, g in grads.items()}
    bad = {n: c for n, c in bad.items() if c}
    if bad:
        raise FloatingPointError(f"non-finite gradient entries, update rejected: {bad}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
        state.m.setdefault(name, np.zeros_like(g))
        state.v.setdefault(name, np.zeros_like(g))

    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def finite_diff_check(loss_fn: Callable[[ParamStore], float], params: ParamStore,
                      analytic_grads: dict[str, np.ndarray], probe_count: int = 20,
                      h: float = 1e-4, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences.

    Probes ``probe_count`` coordinates drawn uniformly over all parameter entries.
    Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
    """
    rng = np.random.default_rng(seed)
    names = [n for n in params.names() if n in analytic_grads]
    sizes = np.array([params[n].size for n in names])
    flat_ids = rng.integers(0, sizes.sum(), size=probe_count)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    work = params.copy()
    worst = 0.0
    for fid in flat_ids:
        k = int(np.searchsorted(offsets, fid, side="right") - 1)
        name, idx = names[k], int(fid - offsets[k])
        arr = work[name]
        flat = arr.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = loss_fn(work)
        flat[idx] = orig - h
        f_minus = loss_fn(work)
        flat[idx] = orig
        numeric = (f_plus - f_minus) / (2 * h)
        analytic = float(analytic_grads[name].reshape(-1)[idx])
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
