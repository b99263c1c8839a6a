"""Finite-state Markov motion: transition matrices, the killed semigroup and h-transforms."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import expm

from .measure import SiteSet, as_array

ROW_SUM_TOL = 1e-12
CLAMP_TOL = 1e-12


class _MatrixCache:
    """t -> matrix memo; lock-free reads, locked single-writer inserts."""

    def __init__(self, maxsize: int = 256):
        self._data: dict = {}
        self._lock = threading.Lock()
        self.maxsize = maxsize

    def get(self, key):
        return self._data.get(key)

    def put(self, key, value):
        with self._lock:
            if len(self._data) >= self.maxsize:
                self._data.clear()
            self._data[key] = value


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Conservative Q-matrix chain on a finite site set."""

    generator: np.ndarray
    sites: SiteSet | None = None
    _cache: _MatrixCache = field(default_factory=_MatrixCache, repr=False, compare=False)

    def __post_init__(self):
        Q = np.array(self.generator, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"generator must be square, got shape {Q.shape}")
        if not np.all(np.isfinite(Q)):
            raise ValueError("generator has non-finite entries")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        rows = Q.sum(axis=1)
        if np.any(np.abs(rows) > ROW_SUM_TOL * max(1.0, np.abs(Q).max())):
            raise ValueError(f"rows must sum to zero (conservative chain), got {rows}")
        Q.setflags(write=False)
        object.__setattr__(self, "generator", Q)
        sites = self.sites if self.sites is not None else SiteSet.of_size(Q.shape[0])
        if sites.size != Q.shape[0]:
            raise ValueError("generator size does not match the site set")
        object.__setattr__(self, "sites", sites)

    @property
    def size(self) -> int:
        return self.generator.shape[0]

    @property
    def is_motionless(self) -> bool:
        return not np.any(self.generator)

    @classmethod
    def two_state(cls, q01: float, q10: float | None = None) -> "MotionModel":
        q10 = q01 if q10 is None else q10
        return cls(np.array([[-q01, q01], [q10, -q10]]))

    @classmethod
    def still(cls, d: int = 1) -> "MotionModel":
        return cls(np.zeros((d, d)))


@dataclass(frozen=True, eq=False)
class KillingRate:
    """Per-site rate b; negative entries create mass."""

    rates: np.ndarray

    def __post_init__(self):
        b = np.array(self.rates, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(b)):
            raise ValueError("killing rates must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "rates", b)

    @property
    def bound(self) -> float:
        return float(np.abs(self.rates).max()) if self.rates.size else 0.0


def _rates(b) -> np.ndarray:
    if isinstance(b, KillingRate):
        return b.rates
    return np.asarray(b, dtype=np.float64).reshape(-1)


def _check_time(t: float):
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"time must be a finite nonnegative number, got {t}")


def transition(model: MotionModel, t: float) -> np.ndarray:
    """P_t = exp(tQ), clamped into [0, 1]."""
    _check_time(t)
    key = ("P", float(t))
    hit = model._cache.get(key)
    if hit is not None:
        return hit
    P = expm(t * model.generator)
    P[(P < 0) & (P > -CLAMP_TOL)] = 0.0
    P[(P > 1) & (P < 1 + CLAMP_TOL)] = 1.0
    P.setflags(write=False)
    model._cache.put(key, P)
    return P


def killed_transition(model: MotionModel, b, t: float) -> np.ndarray:
    """P_t^b = exp(t(Q - diag b)), the semigroup of the chain killed at rate b."""
    _check_time(t)
    rates = _rates(b)
    if rates.size != model.size:
        raise ValueError("killing rate dimension does not match the motion")
    if not np.any(rates):
        return transition(model, t)
    key = ("Pb", float(t), rates.tobytes())
    hit = model._cache.get(key)
    if hit is not None:
        return hit
    M = expm(t * (model.generator - np.diag(rates)))
    if np.all(rates >= 0):
        M[(M < 0) & (M > -CLAMP_TOL)] = 0.0
    M.setflags(write=False)
    model._cache.put(key, M)
    return M


def h_transform(model: MotionModel, b, h, t: float) -> np.ndarray:
    """T_t f = h^{-1} P_t^b(h f), returned as the matrix diag(h)^{-1} P_t^b diag(h)."""
    h = as_array(h)
    if h.size != model.size:
        raise ValueError("h dimension does not match the motion")
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise ValueError("h must be strictly positive")
    M = killed_transition(model, b, t)
    return (M * h[None, :]) / h[:, None]


def excessive_h(model: MotionModel, b=None, nodes: int = 65) -> np.ndarray:
    """h = int_0^1 P_s^b 1 ds by composite Simpson on `nodes` points.

    Identically one for a conservative chain without killing.
    """
    rates = np.zeros(model.size) if b is None else _rates(b)
    s = np.linspace(0.0, 1.0, nodes)
    ones = np.ones(model.size)
    vals = np.array([killed_transition(model, rates, si) @ ones for si in s])
    return simpson(vals, x=s, axis=0)
