"""Finite measures and nonnegative test functions over an ordered finite site set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class SiteSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if not labels:
            raise ValueError("a site set needs at least one site")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate site labels: {labels}")
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    @classmethod
    def of_size(cls, d: int) -> "SiteSet":
        return cls(tuple(f"x{i}" for i in range(d)))

    def __len__(self):
        return self.size


def _as_nonneg_vector(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} has non-finite entries: {arr}")
    if np.any(arr < 0):
        raise ValueError(f"{what} must be componentwise nonnegative: {arr}")
    arr.setflags(write=False)
    return arr


class _SiteVector:
    """Immutable nonnegative vector tied to a SiteSet."""

    _what = "vector"
    __slots__ = ("values", "sites")

    def __init__(self, values: Sequence[float] | np.ndarray, sites: SiteSet | None = None):
        vals = _as_nonneg_vector(values, self._what)
        if sites is None:
            sites = SiteSet.of_size(vals.size)
        if sites.size != vals.size:
            raise ValueError(f"{self._what} has {vals.size} entries but the site set has {sites.size}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "sites", sites)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @property
    def size(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.size

    def __eq__(self, other):
        return (
            type(other) is type(self)
            and self.sites == other.sites
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((type(self).__name__, self.sites, self.values.tobytes()))

    def __repr__(self):
        return f"{type(self).__name__}({self.values.tolist()})"

    def to_json(self) -> dict:
        return {"sites": list(self.sites.labels), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, obj: dict):
        return cls(obj["values"], SiteSet(tuple(obj["sites"])))


class FiniteMeasure(_SiteVector):
    """Mass vector mu over the sites; the state space of the branching processes."""

    _what = "measure"

    @property
    def masses(self) -> np.ndarray:
        return self.values

    def total(self) -> float:
        return float(self.values.sum())

    def __add__(self, other: "FiniteMeasure") -> "FiniteMeasure":
        _check_same_sites(self, other)
        return FiniteMeasure(self.values + other.values, self.sites)

    def scale(self, a: float) -> "FiniteMeasure":
        if a < 0:
            raise ValueError("measures can only be scaled by a >= 0")
        return FiniteMeasure(a * self.values, self.sites)

    @classmethod
    def zero(cls, sites: SiteSet) -> "FiniteMeasure":
        return cls(np.zeros(sites.size), sites)


class TestFunction(_SiteVector):
    """A bounded nonnegative function on the sites."""

    __test__ = False  # keep pytest from collecting this class
    _what = "test function"

    @classmethod
    def constant(cls, value: float, sites: SiteSet) -> "TestFunction":
        return cls(np.full(sites.size, float(value)), sites)


def _check_same_sites(a: _SiteVector, b: _SiteVector):
    if a.size != b.size:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    if a.sites != b.sites:
        raise ValueError(f"site sets differ: {a.sites.labels} vs {b.sites.labels}")


def integrate(mu: FiniteMeasure, f: TestFunction) -> float:
    """mu(f) = sum_i mu_i f_i."""
    _check_same_sites(mu, f)
    return float(np.dot(mu.values, f.values))


def normalize(mu: FiniteMeasure) -> tuple[float, np.ndarray | None]:
    """Total mass and the normalized probability vector (None for the null measure)."""
    total = float(mu.values.sum())
    if total <= 0.0:
        return total, None
    return total, mu.values / total


def as_array(x) -> np.ndarray:
    """Plain float vector from a measure, a test function or any array-like."""
    if isinstance(x, _SiteVector):
        return x.values
    return np.asarray(x, dtype=np.float64).reshape(-1)
