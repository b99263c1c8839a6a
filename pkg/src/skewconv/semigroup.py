"""Log-Laplace functionals of skew convolution semigroups built from entrance laws.

All functionals are returned as -log of a Laplace functional, so convolution of
laws is addition of values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cumulant import (
    DEFAULT_STEP,
    BranchingMechanism,
    PEntranceLaw,
    _cumtrapz,
    cumulant_path,
    s_curve,
)
from .measure import as_array
from .motion import MotionModel


def _law(x) -> PEntranceLaw:
    return x if isinstance(x, PEntranceLaw) else PEntranceLaw(x)


@dataclass(frozen=True, eq=False)
class EntranceLawSpec:
    """Infinitely divisible entrance law given by a P-entrance law kappa and finitely
    many weighted P-entrance laws (c_i, eta_i)."""

    kappa: PEntranceLaw
    atoms: tuple[tuple[float, PEntranceLaw], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kappa", _law(self.kappa))
        atoms = tuple((float(c), _law(eta)) for c, eta in self.atoms)
        for c, _ in atoms:
            if not (c > 0 and math.isfinite(c)):
                raise ValueError(f"atom weights must be positive and finite, got {c}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def size(self) -> int:
        return self.kappa.seed.size

    def merge(self, other: "EntranceLawSpec") -> "EntranceLawSpec":
        """Spec whose law is the convolution of the two."""
        return EntranceLawSpec(PEntranceLaw(self.kappa.seed + other.kappa.seed), self.atoms + other.atoms)

    def scaled(self, a: float) -> "EntranceLawSpec":
        """Multiply kappa and the atom weights (not the etas) by a > 0."""
        return EntranceLawSpec(self.kappa.scaled(a), tuple((a * c, eta) for c, eta in self.atoms))

    def integrability(self, motion: MotionModel, nodes: int = 101) -> float:
        """sum_i c_i int_0^1 eta_i,s(1) ds; finite for every closed eta."""
        s = np.linspace(0.0, 1.0, nodes)
        total = 0.0
        for c, eta in self.atoms:
            vals = np.array([eta.at(motion, si).sum() for si in s])
            total += c * float(np.trapezoid(vals, s))
        return total

    @classmethod
    def zero(cls, d: int) -> "EntranceLawSpec":
        return cls(PEntranceLaw(np.zeros(d)))


@dataclass(frozen=True, eq=False)
class SCSemigroupSpec:
    """Homogeneous SC-semigroup: -log L_{N_t}(f) = int_0^t -log L_{K_s}(f) ds."""

    entrance: EntranceLawSpec
    mech: BranchingMechanism
    motion: MotionModel

    def __post_init__(self):
        if not (self.entrance.size == self.mech.size == self.motion.size):
            raise ValueError("entrance law, mechanism and motion dimensions disagree")


def entrance_curve(spec: EntranceLawSpec, mech, motion, f, horizon: float, step: float = DEFAULT_STEP):
    """-log L_{K_s}(f) for all grid times s in [0, horizon]."""
    grid, vals = s_curve(spec.kappa, mech, motion, f, horizon, step)
    vals = vals.copy()
    for c, eta in spec.atoms:
        vals += c * -np.expm1(-s_curve(eta, mech, motion, f, horizon, step)[1])
    return grid, vals


def entrance_log_laplace(spec: EntranceLawSpec, mech, motion, f, t: float, step: float = DEFAULT_STEP) -> float:
    """-log L_{K_t}(f) = S_t(kappa, f) + sum_i c_i (1 - exp(-S_t(eta_i, f)))."""
    if not t > 0:
        raise ValueError("entrance laws are indexed by t > 0")
    return float(entrance_curve(spec, mech, motion, f, t, step)[1][-1])


def _j_curve(entrance: EntranceLawSpec, mech, motion, f, horizon: float, step: float):
    grid, ell = entrance_curve(entrance, mech, motion, f, horizon, step)
    return grid, _cumtrapz(ell, grid[1] - grid[0]), ell


def _accumulated(grid: np.ndarray, cum: np.ndarray, ell: np.ndarray, u: float) -> float:
    """int_0^u ell for u anywhere in the grid range (linear interpolation on the last cell)."""
    if u <= 0:
        return 0.0
    h = grid[1] - grid[0]
    k = min(int(u / h), grid.size - 1)
    if k == grid.size - 1 or abs(u - grid[k]) <= 1e-12 * max(1.0, u):
        return float(cum[k])
    frac = (u - grid[k]) / h
    ell_u = ell[k] + frac * (ell[k + 1] - ell[k])
    return float(cum[k] + 0.5 * (u - grid[k]) * (ell[k] + ell_u))


def sc_log_laplace(spec: SCSemigroupSpec, f, t: float, step: float = DEFAULT_STEP) -> float:
    """J_t(f) = -log L_{N_t}(f)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    return float(_j_curve(spec.entrance, spec.mech, spec.motion, f, t, step)[1][-1])


def verify_skew_homogeneous(spec: SCSemigroupSpec, f, r: float, t: float, step: float = DEFAULT_STEP) -> float:
    """|J_{r+t}(f) - J_r(V_t f) - J_t(f)|."""
    if r < 0 or t < 0:
        raise ValueError("r and t must be nonnegative")
    f = as_array(f)
    vt_f = cumulant_path(spec.mech, spec.motion, f, t, step).final if t > 0 else f
    lhs = sc_log_laplace(spec, f, r + t, step)
    return abs(lhs - sc_log_laplace(spec, vt_f, r, step) - sc_log_laplace(spec, f, t, step))


def transition_log_laplace(mu, spec: SCSemigroupSpec, f, t: float, step: float = DEFAULT_STEP) -> float:
    """-log of the immigration transition functional: mu(V_t f) + J_t(f)."""
    mu, f = as_array(mu), as_array(f)
    if t == 0:
        return float(mu @ f)
    vt_f = cumulant_path(spec.mech, spec.motion, f, t, step).final
    return float(mu @ vt_f) + sc_log_laplace(spec, f, t, step)


@dataclass(frozen=True, eq=False)
class ClosedInitialLaw:
    """Infinitely divisible law on M(E) with -log L(f) = eta(f) + sum_j h_j (1 - exp(-nu_j(f)))."""

    eta: np.ndarray
    atoms: tuple[tuple[float, np.ndarray], ...] = ()

    def __post_init__(self):
        eta = np.array(as_array(self.eta), dtype=np.float64)
        if np.any(eta < 0):
            raise ValueError("eta must be nonnegative")
        atoms = tuple((float(w), np.array(as_array(nu), dtype=np.float64)) for w, nu in self.atoms)
        for w, nu in atoms:
            if w < 0 or np.any(nu < 0):
                raise ValueError("initial-law atoms need nonnegative weights and measures")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "atoms", atoms)

    def log_laplace(self, f: np.ndarray) -> float:
        val = float(self.eta @ f)
        for w, nu in self.atoms:
            val += w * -math.expm1(-float(nu @ f))
        return val


@dataclass(frozen=True, eq=False)
class InhomogeneousSCSpec:
    """Ingredients of a general SC-semigroup: open entrance times T1, closed entrance times T2
    and a piecewise-constant immigration density with one shift-homogeneous entrance law."""

    step_open: tuple[tuple[float, EntranceLawSpec], ...] = ()
    step_closed: tuple[tuple[float, ClosedInitialLaw], ...] = ()
    intervals: tuple[tuple[float, float, float], ...] = ()
    continuous: EntranceLawSpec | None = None

    def __post_init__(self):
        opens = tuple((float(s), e) for s, e in self.step_open)
        closed = tuple((float(s), k) for s, k in self.step_closed)
        ivs = tuple((float(a), float(b), float(rate)) for a, b, rate in self.intervals)
        for times in ([s for s, _ in opens], [s for s, _ in closed]):
            if any(not math.isfinite(s) for s in times) or times != sorted(times):
                raise ValueError("atom times must be finite and sorted")
        for a, b, rate in ivs:
            if not (a < b and rate >= 0 and math.isfinite(a) and math.isfinite(b) and math.isfinite(rate)):
                raise ValueError(f"bad immigration interval {(a, b, rate)}")
        if ivs and self.continuous is None:
            raise ValueError("a continuous immigration density needs an entrance law")
        object.__setattr__(self, "step_open", opens)
        object.__setattr__(self, "step_closed", closed)
        object.__setattr__(self, "intervals", ivs)


def inhomogeneous_log_laplace(spec: InhomogeneousSCSpec, mech, motion, f, r: float, t: float,
                              step: float = DEFAULT_STEP) -> float:
    """-log L_{N_{r,t}}(f) summed over the three ingredient families.

    T1 times count on [r, t), T2 times on (r, t].
    """
    if r > t:
        raise ValueError("need r <= t")
    f = as_array(f)
    total = 0.0
    for s, ent in spec.step_open:
        if r <= s < t:
            total += entrance_log_laplace(ent, mech, motion, f, t - s, step)
    for s, law in spec.step_closed:
        if r < s <= t:
            g = cumulant_path(mech, motion, f, t - s, step).final if t > s else f
            total += law.log_laplace(g)
    active = [(max(a, r), min(b, t), rate) for a, b, rate in spec.intervals if min(b, t) > max(a, r) and rate > 0]
    if active:
        grid, cum, ell = _j_curve(spec.continuous, mech, motion, f, t - r, step)
        for lo, hi, rate in active:
            total += rate * (_accumulated(grid, cum, ell, t - lo) - _accumulated(grid, cum, ell, t - hi))
    return total


def verify_sc_axiom(spec: InhomogeneousSCSpec, mech, motion, f, r: float, s: float, t: float,
                    step: float = DEFAULT_STEP) -> float:
    """|J_{r,t}(f) - J_{r,s}(V_{t-s} f) - J_{s,t}(f)|."""
    if not r <= s <= t:
        raise ValueError("need r <= s <= t")
    f = as_array(f)
    vf = cumulant_path(mech, motion, f, t - s, step).final if t > s else f
    lhs = inhomogeneous_log_laplace(spec, mech, motion, f, r, t, step)
    return abs(lhs - inhomogeneous_log_laplace(spec, mech, motion, vf, r, s, step)
               - inhomogeneous_log_laplace(spec, mech, motion, f, s, t, step))


@dataclass(frozen=True)
class LongTimeLimit:
    value: float
    diverged: bool
    horizon: float
    window_increments: tuple[float, ...] = field(default=(), repr=False)


def longtime_decompose(spec: SCSemigroupSpec, f, tol: float = 1e-7, step: float = DEFAULT_STEP,
                       ratio: float = 0.9, patience: int = 5, max_horizon: float = 2.0 ** 12) -> LongTimeLimit:
    """lim_{t->oo} J_t(f), or a divergence flag.

    The horizon doubles until the increment of J over the last unit window drops
    below tol.  Divergence is flagged once the increment over the doubling window
    [T/2, T] has failed to shrink by the factor `ratio` for `patience` doublings.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    horizon = 1.0
    previous = None
    stalled = 0
    history = []
    while True:
        grid, cum, ell = _j_curve(spec.entrance, spec.mech, spec.motion, f, horizon, step)
        value = float(cum[-1])
        if horizon >= 2.0:
            unit = value - _accumulated(grid, cum, ell, horizon - 1.0)
            if unit < tol:
                return LongTimeLimit(value, False, horizon, tuple(history))
        elif value < tol and not np.any(ell):
            return LongTimeLimit(value, False, horizon, tuple(history))
        window = value - _accumulated(grid, cum, ell, horizon / 2.0)
        history.append(window)
        if previous is not None and previous > 0:
            stalled = stalled + 1 if window > ratio * previous else 0
            if stalled >= patience:
                return LongTimeLimit(math.inf, True, horizon, tuple(history))
        previous = window
        if horizon >= max_horizon:
            return LongTimeLimit(math.inf, True, horizon, tuple(history))
        horizon *= 2.0
