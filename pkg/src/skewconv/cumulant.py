"""Branching mechanisms and the nonlinear cumulant equations.

On a finite site set the mild cumulant equation is equivalent to the ODE system

    dv/dt = Q v - phi(., v) + g,   v(0) = f,

which is integrated here with classical RK4 on a uniform grid.  With g = 0 the
solution is V_t f; with g > 0 it is the occupation-time cumulant V_t(f, g).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import expm
from scipy.signal import convolve

from .measure import FiniteMeasure, as_array
from .motion import MotionModel, killed_transition

log = logging.getLogger(__name__)

CLAMP_SILENT = 1e-12
CLAMP_WARN = 1e-8
DEFAULT_STEP = 1e-3


class DivergenceError(ArithmeticError):
    """The cumulant solution stopped being finite."""

    def __init__(self, time: float):
        super().__init__(f"cumulant solution diverged at t={time:.6g}")
        self.time = time


@dataclass(frozen=True, eq=False)
class BranchingMechanism:
    """phi(x, z) = b(x) z + c(x) z^2 + sum_atoms w (exp(-z u) - 1 + z u)."""

    b: np.ndarray
    c: np.ndarray
    atoms: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self):
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        c = np.array(self.c, dtype=np.float64).reshape(-1)
        if b.size != c.size:
            raise ValueError("b and c must have the same length")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("b and c must be finite")
        if np.any(c < 0):
            raise ValueError("c must be nonnegative")
        atoms = tuple(tuple((float(u), float(w)) for u, w in site) for site in self.atoms) if self.atoms else ()
        if atoms and len(atoms) != b.size:
            raise ValueError("need one atom list per site")
        for site in atoms:
            for u, w in site:
                if not (u > 0 and w >= 0 and math.isfinite(u) and math.isfinite(w)):
                    raise ValueError(f"jump atoms need u > 0 and w >= 0, got {(u, w)}")
        width = max((len(s) for s in atoms), default=0)
        U = np.ones((b.size, width))
        W = np.zeros((b.size, width))
        for i, site in enumerate(atoms):
            for j, (u, w) in enumerate(site):
                U[i, j], W[i, j] = u, w
        if np.any(np.sum(W * np.minimum(U, U * U), axis=1) == np.inf):
            raise ValueError("jump kernel is not integrable")
        for arr in (b, c, U, W):
            arr.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "_U", U)
        object.__setattr__(self, "_W", W)
        if np.any(self.phi(np.zeros(b.size)) != 0):
            raise AssertionError("phi(x, 0) must vanish")

    @property
    def size(self) -> int:
        return self.b.size

    @property
    def has_jumps(self) -> bool:
        return bool(np.any(self._W > 0))

    def phi(self, z: np.ndarray) -> np.ndarray:
        """Vectorized phi(x, z_x) over all sites."""
        out = self.b * z + self.c * z * z
        if self._W.shape[1]:
            zu = z[:, None] * self._U
            out = out + np.sum(self._W * (np.expm1(-zu) + zu), axis=1)
        return out

    def to_json(self) -> dict:
        return {
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "m": [[list(a) for a in site] for site in self.atoms] if self.atoms else [[] for _ in range(self.size)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BranchingMechanism":
        m = obj.get("m") or []
        atoms = tuple(tuple((a[0], a[1]) for a in site) for site in m) if any(m) else ()
        return cls(obj["b"], obj["c"], atoms)


def phi_eval(mech: BranchingMechanism, site: int, z: float) -> float:
    if z < 0 or not math.isfinite(z):
        raise ValueError(f"phi is defined for finite z >= 0, got {z}")
    zz = np.zeros(mech.size)
    zz[site] = z
    return float(mech.phi(zz)[site])


@dataclass(frozen=True, eq=False)
class CumulantSolution:
    grid: np.ndarray
    values: np.ndarray
    step: float

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def to_csv(self, fh=None) -> str | None:
        """Write rows (time, v_1, ..., v_d); returns the text when no handle is given."""
        own = fh is None
        buf = io.StringIO() if own else fh
        writer = csv.writer(buf)
        writer.writerow(["time"] + [f"v_{i + 1}" for i in range(self.values.shape[1])])
        for t, row in zip(self.grid, self.values):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        return buf.getvalue() if own else None


@dataclass(frozen=True, eq=False)
class PEntranceLaw:
    """Closed entrance law kappa_t = mu0 P_t of the motion (every entrance law on a finite chain is closed)."""

    seed: np.ndarray

    def __post_init__(self):
        mu0 = np.array(as_array(self.seed), dtype=np.float64)
        if np.any(mu0 < 0) or not np.all(np.isfinite(mu0)):
            raise ValueError("entrance law seed must be a finite nonnegative measure")
        mu0.setflags(write=False)
        object.__setattr__(self, "seed", mu0)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.seed)

    def scaled(self, a: float) -> "PEntranceLaw":
        return PEntranceLaw(a * self.seed)

    def at(self, motion: MotionModel, t: float) -> np.ndarray:
        return self.seed @ killed_transition(motion, np.zeros(motion.size), t)

    def curve(self, motion: MotionModel, grid_step: float, npts: int) -> np.ndarray:
        """kappa at times 0, h, 2h, ... as rows."""
        P_h = expm(grid_step * motion.generator)
        out = np.empty((npts, self.seed.size))
        row = self.seed.copy()
        for k in range(npts):
            out[k] = row
            row = row @ P_h
        return out


def _grid(horizon: float, step: float) -> tuple[np.ndarray, float]:
    n = max(1, int(math.ceil(horizon / step - 1e-9)))
    return np.linspace(0.0, horizon, n + 1), horizon / n


def _clamp(v: np.ndarray, t: float) -> np.ndarray:
    low = v.min()
    if low >= 0:
        return v
    if low < -CLAMP_WARN:
        raise ArithmeticError(f"cumulant undershoot {low:.3g} at t={t:.6g}; step too large for this model")
    if low < -CLAMP_SILENT:
        log.warning("clamping cumulant undershoot %.3g at t=%.6g", low, t)
    return np.maximum(v, 0.0)


def _integrate(mech: BranchingMechanism, motion: MotionModel, f: np.ndarray, g: np.ndarray | None,
               horizon: float, step: float) -> CumulantSolution:
    if mech.size != motion.size or f.size != mech.size:
        raise ValueError("mechanism, motion and test function dimensions disagree")
    grid, h = _grid(horizon, step)
    Q = motion.generator
    phi = mech.phi
    if g is None or not np.any(g):
        def rhs(v):
            return Q @ v - phi(v)
    else:
        def rhs(v):
            return Q @ v - phi(v) + g
    out = np.empty((grid.size, f.size))
    v = f.astype(np.float64).copy()
    out[0] = v
    for k in range(1, grid.size):
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * h * k1)
        k3 = rhs(v + 0.5 * h * k2)
        k4 = rhs(v + h * k3)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(v)):
            raise DivergenceError(grid[k])
        v = _clamp(v, grid[k])
        out[k] = v
    out.setflags(write=False)
    grid.setflags(write=False)
    return CumulantSolution(grid, out, h)


@lru_cache(maxsize=512)
def _cached(mech, motion, fb: bytes, gb: bytes | None, horizon: float, step: float) -> CumulantSolution:
    f = np.frombuffer(fb, dtype=np.float64)
    g = None if gb is None else np.frombuffer(gb, dtype=np.float64)
    return _integrate(mech, motion, f, g, horizon, step)


def cumulant_path(mech, motion, f, horizon: float, step: float = DEFAULT_STEP, g=None) -> CumulantSolution:
    """Memoized solve that also accepts step >= horizon (one RK4 step)."""
    f = np.ascontiguousarray(as_array(f), dtype=np.float64)
    gb = None if g is None else np.ascontiguousarray(as_array(g), dtype=np.float64).tobytes()
    if np.any(f < 0) or (g is not None and np.any(as_array(g) < 0)):
        raise ValueError("test functions must be nonnegative")
    return _cached(mech, motion, f.tobytes(), gb, float(horizon), float(step))


def _check_solver_args(horizon, step):
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not step > 0:
        raise ValueError("step must be positive")
    if step >= horizon:
        raise ValueError(f"step {step} must be smaller than the horizon {horizon}")


def solve_cumulant(mech: BranchingMechanism, motion: MotionModel, f, horizon: float,
                   step: float = DEFAULT_STEP) -> CumulantSolution:
    """V_t f on a uniform grid over [0, horizon]."""
    _check_solver_args(horizon, step)
    return cumulant_path(mech, motion, f, horizon, step)


def solve_cumulant_occupation(mech: BranchingMechanism, motion: MotionModel, f, g, horizon: float,
                              step: float = DEFAULT_STEP) -> CumulantSolution:
    """u_t = V_t(f, g), the cumulant of (X_t(f), int_0^t X_s(g) ds)."""
    _check_solver_args(horizon, step)
    return cumulant_path(mech, motion, f, horizon, step, g=g)


# Gregory end weights minus one; trapezoid plus these is O(h^4) on >= 6 points.
_GREGORY = (-5.0 / 8.0, 1.0 / 6.0, -1.0 / 24.0)


def _trapezoid_conv(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """c_k = int_0^{kh} a(kh - s) . b(s) ds on the grid, for every index k.

    Composite trapezoid with Gregory end corrections once k >= 5; without them the
    O(h^2) endpoint error does not decay in k and accumulates in time integrals of c.
    """
    npts = a.shape[0]
    full = np.zeros(npts)
    for x in range(a.shape[1]):
        if np.any(a[:, x]) and np.any(b[:, x]):
            full += convolve(a[:, x], b[:, x])[:npts]
    # end(i)[k] = a_{k-i} . b_i + a_i . b_{k-i}
    ends = []
    for i in range(3):
        e = np.zeros(npts)
        if i >= npts:
            ends.append(e)
            continue
        e[i:] = (a[: npts - i] * b[i][None, :]).sum(axis=1) + (a[i][None, :] * b[: npts - i]).sum(axis=1)
        ends.append(e)
    trap = full - 0.5 * ends[0]
    greg = full + sum(w * e for w, e in zip(_GREGORY, ends))
    out = h * np.where(np.arange(npts) >= 5, greg, trap)
    out[0] = 0.0
    return out


def _cumtrapz(y: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * h * (y[1:] + y[:-1]))
    return out


def s_curve(kappa: PEntranceLaw, mech, motion, f, horizon: float, step: float = DEFAULT_STEP, g=None):
    """S_s(kappa, f[, g]) for every grid time s in [0, horizon]; returns (grid, values)."""
    sol = cumulant_path(mech, motion, f, horizon, step, g=g)
    if kappa.is_zero:
        return sol.grid, np.zeros(sol.grid.size)
    f = as_array(f)
    kap = kappa.curve(motion, sol.step, sol.grid.size)
    phis = np.array([mech.phi(v) for v in sol.values])
    vals = kap @ f - _trapezoid_conv(kap, phis, sol.step)
    if g is not None:
        vals = vals + _cumtrapz(kap @ as_array(g), sol.step)
    return sol.grid, vals


def s_functional(kappa: PEntranceLaw, mech, motion, f, t: float, step: float = DEFAULT_STEP) -> float:
    """S_t(kappa, f) = kappa_t(f) - int_0^t kappa_{t-s}(phi(V_s f)) ds."""
    if not t > 0:
        raise ValueError("S_t needs t > 0")
    return float(s_curve(kappa, mech, motion, f, t, step)[1][-1])


def s_functional_occupation(kappa: PEntranceLaw, mech, motion, f, g, t: float,
                            step: float = DEFAULT_STEP) -> float:
    """S_t(kappa, f, g) = kappa_t(f) + int_0^t kappa_s(g) ds - int_0^t kappa_{t-s}(phi(u_s)) ds."""
    if not t > 0:
        raise ValueError("S_t needs t > 0")
    return float(s_curve(kappa, mech, motion, f, t, step, g=g)[1][-1])


def occupation_immigration_exponent(kappa: PEntranceLaw, mech, motion, f, g, t: float,
                                    step: float = DEFAULT_STEP) -> float:
    """int_0^t S_r(kappa, f, g) dr, the immigration part of the joint Laplace exponent."""
    if t == 0:
        return 0.0
    grid, vals = s_curve(kappa, mech, motion, f, t, step, g=g)
    return float(_cumtrapz(vals, grid[1] - grid[0])[-1])


def moment_flow(mech: BranchingMechanism, motion: MotionModel, mu, t: float) -> FiniteMeasure:
    """E X_t = mu exp(t(Q - diag b)); only the drift b survives linearization."""
    mu_arr = as_array(mu)
    sites = mu.sites if isinstance(mu, FiniteMeasure) else motion.sites
    out = mu_arr @ killed_transition(motion, mech.b, t)
    return FiniteMeasure(np.maximum(out, 0.0), sites)


def mean_flow_function(mech: BranchingMechanism, motion: MotionModel, f, t: float) -> np.ndarray:
    """The linearized flow applied to a function: exp(t(Q - diag b)) f."""
    return killed_transition(motion, mech.b, t) @ as_array(f)


def integrated_mean_flow(mech, motion, mu, f, t: float, nodes: int = 201) -> float:
    """int_0^t mu exp(s(Q - diag b)) f ds by Simpson (for immigration first moments)."""
    if t == 0:
        return 0.0
    s = np.linspace(0.0, t, nodes)
    vals = [as_array(mu) @ mean_flow_function(mech, motion, f, si) for si in s]
    return float(simpson(vals, x=s))
