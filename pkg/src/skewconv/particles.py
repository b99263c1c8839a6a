"""Branching particle approximation of the superprocess and its immigration processes.

Particles of mass 1/n move as the Q-matrix chain.  At rate 2 c(x) n a particle at x
is replaced by 0 or 2 offspring with probability 1/2 each; positive drift b(x) is an
extra death rate and negative drift an extra binary birth rate.  Infinitesimal
immigrants arrive one particle at a time at rate n * kappa_rate, macroscopic
clusters at rate c_i with n * mu_i particles.

Two exact samplers share this model:

* ``events``: event-driven simulation with exponential clocks on site counts.
  Handles motion, occupation integrals and recorded paths.
* ``transition``: when the motion is trivial each site is a linear birth-death
  process whose transition law is known in closed form, so the state at the
  horizon is drawn directly.  Cost is independent of the number of events.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .cumulant import BranchingMechanism
from .measure import FiniteMeasure, as_array, normalize
from .motion import MotionModel
from .semigroup import EntranceLawSpec

MAX_PARTICLES = 10**8
RETRY_CAP = 10**4

# spawn-key tags separating the random streams of different samplers
STREAM_REPLICATE = 0
STREAM_CLUSTER = 1
STREAM_STATIONARY = 2


def replicate_rng(seed: int, replicate: int, stream: int = STREAM_REPLICATE, sub: int = 0) -> np.random.Generator:
    """Counter-based stream: a function of (seed, stream, replicate, sub) only."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(replicate), int(sub)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class ImmigrationSpec:
    """Per-unit-time immigration: kappa_rate mass of infinitesimal immigrants and
    clusters (rate c_i, seed mu_i)."""

    kappa_rate: np.ndarray
    clusters: tuple[tuple[float, np.ndarray], ...] = ()

    def __post_init__(self):
        k = np.array(as_array(self.kappa_rate), dtype=np.float64)
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            raise ValueError("kappa_rate must be a finite nonnegative measure")
        clusters = tuple((float(c), np.array(as_array(mu), dtype=np.float64)) for c, mu in self.clusters)
        for c, mu in clusters:
            if c < 0 or not math.isfinite(c) or np.any(mu < 0) or mu.size != k.size:
                raise ValueError("cluster rates and seeds must be nonnegative and match the sites")
        object.__setattr__(self, "kappa_rate", k)
        object.__setattr__(self, "clusters", clusters)

    @property
    def size(self) -> int:
        return self.kappa_rate.size

    @property
    def is_zero(self) -> bool:
        return not np.any(self.kappa_rate) and all(c == 0 or not np.any(mu) for c, mu in self.clusters)

    @property
    def mass_rate(self) -> float:
        return float(self.kappa_rate.sum() + sum(c * mu.sum() for c, mu in self.clusters))

    def entrance_spec(self) -> EntranceLawSpec:
        """The matching (kappa, F) pair: kappa closed by kappa_rate, F = sum_i c_i delta_{eta_i}."""
        return EntranceLawSpec(self.kappa_rate, tuple((c, mu) for c, mu in self.clusters if c > 0))

    @classmethod
    def none(cls, d: int) -> "ImmigrationSpec":
        return cls(np.zeros(d))


@dataclass
class ParticleState:
    counts: np.ndarray
    unit_mass: float
    clock: float = 0.0

    @property
    def sites(self) -> np.ndarray:
        """One entry per particle."""
        return np.repeat(np.arange(self.counts.size), self.counts)

    @property
    def measure(self) -> FiniteMeasure:
        return FiniteMeasure(self.unit_mass * self.counts)


@dataclass
class ClusterEvent:
    birth_time: float
    birth_site: int | None
    seed: FiniteMeasure | None
    path: list[tuple[float, FiniteMeasure]] = field(default_factory=list)
    attempts: int = 1
    retained: bool = True

    @property
    def kind(self) -> str:
        return "infinitesimal" if self.birth_site is not None else "macroscopic"


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ParticleModel:
    """Per-site event rates of the particle system at scaling level n."""

    mech: BranchingMechanism
    motion: MotionModel
    n: int

    def __post_init__(self):
        if self.mech.has_jumps:
            raise ValueError("the particle system supports finite-variance mechanisms only (empty jump kernel)")
        if self.mech.size != self.motion.size:
            raise ValueError("mechanism and motion dimensions disagree")
        if int(self.n) < 1:
            raise ValueError("scaling level n must be >= 1")
        object.__setattr__(self, "n", int(self.n))

    @property
    def unit_mass(self) -> float:
        return 1.0 / self.n

    @property
    def branch(self) -> np.ndarray:
        return 2.0 * self.mech.c * self.n

    @property
    def death(self) -> np.ndarray:
        return np.maximum(self.mech.b, 0.0)

    @property
    def birth(self) -> np.ndarray:
        return np.maximum(-self.mech.b, 0.0)

    def particles(self, mu, rng: np.random.Generator) -> np.ndarray:
        """floor(n mu_x) particles per site plus fractional parts placed by one uniform."""
        scaled = self.n * as_array(mu)
        if scaled.sum() > MAX_PARTICLES:
            raise SimulationError("initial particle count exceeds the overflow guard")
        return _kernels.systematic_round(rng, np.ascontiguousarray(scaled, dtype=np.float64))


# ---------------------------------------------------------------- event engine

def _run_events(model: ParticleModel, counts, imm: ImmigrationSpec, g, probes, rng):
    d = model.motion.size
    crates = np.array([c for c, _ in imm.clusters], dtype=np.float64)
    cseeds = np.array([model.n * mu for _, mu in imm.clusters], dtype=np.float64).reshape(len(imm.clusters), d)
    snaps, occ, status = _kernels.run_events(
        rng,
        np.asarray(counts, dtype=np.int64),
        np.ascontiguousarray(model.motion.generator),
        model.branch, model.death, model.birth,
        model.n * imm.kappa_rate,
        crates, cseeds,
        np.ascontiguousarray(np.zeros(d) if g is None else as_array(g), dtype=np.float64),
        np.ascontiguousarray(probes, dtype=np.float64),
        MAX_PARTICLES,
    )
    if status == _kernels.OVERFLOW:
        raise SimulationError(f"particle count exceeded {MAX_PARTICLES}")
    return snaps, occ / model.n


# ------------------------------------------------------ closed-form transitions

def _bd_x(lam: float, mu: float, age):
    """x(u) = expm1(r u) / r with r = lam - mu (u when r = 0)."""
    r = lam - mu
    age = np.asarray(age, dtype=np.float64)
    return age if r == 0 else np.expm1(r * age) / r


def _bd_family(lam: float, mu: float, age):
    """(extinction prob, geometric ratio) of a linear birth-death family from one particle."""
    x = _bd_x(lam, mu, age)
    return mu * x / (1.0 + lam * x), lam * x / (1.0 + lam * x)


def _bd_evolve(rng, n0: int, lam: float, mu: float, age: float) -> int:
    if n0 == 0 or age <= 0:
        return int(n0)
    alpha, beta = _bd_family(lam, mu, age)
    alive = rng.binomial(n0, 1.0 - float(alpha))
    if alive == 0:
        return 0
    return int(alive + (rng.negative_binomial(alive, 1.0 - float(beta)) if beta > 0 else 0))


def _bd_immigrants(rng, rate: float, lam: float, mu: float, horizon: float) -> int:
    """Particles at the horizon descended from single immigrants arriving at `rate` on [0, horizon]."""
    if rate <= 0 or horizon <= 0:
        return 0
    x_t = float(_bd_x(lam, mu, horizon))
    big_lambda = math.log1p(lam * x_t) / lam if lam > 0 else x_t
    survivors = rng.poisson(rate * big_lambda)
    if survivors == 0:
        return 0
    level = rng.random(survivors) * big_lambda
    x = np.expm1(lam * level) / lam if lam > 0 else level
    beta = lam * x / (1.0 + lam * x)
    return int(rng.geometric(1.0 - beta).sum())


def _run_transition(model: ParticleModel, counts, imm: ImmigrationSpec, horizon: float, rng) -> np.ndarray:
    lam = model.branch / 2.0 + model.birth
    mu = model.branch / 2.0 + model.death
    d = counts.size
    out = np.array([_bd_evolve(rng, int(counts[x]), lam[x], mu[x], horizon) for x in range(d)], dtype=np.int64)
    for x in range(d):
        out[x] += _bd_immigrants(rng, model.n * imm.kappa_rate[x], lam[x], mu[x], horizon)
    for c, seed_mu in imm.clusters:
        arrivals = rng.poisson(c * horizon) if c > 0 else 0
        for s in np.sort(rng.random(arrivals) * horizon):
            block = model.particles(seed_mu, rng)
            for x in range(d):
                out[x] += _bd_evolve(rng, int(block[x]), lam[x], mu[x], horizon - s)
    if out.sum() > MAX_PARTICLES:
        raise SimulationError(f"particle count exceeded {MAX_PARTICLES}")
    return out


def _pick_engine(engine: str, model: ParticleModel, need_path: bool) -> str:
    if engine not in ("auto", "events", "transition"):
        raise ValueError(f"unknown engine {engine!r}")
    exact_ok = model.motion.is_motionless and not need_path
    if engine == "transition" and not exact_ok:
        raise ValueError("the transition sampler needs motionless chains and endpoint-only output")
    if engine == "auto":
        return "transition" if exact_ok else "events"
    return engine


# ------------------------------------------------------------------ public API

def _sample(mech, motion, imm, mu0, horizon, n, rng, g=None, engine="auto"):
    model = ParticleModel(mech, motion, n)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    imm = ImmigrationSpec.none(motion.size) if imm is None else imm
    counts = model.particles(mu0, rng)
    need_path = g is not None and np.any(as_array(g))
    if _pick_engine(engine, model, need_path) == "transition":
        return _run_transition(model, counts, imm, horizon, rng), 0.0
    snaps, occ = _run_events(model, counts, imm, g, np.array([horizon]), rng)
    return snaps[-1], occ


def simulate_superprocess(mech: BranchingMechanism, motion: MotionModel, mu0, horizon: float, n: int,
                          seed: int, replicate: int = 0, engine: str = "auto") -> FiniteMeasure:
    """One draw of the particle approximation X_t started from mu0."""
    rng = replicate_rng(seed, replicate)
    counts, _ = _sample(mech, motion, None, mu0, horizon, n, rng, engine=engine)
    return FiniteMeasure(counts / n)


def simulate_immigration(mech, motion, imm: ImmigrationSpec, mu0, horizon: float, n: int, seed: int,
                         replicate: int = 0, engine: str = "auto") -> FiniteMeasure:
    """One draw of Y_t: descendants of mu0 plus all immigrant clusters arrived in [0, t)."""
    rng = replicate_rng(seed, replicate)
    counts, _ = _sample(mech, motion, imm, mu0, horizon, n, rng, engine=engine)
    return FiniteMeasure(counts / n)


def occupation_sample(mech, motion, mu0, imm, f, g, horizon: float, n: int, seed: int,
                      replicate: int = 0) -> tuple[float, float]:
    """(X_t(f), int_0^t X_s(g) ds) from one event-driven run; imm may be None."""
    rng = replicate_rng(seed, replicate)
    counts, occ = _sample(mech, motion, imm, mu0, horizon, n, rng, g=g,
                          engine="events" if g is not None and np.any(as_array(g)) else "auto")
    return float(counts @ as_array(f)) / n, float(occ)


def simulate_stationary(mech, motion, imm: ImmigrationSpec, window: float, n: int, seed: int,
                        replicate: int = 0, read_time: float = 0.0, tol: float = 1e-6,
                        engine: str = "auto") -> FiniteMeasure:
    """Immigration process started from the null measure at -window and read at read_time."""
    check_stationary(mech, imm, window, tol)
    rng = replicate_rng(seed, replicate, STREAM_STATIONARY)
    counts, _ = _sample(mech, motion, imm, np.zeros(motion.size), window + read_time, n, rng, engine=engine)
    return FiniteMeasure(counts / n)


def check_stationary(mech, imm: ImmigrationSpec, window: float, tol: float = 1e-6):
    bmin = float(mech.b.min())
    if bmin <= 0:
        raise ValueError("stationary immigration needs a subcritical mechanism (min b > 0); "
                         "critical or supercritical populations have no stationary law")
    if imm.mass_rate > 0:
        need = math.log(imm.mass_rate / tol) / bmin
        if window < need:
            raise ValueError(f"window {window} too short: need T >= {need:.3g} for tolerance {tol}")


def sample_cluster(mech, motion, birth_site: int, horizon: float, n: int, seed: int,
                   cluster_index: int = 0, grid_points: int = 8, ratio: float = 2.0,
                   retry_cap: int = RETRY_CAP) -> ClusterEvent:
    """Path of the family of one particle born at birth_site at time 0, conditioned on
    being alive at the probe time `horizon`.

    The path is recorded at time 0 and on the geometric grid horizon * ratio**-k.
    Each attempt uses its own stream; after retry_cap extinct attempts the event
    comes back with retained=False.
    """
    model = ParticleModel(mech, motion, n)
    d = motion.size
    if not 0 <= birth_site < d:
        raise ValueError("birth site out of range")
    probes = np.array([horizon * ratio ** -k for k in range(grid_points - 1, -1, -1)])
    start = np.zeros(d, dtype=np.int64)
    start[birth_site] = 1
    imm = ImmigrationSpec.none(d)
    snaps = None
    attempt = 0
    for attempt in range(1, retry_cap + 1):
        rng = replicate_rng(seed, cluster_index, STREAM_CLUSTER, attempt)
        snaps, _ = _run_events(model, start, imm, None, probes, rng)
        if snaps[-1].sum() > 0:
            break
    retained = snaps is not None and snaps[-1].sum() > 0
    first = FiniteMeasure(start / n)
    path = [(0.0, first)] + [(float(t), FiniteMeasure(s / n)) for t, s in zip(probes, snaps)]
    return ClusterEvent(0.0, birth_site, None, path, attempt, retained)


# ------------------------------------------------------------------ batching

@dataclass
class ReplicateBatch:
    """Per-replicate end states (site masses) and occupation integrals, in replicate order."""

    masses: np.ndarray
    occupation: np.ndarray
    horizon: float
    n: int

    def integrals(self, f) -> np.ndarray:
        return self.masses @ as_array(f)

    def laplace_samples(self, f, with_occupation: bool = False) -> np.ndarray:
        expo = self.integrals(f)
        if with_occupation:
            expo = expo + self.occupation
        return np.exp(-expo)

    def rows(self, f, with_occupation: bool = False):
        vals = self.laplace_samples(f, with_occupation)
        for i in range(self.masses.shape[0]):
            yield [i, self.horizon, *self.masses[i].tolist(), float(vals[i]), float(self.occupation[i])]


def _chunks(total: int, parts: int):
    bounds = np.linspace(0, total, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_replicates(mech, motion, mu0, horizon: float, n: int, seed: int, replicates: int,
                   imm: ImmigrationSpec | None = None, g=None, parallel: bool = False,
                   engine: str = "auto", stream: int = STREAM_REPLICATE, workers: int | None = None) -> ReplicateBatch:
    """Independent replicates, each on its own (seed, stream, index) random stream."""
    if replicates < 1:
        raise ValueError("need at least one replicate")
    d = motion.size
    masses = np.empty((replicates, d))
    occ = np.zeros(replicates)

    def work(span):
        lo, hi = span
        for i in range(lo, hi):
            rng = replicate_rng(seed, i, stream)
            counts, o = _sample(mech, motion, imm, mu0, horizon, n, rng, g=g, engine=engine)
            masses[i] = counts / n
            occ[i] = o

    if parallel:
        workers = workers or max(2, os.cpu_count() or 1)
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(work, _chunks(replicates, 4 * workers)))
    else:
        work((0, replicates))
    return ReplicateBatch(masses, occ, horizon, n)


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    count: int

    def z(self, target: float) -> float:
        if self.se == 0:
            return 0.0 if self.mean == target else math.inf
        return (self.mean - target) / self.se


def estimate(samples) -> Estimate:
    x = np.asarray(samples, dtype=np.float64)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
    return Estimate(float(x.mean()), se, int(x.size))


@dataclass(frozen=True)
class NearBirth:
    concentration: float
    small_fraction: float
    retained: int
    flagged: int
    masses: np.ndarray = field(repr=False)


def near_birth_diagnostic(mech, motion, birth_site: int, probe: float, n: int, clusters: int, seed: int,
                          mass_factor: float = 10.0, parallel: bool = False) -> NearBirth:
    """Mean birth-site share of the normalized cluster and the fraction of clusters with
    mass <= mass_factor / n at the probe time, over retained clusters."""
    events = [None] * clusters

    def work(span):
        for i in range(*span):
            events[i] = sample_cluster(mech, motion, birth_site, probe, n, seed, cluster_index=i)

    if parallel:
        with ThreadPoolExecutor(max(2, os.cpu_count() or 1)) as ex:
            list(ex.map(work, _chunks(clusters, 8)))
    else:
        work((0, clusters))
    kept = [e for e in events if e.retained]
    shares, masses = [], []
    for e in kept:
        total, probs = normalize(e.path[-1][1])
        shares.append(probs[birth_site])
        masses.append(total)
    masses = np.array(masses)
    return NearBirth(
        concentration=float(np.mean(shares)) if shares else math.nan,
        small_fraction=float(np.mean(masses <= mass_factor / n + 1e-12)) if kept else math.nan,
        retained=len(kept),
        flagged=clusters - len(kept),
        masses=masses,
    )
