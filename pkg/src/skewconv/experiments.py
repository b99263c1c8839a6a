"""Config-driven experiments pairing analytic functionals with particle Monte Carlo."""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cumulant import (
    DivergenceError,
    BranchingMechanism,
    cumulant_path,
    occupation_immigration_exponent,
    s_curve,
    _cumtrapz,
)
from .measure import SiteSet
from .motion import MotionModel, killed_transition
from .particles import (
    ImmigrationSpec,
    STREAM_STATIONARY,
    estimate,
    near_birth_diagnostic,
    run_replicates,
    check_stationary,
)
from .semigroup import (
    ClosedInitialLaw,
    EntranceLawSpec,
    InhomogeneousSCSpec,
    SCSemigroupSpec,
    longtime_decompose,
    sc_log_laplace,
    verify_sc_axiom,
    verify_skew_homogeneous,
)

Z_LIMIT = 3.0
Z_LIMIT_MOMENT = 4.0
IDENTITY_TOL = 1e-5
IDENTITY_CHECKS = ("skew_identity", "sc_axiom")

CATALOG = {
    "laplace_superprocess": "E_mu exp(-X_t(f)) = exp(-mu(V_t f))",
    "laplace_immigration": "E_mu exp(-Y_t(f)) = exp(-mu(V_t f) - J_t(f)), J_t = int_0^t -log L_{K_s}(f) ds",
    "skew_identity": "J_{r+t}(f) = J_r(V_t f) + J_t(f)",
    "sc_axiom": "J_{r,t}(f) = J_{r,s}(V_{s,t} f) + J_{s,t}(f)",
    "occupation": "E exp(-Y_t(f) - int_0^t Y_s(g) ds) = exp(-mu(u_t) - int_0^t S_r(kappa,f,g) dr)",
    "stationary": "L_{F_p}(f) = lim_t L_{N_t}(f); Y_0 = sum of clusters born in (-oo, 0)",
    "near_birth": "w_t(E) -> 0 and w_t / w_t(E) -> delta_x as t -> 0+",
    "moment_flow": "E_mu X_t(f) = mu exp(t(Q - b)) f",
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid experiment config:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems


def list_checks() -> dict[str, str]:
    return dict(CATALOG)


# ------------------------------------------------------------------ config

@dataclass
class Target:
    f: np.ndarray
    g: np.ndarray
    t: float
    r: float = 0.0
    s: float | None = None


@dataclass
class ExperimentConfig:
    name: str
    sites: SiteSet
    motion: MotionModel
    mech: BranchingMechanism
    initial: np.ndarray
    immigration: ImmigrationSpec
    targets: list[Target]
    checks: list[tuple[str, int]]
    step: float = 1e-3
    horizon: float = 1.0
    n: int = 1000
    replicates: int = 1000
    seed: int = 0
    window: float = 20.0
    engine: str = "auto"
    probe: float = 0.01
    birth_site: int = 0
    clusters: int = 500
    longtime_tol: float = 1e-7
    inhomogeneous: InhomogeneousSCSpec | None = None
    occupation_n: int | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def entrance(self) -> EntranceLawSpec:
        return self.immigration.entrance_spec()

    @property
    def sc_spec(self) -> SCSemigroupSpec:
        return SCSemigroupSpec(self.entrance, self.mech, self.motion)


def _vec(obj, key, d, problems, where, default=None, nonneg=True):
    val = obj.get(key, default)
    if val is None:
        problems.append(f"{where}.{key} is required")
        return np.zeros(d)
    try:
        arr = np.asarray(val, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError):
        problems.append(f"{where}.{key} must be an array of numbers")
        return np.zeros(d)
    if arr.size != d:
        problems.append(f"{where}.{key} has {arr.size} entries, expected {d}")
        return np.zeros(d)
    if not np.all(np.isfinite(arr)):
        problems.append(f"{where}.{key} has non-finite entries")
    elif nonneg and np.any(arr < 0):
        problems.append(f"{where}.{key} must be nonnegative")
    return arr


def _entrance(obj, d, problems, where) -> EntranceLawSpec | None:
    kappa = _vec(obj, "kappa", d, problems, where, default=[0.0] * d)
    atoms = []
    for i, cl in enumerate(obj.get("clusters", [])):
        rate = cl.get("rate", -1)
        if not isinstance(rate, (int, float)) or rate < 0:
            problems.append(f"{where}.clusters[{i}].rate must be a nonnegative number")
            continue
        seed = _vec(cl, "seed", d, problems, f"{where}.clusters[{i}]")
        atoms.append((float(rate), seed))
    return kappa, atoms


def load_config(source) -> ExperimentConfig:
    """Parse and validate a config dict or JSON path; every violation is reported at once."""
    if isinstance(source, (str, Path)):
        raw = json.loads(Path(source).read_text())
    else:
        raw = dict(source)
    problems: list[str] = []

    labels = raw.get("sites")
    gen = raw.get("motion", {}).get("generator")
    if labels is None and gen is not None:
        labels = [f"x{i}" for i in range(len(gen))]
    try:
        sites = SiteSet(tuple(labels or ()))
    except ValueError as exc:
        raise ConfigError([f"sites: {exc}"])
    d = sites.size

    motion = None
    try:
        motion = MotionModel(np.asarray(gen if gen is not None else np.zeros((d, d)), dtype=np.float64), sites)
    except (ValueError, TypeError) as exc:
        problems.append(f"motion.generator: {exc}")

    mech = None
    mraw = raw.get("mechanism", {})
    try:
        b = _vec(mraw, "b", d, problems, "mechanism", nonneg=False)
        c = _vec(mraw, "c", d, problems, "mechanism")
        mech = BranchingMechanism.from_json({"b": b, "c": c, "m": mraw.get("m", [])})
    except (ValueError, TypeError, IndexError) as exc:
        problems.append(f"mechanism: {exc}")

    initial = _vec(raw, "initial", d, problems, "config", default=[0.0] * d)
    iraw = raw.get("immigration", {})
    kappa, atoms = _entrance(iraw, d, problems, "immigration")
    imm = ImmigrationSpec(np.maximum(kappa, 0), tuple((c, np.maximum(mu, 0)) for c, mu in atoms))

    targets = []
    for i, tr in enumerate(raw.get("targets", [])):
        f = _vec(tr, "f", d, problems, f"targets[{i}]", default=[0.0] * d)
        g = _vec(tr, "g", d, problems, f"targets[{i}]", default=[0.0] * d)
        t = tr.get("t", 1.0)
        r = tr.get("r", 0.0)
        s = tr.get("s")
        if not isinstance(t, (int, float)) or t < 0:
            problems.append(f"targets[{i}].t must be a nonnegative number")
        if not isinstance(r, (int, float)) or r < 0:
            problems.append(f"targets[{i}].r must be a nonnegative number")
        if s is not None and not (isinstance(s, (int, float)) and r <= s <= t):
            problems.append(f"targets[{i}].s must satisfy r <= s <= t")
        targets.append(Target(np.maximum(f, 0), np.maximum(g, 0), float(t), float(r), None if s is None else float(s)))

    solver = raw.get("solver", {})
    step = solver.get("step", 1e-3)
    if not isinstance(step, (int, float)) or step <= 0:
        problems.append("solver.step must be positive")
    sim = raw.get("simulation", {})
    reps = sim.get("replicates", 1000)
    if not isinstance(reps, int) or reps < 1:
        problems.append("simulation.replicates must be an integer >= 1")
    n = sim.get("n", 1000)
    if not isinstance(n, int) or n < 1:
        problems.append("simulation.n must be an integer >= 1")
    if sim.get("engine", "auto") not in ("auto", "events", "transition"):
        problems.append("simulation.engine must be one of auto, events, transition")

    inhom = None
    if "inhomogeneous" in raw:
        inhom = _inhomogeneous(raw["inhomogeneous"], d, problems)

    checks = []
    seen = set()
    for i, ch in enumerate(raw.get("checks", [])):
        if isinstance(ch, str):
            name, tidx = ch, 0
        else:
            name, tidx = ch.get("name"), ch.get("targets", ch.get("target", 0))
        if isinstance(tidx, list):
            if name not in IDENTITY_CHECKS:
                problems.append(f"checks[{i}]: only {', '.join(IDENTITY_CHECKS)} accept a target list")
                continue
            if not tidx or not all(isinstance(k, int) and 0 <= k < len(targets) for k in tidx):
                problems.append(f"checks[{i}]: target list {tidx} does not index the {len(targets)} targets")
                continue
            tidx = tuple(tidx)
        if name not in CATALOG:
            problems.append(f"checks[{i}]: unknown check {name!r}")
            continue
        if name in seen:
            problems.append(f"checks[{i}]: {name} listed twice")
        seen.add(name)
        if name != "near_birth" and not isinstance(tidx, tuple) and not (isinstance(tidx, int) and 0 <= tidx < len(targets)):
            problems.append(f"checks[{i}]: {name} needs target index {tidx} but {len(targets)} targets are defined")
        if name == "sc_axiom" and inhom is None:
            problems.append("checks: sc_axiom needs an 'inhomogeneous' section")
        if name == "stationary" and mech is not None and float(mech.b.min()) <= 0:
            problems.append("checks: stationary needs a subcritical mechanism (min b > 0)")
        if name in ("laplace_superprocess", "laplace_immigration", "occupation", "stationary", "moment_flow") \
                and mech is not None and mech.has_jumps:
            problems.append(f"checks: {name} simulates particles, which needs an empty jump kernel")
        if name == "sc_axiom":
            for k in (tidx if isinstance(tidx, tuple) else (tidx,)):
                if isinstance(k, int) and 0 <= k < len(targets) and targets[k].s is None:
                    problems.append(f"checks: sc_axiom needs targets[{k}].s")
        checks.append((name, tidx))

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        name=str(raw.get("name", "experiment")), sites=sites, motion=motion, mech=mech, initial=initial,
        immigration=imm, targets=targets, checks=checks, step=float(step),
        horizon=float(solver.get("horizon", targets[0].t if targets else 1.0)),
        n=n, replicates=reps, seed=int(sim.get("seed", 0)), window=float(sim.get("window", 20.0)),
        engine=sim.get("engine", "auto"), probe=float(sim.get("probe", 0.01)),
        birth_site=int(sim.get("birth_site", 0)), clusters=int(sim.get("clusters", 500)),
        longtime_tol=float(solver.get("longtime_tol", 1e-7)), inhomogeneous=inhom,
        occupation_n=sim.get("occupation_n"), raw=raw,
    )


def _inhomogeneous(obj, d, problems) -> InhomogeneousSCSpec | None:
    try:
        opens = []
        for i, item in enumerate(obj.get("open", [])):
            kappa, atoms = _entrance(item, d, problems, f"inhomogeneous.open[{i}]")
            opens.append((float(item["time"]), EntranceLawSpec(kappa, tuple(a for a in atoms if a[0] > 0))))
        closed = []
        for i, item in enumerate(obj.get("closed", [])):
            eta = _vec(item, "eta", d, problems, f"inhomogeneous.closed[{i}]", default=[0.0] * d)
            hs = [(float(a["weight"]), _vec(a, "measure", d, problems, f"inhomogeneous.closed[{i}].atoms"))
                  for a in item.get("atoms", [])]
            closed.append((float(item["time"]), ClosedInitialLaw(eta, tuple(hs))))
        ivs = [(float(a["from"]), float(a["to"]), float(a["rate"])) for a in obj.get("density", [])]
        cont = None
        if "continuous" in obj:
            kappa, atoms = _entrance(obj["continuous"], d, problems, "inhomogeneous.continuous")
            cont = EntranceLawSpec(kappa, tuple(a for a in atoms if a[0] > 0))
        return InhomogeneousSCSpec(tuple(opens), tuple(closed), tuple(ivs), cont)
    except (KeyError, ValueError, TypeError) as exc:
        problems.append(f"inhomogeneous: {exc}")
        return None


# ------------------------------------------------------------------ checks

@dataclass
class CheckResult:
    check: str
    target: int | list | None
    analytic: float | None
    estimate: float | None
    se: float | None
    z: float | None
    tolerance: float
    status: str
    detail: dict = field(default_factory=dict)
    rows: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {
            "check": self.check, "target": self.target, "analytic": self.analytic,
            "estimate": self.estimate, "se": self.se, "z": self.z, "tolerance": self.tolerance,
            "status": self.status, "detail": self.detail,
        }


def _z_result(name, tidx, analytic, samples, limit, rows=(), **detail) -> CheckResult:
    est = estimate(samples)
    z = est.z(analytic)
    ok = abs(z) <= limit
    return CheckResult(name, tidx, float(analytic), est.mean, est.se, float(z), limit,
                       "pass" if ok else "fail", detail, list(rows))


def _immigration_exponent(cfg: ExperimentConfig, f, g, t) -> float:
    """int_0^t [S_r(kappa,f,g) + sum_i c_i (1 - exp(-S_r(eta_i,f,g)))] dr."""
    if t == 0:
        return 0.0
    spec = cfg.entrance
    total = occupation_immigration_exponent(spec.kappa, cfg.mech, cfg.motion, f, g, t, cfg.step)
    for c, eta in spec.atoms:
        grid, vals = s_curve(eta, cfg.mech, cfg.motion, f, t, cfg.step, g=g)
        total += c * float(_cumtrapz(-np.expm1(-vals), grid[1] - grid[0])[-1])
    return total


def _identity(cfg: ExperimentConfig, name: str, tids: tuple) -> CheckResult:
    residuals = []
    for k in tids:
        tg = cfg.targets[k]
        if name == "skew_identity":
            residuals.append(verify_skew_homogeneous(cfg.sc_spec, tg.f, tg.r, tg.t, cfg.step))
        else:
            residuals.append(verify_sc_axiom(cfg.inhomogeneous, cfg.mech, cfg.motion, tg.f, tg.r, tg.s, tg.t,
                                             cfg.step))
    worst = max(residuals)
    target = tids[0] if len(tids) == 1 else list(tids)
    return CheckResult(name, target, 0.0, worst, None, None, IDENTITY_TOL,
                       "pass" if worst <= IDENTITY_TOL else "fail", {"residuals": residuals})


def _check(cfg: ExperimentConfig, name: str, tidx: int, parallel: bool) -> CheckResult:
    if name in IDENTITY_CHECKS:
        return _identity(cfg, name, tidx if isinstance(tidx, tuple) else (tidx,))
    tg = cfg.targets[tidx] if name != "near_birth" else None
    common = dict(n=cfg.n, seed=cfg.seed, replicates=cfg.replicates, parallel=parallel, engine=cfg.engine)

    if name == "laplace_superprocess":
        vt = cumulant_path(cfg.mech, cfg.motion, tg.f, tg.t, cfg.step).final if tg.t > 0 else tg.f
        analytic = math.exp(-float(cfg.initial @ vt))
        batch = run_replicates(cfg.mech, cfg.motion, cfg.initial, tg.t, **common)
        return _z_result(name, tidx, analytic, batch.laplace_samples(tg.f), Z_LIMIT, batch.rows(tg.f), n=cfg.n)

    if name == "laplace_immigration":
        vt = cumulant_path(cfg.mech, cfg.motion, tg.f, tg.t, cfg.step).final if tg.t > 0 else tg.f
        analytic = math.exp(-float(cfg.initial @ vt) - sc_log_laplace(cfg.sc_spec, tg.f, tg.t, cfg.step))
        batch = run_replicates(cfg.mech, cfg.motion, cfg.initial, tg.t, imm=cfg.immigration, **common)
        return _z_result(name, tidx, analytic, batch.laplace_samples(tg.f), Z_LIMIT, batch.rows(tg.f), n=cfg.n)

    if name == "occupation":
        u = cumulant_path(cfg.mech, cfg.motion, tg.f, tg.t, cfg.step, g=tg.g).final if tg.t > 0 else tg.f
        analytic = math.exp(-float(cfg.initial @ u) - _immigration_exponent(cfg, tg.f, tg.g, tg.t))
        n = cfg.occupation_n or cfg.n
        batch = run_replicates(cfg.mech, cfg.motion, cfg.initial, tg.t, imm=cfg.immigration, g=tg.g,
                               **{**common, "n": n, "engine": "events"})
        return _z_result(name, tidx, analytic, batch.laplace_samples(tg.f, True), Z_LIMIT,
                         batch.rows(tg.f, True), n=n)

    if name == "moment_flow":
        analytic = float(cfg.initial @ killed_transition(cfg.motion, cfg.mech.b, tg.t) @ tg.f)
        batch = run_replicates(cfg.mech, cfg.motion, cfg.initial, tg.t, **common)
        return _z_result(name, tidx, analytic, batch.integrals(tg.f), Z_LIMIT_MOMENT, batch.rows(tg.f), n=cfg.n)

    if name == "stationary":
        check_stationary(cfg.mech, cfg.immigration, cfg.window)
        lim = longtime_decompose(cfg.sc_spec, tg.f, cfg.longtime_tol, cfg.step)
        if lim.diverged:
            raise DivergenceError(lim.horizon)
        analytic = math.exp(-lim.value)
        batch = run_replicates(cfg.mech, cfg.motion, np.zeros(cfg.sites.size), cfg.window, imm=cfg.immigration,
                               stream=STREAM_STATIONARY, **common)
        res = _z_result(name, tidx, analytic, batch.laplace_samples(tg.f), Z_LIMIT, batch.rows(tg.f), n=cfg.n)
        # stationary mean: m (diag b - Q)^{-1} f with m the immigrant mass rate
        rate = cfg.immigration.kappa_rate + sum((c * mu for c, mu in cfg.immigration.clusters), np.zeros(cfg.sites.size))
        mean_target = float(rate @ np.linalg.solve(np.diag(cfg.mech.b) - cfg.motion.generator, tg.f))
        mest = estimate(batch.integrals(tg.f))
        mz = mest.z(mean_target)
        res.detail.update(J_infinity=lim.value, mean_analytic=mean_target, mean_estimate=mest.mean,
                          mean_se=mest.se, mean_z=mz)
        if abs(mz) > Z_LIMIT:
            res.status = "fail"
        return res

    if name == "near_birth":
        nb = near_birth_diagnostic(cfg.mech, cfg.motion, cfg.birth_site, cfg.probe, cfg.n, cfg.clusters,
                                   cfg.seed, parallel=parallel)
        ok = nb.concentration >= 0.95 and nb.small_fraction >= 0.99
        return CheckResult(name, None, 0.95, nb.concentration, None, None, 0.99, "pass" if ok else "fail",
                           {"small_mass_fraction": nb.small_fraction, "retained": nb.retained,
                            "flagged": nb.flagged, "probe": cfg.probe, "n": cfg.n})
    raise KeyError(name)


def _safe_check(cfg, name, tidx, parallel) -> CheckResult:
    try:
        return _check(cfg, name, tidx, parallel)
    except (DivergenceError, ArithmeticError, RuntimeError, ValueError) as exc:
        return CheckResult(name, tidx, None, None, None, None, math.nan, "error", {"error": str(exc)})


@dataclass
class Report:
    results: list[CheckResult]
    metadata: dict

    @property
    def failed(self) -> int:
        return sum(r.status == "fail" for r in self.results)

    @property
    def errored(self) -> int:
        return sum(r.status == "error" for r in self.results)

    @property
    def exit_code(self) -> int:
        if self.errored:
            return 2
        return 1 if self.failed else 0

    def as_dict(self) -> dict:
        return {"metadata": self.metadata, "checks": [r.as_dict() for r in self.results]}

    def deterministic_dict(self) -> dict:
        out = self.as_dict()
        out["metadata"] = {k: v for k, v in out["metadata"].items() if k not in ("wall_time", "parallel")}
        return out

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.as_dict(), indent=2, default=_jsonable))
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "target", "analytic", "estimate", "se", "z", "tolerance", "status"])
            for r in self.results:
                w.writerow([r.check, r.target, r.analytic, r.estimate, r.se, r.z, r.tolerance, r.status])
        for r in self.results:
            if r.rows:
                with open(out / f"replicates_{r.check}.csv", "w", newline="") as fh:
                    w = csv.writer(fh)
                    d = len(r.rows[0]) - 4
                    w.writerow(["replicate", "t", *[f"mass_{i + 1}" for i in range(d)], "laplace", "occupation"])
                    w.writerows(r.rows)
        return out


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def run(config, seed: int | None = None, parallel: bool = False, out_dir=None) -> Report:
    """Run every configured check; results come back in config order."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    if seed is not None:
        cfg.seed = int(seed)
    start = time.perf_counter()
    if parallel and len(cfg.checks) > 1:
        with ThreadPoolExecutor(len(cfg.checks)) as ex:
            results = list(ex.map(lambda c: _safe_check(cfg, c[0], c[1], True), cfg.checks))
    else:
        results = [_safe_check(cfg, name, tidx, parallel) for name, tidx in cfg.checks]
    meta = {
        "config": cfg.name,
        "seed": cfg.seed,
        "replicates": cfg.replicates,
        "n": cfg.n,
        "versions": {"skewconv": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "parallel": parallel,
        "wall_time": time.perf_counter() - start,
    }
    report = Report(results, meta)
    if out_dir is not None:
        report.write(out_dir)
    return report
