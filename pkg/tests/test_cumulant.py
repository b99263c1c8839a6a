import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad, solve_ivp

from skewconv.cumulant import (
    BranchingMechanism,
    CumulantSolution,
    PEntranceLaw,
    _clamp,
    cumulant_path,
    moment_flow,
    occupation_immigration_exponent,
    phi_eval,
    s_functional,
    s_functional_occupation,
    solve_cumulant,
    solve_cumulant_occupation,
)
from skewconv.motion import MotionModel, killed_transition


def ivp_cumulant(Q, phi, f, t, g=None):
    """Reference solution by an adaptive high-accuracy integrator."""
    g = np.zeros(len(f)) if g is None else np.asarray(g, float)
    sol = solve_ivp(lambda _, v: Q @ v - phi(v) + g, (0, t), np.asarray(f, float),
                    method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[:, -1]


def test_phi_examples():
    assert phi_eval(BranchingMechanism([0.3], [2.0], [[(1.0, 1.0)]]), 0, 0.0) == 0.0
    assert phi_eval(BranchingMechanism([1.0], [1.0]), 0, 2.0) == pytest.approx(6.0)
    assert phi_eval(BranchingMechanism([0.0], [0.0], [[(1.0, 1.0)]]), 0, 1.0) == pytest.approx(math.exp(-1), abs=1e-15)


def test_phi_small_z_accuracy():
    mech = BranchingMechanism([0.0], [0.0], [[(1.0, 1.0)]])
    z = 1e-9
    assert phi_eval(mech, 0, z) == pytest.approx(z * z / 2, rel=1e-6)


@given(st.floats(-2, 2), st.floats(0, 3), st.floats(0.01, 5), st.floats(0, 3))
def test_phi_convex(b, c, u, w):
    mech = BranchingMechanism([b], [c], [[(u, w)]])
    z = np.linspace(0, 10, 201)
    vals = np.array([phi_eval(mech, 0, x) for x in z])
    assert np.all(np.diff(vals, 2) >= -1e-12)


@pytest.mark.parametrize("b, expected", [
    (0.0, 0.5),
    (1.0, math.exp(-1) / (1 + (1 - math.exp(-1)))),
])
def test_riccati_closed_forms(b, expected, still):
    v = solve_cumulant(BranchingMechanism([b], [1.0]), still, [1.0], 1.0).final[0]
    assert abs(v - expected) <= 1e-6
    assert expected == pytest.approx(0.5 if b == 0 else 0.22540, abs=1e-5)


def test_zero_function_fixed(riccati, still):
    sol = solve_cumulant(riccati, still, [0.0], 1.0)
    assert np.all(sol.values == 0.0)


def test_occupation_tanh(riccati, still):
    u = solve_cumulant_occupation(riccati, still, [0.0], [1.0], 1.0).final[0]
    assert u == pytest.approx(math.tanh(1.0), abs=1e-9)


def test_occupation_reduces(still):
    mech = BranchingMechanism([0.5], [1.0])
    a = solve_cumulant_occupation(mech, still, [0.7], [0.0], 1.0)
    b = solve_cumulant(mech, still, [0.7], 1.0)
    assert np.array_equal(a.values, b.values)
    zero = solve_cumulant_occupation(mech, still, [0.0], [0.0], 1.0)
    assert not np.any(zero.values)


def test_against_adaptive_reference_with_jumps():
    Q = np.array([[-1.0, 1.0], [2.0, -2.0]])
    mech = BranchingMechanism([0.3, -0.5], [1.0, 0.2], [[(0.5, 2.0), (2.0, 0.3)], [(1.0, 1.0)]])
    f, g = np.array([1.5, 0.2]), np.array([0.3, 1.0])
    ref = ivp_cumulant(Q, mech.phi, f, 2.0, g)
    got = solve_cumulant_occupation(mech, MotionModel(Q), f, g, 2.0).final
    assert np.allclose(got, ref, atol=1e-10)


def test_rk4_order(riccati, still):
    errs = [abs(solve_cumulant(riccati, still, [1.0], 1.0, h).final[0] - 0.5) for h in (0.1, 0.05)]
    assert errs[0] / errs[1] >= 3.5


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2), st.floats(0, 2),
       st.lists(st.floats(0, 2), min_size=2, max_size=2),
       st.sampled_from([0.25, 0.5, 1.0]), st.sampled_from([0.25, 0.5, 1.0]))
def test_flow_property(q01, q10, b0, b1, c0, c1, f, s, t):
    motion = MotionModel.two_state(q01, q10)
    mech = BranchingMechanism([b0, b1], [c0, c1])
    vt = solve_cumulant(mech, motion, f, t).final
    lhs = solve_cumulant(mech, motion, vt, s).final
    rhs = solve_cumulant(mech, motion, f, s + t).final
    assert np.max(np.abs(lhs - rhs)) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=2, max_size=2), st.lists(st.floats(0, 1), min_size=2, max_size=2))
def test_monotone_and_below_linear_flow(f, bump):
    motion = MotionModel.two_state(1.0, 0.5)
    mech = BranchingMechanism([0.5, -0.3], [1.0, 0.5], [[(1.0, 0.5)], []])
    f = np.array(f)
    g = f + np.array(bump)
    vf = solve_cumulant(mech, motion, f, 1.0).values
    vg = solve_cumulant(mech, motion, g, 1.0).values
    assert np.all(vf <= vg + 1e-10)
    linear = killed_transition(motion, mech.b, 1.0) @ f
    assert np.all(vf[-1] <= linear + 1e-10)


def test_solver_argument_errors(riccati, still):
    with pytest.raises(ValueError):
        solve_cumulant(riccati, still, [1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        solve_cumulant(riccati, still, [1.0], 1.0, 2.0)
    with pytest.raises(ValueError):
        solve_cumulant(riccati, still, [-1.0], 1.0)
    with pytest.raises(ValueError):
        solve_cumulant(riccati, MotionModel.two_state(1.0), [1.0, 1.0], 1.0)


def test_unstable_step_is_reported(riccati, still):
    with pytest.raises(ArithmeticError):
        solve_cumulant(riccati, still, [1e6], 1.0, 0.1)


def test_undershoot_policy(caplog):
    v = np.array([1.0, -1e-13])
    assert np.array_equal(_clamp(v, 0.1), [1.0, 0.0])
    with caplog.at_level(logging.WARNING):
        assert _clamp(np.array([-1e-10]), 0.2)[0] == 0.0
    assert "undershoot" in caplog.text
    with pytest.raises(ArithmeticError):
        _clamp(np.array([-1e-6]), 0.3)


def test_csv_dump(riccati, still):
    sol = solve_cumulant(riccati, still, [1.0], 0.01, 0.005)
    lines = sol.to_csv().strip().splitlines()
    assert lines[0] == "time,v_1"
    assert len(lines) == 4
    t, v = map(float, lines[-1].split(","))
    assert t == 0.01 and v == sol.final[0]
    assert isinstance(sol, CumulantSolution) and sol.horizon == pytest.approx(0.01)


def test_mechanism_json_round_trip():
    mech = BranchingMechanism([0.1, 0.2], [1.0, 0.0], [[(1.0, 0.5)], []])
    back = BranchingMechanism.from_json(mech.to_json())
    z = np.array([0.7, 1.3])
    assert np.array_equal(back.phi(z), mech.phi(z))


# ---------------------------------------------------------------- S-functional

def test_s_functional_closed_examples(riccati, still):
    assert s_functional(PEntranceLaw([1.0]), riccati, still, [1.0], 1.0) == pytest.approx(0.5, abs=1e-9)
    assert s_functional(PEntranceLaw([2.0]), riccati, still, [1.0], 1.0) == pytest.approx(1.0, abs=1e-9)
    assert s_functional(PEntranceLaw([1.0]), riccati, still, [0.0], 1.0) == 0.0


def test_s_occupation_examples(riccati, still):
    kap = PEntranceLaw([1.0])
    assert s_functional_occupation(kap, riccati, still, [0.0], [1.0], 1.0) == pytest.approx(math.tanh(1), abs=1e-8)
    assert s_functional_occupation(kap, riccati, still, [0.4], [0.0], 1.0) == pytest.approx(
        s_functional(kap, riccati, still, [0.4], 1.0), abs=1e-15)
    assert s_functional_occupation(PEntranceLaw([0.0]), riccati, still, [1.0], [1.0], 1.0) == 0.0


def test_occupation_integral_log_cosh(riccati, still):
    oracle = quad(lambda s: math.tanh(s), 0, 1)[0]
    got = occupation_immigration_exponent(PEntranceLaw([1.0]), riccati, still, [0.0], [1.0], 1.0)
    assert oracle == pytest.approx(math.log(math.cosh(1)), abs=1e-12)
    assert got == pytest.approx(oracle, abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=2, max_size=2), st.lists(st.floats(0, 2), min_size=2, max_size=2),
       st.floats(0.1, 2.0))
def test_closed_entrance_identity(mu, f, t):
    """A closed entrance law kappa_t = mu P_t gives S_t(kappa, f) = mu(V_t f)."""
    motion = MotionModel.two_state(1.5, 0.5)
    mech = BranchingMechanism([0.4, -0.2], [1.0, 0.3], [[(0.5, 1.0)], []])
    s = s_functional(PEntranceLaw(mu), mech, motion, f, t)
    assert s == pytest.approx(np.dot(mu, solve_cumulant(mech, motion, f, t).final), abs=1e-8)


def test_s_functional_direct_quadrature():
    """Independent oracle: S_t = kappa_t(f) - int kappa_{t-s}(phi(V_s f)) ds by adaptive quad."""
    Q = np.array([[-1.0, 1.0], [0.5, -0.5]])
    motion = MotionModel(Q)
    mech = BranchingMechanism([0.2, 0.0], [1.0, 2.0])
    mu, f, t = np.array([0.7, 0.2]), np.array([1.0, 0.3]), 1.3

    def V(s):
        return ivp_cumulant(Q, mech.phi, f, s) if s > 0 else f

    def integrand(s):
        return mu @ killed_transition(motion, [0, 0], t - s) @ mech.phi(V(s))

    oracle = mu @ killed_transition(motion, [0, 0], t) @ f - quad(integrand, 0, t, epsabs=1e-11)[0]
    assert s_functional(PEntranceLaw(mu), mech, motion, f, t) == pytest.approx(oracle, abs=1e-8)


def test_s_functional_rejects_zero_time(riccati, still):
    with pytest.raises(ValueError):
        s_functional(PEntranceLaw([1.0]), riccati, still, [1.0], 0.0)


# ---------------------------------------------------------------- moments

def test_moment_flow_examples(still):
    mu = [1.0]
    assert moment_flow(BranchingMechanism([1.0], [1.0]), still, mu, 1.0).total() == pytest.approx(math.exp(-1), abs=1e-12)
    assert moment_flow(BranchingMechanism([1.0], [1.0]), still, mu, 0.0).total() == 1.0
    motion = MotionModel.two_state(2.0, 0.3)
    m = moment_flow(BranchingMechanism([0.0, 0.0], [1.0, 4.0]), motion, [0.3, 1.2], 2.5)
    assert m.total() == pytest.approx(1.5, abs=1e-10)


def test_moment_flow_against_ode():
    Q = np.array([[-1.0, 1.0], [0.5, -0.5]])
    b = np.array([0.3, -0.4])
    mu = np.array([0.6, 1.1])
    ref = solve_ivp(lambda _, m: m @ (Q - np.diag(b)), (0, 1.7), mu, rtol=1e-12, atol=1e-14).y[:, -1]
    got = moment_flow(BranchingMechanism(b, [1.0, 1.0]), MotionModel(Q), mu, 1.7).masses
    assert np.allclose(got, ref, atol=1e-10)


def test_cache_returns_same_object(riccati, still):
    assert cumulant_path(riccati, still, [1.0], 1.0) is cumulant_path(riccati, still, [1.0], 1.0)
