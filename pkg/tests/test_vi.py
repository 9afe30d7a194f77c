import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dqvi.errors import ConfigurationError, NonConvergenceError
from dqvi.oracle import registered_instances
from dqvi.rod import RodConfig, assemble
from dqvi.space import Box, NodeUpperBound, Space, WholeSpace
from dqvi.vi import (
    FrozenOperator, FrozenTerm, NonsmoothJ, OperatorA, QviConfig, equilibrium_residual, prox_project,
    solve_qvi, solve_vi, spot_check_nonsmooth, spot_check_operator,
)

R1 = Space.euclidean(1)
CFG = QviConfig()
X0 = np.zeros(1)


def lin(m):
    return FrozenOperator(lambda u: m * u, m, m)


def coupled_negative():
    A = OperatorA.linear([[2.0]], R1)
    j = NonsmoothJ((0,), lambda x, eta: np.array([0.5 * abs(eta[0])]), "pos", beta=0.5)
    return A, j, NodeUpperBound(R1, 0, 1.0), np.array([-1.0])


@pytest.mark.parametrize("K, expected", [(WholeSpace(R1), 3.0), (NodeUpperBound(R1, 0, 2.0), 2.0)])
def test_solve_vi_linear(K, expected):
    res = solve_vi(lin(1.0), FrozenTerm([], []), K, [3.0], CFG)
    assert res.u[0] == pytest.approx(expected, abs=1e-9)


def test_solve_vi_kink_and_clamp():
    # grid minimization of u^2 + u^+ - 2u over u <= 0.5 gives 0.5
    res = solve_vi(lin(2.0), FrozenTerm([0], [1.0]), NodeUpperBound(R1, 0, 0.5), [2.0], CFG)
    assert res.u[0] == pytest.approx(0.5, abs=1e-9)


def test_solve_vi_step_outside_range():
    with pytest.raises(ConfigurationError, match="step"):
        solve_vi(lin(1.0), FrozenTerm([], []), WholeSpace(R1), [1.0], QviConfig(step=2.5))


def test_solve_vi_nonconvergence_carries_residual():
    with pytest.raises(NonConvergenceError) as info:
        solve_vi(lin(1.0), FrozenTerm([], []), WholeSpace(R1), [1.0], QviConfig(max_inner=2, step=0.01))
    assert info.value.residual > 0


def test_non_separable_term_rejected():
    S2 = Space([[2.0, 0.5], [0.5, 1.0]])
    A = FrozenOperator(lambda u: u, 0.5, 2.0)
    with pytest.raises(ConfigurationError, match="non-separable"):
        solve_vi(A, FrozenTerm([0], [1.0]), NodeUpperBound(S2, 1, 0.0), [0.0, 0.0], CFG)


def test_qvi_without_coupling_single_step():
    inst = next(i for i in registered_instances() if i.name == "kink_and_clamp")
    A = inst.operator()
    res = solve_qvi(X0, A, inst.j, inst.K, inst.fbar, CFG)
    frozen = solve_vi(A.at(X0), inst.j.frozen(X0, res.u), inst.K, inst.fbar, CFG)
    assert res.outer_iterations == 1
    assert res.u == pytest.approx(frozen.u, abs=1e-9)


def test_qvi_constant_yield_matches_frozen():
    problem = assemble(RodConfig(elements=8, c1=0.0, c2=0.0, h0=0.2, f0_amplitude=2.0))
    x = problem.x0
    fbar = problem.fbar(0.8)
    res = problem.solve_at(0.8, x, CFG)
    frozen = solve_vi(problem.A.at(x), problem.j.frozen(x, np.zeros(8)), problem.K, fbar, CFG)
    assert np.allclose(res.u, frozen.u, atol=1e-9)


def test_qvi_coupled_example():
    A, j, K, fbar = coupled_negative()
    res = solve_qvi(X0, A, j, K, fbar, CFG)
    assert res.u[0] == pytest.approx(-0.5, abs=1e-9)
    assert all(r <= 0.25 + 0.05 for r in res.outer_rates)


def test_qvi_refuses_without_contraction():
    A = OperatorA.linear([[1.0]], R1)
    j = NonsmoothJ((0,), lambda x, eta: np.array([abs(eta[0])]), "pos", beta=1.0)
    with pytest.raises(ConfigurationError, match="contraction condition violated"):
        solve_qvi(X0, A, j, WholeSpace(R1), [1.0], CFG)


def test_qvi_outer_rates_bounded():
    A = OperatorA.linear([[2.0]], R1)
    j = NonsmoothJ((0,), lambda x, eta: np.array([0.2 + 0.8 * abs(eta[0])]), "pos", beta=0.8)
    res = solve_qvi(X0, A, j, NodeUpperBound(R1, 0, 5.0), [4.0], CFG)
    assert res.outer_rates
    assert max(res.outer_rates[-3:]) <= 0.4 + 0.05
    # the fixed point 2u = 4 - (0.2 + 0.8 u)
    assert res.u[0] == pytest.approx(3.8 / 2.8, abs=1e-9)


def test_equilibrium_residual_at_u_is_zero():
    A, j, K, fbar = coupled_negative()
    u = np.array([-0.5])
    assert equilibrium_residual(X0, u, A, j, K, fbar, samples=np.array([u])) == 0.0


def test_equilibrium_residual_certifies_solution():
    A, j, K, fbar = coupled_negative()
    res = solve_qvi(X0, A, j, K, fbar, CFG)
    val = equilibrium_residual(X0, res.u, A, j, K, fbar, samples=1000, seed=3)
    assert val >= -CFG.inner_tol * (1 + 10.0)


def test_equilibrium_residual_detects_perturbation():
    # at u = -0.4 the eta-frozen gap is G(v) = (2u + 1)(v - u) for v <= 0: min over v = u - 1 is -0.2
    A, j, K, fbar = coupled_negative()
    u = np.array([-0.4])
    val = equilibrium_residual(X0, u, A, j, K, fbar, samples=np.array([[-1.4], [-0.4], [0.0]]))
    assert val == pytest.approx(-0.2, abs=1e-14)
    assert equilibrium_residual(X0, u, A, j, K, fbar, samples=256) < -0.01


def test_prox_project_nondiagonal_single_dof():
    S2 = Space([[2.0, 0.5], [0.5, 1.0]])
    K = NodeUpperBound(S2, 1, 0.3)
    phi = FrozenTerm([1], [0.7])
    z = np.array([0.4, 1.5])
    gamma = 0.3
    out = prox_project(phi, K, z, gamma)
    # compare with a brute-force minimization over a fine grid
    a = np.linspace(-2, 3, 1001)
    b = np.linspace(-2, 0.3, 461)
    A_, B_ = np.meshgrid(a, b, indexing="ij")
    W = np.stack([A_.ravel(), B_.ravel()], axis=1)
    D = W - z
    vals = 0.7 * np.maximum(W[:, 1], 0) + np.sum((D @ S2.gram) * D, axis=1) / (2 * gamma)
    best = W[np.argmin(vals)]
    assert np.allclose(out, best, atol=1e-2)
    D = np.stack([out + d for d in 1e-4 * np.random.default_rng(0).normal(size=(200, 2))])
    D = D[D[:, 1] <= 0.3]
    f = lambda w: 0.7 * max(w[1], 0) + S2.norm(w - z) ** 2 / (2 * gamma)  # noqa: E731
    assert all(f(out) <= f(w) + 1e-12 for w in D)


def test_spot_checks_on_rod(rng):
    problem = assemble(RodConfig(elements=12, c1=0.1, c2=0.3))
    m, lip = spot_check_operator(problem.A, problem.X.dim, problem.V, rng, count=1000)
    assert m >= problem.A.m * (1 - 1e-6)
    assert lip <= problem.A.lip_u * (1 + 1e-9)
    convex, four = spot_check_nonsmooth(problem.j, problem.X, problem.V, rng, count=1000)
    assert convex <= 1e-10
    assert four <= 1e-10


@pytest.mark.parametrize("inst", registered_instances(), ids=lambda i: i.name)
def test_uniqueness_from_distant_starts(inst):
    A = inst.operator()
    a = solve_qvi(X0, A, inst.j, inst.K, inst.fbar, CFG, u0=np.zeros(inst.dim)).u
    b = solve_qvi(X0, A, inst.j, inst.K, inst.fbar, CFG, u0=np.full(inst.dim, 2.5)).u
    assert inst.space.norm(a - b) <= 10 * CFG.outer_tol


@given(m=st.floats(1.0, 4.0), c=st.floats(0.0, 0.9), w0=st.floats(0.0, 2.0), f=st.floats(-5, 5),
       g=st.floats(-2, 2), start=st.floats(-3, 3))
def test_scalar_qvi_unique_and_certified(m, c, w0, f, g, start):
    A = OperatorA.linear([[m]], R1)
    j = NonsmoothJ((0,), lambda x, eta: np.array([w0 + c * m * abs(eta[0])]), "pos", beta=c * m)
    K = NodeUpperBound(R1, 0, g)
    a = solve_qvi(X0, A, j, K, [f], CFG)
    b = solve_qvi(X0, A, j, K, [f], CFG, u0=[start])
    assert abs(a.u[0] - b.u[0]) <= 10 * CFG.outer_tol
    assert a.certificate >= -CFG.inner_tol
    assert all(r <= c + 0.05 for r in a.outer_rates)


def test_solver_is_deterministic():
    problem = assemble(RodConfig(elements=10, c2=0.3, f0_amplitude=2.0))
    a = problem.solve_at(0.7, problem.x0, CFG)
    b = problem.solve_at(0.7, problem.x0, CFG)
    assert a.u.tobytes() == b.u.tobytes()
    assert a.certificate == b.certificate


def test_box_instance_abs_term():
    D2 = Space(np.diag([1.0, 1.0]))
    K = Box(D2, [-1.0, -1.0], [1.0, 1.0])
    A = FrozenOperator(lambda u: np.array([[2.0, 0.0], [0.0, 2.0]]) @ u, 2.0, 2.0)
    res = solve_vi(A, FrozenTerm([0, 1], [0.5, 0.5], "abs"), K, [3.0, 0.2], CFG)
    # per coordinate: soft threshold then clamp
    assert np.allclose(res.u, [1.0, 0.0], atol=1e-9)
