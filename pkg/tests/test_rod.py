import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqvi.errors import ConfigurationError, InputError, NotCertifiedError
from dqvi.integrator import integrate, uniform_grid
from dqvi.oracle import OracleInstance, brute_force_qvi
from dqvi.rod import RodConfig, assemble, contact_diagnostics, discretize, load_scale, state_derivative
from dqvi.space import NodeUpperBound, Space
from dqvi.vi import NonsmoothJ, QviConfig, spot_check_operator

CFG = QviConfig()


def test_single_element_assembly():
    cfg = RodConfig(elements=1, length=1.0, modulus=1.0, stiffness_k=0.0)
    problem = assemble(cfg)
    model = discretize(cfg)
    assert np.allclose(model.stiffness, [[1.0]])
    assert problem.K.index == 0
    assert problem.A(problem.x0, np.array([0.7]))[0] == pytest.approx(0.7)


def test_pure_elastic_without_contact_terms():
    problem = assemble(RodConfig(elements=5, stiffness_k=0.0, h0=0.0, c1=0.0, c2=0.0))
    assert problem.j.beta == 0.0
    x = problem.x0
    u = np.linspace(-0.2, 0.4, 5)
    assert problem.j(x, u, u) == 0.0
    model = discretize(RodConfig(elements=5, stiffness_k=0.0, h0=0.0))
    assert np.allclose(problem.A(np.zeros(6), u), model.stiffness @ u)


def test_constant_yield_has_zero_beta():
    cfg = RodConfig(elements=5, h0=0.25, c1=0.0, c2=0.0)
    problem = assemble(cfg)
    assert problem.j.beta == 0.0
    v = np.zeros(5)
    v[-1] = 0.4
    for eta in (np.zeros(5), np.full(5, 3.0)):
        assert problem.j(problem.x0, eta, v) == pytest.approx(0.25 * 0.4)


def test_coupling_constant_from_trace():
    cfg = RodConfig(elements=20, length=2.0, modulus=3.0, c1=0.1, c2=0.4)
    model = discretize(cfg)
    problem = assemble(cfg)
    # evaluation at the tip: |u(L)|^2 <= L ||u'||^2
    assert model.c_tr**2 == pytest.approx(2.0, rel=1e-12)
    assert problem.j.beta == pytest.approx(0.4 * 2.0)
    assert problem.A.m == 3.0


def test_contraction_violation_names_constants():
    with pytest.raises(ConfigurationError, match="L_h") as info:
        assemble(RodConfig(elements=4, c2=1.5))
    assert "m_E" in str(info.value)


def test_config_validation():
    with pytest.raises(InputError):
        RodConfig(elements=0)
    with pytest.raises(ConfigurationError):
        RodConfig(modulus=[1.0, -1.0], elements=2)
    with pytest.raises(ConfigurationError):
        RodConfig(gap=-0.1)
    with pytest.raises(ConfigurationError):
        RodConfig(gap=0.6, gap_bounds=(0.1, 0.5))
    with pytest.raises(ConfigurationError):
        RodConfig(theta="square")
    with pytest.raises(InputError, match="unknown"):
        RodConfig.from_mapping({"elements": 4, "damping": 1.0})
    with pytest.raises(InputError):
        RodConfig(elements=3, u0=[0.0, 0.1])


def test_scalar_u0_is_linear_tip_profile():
    cfg = RodConfig(elements=4, u0=0.2, modulus=2.0)
    model = discretize(cfg)
    sigma = model.initial_state()[:-1]
    # eps(u0) = 0.2 on every element, sigma_ir(0) = sigma0 - E eps
    assert np.allclose(sigma, -0.4)


def test_state_derivative_rest():
    cfg = RodConfig(elements=3)
    out = state_derivative(cfg, np.zeros(4), np.zeros(3))
    assert np.array_equal(out, np.zeros(4))


def test_state_derivative_linear_viscoelastic():
    cfg = RodConfig(elements=2, modulus=1.5, fnl_slope=1.5, visco=0.5)
    x = np.array([2.0, 2.0, 0.0])
    rng = np.random.default_rng(5)
    for _ in range(5):
        u = rng.normal(size=2)
        u[-1] = -0.3
        out = state_derivative(cfg, x, u)
        assert np.allclose(out[:2], 1.0)
        assert out[2] == 0.0


def test_state_derivative_clipped_slope():
    cfg = RodConfig(elements=1, length=1.0, modulus=2.0, fnl_slope=2.0, fnl_cap=1.0, visco=1.0)
    out = state_derivative(cfg, np.zeros(2), np.array([0.3]))
    assert out[0] == pytest.approx(0.3, abs=1e-15)
    assert out[1] == pytest.approx(0.3, abs=1e-15)


def test_state_derivative_dimension_check():
    with pytest.raises(InputError):
        state_derivative(RodConfig(elements=3), np.zeros(3), np.zeros(3))


def one_element(f0, k=0.5, h0=0.1, c2=0.2, gap=0.3):
    cfg = RodConfig(elements=1, theta="const", f0_amplitude=f0, stiffness_k=k, h0=h0, c2=c2, gap=gap)
    problem = assemble(cfg)
    R1 = Space.euclidean(1)
    j = NonsmoothJ((0,), lambda x, eta: np.array([h0 + c2 * max(eta[0], 0.0)]), beta=c2)
    inst = OracleInstance([[1.0]], problem.fbar(0.0), NodeUpperBound(R1, 0, gap), j, springs={0: k},
                          spacing=1e-5)
    return cfg, problem, inst


def test_diagnostics_no_contact():
    cfg = RodConfig(elements=10, f0_amplitude=-1.0, theta="const")
    problem = assemble(cfg)
    u = problem.solve_at(0.5, problem.x0, CFG).u
    d = contact_diagnostics(cfg, problem.x0, u, 0.5, problem=problem)
    assert u[-1] < 0
    scale = load_scale(cfg, 0.5)
    assert abs(d["multiplier"]) <= 1e-8 * scale
    assert d["eta"] == 0.0
    for key in ("penetration_violation", "complementarity_residual", "sign_residual", "eta_bounds_residual"):
        assert d[key] <= 1e-8 * scale


def test_diagnostics_fully_clamped():
    cfg, problem, inst = one_element(f0=30.0)
    u = problem.solve_at(0.0, problem.x0, CFG).u
    assert u[0] == 0.3
    assert brute_force_qvi(inst)[0] == pytest.approx(0.3, abs=2e-5)
    d = contact_diagnostics(cfg, problem.x0, u, 0.0, problem=problem)
    assert d["lambda_total"] < 0
    assert d["complementarity_residual"] <= 1e-12
    assert d["eta"] == pytest.approx(0.1 + 0.2 * 0.3)


def test_diagnostics_intermediate_penetration():
    cfg, problem, inst = one_element(f0=1.2)
    u = problem.solve_at(0.0, problem.x0, CFG).u
    # fbar = f0 / 3; u (1 + k) + h0 + c2 u = fbar
    expected = (0.4 - 0.1) / (1.5 + 0.2)
    assert u[0] == pytest.approx(expected, abs=1e-9)
    assert brute_force_qvi(inst)[0] == pytest.approx(expected, abs=2e-5)
    d = contact_diagnostics(cfg, problem.x0, u, 0.0, problem=problem)
    assert abs(d["lambda_total"]) <= 1e-8
    assert d["eta"] == model_yield(cfg, u[0])


def model_yield(cfg, uc):
    return discretize(cfg).yield_limit(0.0, max(uc, 0.0))


def test_diagnostics_refuse_uncertified():
    cfg, problem, _ = one_element(f0=1.2)
    with pytest.raises(NotCertifiedError):
        contact_diagnostics(cfg, problem.x0, np.array([0.05]), 0.0, problem=problem)


def test_operator_strongly_monotone(rng):
    problem = assemble(RodConfig(elements=15, modulus=np.linspace(1.0, 3.0, 15).tolist(), stiffness_k=2.0))
    m, lip = spot_check_operator(problem.A, problem.X.dim, problem.V, rng, count=1000)
    assert m >= problem.A.m * (1 - 1e-6)
    assert lip <= problem.A.lip_u * (1 + 1e-9)


def test_sampled_state_lipschitz_within_declared():
    problem = assemble(RodConfig(elements=8, fnl_slope=0.2, visco=[0.1, 0.9] * 4, c2=0.3))
    assert problem.validate(samples=400) <= problem.lip_F * 1.01


def test_linear_subcase_exponential_stress():
    cfg = RodConfig(elements=4, fnl_slope=1.0, stiffness_k=0.0, h0=0.0, visco=0.7, sigma0=0.5, theta="sine")
    problem = assemble(cfg)
    traj = integrate(problem, uniform_grid(1000), "heun", QviConfig(residual_samples=0))
    sigma0 = problem.x0[:-1]
    exact = sigma0 * math.exp(0.7)
    assert np.allclose(traj.states[-1, :-1], exact, rtol=1e-6, atol=0)


def test_residuals_shrink_with_tolerance():
    cfg = RodConfig(elements=10, c2=0.3, f0_amplitude=1.0)
    problem = assemble(cfg)
    x = problem.x0
    out = []
    for tol in (1e-6, 1e-9):
        solver = QviConfig(inner_tol=tol, outer_tol=tol / 10)
        u = problem.solve_at(0.9, x, solver).u
        d = contact_diagnostics(cfg, x, u, 0.9, solver, problem)
        out.append(d["interior_residual"])
    assert out[1] <= out[0]


@settings(max_examples=8)
@given(c2=st.floats(0.0, 0.8), f0=st.floats(-1.0, 4.0), theta=st.sampled_from(["const", "ramp", "sine"]),
       gap=st.floats(0.05, 0.5))
def test_xi_nondecreasing_and_no_penetration(c2, f0, theta, gap):
    cfg = RodConfig(elements=6, c2=c2, f0_amplitude=f0, theta=theta, gap=gap)
    traj = integrate(assemble(cfg), uniform_grid(40), "euler")
    assert np.all(np.diff(traj.states[:, -1]) >= 0.0)
    assert np.all(traj.controls[:, -1] <= gap + 1e-12)
