import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dqvi.errors import ConfigurationError, InputError
from dqvi.space import Box, LinearMap, NodeUpperBound, Space, WholeSpace, inner, mosco_scale, project

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vec2 = arrays(float, 2, elements=finite)
vec3 = arrays(float, 3, elements=finite)

S2 = Space(np.array([[2.0, 0.5], [0.5, 1.0]]))
S3 = Space(np.array([[3.0, 1.0, 0.0], [1.0, 2.0, 0.5], [0.0, 0.5, 1.0]]))


def test_inner_orthonormal_basis():
    R2 = Space.euclidean(2)
    assert inner(R2, [1, 0], [0, 1]) == 0.0
    assert inner(R2, [1, 0], [1, 0]) == 1.0


def test_inner_p1_stiffness_two_elements():
    # dofs at nodes 0.5 and 1 of [0, 1]; u = (1, 1) has slope 2 then 0
    h = 0.5
    gram = np.array([[2.0, -1.0], [-1.0, 1.0]]) / h
    assert inner(Space(gram), [1, 1], [1, 1]) == pytest.approx(2.0, abs=1e-14)


def test_inner_dimension_mismatch():
    with pytest.raises(InputError):
        inner(Space.euclidean(2), [1, 0, 0], [1, 0])


def test_space_rejects_bad_gram():
    with pytest.raises(ConfigurationError):
        Space([[1.0, 0.2], [0.0, 1.0]])
    with pytest.raises(ConfigurationError):
        Space([[1.0, 2.0], [2.0, 1.0]])


def test_dual_norm_and_riesz():
    d = np.array([1.0, -2.0])
    r = S2.riesz(d)
    assert S2.norm(r) == pytest.approx(S2.dual_norm(d), rel=1e-14)


@pytest.mark.parametrize("gram, v, expected", [
    (np.eye(2), [1.0, -1.0], [1.0, -1.0]),
    (np.eye(2), [1.0, 1.0], [1.0, 0.0]),
    (np.diag([2.0, 1.0]), [1.0, 1.0], [1.0, 0.0]),
])
def test_node_upper_bound_examples(gram, v, expected):
    K = NodeUpperBound(Space(gram), 1, 0.0)
    assert np.allclose(project(K, v), expected, atol=1e-14)


def test_node_upper_bound_matches_grid_minimizer():
    K = NodeUpperBound(S2, 1, 0.0)
    v = np.array([1.0, 1.0])
    a = np.arange(-1.0, 3.0, 1e-3)
    W = np.stack([a, np.zeros_like(a)], axis=1)  # the minimizer sits on the bound
    d = W - v
    best = W[np.argmin(np.sum((d @ S2.gram) * d, axis=1))]
    assert np.allclose(K.project(v), best, atol=1e-3)
    # closed form: v - (v_i - g) / Ginv_ii * Ginv e_i
    expected = v - (1.0 / S2.gram_inv[1, 1]) * S2.gram_inv[:, 1]
    assert np.allclose(K.project(v), expected, atol=1e-14)


def test_box_needs_diagonal_gram():
    with pytest.raises(ConfigurationError):
        Box(S2, [0, 0], [1, 1])
    Box(S2, [-np.inf, -np.inf], [np.inf, np.inf])


def test_empty_box_rejected():
    with pytest.raises(ConfigurationError, match="empty box"):
        Box(Space.euclidean(2), [1, 0], [0, 1])


def test_node_bound_rejects_infinite_bound():
    with pytest.raises(ConfigurationError):
        NodeUpperBound(S2, 0, np.inf)


def _sets():
    D3 = Space(np.diag([1.0, 2.0, 0.5]))
    return [
        WholeSpace(S3),
        NodeUpperBound(S3, 2, 0.3),
        NodeUpperBound(S3, 0, -1.0),
        Box(D3, [-1.0, -np.inf, 0.0], [1.0, 2.0, np.inf]),
    ]


@pytest.mark.parametrize("K", _sets(), ids=repr)
@given(v=vec3, w=vec3)
def test_projection_nonexpansive(K, v, w):
    Pv, Pw = K.project(v), K.project(w)
    assert K.space.norm(Pv - Pw) <= K.space.norm(v - w) + 1e-12 * (1 + K.space.norm(v - w))


@pytest.mark.parametrize("K", _sets(), ids=repr)
@given(v=vec3)
def test_projection_idempotent_and_feasible(K, v):
    Pv = K.project(v)
    assert K.contains(Pv, tol=0.0)
    assert np.allclose(K.project(Pv), Pv, atol=1e-12, rtol=0)


@pytest.mark.parametrize("K", _sets(), ids=repr)
@given(v=vec3)
def test_projection_variational_characterization(K, v):
    rng = np.random.default_rng(7)
    Pv = K.project(v)
    W = np.array([K.project(w) for w in rng.normal(scale=20.0, size=(120, 3))])
    vals = (W - Pv) @ K.space.gram @ (v - Pv)
    scale = 1.0 + K.space.norm(v - Pv) * (1.0 + np.abs(W).max())
    assert np.max(vals) <= 1e-10 * scale


def test_linear_map_norm_bound(rng):
    Z = Space(np.diag([1.0, 4.0]))
    P = LinearMap(np.array([[1.0, 0.5], [0.0, 1.0]]), S2, Z)
    for _ in range(200):
        v = rng.normal(size=2)
        assert Z.norm(P(v)) <= P.norm * S2.norm(v) * (1 + 1e-12)
    z = np.array([0.3, -0.7])
    v = np.array([1.1, 2.0])
    assert P.lift(z) @ v == pytest.approx(Z.inner(z, P(v)), rel=1e-13)


def test_mosco_scale_examples():
    v = np.array([2.0, 1.0])
    assert np.array_equal(mosco_scale(1.0, 1.0, v, index=1), v)
    assert np.allclose(mosco_scale(1.0, 0.5, v, index=1), [1.0, 0.5])


def test_mosco_scale_linear_decay():
    v = np.array([0.4, -0.2, 0.9])
    errs = [S3.norm(mosco_scale(1.0, 1.0 + 1.0 / n, v, index=2) - v) for n in range(1, 65)]
    base = S3.norm(v)
    for n, e in enumerate(errs, start=1):
        assert e == pytest.approx(base / n, rel=1e-12)


def test_mosco_scale_errors():
    with pytest.raises(ConfigurationError):
        mosco_scale(0.0, 1.0, [0.1])
    with pytest.raises(ConfigurationError):
        mosco_scale(1.0, -1.0, [0.1])
    with pytest.raises(InputError):
        mosco_scale(1.0, 2.0, [1.5], index=0)


@given(g=st.floats(0.01, 10), gn=st.floats(0.01, 10), v=vec2)
def test_mosco_scale_lands_in_scaled_set(g, gn, v):
    v = v.copy()
    v[1] = min(v[1], g)
    out = mosco_scale(g, gn, v, index=1)
    assert out[1] <= gn
