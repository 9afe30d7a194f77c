"""Frozen-state variational and quasivariational inequality solvers.

For a fixed state ``x`` we look for ``u in K`` with

    <A(x,u), v-u> + j(x,u,v) - j(x,u,u) >= <fbar, v-u>   for all v in K.

The inner problem freezes the second argument of ``j`` at ``eta`` and is
solved by projected proximal-gradient steps in the V-metric; the outer
loop is the successive-approximation map ``eta -> u(eta)``, a contraction
with factor ``beta/m`` whenever ``m > beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, InputError, NonConvergenceError, NotCertifiedError
from .space import Box, ConvexSet, NodeUpperBound, Space, WholeSpace

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class QviConfig:
    inner_tol: float = 1e-9
    outer_tol: float = 1e-10
    max_inner: int = 20000
    max_outer: int = 2000
    step: Optional[float] = None  # None -> m / L''^2
    residual_samples: int = 256
    seed: int = 0

    def __post_init__(self):
        if not (self.inner_tol > 0 and self.outer_tol > 0):
            raise ConfigurationError("solver tolerances must be positive")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ConfigurationError("iteration caps must be at least 1")
        if self.step is not None and not self.step > 0:
            raise ConfigurationError("step must be positive")
        if self.residual_samples < 0:
            raise ConfigurationError("residual_samples must be nonnegative")

    def step_for(self, m, lip_u):
        if self.step is None:
            return m / lip_u**2
        upper = 2.0 * m / lip_u**2
        if not 0.0 < self.step < upper:
            raise ConfigurationError(f"step {self.step} outside (0, 2m/L''^2) = (0, {upper})")
        return self.step


class FrozenOperator:
    """``u -> A(x, u)`` at a fixed state, with its monotonicity constants."""

    def __init__(self, func, m, lip_u):
        self.func = func
        self.m = float(m)
        self.lip_u = float(lip_u)

    def __call__(self, u):
        return self.func(u)


class OperatorA:
    """State-dependent strongly monotone Lipschitz operator ``A(x, u)``.

    ``m`` is the strong monotonicity constant, ``lip_x`` (L') and
    ``lip_u`` (L'') the Lipschitz constants in the state and in ``u``,
    all measured in the V / V* / X metrics.
    """

    def __init__(self, func: Callable, m: float, lip_x: float, lip_u: float):
        if not m > 0:
            raise ConfigurationError(f"strong monotonicity constant must be positive, got {m}")
        if lip_u < m:
            raise ConfigurationError(f"L'' = {lip_u} cannot be smaller than m = {m}")
        self.func = func
        self.m = float(m)
        self.lip_x = float(lip_x)
        self.lip_u = float(lip_u)

    def __call__(self, x, u):
        return self.func(x, u)

    def at(self, x):
        return FrozenOperator(lambda u: self.func(x, u), self.m, self.lip_u)

    @classmethod
    def linear(cls, matrix, space: Space, coupling=None, state_space: Space = None):
        """``A(x, u) = matrix @ u + coupling @ x`` with constants computed
        from the metrics (symmetric part for ``m``)."""
        import scipy.linalg as sla

        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        sym = 0.5 * (M + M.T)
        m = float(sla.eigh(sym, space.gram, eigvals_only=True)[0])
        lip_u = float(np.sqrt(sla.eigh(M.T @ space.gram_inv @ M, space.gram, eigvals_only=True)[-1]))
        lip_u = max(lip_u, m)
        if coupling is None:
            return cls(lambda x, u: M @ u, m, 0.0, lip_u)
        C = np.atleast_2d(np.asarray(coupling, dtype=float))
        pulled = C.T @ space.gram_inv @ C
        lip_x = float(np.sqrt(max(sla.eigh(pulled, state_space.gram, eigvals_only=True)[-1], 0.0)))
        return cls(lambda x, u: M @ u + C @ x, m, lip_x, lip_u)


def _psi(kind, s):
    if kind == "pos":
        return np.maximum(s, 0.0)
    if kind == "abs":
        return np.abs(s)
    raise ConfigurationError(f"unknown nonsmooth kind {kind!r}")


def _prox_1d(kind, z, t):
    """prox of ``t * psi`` (t >= 0) applied elementwise."""
    if kind == "pos":
        return np.where(z > t, z - t, np.where(z < 0.0, z, 0.0))
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


class FrozenTerm:
    """Convex separable term ``phi(v) = sum_i w_i psi(v[dofs_i])``, ``w >= 0``."""

    def __init__(self, dofs, weights, kind="pos"):
        self.dofs = np.asarray(dofs, dtype=int)
        self.weights = np.asarray(weights, dtype=float)
        self.kind = kind
        if self.weights.shape != self.dofs.shape:
            raise InputError("weights and dofs must have the same length")
        if np.any(self.weights < 0):
            raise ConfigurationError("nonsmooth weights must be nonnegative for convexity")

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.dofs.size == 0:
            return 0.0
        return float(np.dot(self.weights, _psi(self.kind, v[self.dofs])))

    def many(self, V):
        if self.dofs.size == 0:
            return np.zeros(V.shape[0])
        return _psi(self.kind, V[:, self.dofs]) @ self.weights


ZERO_TERM = FrozenTerm([], [])


class NonsmoothJ:
    """Separable ``j(x, eta, v) = sum_i w_i(x, eta) psi(v[dofs_i])``.

    ``weights(x, eta)`` returns the nonnegative per-dof weights.  ``alpha``
    and ``beta`` are the constants of the four-term bound; ``tau`` and
    ``delta`` bound the growth
    ``j(x,u,v1) - j(x,u,v2) <= (tau + delta(||x|| + ||u||)) ||v1 - v2||``.
    """

    def __init__(self, dofs, weights: Callable, kind="pos", alpha=0.0, beta=0.0, tau=0.0, delta=0.0):
        self.dofs = tuple(int(i) for i in dofs)
        self.weights = weights
        self.kind = kind
        _psi(kind, np.zeros(1))
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.tau = float(tau)
        self.delta = float(delta)

    @classmethod
    def zero(cls):
        return cls((), lambda x, eta: np.zeros(0))

    @property
    def depends_on_eta(self):
        return self.beta > 0.0

    def frozen(self, x, eta):
        return FrozenTerm(self.dofs, self.weights(x, eta), self.kind)

    def __call__(self, x, eta, v):
        return self.frozen(x, eta)(v)

    def shifted(self, omega, growth_dual_norm=0.0):
        """Same coupling with every weight raised by ``omega >= 0``."""
        base = self.weights

        def weights(x, eta):
            return base(x, eta) + omega

        return NonsmoothJ(
            self.dofs, weights, self.kind, self.alpha, self.beta,
            self.tau + abs(omega) * growth_dual_norm, self.delta,
        )


def check_separable(dofs, cset: ConvexSet, space: Space):
    """Raise unless the prox of ``phi + indicator(K)`` is exactly computable."""
    coupled = set(int(i) for i in dofs) | set(cset.constrained_dofs())
    if space.is_diagonal or len(coupled) <= 1:
        return tuple(sorted(coupled))
    raise ConfigurationError(
        "non-separable nonsmooth term: with a non-diagonal Gram matrix the nonsmooth "
        f"term and the constraint must act on one common dof, got dofs {sorted(coupled)}"
    )


def _interval(cset: ConvexSet, i):
    if isinstance(cset, NodeUpperBound) and cset.index == i:
        return -np.inf, cset.bound
    if isinstance(cset, Box):
        return cset.lower[i], cset.upper[i]
    return -np.inf, np.inf


def _prox_scalar(kind, z, t):
    if kind == "pos":
        return z - t if z > t else (z if z < 0.0 else 0.0)
    return math.copysign(max(abs(z) - t, 0.0), z)


def prox_plan(phi: FrozenTerm, cset: ConvexSet, gamma):
    """Callable ``z -> argmin_w phi(w) + indicator_K(w) + ||w - z||_V^2 / (2 gamma)``
    with all step-independent data precomputed."""
    space = cset.space
    check_separable(phi.dofs, cset, space)
    if space.is_diagonal:
        g = np.diag(space.gram)
        d = phi.dofs
        t = gamma * phi.weights / g[d] if d.size else None
        if isinstance(cset, (Box, NodeUpperBound, WholeSpace)):
            lo = np.full(space.dim, -np.inf)
            hi = np.full(space.dim, np.inf)
            if isinstance(cset, Box):
                lo, hi = cset.lower, cset.upper
            elif isinstance(cset, NodeUpperBound):
                hi[cset.index] = cset.bound
            clip = not isinstance(cset, WholeSpace)

            def apply(z):
                out = np.array(z, dtype=float)
                if d.size:
                    out[d] = _prox_1d(phi.kind, out[d], t)
                if clip:
                    np.clip(out, lo, hi, out=out)
                return out

            return apply

        def apply(z):
            out = np.array(z, dtype=float)
            if d.size:
                out[d] = _prox_1d(phi.kind, out[d], t)
            return cset.project(out)

        return apply
    coupled = set(phi.dofs.tolist()) | set(cset.constrained_dofs())
    if not coupled:
        return lambda z: np.array(z, dtype=float)
    (i,) = coupled
    col = space.gram_inv[:, i] / space.gram_inv[i, i]
    w = float(phi.weights[phi.dofs == i].sum()) if phi.dofs.size else 0.0
    t = gamma * space.gram_inv[i, i] * w
    lo, hi = _interval(cset, i)
    kind = phi.kind

    def apply(z):
        out = np.array(z, dtype=float)
        s0 = float(out[i])
        s = _prox_scalar(kind, s0, t) if w > 0.0 else s0
        s = min(max(s, lo), hi)
        if s != s0:
            out += (s - s0) * col
            out[i] = s
        return out

    return apply


def prox_project(phi: FrozenTerm, cset: ConvexSet, z, gamma):
    """argmin_w phi(w) + indicator_K(w) + ||w - z||_V^2 / (2 gamma)."""
    return prox_plan(phi, cset, gamma)(z)


class ViResult(NamedTuple):
    u: np.ndarray
    iterations: int
    residual: float


class QviResult(NamedTuple):
    u: np.ndarray
    outer_rates: list
    outer_iterations: int
    inner_iterations: int
    residual: float
    certificate: float


def _residual_scale(A: FrozenOperator, gamma):
    # <A u+ - A u, .> plus the metric term of the prox step
    return A.lip_u + 1.0 / gamma


def solve_vi(A_frozen: FrozenOperator, phi: FrozenTerm, cset: ConvexSet, fbar, cfg: QviConfig,
             u0=None, tol=None) -> ViResult:
    """Projected proximal-gradient iteration in the V-metric.

    ``residual = (L'' + 1/gamma) ||u_{k+1} - u_k||_V`` bounds the violation
    of the variational inequality per unit distance, so stopping at
    ``residual <= tol`` certifies ``G(u, v) >= -tol ||v - u||``.
    """
    space = cset.space
    fbar = space.check(fbar, "fbar")
    gamma = cfg.step_for(A_frozen.m, A_frozen.lip_u)
    prox = prox_plan(phi, cset, gamma)
    tol = cfg.inner_tol if tol is None else tol
    scale = _residual_scale(A_frozen, gamma)
    Ginv = gamma * space.gram_inv
    G = space.gram
    func = A_frozen.func
    u = cset.project(np.zeros(space.dim) if u0 is None else space.check(u0, "u0"))
    residual = np.inf
    for k in range(1, cfg.max_inner + 1):
        u_new = prox(u - Ginv @ (func(u) - fbar))
        d = u_new - u
        residual = scale * math.sqrt(max(float(d @ G @ d), 0.0))
        u = u_new
        if residual <= tol:
            return ViResult(u, k, float(residual))
    raise NonConvergenceError("inner solver did not converge", float(residual))


def _noise_floor(space, u, scale):
    return 64.0 * EPS * scale * (1.0 + np.sqrt(max(u @ space.gram @ u, 0.0)))


def solve_qvi(x, A: OperatorA, j: NonsmoothJ, cset: ConvexSet, fbar, cfg: QviConfig,
              u0=None, certify=True) -> QviResult:
    """Successive approximation on the second argument of ``j``.

    ``outer_rates[k] = ||eta_{k+1} - eta_k|| / ||eta_k - eta_{k-1}||``,
    recorded only while both differences exceed ten times the iterate
    errors left by the inner tolerances, so noise ratios never enter.
    """
    if not A.m > j.beta:
        raise ConfigurationError(
            f"contraction condition violated: m = {A.m} <= beta = {j.beta}"
        )
    space = cset.space
    fbar = space.check(fbar, "fbar")
    check_separable(j.dofs, cset, space)
    Ax = A.at(x)
    gamma = cfg.step_for(A.m, A.lip_u)
    scale = _residual_scale(Ax, gamma)
    eta = cset.project(np.zeros(space.dim) if u0 is None else space.check(u0, "u0"))

    if not j.depends_on_eta:
        # a single solve must still place u within outer_tol of the solution
        tol = max(min(cfg.inner_tol, A.m * cfg.outer_tol), _noise_floor(space, eta, scale))
        res = solve_vi(Ax, j.frozen(x, eta), cset, fbar, cfg, u0=eta, tol=tol)
        out = QviResult(res.u, [], 1, res.iterations, res.residual, np.nan)
    else:
        diffs = []
        errs = []
        rates = []
        inner_total = 0
        tol = cfg.inner_tol
        for k in range(1, cfg.max_outer + 1):
            try:
                res = solve_vi(Ax, j.frozen(x, eta), cset, fbar, cfg, u0=eta, tol=tol)
            except NonConvergenceError as exc:
                raise exc.with_context(outer_iteration=k) from None
            inner_total += res.iterations
            d = res.u - eta
            diff = float(np.sqrt(max(d @ space.gram @ d, 0.0)))
            # an inner residual r leaves an error of at most r / m in the iterate
            errs.append(max(tol / A.m, _noise_floor(space, res.u, 1.0)))
            if len(diffs) >= 2 and diffs[-1] > 10.0 * sum(errs[-3:-1]) and diff > 10.0 * sum(errs[-2:]):
                rates.append(diff / diffs[-1])
            diffs.append(diff)
            eta = res.u
            if diff <= cfg.outer_tol:
                out = QviResult(eta, rates, k, inner_total, res.residual, np.nan)
                break
            # inexact inner solves must not pollute the outer contraction
            tol = max(min(cfg.inner_tol, 1e-4 * A.m * diff),
                      1e-3 * A.m * cfg.outer_tol,
                      _noise_floor(space, eta, scale))
        else:
            raise NonConvergenceError("outer fixed-point iteration did not converge", diffs[-1])

    if certify and cfg.residual_samples > 0:
        rng = np.random.default_rng(cfg.seed)
        samples = feasible_samples(cset, out.u, cfg.residual_samples, rng, j.dofs)
        cert = certificate(x, out.u, A, j, cset, fbar, samples)
        if cert < -cfg.inner_tol:
            raise NotCertifiedError(f"residual certificate failed: {cert:.3e} < -{cfg.inner_tol:.1e}")
        out = out._replace(certificate=cert)
    return out


def feasible_samples(cset: ConvexSet, u, count, rng, kink_dofs=()):
    """Feasible test points around ``u``.

    Always contains the constraint-active single-dof moves, the kinks of
    the nonsmooth term and +/- single-dof moves; random projected
    perturbations fill up to ``count``.
    """
    space = cset.space
    u = space.check(u)
    base = 1.0 + float(np.max(np.abs(u))) if u.size else 1.0
    pts = [u.copy()]
    pts.extend(cset.extreme_moves(u))
    for i in kink_dofs:
        w = u.copy()
        w[i] = 0.0
        pts.append(w)
    dofs = range(space.dim) if space.dim <= 64 else rng.choice(space.dim, 64, replace=False)
    for i in dofs:
        for s in (-0.1 * base, 0.1 * base):
            w = u.copy()
            w[i] += s
            pts.append(w)
    n_random = max(count - len(pts), 0)
    if n_random:
        dirs = rng.standard_normal((n_random, space.dim))
        norms = np.sqrt(np.sum((dirs @ space.gram) * dirs, axis=1))
        radii = base * 10.0 ** rng.uniform(-4.0, 0.5, size=n_random)
        pts.extend(u + (radii / norms)[:, None] * dirs)
    V = np.asarray(pts)
    return project_many(cset, V)


def project_many(cset: ConvexSet, V):
    V = np.array(V, dtype=float)
    if isinstance(cset, WholeSpace):
        return V
    if isinstance(cset, Box):
        return np.clip(V, cset.lower, cset.upper)
    if isinstance(cset, NodeUpperBound):
        i = cset.index
        col = cset.space.gram_inv[:, i]
        excess = np.maximum(V[:, i] - cset.bound, 0.0)
        V -= np.outer(excess / col[i], col)
        V[excess > 0, i] = cset.bound
        return V
    return np.array([cset.project(v) for v in V])


def gap_values(x, u, A: OperatorA, j: NonsmoothJ, cset: ConvexSet, fbar, V):
    """``G(u, v) = <A(x,u), v-u> + j(x,u,v) - j(x,u,u) - <fbar, v-u>`` per row of V."""
    space = cset.space
    u = space.check(u)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[1] != space.dim:
        raise InputError(f"samples have {V.shape[1]} columns, expected {space.dim}")
    D = V - u
    phi = j.frozen(x, u)
    return D @ (A(x, u) - fbar) + phi.many(V) - phi(u)


def equilibrium_residual(x, u, A: OperatorA, j: NonsmoothJ, cset: ConvexSet, fbar, samples=256, seed=0):
    """Smallest sampled value of ``G(u, v)`` over ``v in K``.

    ``samples`` is either a count (feasible points are generated around
    ``u``, which is itself included) or an explicit array of points of K.
    Nonnegative up to solver tolerance exactly when ``u`` solves the QVI.
    """
    if np.isscalar(samples):
        V = feasible_samples(cset, u, int(samples), np.random.default_rng(seed), j.dofs)
    else:
        V = np.atleast_2d(np.asarray(samples, dtype=float))
    return float(np.min(gap_values(x, u, A, j, cset, fbar, V)))


def certificate(x, u, A, j, cset, fbar, V):
    """``min_v G(u, v) / (1 + ||v - u||_V)`` over the rows of V."""
    space = cset.space
    D = V - u
    dist = np.sqrt(np.maximum(np.sum((D @ space.gram) * D, axis=1), 0.0))
    return float(np.min(gap_values(x, u, A, j, cset, fbar, V) / (1.0 + dist)))


def spot_check_operator(A: OperatorA, state_dim, space: Space, rng, count=1000, scale=1.0):
    """Worst sampled monotonicity and Lipschitz ratios of ``A``.

    Returns ``(min <A u1 - A u2, u1 - u2> / ||u1 - u2||^2,
    max ||A u1 - A u2||_* / ||u1 - u2||)``.
    """
    lo, hi = np.inf, 0.0
    for _ in range(count):
        x = scale * rng.standard_normal(state_dim)
        u1 = scale * rng.standard_normal(space.dim)
        u2 = scale * rng.standard_normal(space.dim)
        da = A(x, u1) - A(x, u2)
        du = u1 - u2
        nrm = space.norm(du)
        if nrm == 0.0:
            continue
        lo = min(lo, float(da @ du) / nrm**2)
        hi = max(hi, space.dual_norm(da) / nrm)
    return lo, hi


def spot_check_nonsmooth(j: NonsmoothJ, state_space: Space, space: Space, rng, count=1000, scale=1.0):
    """Largest sampled violation of convexity (midpoint) and of the
    four-term bound with the declared ``alpha``, ``beta``."""
    worst_convex = -np.inf
    worst_four = -np.inf
    for _ in range(count):
        x1, x2 = (scale * rng.standard_normal(state_space.dim) for _ in range(2))
        u1, u2, v1, v2 = (scale * rng.standard_normal(space.dim) for _ in range(4))
        mid = j(x1, u1, 0.5 * (v1 + v2)) - 0.5 * (j(x1, u1, v1) + j(x1, u1, v2))
        worst_convex = max(worst_convex, mid)
        lhs = j(x1, u1, v2) - j(x1, u1, v1) + j(x2, u2, v1) - j(x2, u2, v2)
        rhs = (j.alpha * state_space.norm(x1 - x2) + j.beta * space.norm(u1 - u2)) * space.norm(v1 - v2)
        worst_four = max(worst_four, lhs - rhs)
    return worst_convex, worst_four
