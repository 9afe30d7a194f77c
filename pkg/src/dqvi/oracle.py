"""Brute-force references used to check the iterative solvers.

Oracle instances are at most two-dimensional with a symmetric affine
operator (plus optional one-sided springs ``k u_i^+``), so the VI is the
optimality condition of a convex energy that can be minimized by plain
grid search.  Nothing here shares code with the proximal-gradient path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InputError
from .integrator import DviProblem, Trajectory, integrate, uniform_grid
from .space import Box, ConvexSet, NodeUpperBound, Space, WholeSpace
from .vi import NonsmoothJ, OperatorA, QviConfig

REFERENCE_CFG = QviConfig(inner_tol=1e-12, outer_tol=1e-12, residual_samples=0)


@dataclass
class OracleInstance:
    """Small VI/QVI: ``A u = matrix @ u + sum_i k_i u_i^+ e_i``, separable
    ``j`` (state ignored), constraint ``K`` and dual load ``fbar``."""

    matrix: np.ndarray
    fbar: np.ndarray
    K: ConvexSet
    j: NonsmoothJ = field(default_factory=NonsmoothJ.zero)
    springs: dict = field(default_factory=dict)
    spacing: float = 1e-4
    window: tuple = (-4.0, 4.0)
    name: str = "instance"

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        self.fbar = np.atleast_1d(np.asarray(self.fbar, dtype=float))
        if not self.spacing > 0:
            raise ConfigurationError("grid spacing must be positive")
        if not np.allclose(self.matrix, self.matrix.T, atol=0.0, rtol=1e-14):
            raise ConfigurationError("oracle instances need a symmetric operator")

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def space(self) -> Space:
        return self.K.space

    def operator(self) -> OperatorA:
        base = OperatorA.linear(self.matrix, self.space)
        springs = {int(i): float(k) for i, k in self.springs.items()}
        M = self.matrix
        extra = sum(k * self.space.gram_inv[i, i] for i, k in springs.items())

        def func(x, u):
            out = M @ u
            for i, k in springs.items():
                out[i] += k * max(u[i], 0.0)
            return out

        return OperatorA(func, base.m, 0.0, base.lip_u + extra)


def _axis(lo, hi, h, specials):
    n = int(np.floor((hi - lo) / h + 1e-9)) + 1
    pts = lo + h * np.arange(n)
    extra = [s for s in specials if lo <= s <= hi]
    if extra:
        pts = np.union1d(pts, extra)
    return pts


def _energy(inst: OracleInstance, U, weights):
    quad = 0.5 * np.einsum("ij,jk,ik->i", U, inst.matrix, U)
    val = quad - U @ inst.fbar
    for i, k in inst.springs.items():
        val += 0.5 * k * np.maximum(U[:, int(i)], 0.0) ** 2
    if len(inst.j.dofs):
        cols = U[:, list(inst.j.dofs)]
        val += (np.maximum(cols, 0.0) if inst.j.kind == "pos" else np.abs(cols)) @ weights
    return val


def _feasible(K: ConvexSet, U):
    if isinstance(K, WholeSpace):
        return np.ones(U.shape[0], dtype=bool)
    if isinstance(K, NodeUpperBound):
        return U[:, K.index] <= K.bound
    if isinstance(K, Box):
        return np.all((U >= K.lower) & (U <= K.upper), axis=1)
    return np.array([K.contains(u, tol=0.0) for u in U])


def _specials(K: ConvexSet, i):
    out = [0.0]
    if isinstance(K, NodeUpperBound) and K.index == i:
        out.append(K.bound)
    if isinstance(K, Box):
        out += [b for b in (K.lower[i], K.upper[i]) if np.isfinite(b)]
    return out


def brute_force_vi(inst: OracleInstance, eta=None):
    """Feasible grid point of smallest energy at the target spacing.

    Nested search: a coarse grid over the window, then zooms by a factor
    of 10 around the incumbent until the spacing is reached.
    """
    if inst.dim > 2:
        raise InputError("brute-force oracle is limited to dimension <= 2")
    eta = np.zeros(inst.dim) if eta is None else np.asarray(eta, dtype=float)
    weights = inst.j.weights(None, eta) if len(inst.j.dofs) else np.zeros(0)
    lo = np.full(inst.dim, float(inst.window[0]))
    hi = np.full(inst.dim, float(inst.window[1]))
    h = (hi[0] - lo[0]) / 400.0
    best = None
    while True:
        h = max(h, inst.spacing)
        axes = [_axis(lo[i], hi[i], h, _specials(inst.K, i)) for i in range(inst.dim)]
        U = np.array(list(itertools.product(*axes))) if inst.dim > 1 else axes[0][:, None]
        ok = _feasible(inst.K, U)
        if not ok.any():
            raise InputError(f"no feasible grid point in the window for {inst.name}")
        U = U[ok]
        e = _energy(inst, U, weights)
        best = U[int(np.argmin(e))]
        if h <= inst.spacing:
            return best
        lo = np.maximum(best - 10 * h, float(inst.window[0]))
        hi = np.minimum(best + 10 * h, float(inst.window[1]))
        h = h / 10.0


def brute_force_qvi(inst: OracleInstance, max_iter=500):
    """Fixed point of ``eta -> brute_force_vi(inst, eta)``."""
    if inst.j.beta >= inst.operator().m:
        raise ConfigurationError("coupling is not a contraction (beta >= m)")
    eta = brute_force_vi(inst)
    for _ in range(max_iter):
        nxt = brute_force_vi(inst, eta)
        if np.max(np.abs(nxt - eta)) < inst.spacing:
            return nxt
        eta = nxt
    raise ConfigurationError(f"oracle fixed point did not settle for {inst.name}")


def reference_trajectory(problem: DviProblem, horizon=1.0, dt=1e-4, cfg: QviConfig = REFERENCE_CFG) -> Trajectory:
    """Heun on a uniform grid of step ``dt`` with tight solver tolerances."""
    steps = int(round(horizon / dt))
    return integrate(problem, uniform_grid(steps, horizon), "heun", cfg)


def _pos_j(space, dof, w0, c=0.0):
    def weights(x, eta):
        return np.array([w0 + c * abs(eta[dof])])

    # |eta_i| <= sqrt(gram_inv_ii) ||eta||_V, likewise for v_i
    return NonsmoothJ((dof,), weights, "pos", beta=abs(c) * space.gram_inv[dof, dof])


def _abs_j(dofs, ws):
    ws = np.asarray(ws, dtype=float)
    return NonsmoothJ(tuple(dofs), lambda x, eta: ws.copy(), "abs")


def registered_instances(spacing=1e-4):
    """Twelve instances in dimensions 1 and 2 mixing active and inactive
    constraints, kinks and eta-coupled weights."""
    R1 = Space.euclidean(1)
    R2 = Space.euclidean(2)
    S2 = Space(np.array([[2.0, 0.5], [0.5, 1.0]]))
    D2 = Space(np.diag([2.0, 1.0]))
    A2 = np.array([[2.0, 1.0], [1.0, 2.0]])
    out = [
        OracleInstance([[2.0]], [2.0], NodeUpperBound(R1, 0, 0.5), name="clamped_quadratic"),
        OracleInstance([[1.0]], [0.4], WholeSpace(R1), _pos_j(R1, 0, 1.0), name="kink_at_zero"),
        OracleInstance([[2.0]], [2.0], NodeUpperBound(R1, 0, 0.5), _pos_j(R1, 0, 1.0), name="kink_and_clamp"),
        OracleInstance([[1.0]], [3.0], NodeUpperBound(R1, 0, 5.0), name="inactive_bound"),
        OracleInstance([[2.0]], [-1.0], NodeUpperBound(R1, 0, 1.0), _pos_j(R1, 0, 0.0, 0.5), name="coupled_negative"),
        OracleInstance([[2.0]], [4.0], NodeUpperBound(R1, 0, 3.0), _pos_j(R1, 0, 0.2, 0.5), name="coupled_interior"),
        OracleInstance([[2.0]], [2.5], NodeUpperBound(R1, 0, 1.0), _pos_j(R1, 0, 0.3, 0.4), springs={0: 1.0},
                       name="coupled_spring_clamped"),
        OracleInstance(A2, [1.0, -2.0], Box(R2, [-1.0, -0.5], [1.0, 1.0]), name="box_2d"),
        OracleInstance(A2, [3.0, 3.0], Box(R2, [-np.inf, -np.inf], [0.8, np.inf]), _abs_j([1], [0.5]),
                       name="box_soft_threshold"),
        OracleInstance(A2, [2.0, 4.0], NodeUpperBound(S2, 1, 1.0), _pos_j(S2, 1, 0.5, 0.3), name="coupled_nondiag_gram"),
        OracleInstance(A2, [-1.0, 0.5], NodeUpperBound(S2, 0, 0.2), _pos_j(S2, 0, 0.4), springs={0: 2.0},
                       name="spring_nondiag_inactive"),
        OracleInstance(A2, [4.0, 1.0], Box(D2, [-np.inf, -1.0], [0.5, 2.0]), _abs_j([0, 1], [0.3, 0.6]),
                       name="diag_gram_box_abs"),
    ]
    for inst in out:
        inst.spacing = spacing
    return out
