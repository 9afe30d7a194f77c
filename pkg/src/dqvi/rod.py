"""Viscoelastic rod in frictionless contact with a hardening foundation.

One-dimensional reduction: the rod occupies ``[0, L]``, is clamped at
``y = 0`` and may touch a rigid-elastic layer of thickness ``gap`` at
``y = L``.  Displacements are continuous piecewise linear (one dof per
node, node 0 removed), stresses are piecewise constant.  The state is
``x = (sigma_ir[0..N-1], xi)`` with ``xi`` the accumulated penetration.

There is no traction boundary in 1D, so the load enters only through the
body force ``f0(t) = theta(t) * f0_amplitude``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InputError, NotCertifiedError
from .integrator import DviProblem
from .space import LinearMap, NodeUpperBound, Space
from .vi import NonsmoothJ, OperatorA, QviConfig, certificate, feasible_samples

THETA_PROFILES = {
    "const": lambda t: 1.0,
    "ramp": lambda t: float(t),
    "sine": lambda t: math.sin(math.pi * t),
}

ROD_KEYS = (
    "length", "elements", "modulus", "visco", "fnl_slope", "fnl_cap", "stiffness_k", "gap",
    "h0", "c1", "c2", "theta", "f0_amplitude", "u0", "sigma0",
)

LOAD_CHANNEL_NOTE = (
    "1D reduction: no traction boundary exists, so the surface-traction channel "
    "is replaced by the body-force amplitude f0_amplitude"
)


def _field(value, n, name, positive=False):
    if isinstance(value, (list, tuple, np.ndarray)):
        arr = np.asarray(value, dtype=float)
        if arr.shape != (n,):
            raise InputError(f"{name} has {arr.size} entries, expected {n}")
        out = tuple(float(v) for v in arr)
    else:
        out = float(value)
    vals = np.atleast_1d(np.asarray(out, dtype=float))
    if not np.all(np.isfinite(vals)):
        raise ConfigurationError(f"{name} must be finite")
    if positive and np.any(vals <= 0):
        raise ConfigurationError(f"{name} must be positive")
    return out


@dataclass(frozen=True)
class RodConfig:
    """Physical data of the rod, SI units.

    ``modulus``, ``visco``, ``fnl_slope`` and ``sigma0`` are per element
    (scalar = uniform).  ``u0`` is either the list of the N nodal
    displacements or a scalar tip displacement of a linear profile.
    The constitutive map is ``Fnl(eps) = min(fnl_slope, fnl_cap) * eps``
    and the yield limit is ``h(xi, r) = max(0, h0 + c1 xi + c2 r)``.
    """

    length: float = 1.0
    elements: int = 50
    modulus: object = 1.0
    visco: object = 0.5
    fnl_slope: object = 0.5
    fnl_cap: float = math.inf
    stiffness_k: float = 0.5
    gap: float = 0.3
    h0: float = 0.1
    c1: float = 0.0
    c2: float = 0.0
    theta: str = "ramp"
    f0_amplitude: float = 1.0
    u0: object = 0.0
    sigma0: object = 0.0
    gap_bounds: Optional[tuple] = None

    def __post_init__(self):
        if int(self.elements) != self.elements or int(self.elements) < 1:
            raise InputError(f"elements must be a positive integer, got {self.elements}")
        n = int(self.elements)
        object.__setattr__(self, "elements", n)
        if not self.length > 0:
            raise ConfigurationError("length must be positive")
        object.__setattr__(self, "modulus", _field(self.modulus, n, "modulus", positive=True))
        object.__setattr__(self, "visco", _field(self.visco, n, "visco"))
        object.__setattr__(self, "fnl_slope", _field(self.fnl_slope, n, "fnl_slope"))
        object.__setattr__(self, "sigma0", _field(self.sigma0, n, "sigma0"))
        object.__setattr__(self, "u0", _field(self.u0, n, "u0"))
        if not self.fnl_cap >= 0:
            raise ConfigurationError("fnl_cap must be nonnegative")
        if not self.stiffness_k >= 0:
            raise ConfigurationError("stiffness_k must be nonnegative")
        if not self.gap > 0:
            raise ConfigurationError(f"gap must be positive, got {self.gap}")
        if self.gap_bounds is not None:
            lo, hi = (float(b) for b in self.gap_bounds)
            if not 0 < lo <= self.gap <= hi:
                raise ConfigurationError(f"gap {self.gap} outside the bounds [{lo}, {hi}]")
            object.__setattr__(self, "gap_bounds", (lo, hi))
        if self.theta not in THETA_PROFILES:
            raise ConfigurationError(f"theta must be one of {sorted(THETA_PROFILES)}, got {self.theta!r}")
        if self.h0 < 0:
            raise ConfigurationError("h0 must be nonnegative so that h >= 0")

    @classmethod
    def from_mapping(cls, table):
        unknown = sorted(set(table) - set(ROD_KEYS))
        if unknown:
            raise InputError(f"unknown [rod] keys: {', '.join(unknown)}")
        return cls(**dict(table))

    def replace(self, **changes):
        return replace(self, **changes)

    @property
    def lip_h(self):
        return max(abs(self.c1), abs(self.c2))


@dataclass(frozen=True, eq=False)
class RodModel:
    """Assembled P1/P0 matrices of a :class:`RodConfig`."""

    cfg: RodConfig
    h: float
    strain: np.ndarray  # (N, N): eps = strain @ u
    weights: np.ndarray  # element lengths
    E: np.ndarray
    beta: np.ndarray
    slope: np.ndarray
    V: Space
    X: Space
    Z: Space
    stiffness: np.ndarray  # strain^T W diag(E) strain
    contact: int
    c_tr: float

    def strains(self, u):
        return self.strain @ u

    def fnl(self, eps):
        return self.slope * eps

    def yield_limit(self, xi, r):
        c = self.cfg
        return max(0.0, c.h0 + c.c1 * xi + c.c2 * r)

    def operator(self, x, u):
        sigma = x[:-1]
        out = self.stiffness @ u + self.strain.T @ (self.weights * sigma)
        uc = u[self.contact]
        if uc > 0.0:
            out[self.contact] += self.cfg.stiffness_k * uc
        return out

    def rate(self, t, x, u):
        sigma = x[:-1]
        eps = self.strain @ u
        out = np.empty_like(x, dtype=float)
        out[:-1] = self.beta * (self.E * eps + sigma - self.fnl(eps))
        out[-1] = max(u[self.contact], 0.0)
        return out

    def initial_state(self):
        c = self.cfg
        n = c.elements
        u0 = np.asarray(c.u0, dtype=float)
        if u0.ndim == 0:
            u0 = float(u0) * np.arange(1, n + 1) / n
        sigma0 = np.broadcast_to(np.asarray(c.sigma0, dtype=float), (n,))
        return np.concatenate([sigma0 - self.E * (self.strain @ u0), [0.0]])


@functools.lru_cache(maxsize=64)
def discretize(cfg: RodConfig) -> RodModel:
    n = cfg.elements
    h = cfg.length / n
    strain = np.zeros((n, n))
    idx = np.arange(n)
    strain[idx, idx] = 1.0 / h
    strain[idx[1:], idx[1:] - 1] = -1.0 / h
    w = np.full(n, h)
    E = np.broadcast_to(np.asarray(cfg.modulus, dtype=float), (n,)).copy()
    beta = np.broadcast_to(np.asarray(cfg.visco, dtype=float), (n,)).copy()
    slope = np.minimum(np.broadcast_to(np.asarray(cfg.fnl_slope, dtype=float), (n,)), cfg.fnl_cap)
    V = Space(strain.T @ (w[:, None] * strain))
    X = Space(np.diag(np.concatenate([w, [1.0]])))
    mass = np.zeros((n, n))
    for e in range(n):
        # element e joins node e (dof e-1, absent for e = 0) and node e+1 (dof e)
        local = np.array([[2.0, 1.0], [1.0, 2.0]]) * h / 6.0
        dofs = [e - 1, e]
        for a in range(2):
            for b in range(2):
                if dofs[a] >= 0 and dofs[b] >= 0:
                    mass[dofs[a], dofs[b]] += local[a, b]
    Z = Space(mass)
    stiffness = strain.T @ ((w * E)[:, None] * strain)
    contact = n - 1
    c_tr = float(np.sqrt(V.gram_inv[contact, contact]))
    return RodModel(cfg, h, strain, w, E, beta, slope, V, X, Z, stiffness, contact, c_tr)


def assemble(cfg: RodConfig) -> DviProblem:
    """Build the rod problem with constants computed from the discretization.

    m = min E; beta = L_h c_tr^2 and alpha = L_h c_tr with
    L_h = max(|c1|, |c2|), c_tr being the V-norm of the evaluation at the
    contact node; L' = 1 since A sees the state only through sigma_ir.
    """
    model = discretize(cfg)
    m_E = float(model.E.min())
    c_tr = model.c_tr
    k = cfg.stiffness_k
    A = OperatorA(model.operator, m_E, 1.0, float(model.E.max()) + k * c_tr**2)
    beta = cfg.lip_h * c_tr**2
    alpha = cfg.lip_h * c_tr
    if not m_E > beta:
        raise ConfigurationError(
            f"contraction condition violated: m_E = {m_E:.6g} <= beta = L_h c_tr^2 = {beta:.6g} "
            f"(L_h = {cfg.lip_h:.6g}, c_tr^2 = {c_tr**2:.6g})"
        )
    contact = model.contact

    def weights(x, eta):
        return np.array([model.yield_limit(x[-1], max(eta[contact], 0.0))])

    j = NonsmoothJ(
        (contact,), weights, "pos", alpha=alpha, beta=beta,
        tau=cfg.h0 * c_tr, delta=max(abs(cfg.c1), abs(cfg.c2) * c_tr) * c_tr,
    )
    K = NodeUpperBound(model.V, contact, cfg.gap)
    pi = LinearMap(np.eye(cfg.elements), model.V, model.Z)
    f_tilde = np.full(cfg.elements, float(cfg.f0_amplitude))
    bmax = float(np.abs(model.beta).max())
    lip_F = max(bmax, bmax * float(np.abs(model.E - model.slope).max()) + c_tr)
    return DviProblem(
        F=model.rate, A=A, j=j, K=K, pi=pi, theta=THETA_PROFILES[cfg.theta], f_tilde=f_tilde,
        x0=model.initial_state(), X=model.X, lip_F=lip_F, name="contact_rod",
        meta={"kind": "contact_rod", "elements": cfg.elements, "note": LOAD_CHANNEL_NOTE, "model": model},
    )


def state_derivative(cfg: RodConfig, x, u, t=0.0):
    """``(sigma_ir', xi')`` with ``sigma_ir' = beta (E eps + sigma_ir - Fnl(eps))``
    and ``xi' = u(L)^+``."""
    model = discretize(cfg)
    x = model.X.check(x, "state")
    u = model.V.check(u, "displacement")
    return model.rate(t, x, u)


def load_scale(cfg: RodConfig, t):
    model = discretize(cfg)
    theta = THETA_PROFILES[cfg.theta](t)
    return max(abs(theta * cfg.f0_amplitude) * cfg.length, cfg.h0, float(model.E.min()) * cfg.gap / cfg.length)


def contact_diagnostics(cfg: RodConfig, x, u, t, solver: QviConfig = QviConfig(), problem=None):
    """Discrete contact conditions at the node ``y = L``.

    The reaction ``multiplier = (fbar - A(x, u))[L]``; the normal stress
    plus interface terms ``lambda_total = sigma_nu + k u^+ + eta`` equals
    ``eta - multiplier``.  Refuses uncertified ``u``.
    """
    problem = assemble(cfg) if problem is None else problem
    model = discretize(cfg)
    x = model.X.check(x, "state")
    u = model.V.check(u, "displacement")
    fbar = problem.fbar(t)
    rng = np.random.default_rng(solver.seed)
    samples = feasible_samples(problem.K, u, max(solver.residual_samples, 16), rng, problem.j.dofs)
    cert = certificate(x, u, problem.A, problem.j, problem.K, fbar, samples)
    if cert < -solver.inner_tol:
        raise NotCertifiedError(f"displacement is not a certified solution (certificate {cert:.3e})")
    i = model.contact
    R = fbar - problem.A(x, u)
    uc = float(u[i])
    hval = model.yield_limit(x[-1], max(uc, 0.0))
    reaction = float(R[i])
    if uc > 0.0:
        eta = hval
    elif uc < 0.0:
        eta = 0.0
    else:
        eta = min(max(reaction, 0.0), hval)
    lam = eta - reaction
    interior = np.delete(R, i)
    return {
        "contact_displacement": uc,
        "penetration_violation": max(uc - cfg.gap, 0.0),
        "multiplier": reaction,
        "sigma_nu": -reaction - cfg.stiffness_k * max(uc, 0.0),
        "eta": eta,
        "yield_limit": hval,
        "lambda_total": lam,
        "sign_residual": max(lam, 0.0),
        "complementarity_residual": abs((uc - cfg.gap) * lam),
        "eta_bounds_residual": max(-eta, eta - hval, 0.0),
        "interior_residual": float(np.abs(interior).max()) if interior.size else 0.0,
        "certificate": cert,
        "load_scale": load_scale(cfg, t),
    }
