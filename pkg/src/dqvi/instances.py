"""Small synthetic problems with known solutions."""

from __future__ import annotations

import math

import numpy as np

from .integrator import DviProblem
from .space import LinearMap, NodeUpperBound, Space, WholeSpace
from .vi import NonsmoothJ, OperatorA

R1 = Space.euclidean(1)


def _scalar_problem(F, A, j, K, f_tilde, x0, lip_F, name, theta=lambda t: 1.0):
    return DviProblem(
        F=F, A=A, j=j, K=K, pi=LinearMap(np.eye(1), K.space, R1), theta=theta,
        f_tilde=np.array([float(f_tilde)]), x0=np.array([float(x0)]), X=R1, lip_F=lip_F, name=name,
    )


def exp_decay(x0=1.0):
    """``x' = -x``, ``u = 0``; exact ``x(t) = x0 exp(-t)``."""
    return _scalar_problem(
        lambda t, x, u: -x, OperatorA.linear([[1.0]], R1), NonsmoothJ.zero(), WholeSpace(R1),
        0.0, x0, 1.0, "exp_decay",
    )


def exp_decay_exact(x0=1.0):
    return lambda t: (np.array([x0 * math.exp(-t)]), np.zeros(1))


def stationary(x0=0.7, load=1.5):
    """``F = 0``: the state never moves and ``u = load / 2``."""
    return _scalar_problem(
        lambda t, x, u: np.zeros(1), OperatorA.linear([[2.0]], R1), NonsmoothJ.zero(), WholeSpace(R1),
        load, x0, 0.0, "stationary",
    )


def linear_ramp(load=3.0):
    """``x' = u`` with ``u = load``: ``x(t) = load * t`` exactly under Euler."""
    return _scalar_problem(
        lambda t, x, u: u.copy(), OperatorA.linear([[1.0]], R1), NonsmoothJ.zero(), WholeSpace(R1),
        load, 0.0, 1.0, "linear_ramp",
    )


def coupled_scalar(load=2.0, bound=1.0, x0=0.5):
    """Scalar DQVI with a state-dependent operator and an eta-coupled kink:
    ``x' = -x + u``, ``A(x, u) = 2u - x/2``, ``j = (0.2 + 0.3|eta|) v^+``,
    ``K = {u <= bound}``."""
    A = OperatorA(lambda x, u: 2.0 * u - 0.5 * x, 2.0, 0.5, 2.0)
    j = NonsmoothJ((0,), lambda x, eta: np.array([0.2 + 0.3 * abs(eta[0])]), "pos",
                   beta=0.3, tau=0.2, delta=0.3)
    return _scalar_problem(
        lambda t, x, u: -x + u, A, j, NodeUpperBound(R1, 0, bound), load, x0, 1.0, "coupled_scalar",
    )


def unconstrained_scalar(load=1.0, m=2.0):
    """``A = m u``, no kink, no constraint, ``x' = -x + u``; ``u = load / m``."""
    return _scalar_problem(
        lambda t, x, u: -x + u, OperatorA.linear([[m]], R1), NonsmoothJ.zero(), WholeSpace(R1),
        load, 0.0, 1.0, "unconstrained_scalar",
    )


SYNTHETIC = {
    "exp_decay": exp_decay,
    "stationary": stationary,
    "linear_ramp": linear_ramp,
    "coupled_scalar": coupled_scalar,
    "unconstrained_scalar": unconstrained_scalar,
}
