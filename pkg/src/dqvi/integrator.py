"""Time stepping for the coupled ODE / quasivariational inequality system.

At every stage point the QVI is solved at the current state, then the
state is advanced with an explicit one-step scheme using that solution.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, InputError, NonConvergenceError
from .space import ConvexSet, LinearMap, Space
from .vi import NonsmoothJ, OperatorA, QviConfig, solve_qvi

SCHEMES = {"euler": "euler", "expliciteuler": "euler", "heun": "heun"}


def fmt(value) -> str:
    return format(float(value), ".17g")


@dataclass(frozen=True, eq=False)
class DviProblem:
    """Data of one differential quasivariational inequality.

    ``F(t, x, u)`` is the state rate with Lipschitz constant ``lip_F``
    (L_J) on the horizon; the load is separable, ``f(t) = theta(t) *
    f_tilde`` with ``f_tilde`` in Z, and enters through the lift
    ``fbar(t) = pi^T G_Z f(t)``.
    """

    F: Callable
    A: OperatorA
    j: NonsmoothJ
    K: ConvexSet
    pi: LinearMap
    theta: Callable[[float], float]
    f_tilde: np.ndarray
    x0: np.ndarray
    X: Space
    lip_F: float
    name: str = "problem"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pi.domain is not self.K.space and self.pi.domain.dim != self.K.space.dim:
            raise ConfigurationError("pi must act on the space carrying K")
        x0 = self.X.check(self.x0, "x0").copy()
        f_tilde = self.pi.codomain.check(self.f_tilde, "f_tilde").copy()
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "f_tilde", f_tilde)
        object.__setattr__(self, "_lifted", self.pi.lift(f_tilde))
        if not self.A.m > self.j.beta:
            raise ConfigurationError(
                f"contraction condition violated: m = {self.A.m} <= beta = {self.j.beta}"
            )

    @property
    def V(self) -> Space:
        return self.K.space

    @property
    def Z(self) -> Space:
        return self.pi.codomain

    @property
    def c0(self) -> float:
        return self.pi.norm

    def fbar(self, t):
        return float(self.theta(t)) * self._lifted

    def solve_at(self, t, x, cfg: QviConfig, u0=None):
        return solve_qvi(x, self.A, self.j, self.K, self.fbar(t), cfg, u0=u0)

    def constants(self):
        return {
            "m": self.A.m, "lip_x": self.A.lip_x, "lip_u": self.A.lip_u,
            "alpha": self.j.alpha, "beta": self.j.beta, "lip_F": self.lip_F, "c0": self.c0,
        }

    def validate(self, rng=None, samples=200, scale=1.0, horizon=1.0):
        """Machine-checkable hypotheses; raises on violation, returns the
        sampled Lipschitz estimate of F."""
        rng = np.random.default_rng(0) if rng is None else rng
        if not self.A.m > self.j.beta:
            raise ConfigurationError(f"contraction condition violated: m = {self.A.m} <= beta = {self.j.beta}")
        worst = 0.0
        for _ in range(samples):
            t = rng.uniform(0.0, horizon)
            x1, x2 = (scale * rng.standard_normal(self.X.dim) for _ in range(2))
            u1, u2 = (scale * rng.standard_normal(self.V.dim) for _ in range(2))
            num = self.X.norm(self.F(t, x1, u1) - self.F(t, x2, u2))
            den = self.X.norm(x1 - x2) + self.V.norm(u1 - u2)
            if den > 0:
                worst = max(worst, num / den)
        if worst > 1.01 * self.lip_F:
            raise ConfigurationError(f"sampled Lipschitz constant of F {worst:.4g} exceeds L_J = {self.lip_F:.4g}")
        return worst


def uniform_grid(steps, horizon=1.0):
    if int(steps) < 1:
        raise InputError("need at least one time step")
    return np.linspace(0.0, float(horizon), int(steps) + 1)


def _check_grid(grid):
    times = np.asarray(grid, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise InputError("time grid needs at least two nodes")
    if times[0] != 0.0:
        raise InputError(f"time grid must start at 0, got {times[0]}")
    if np.any(np.diff(times) <= 0):
        raise InputError("time grid must be strictly increasing")
    return times


def _scheme(scheme):
    key = str(scheme).replace("_", "").replace("-", "").lower()
    if key not in SCHEMES:
        raise InputError(f"unknown scheme {scheme!r}; use 'euler' or 'heun'")
    return SCHEMES[key]


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    inner_iterations: np.ndarray
    outer_iterations: np.ndarray
    residuals: np.ndarray
    scheme: str = "euler"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def node(self, t):
        """Index of the grid node at time ``t`` (must lie on the grid)."""
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise InputError(f"t = {t} is not a grid node")
        return idx

    def at(self, t):
        i = self.node(t)
        return self.states[i], self.controls[i]

    def to_csv(self, path=None):
        nx = self.states.shape[1]
        nu = self.controls.shape[1]
        header = ["t"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]
        header += ["residual", "outer_iterations"]
        buf = io.StringIO(newline="")
        buf.write(",".join(header) + "\n")
        for i in range(self.times.size):
            row = [fmt(self.times[i])]
            row += [fmt(v) for v in self.states[i]]
            row += [fmt(v) for v in self.controls[i]]
            row += [fmt(self.residuals[i]), str(int(self.outer_iterations[i]))]
            buf.write(",".join(row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self):
        return {
            "scheme": self.scheme,
            "meta": self.meta,
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "controls": self.controls.tolist(),
            "inner_iterations": self.inner_iterations.tolist(),
            "outer_iterations": self.outer_iterations.tolist(),
            "residuals": self.residuals.tolist(),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def integrate(problem: DviProblem, grid, scheme="euler", cfg: QviConfig = QviConfig()) -> Trajectory:
    """Explicit Euler or Heun; Heun re-solves the QVI at the predicted state."""
    times = _check_grid(grid)
    scheme = _scheme(scheme)
    n = times.size
    X, V = problem.X, problem.V
    states = np.empty((n, X.dim))
    controls = np.empty((n, V.dim))
    inner = np.zeros(n, dtype=int)
    outer = np.zeros(n, dtype=int)
    resid = np.zeros(n)

    def solve(i, t, x, u0):
        try:
            return problem.solve_at(t, x, cfg, u0=u0)
        except NonConvergenceError as exc:
            raise exc.with_context(node=i, t=float(t)) from None

    x = problem.x0.copy()
    res = solve(0, times[0], x, None)
    for i in range(n):
        states[i] = x
        controls[i] = res.u
        inner[i] = res.inner_iterations
        outer[i] = res.outer_iterations
        resid[i] = res.certificate
        if i == n - 1:
            break
        t, h = times[i], times[i + 1] - times[i]
        k1 = problem.F(t, x, res.u)
        if scheme == "euler":
            x = x + h * k1
            res = solve(i + 1, times[i + 1], x, res.u)
        else:
            xp = x + h * k1
            pred = solve(i + 1, times[i + 1], xp, res.u)
            inner[i] += pred.inner_iterations
            k2 = problem.F(times[i + 1], xp, pred.u)
            x = x + 0.5 * h * (k1 + k2)
            res = solve(i + 1, times[i + 1], x, pred.u)
    return Trajectory(times, states, controls, inner, outer, resid, scheme, {"problem": problem.name})


@dataclass
class OrderEstimate:
    order: Optional[float]
    exact: bool
    steps: list
    errors: list

    def __str__(self):
        return "exact" if self.exact else f"{self.order:.3f}"


def final_error(problem: DviProblem, traj: Trajectory, ref_x, ref_u):
    return problem.X.norm(traj.states[-1] - ref_x) + problem.V.norm(traj.controls[-1] - ref_u)


def observed_order(problem: DviProblem, scheme, base_steps, refinements, horizon=1.0,
                   reference=None, cfg: QviConfig = QviConfig()) -> OrderEstimate:
    """Least-squares slope of log(final-time error) against log(dt) over
    ``refinements`` successive halvings of ``base_steps``.

    ``reference`` is a callable ``t -> (x, u)``, a :class:`Trajectory`
    ending at ``horizon``, or ``None`` (a fine Heun reference is computed).
    Machine-level errors on every level yield ``exact=True`` and no slope.
    """
    if int(refinements) < 3:
        raise InputError("observed_order needs at least 3 refinement levels")
    if reference is None:
        from .oracle import reference_trajectory

        reference = reference_trajectory(problem, horizon)
    if isinstance(reference, Trajectory):
        if not math.isclose(reference.times[-1], horizon, rel_tol=1e-12):
            raise InputError("reference trajectory does not end at the horizon")
        ref_x, ref_u = reference.states[-1], reference.controls[-1]
    else:
        ref_x, ref_u = reference(horizon)
    steps = [int(base_steps) * 2**k for k in range(int(refinements))]
    errors = []
    for s in steps:
        traj = integrate(problem, uniform_grid(s, horizon), scheme, cfg)
        errors.append(final_error(problem, traj, ref_x, ref_u))
    scale = 1.0 + problem.X.norm(ref_x) + problem.V.norm(ref_u)
    if max(errors) <= 1e-13 * scale:
        return OrderEstimate(None, True, steps, errors)
    dts = horizon / np.asarray(steps, dtype=float)
    slope = np.polyfit(np.log(dts), np.log(np.maximum(errors, 1e-300)), 1)[0]
    return OrderEstimate(float(slope), False, steps, errors)
