"""Optimal control of the contact rod through the reduced cost.

``J(q) = |u(L; t) - target|^2 + rho ||q||^2`` where ``u`` comes from a full
integration of the rod with the parameters ``q`` substituted.  The cost
is nonsmooth where contact switches on, so only derivative-free search is
used: an exhaustive grid over U followed by a bounded Nelder-Mead polish.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ._parallel import pmap
from .errors import ConfigurationError, InputError, NonConvergenceError, NotCertifiedError
from .integrator import fmt, integrate, uniform_grid
from .rod import RodConfig, assemble
from .vi import QviConfig

log = logging.getLogger(__name__)

PARAMS = ("f0_amplitude", "gap")
CONTROL_KEYS = ("amp_min", "amp_max", "gap_min", "gap_max", "target", "time", "rho", "grid", "refine", "steps")
TIE_TOL = 1e-10
FAIL_LIMIT = 0.1


@dataclass(frozen=True)
class ControlSpec:
    """Box U of (amplitude, gap) and the tracking cost.

    A parameter with equal bounds is held fixed, which gives one-parameter
    problems.  ``steps`` is the number of time steps on ``[0, time]``.
    """

    amp_min: float
    amp_max: float
    gap_min: float
    gap_max: float
    target: float
    time: float = 1.0
    rho: float = 0.0
    grid: int = 15
    refine: bool = True
    steps: int = 20

    def __post_init__(self):
        for lo, hi, name in ((self.amp_min, self.amp_max, "amplitude"), (self.gap_min, self.gap_max, "gap")):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ConfigurationError(f"{name} bounds must be finite")
            if lo > hi:
                raise ConfigurationError(f"{name} bounds are not ordered: {lo} > {hi}")
        if not self.gap_min > 0:
            raise ConfigurationError("gap_min must be positive")
        if not self.time > 0:
            raise ConfigurationError("evaluation time must be positive")
        if self.rho < 0:
            raise ConfigurationError("rho must be nonnegative")
        if int(self.grid) < 3:
            raise ConfigurationError("grid needs at least 3 points per parameter")
        if int(self.steps) < 1:
            raise ConfigurationError("steps must be at least 1")

    @classmethod
    def from_mapping(cls, table):
        unknown = sorted(set(table) - set(CONTROL_KEYS))
        if unknown:
            raise InputError(f"unknown [control] keys: {', '.join(unknown)}")
        return cls(**dict(table))

    @property
    def lower(self):
        return np.array([self.amp_min, self.gap_min])

    @property
    def upper(self):
        return np.array([self.amp_max, self.gap_max])

    @property
    def free(self):
        return np.flatnonzero(self.upper > self.lower)

    def contains(self, q, tol=0.0):
        q = np.asarray(q, dtype=float)
        return q.shape == (2,) and bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def clip(self, q):
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)


@functools.lru_cache(maxsize=4096)
def _tip(base_cfg: RodConfig, key, q, cfg: QviConfig):
    gap_bounds, time, steps = key
    rod = base_cfg.replace(f0_amplitude=q[0], gap=q[1], gap_bounds=gap_bounds)
    problem = assemble(rod)
    traj = integrate(problem, uniform_grid(steps, time), "euler", cfg)
    return float(traj.controls[-1][problem.K.index])


def _spec_key(spec: ControlSpec):
    # only what the trajectory depends on; the cost is formed outside the cache
    return ((spec.gap_min, spec.gap_max), spec.time, spec.steps)


def achieved_tip(spec: ControlSpec, q, base_cfg: RodConfig, cfg: QviConfig = QviConfig()):
    """Contact-node displacement ``u(L; time)`` for parameters ``q``."""
    q = np.asarray(q, dtype=float)
    if not spec.contains(q):
        raise InputError(f"q = {q.tolist()} lies outside U")
    return _tip(base_cfg, _spec_key(spec), (float(q[0]), float(q[1])), cfg)


def evaluate_cost(spec: ControlSpec, q, base_cfg: RodConfig, cfg: QviConfig = QviConfig()) -> float:
    """Reduced cost ``J(q)``; solver failures propagate with ``q`` attached."""
    q = np.asarray(q, dtype=float)
    try:
        tip = achieved_tip(spec, q, base_cfg, cfg)
    except (NonConvergenceError, NotCertifiedError) as exc:
        if isinstance(exc, NonConvergenceError):
            raise exc.with_context(q=q.tolist()) from None
        raise NotCertifiedError(f"{exc} at q = {q.tolist()}") from None
    return (tip - spec.target) ** 2 + spec.rho * float(q @ q)


@dataclass
class ControlResult:
    q_star: np.ndarray
    J_star: float
    evaluations: list
    method: str
    ties: list = field(default_factory=list)
    failures: int = 0
    grid_shape: tuple = ()

    def grid_evaluations(self):
        return [e for e in self.evaluations if e[2] == "grid"]

    def to_dict(self):
        return {
            "q_star": [float(v) for v in self.q_star],
            "J_star": float(self.J_star),
            "method": self.method,
            "ties": [[float(v) for v in q] for q in self.ties],
            "failures": self.failures,
            "evaluations": [{"q": [float(v) for v in q], "J": float(J), "phase": ph} for q, J, ph in self.evaluations],
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def surface_csv(self, path=None):
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(PARAMS) + ["J"])
        for q, J, _ in self.grid_evaluations():
            w.writerow([fmt(q[0]), fmt(q[1]), fmt(J)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _safe_cost(spec, q, base_cfg, cfg):
    try:
        return evaluate_cost(spec, q, base_cfg, cfg)
    except (NonConvergenceError, NotCertifiedError) as exc:
        log.warning("cost evaluation failed at q=%s: %s", np.asarray(q).tolist(), exc)
        return np.inf


def optimize(spec: ControlSpec, base_cfg: RodConfig, grid_per_dim=None, refine=None,
             cfg: QviConfig = QviConfig()) -> ControlResult:
    """Exhaustive grid over U, then (optionally) bounded Nelder-Mead from
    the best grid point.  Never returns worse than the grid."""
    n = spec.grid if grid_per_dim is None else int(grid_per_dim)
    refine = spec.refine if refine is None else bool(refine)
    if n < 3:
        raise ConfigurationError("grid needs at least 3 points per parameter")
    lo, hi = spec.lower, spec.upper
    free = spec.free
    axes = [np.linspace(lo[i], hi[i], n) if i in free else np.array([lo[i]]) for i in range(2)]
    points = [np.array([a, g]) for a in axes[0] for g in axes[1]]
    values = pmap(lambda q: _safe_cost(spec, q, base_cfg, cfg), points)
    evaluations = [(q, J, "grid") for q, J in zip(points, values)]
    failures = int(sum(not np.isfinite(J) for J in values))
    if failures > FAIL_LIMIT * len(values):
        raise NonConvergenceError(f"{failures} of {len(values)} grid evaluations failed", failures=failures)
    k = int(np.argmin(values))
    best_q, best_J = points[k], float(values[k])
    ties = [q for q, J in zip(points, values) if J <= best_J + TIE_TOL]
    method = "grid"

    if refine and free.size and best_J > 0.0:
        width = hi[free] - lo[free]

        def lift(s):
            q = best_q.copy()
            q[free] = lo[free] + np.clip(s, 0.0, 1.0) * width
            return q

        def objective(s):
            q = lift(s)
            J = _safe_cost(spec, q, base_cfg, cfg)
            evaluations.append((q, J, "refine"))
            return J

        s0 = (best_q[free] - lo[free]) / width
        simplex = [s0]
        for d in range(free.size):
            step = np.zeros(free.size)
            step[d] = 0.5 / (n - 1)
            simplex.append(np.clip(s0 + step if s0[d] + step[d] <= 1.0 else s0 - step, 0.0, 1.0))
        minimize(objective, s0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * free.size,
                 options={"initial_simplex": np.array(simplex), "xatol": 1e-8, "fatol": 1e-16, "maxfev": 120})
        refined = [(q, J) for q, J, ph in evaluations if ph == "refine" and np.isfinite(J)]
        failures += sum(1 for _, J, ph in evaluations if ph == "refine" and not np.isfinite(J))
        if refined:
            q, J = min(refined, key=lambda e: e[1])
            if J < best_J:
                best_q, best_J, method = q, float(J), "refine"
    return ControlResult(best_q, best_J, evaluations, method, ties, failures, tuple(len(a) for a in axes))


@dataclass
class LscVerdict:
    passed: bool
    limit_value: float
    tail_min: float
    slack: float
    values: list

    def __str__(self):
        return f"{'PASS' if self.passed else 'FAIL'}: min tail J = {self.tail_min:.17g}, J(q) = {self.limit_value:.17g}"


def lsc_probe(spec: ControlSpec, q_seq, q, base_cfg: RodConfig, cfg: QviConfig = QviConfig(), slack=None) -> LscVerdict:
    """Compare the tail of ``J(q_n)`` with ``J(q)``.

    The tail is the second half of the sequence.  PASS iff
    ``min tail J(q_n) >= J(q) - slack`` with ``slack = 100 (inner_tol +
    outer_tol)`` by default; the sequence must get close enough to ``q``
    for the cost to settle at that level.
    """
    q = np.asarray(q, dtype=float)
    seq = [np.asarray(v, dtype=float) for v in q_seq]
    if not seq:
        raise InputError("empty sequence")
    for v in seq + [q]:
        if not spec.contains(v):
            raise InputError(f"point {v.tolist()} leaves U")
    slack = 100.0 * (cfg.inner_tol + cfg.outer_tol) if slack is None else float(slack)
    Jq = evaluate_cost(spec, q, base_cfg, cfg)
    values = [evaluate_cost(spec, v, base_cfg, cfg) for v in seq]
    tail = values[len(values) // 2:]
    tail_min = float(min(tail))
    return LscVerdict(bool(tail_min >= Jq - slack), Jq, tail_min, slack, values)


def canonical_sequences(spec: ControlSpec, q, levels=31):
    """Five ``(sequence, limit)`` pairs: constant, ``q + d/n`` along each
    axis and diagonally (dyadic ``n = 2^k``, pointing into U), and a gap
    sequence that clamps onto the lower bound and then stays there."""
    q = np.asarray(q, dtype=float)
    width = spec.upper - spec.lower
    seqs = {"constant": ([q.copy() for _ in range(8)], q.copy())}
    inward = np.where(q + 0.5 * width <= spec.upper, 1.0, -1.0) * 0.5 * width
    dirs = {"amplitude": np.array([inward[0], 0.0]), "gap": np.array([0.0, inward[1]]), "diagonal": inward}
    for name, d in dirs.items():
        seqs[name] = ([spec.clip(q + d / 2.0**k) for k in range(levels)], q.copy())
    edge = np.array([q[0], spec.gap_min])
    seqs["gap_boundary"] = ([spec.clip(edge + np.array([0.0, width[1] * (1.0 / (k + 1) - 0.25)])) for k in range(8)],
                            edge)
    return seqs
