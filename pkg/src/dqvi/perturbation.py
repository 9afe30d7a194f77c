"""Perturbed problem families and convergence certificates.

A family perturbs every datum of a base problem with a size that vanishes
as ``n`` grows: the state rate, the operator, the yield term, the load,
the initial state and (for a one-dof upper bound) the constraint level.
Each perturbation is built so that its hypothesis bound is attained by
construction, e.g. ``||F_n - F|| = Gamma_n (||x|| + ||u|| + gamma_n)``.

Loads are perturbed by norm-convergent sequences; in finite dimensions
weak and strong convergence coincide, so nothing here probes a
weak-only limit.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._parallel import pmap
from .errors import ConfigurationError, InputError, NonConvergenceError
from .integrator import DviProblem, Trajectory, fmt, integrate
from .space import NodeUpperBound, mosco_scale
from .vi import NonsmoothJ, OperatorA, QviConfig, solve_qvi

CHANNELS = ("F", "A", "j", "f", "x0", "gap")


def _zero(n):
    return 0.0


def _unit(vec, norm):
    vec = np.asarray(vec, dtype=float)
    size = norm(vec)
    if size == 0:
        raise ConfigurationError("perturbation direction must be nonzero")
    return vec / size


@dataclass(frozen=True)
class PerturbationSpec:
    """Per-``n`` perturbation sizes plus their uniform bounds.

    ``gap`` maps ``n`` to the perturbed constraint level ``G_n``; the
    remaining callables map ``n`` to nonnegative amplitudes.  Directions
    default to normalized all-ones vectors.
    """

    Gamma: Callable[[int], float] = _zero
    gamma: Callable[[int], float] = _zero
    gamma_bound: float = 0.0
    Lambda: Callable[[int], float] = _zero
    lam: Callable[[int], float] = _zero
    lambda_bound: float = 0.0
    yield_shift: Callable[[int], float] = _zero
    yield_bound: float = 0.0
    load_shift: Callable[[int], float] = _zero
    x0_shift: Callable[[int], float] = _zero
    gap: Optional[Callable[[int], float]] = None
    gap_bounds: Optional[tuple] = None
    state_direction: Optional[np.ndarray] = None
    operator_direction: Optional[np.ndarray] = None
    load_direction: Optional[np.ndarray] = None
    x0_direction: Optional[np.ndarray] = None
    channels: tuple = ()

    @classmethod
    def canonical(cls, base: DviProblem, channels=CHANNELS, amplitude=0.5, gap_amplitude=None):
        """``1/n`` families on the selected channels.

        The gap family is ``G_n = G (1 + gap_amplitude / n)`` with bounds
        ``[G, G (1 + gap_amplitude)]``.
        """
        channels = tuple(channels)
        unknown = set(channels) - set(CHANNELS)
        if unknown:
            raise InputError(f"unknown perturbation channels {sorted(unknown)}; choose from {CHANNELS}")
        a = float(amplitude)
        inv = lambda n: a / n  # noqa: E731
        one = lambda n: 1.0  # noqa: E731
        kw = {"channels": channels}
        if "F" in channels:
            kw.update(Gamma=inv, gamma=one, gamma_bound=1.0)
        if "A" in channels:
            kw.update(Lambda=inv, lam=one, lambda_bound=1.0)
        if "j" in channels:
            kw.update(yield_shift=inv, yield_bound=a)
        if "f" in channels:
            kw.update(load_shift=inv)
        if "x0" in channels:
            kw.update(x0_shift=inv)
        if "gap" in channels:
            if not isinstance(base.K, NodeUpperBound):
                raise ConfigurationError("gap perturbations need a NodeUpperBound constraint")
            g = base.K.bound
            ga = a if gap_amplitude is None else float(gap_amplitude)
            kw.update(gap=lambda n: g * (1.0 + ga / n), gap_bounds=(min(g, g * (1 + ga)), max(g, g * (1 + ga))))
        return cls(**kw)

    def check(self, n):
        if n < 1:
            raise InputError("family index n must be >= 1")
        for name in ("Gamma", "gamma", "Lambda", "lam", "yield_shift"):
            if getattr(self, name)(n) < 0:
                raise ConfigurationError(f"{name}({n}) must be nonnegative")
        if self.gamma(n) > self.gamma_bound:
            raise ConfigurationError(f"gamma_{n} = {self.gamma(n)} exceeds the uniform bound {self.gamma_bound}")
        if self.lam(n) > self.lambda_bound:
            raise ConfigurationError(f"lambda_{n} = {self.lam(n)} exceeds the uniform bound {self.lambda_bound}")
        if self.yield_shift(n) > self.yield_bound:
            raise ConfigurationError(f"yield shift {self.yield_shift(n)} exceeds the uniform bound {self.yield_bound}")
        if self.gap is not None:
            gn = self.gap(n)
            if self.gap_bounds is not None:
                lo, hi = self.gap_bounds
                if not (0 < lo <= gn <= hi):
                    raise ConfigurationError(f"G_{n} = {gn} outside the uniform bounds [{lo}, {hi}]")
            elif not gn > 0:
                raise ConfigurationError(f"G_{n} = {gn} must be positive")


def build_perturbed(base: DviProblem, spec: PerturbationSpec, n: int) -> DviProblem:
    """Problem number ``n`` of the family; zero perturbations reuse the
    base data unchanged."""
    spec.check(n)
    X, V, Z = base.X, base.V, base.Z

    F, lip_F = base.F, base.lip_F
    Gn = spec.Gamma(n)
    if Gn > 0:
        d = _unit(np.ones(X.dim) if spec.state_direction is None else spec.state_direction, X.norm)
        gn = spec.gamma(n)
        F0 = base.F

        def F(t, x, u):
            return F0(t, x, u) + Gn * (X.norm(x) + V.norm(u) + gn) * d

        lip_F = base.lip_F + Gn

    A = base.A
    Ln = spec.Lambda(n)
    if Ln > 0:
        a = _unit(np.ones(V.dim) if spec.operator_direction is None else spec.operator_direction, V.dual_norm)
        ln = spec.lam(n)
        A0 = base.A
        # u-independent shift keeps m and L'' unchanged
        A = OperatorA(lambda x, u: A0(x, u) + Ln * (X.norm(x) + ln) * a, A0.m, A0.lip_x + Ln, A0.lip_u)

    j = base.j
    wn = spec.yield_shift(n)
    if wn > 0:
        if not j.dofs:
            raise ConfigurationError("yield perturbation needs a nonsmooth term with support")
        trace = max(float(np.sqrt(V.gram_inv[i, i])) for i in j.dofs)
        j = base.j.shifted(wn, growth_dual_norm=trace * len(j.dofs))

    K = base.K
    if spec.gap is not None:
        if not isinstance(K, NodeUpperBound):
            raise ConfigurationError("gap perturbations need a NodeUpperBound constraint")
        gn = spec.gap(n)
        if gn != K.bound:
            K = K.with_bound(gn)

    f_tilde = base.f_tilde
    sn = spec.load_shift(n)
    if sn != 0:
        dz = _unit(np.ones(Z.dim) if spec.load_direction is None else spec.load_direction, Z.norm)
        f_tilde = base.f_tilde + sn * dz

    x0 = base.x0
    xn = spec.x0_shift(n)
    if xn != 0:
        dx = _unit(np.ones(X.dim) if spec.x0_direction is None else spec.x0_direction, X.norm)
        x0 = base.x0 + xn * dx

    if (F is base.F and A is base.A and j is base.j and K is base.K
            and f_tilde is base.f_tilde and x0 is base.x0):
        return base
    return DviProblem(
        F=F, A=A, j=j, K=K, pi=base.pi, theta=base.theta, f_tilde=f_tilde, x0=x0, X=X,
        lip_F=lip_F, name=f"{base.name}[n={n}]", meta=base.meta,
    )


def recovery_error(base_bound, scaled_bound, v, norm, index=None):
    """``||mosco_scale(v) - v||`` for a feasible ``v`` of the base set."""
    return norm(mosco_scale(base_bound, scaled_bound, v, index) - v)


@dataclass
class AuxiliarySolution:
    controls: np.ndarray
    certificates: np.ndarray
    max_norm: float


def solve_auxiliary(base: Trajectory, problem_n: DviProblem, cfg: QviConfig = QviConfig()) -> AuxiliarySolution:
    """Perturbed QVI solved along the *base* state path."""
    out = np.empty_like(base.controls)
    certs = np.empty(len(base))
    u0 = None
    for i, (t, x) in enumerate(zip(base.times, base.states)):
        try:
            res = problem_n.solve_at(t, x, cfg, u0=u0)
        except NonConvergenceError as exc:
            raise exc.with_context(node=i, problem=problem_n.name) from None
        out[i] = res.u
        certs[i] = res.certificate
        u0 = res.u
    norms = [problem_n.V.norm(u) for u in out]
    return AuxiliarySolution(out, certs, float(max(norms)))


def uniform_constants(base: DviProblem, problems):
    """Worst-case constants over the base problem and the family."""
    allp = [base] + list(problems)
    return {
        "lip_x": max(p.A.lip_x for p in allp),
        "alpha": max(p.j.alpha for p in allp),
        "m": min(p.A.m for p in allp),
        "beta": max(p.j.beta for p in allp),
        "lip_F": max(p.lip_F for p in allp),
    }


@dataclass
class ConvergenceReport:
    rows: list
    decay: list
    constants: dict
    slack: float
    floor: float
    notes: list = field(default_factory=list)

    @property
    def bound_pass(self):
        return all(r["pass"] for r in self.rows)

    @property
    def decay_pass(self):
        return all(d["pass"] for d in self.decay)

    @property
    def passed(self):
        return self.bound_pass and self.decay_pass

    def errors(self, n, t, key="e_u"):
        for r in self.rows:
            if r["n"] == n and abs(r["t"] - t) < 1e-12:
                return r[key]
        raise KeyError((n, t))

    def to_csv(self, path=None):
        cols = ["n", "t", "e_u", "e_x", "e_aux", "bound_lhs", "bound_rhs", "pass"]
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r["n"], fmt(r["t"]), fmt(r["e_u"]), fmt(r["e_x"]), fmt(r["e_aux"]),
                        fmt(r["bound_lhs"]), fmt(r["bound_rhs"]), "PASS" if r["pass"] else "FAIL"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self):
        return {
            "verdict": "PASS" if self.passed else "FAIL",
            "bound": "PASS" if self.bound_pass else "FAIL",
            "decay": "PASS" if self.decay_pass else "FAIL",
            "decay_checks": self.decay,
            "constants": self.constants,
            "slack": self.slack,
            "noise_floor": self.floor,
            "notes": self.notes,
        }

    def to_json(self, path=None):
        text = json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def certify_convergence(base_problem: DviProblem, base: Trajectory, perturbed: dict, auxiliaries: dict,
                        constants: dict, cfg: QviConfig = QviConfig(), times=(0.25, 0.5, 1.0),
                        decay_factor=0.1) -> ConvergenceReport:
    """Check the pointwise estimate
    ``e_u <= (L' + alpha)/(m - beta) e_x + e_aux + slack`` at every node and
    the decay ``e(n_max, t) <= decay_factor * e(n_min, t)`` at ``times``.

    Errors below the noise floor ``100 (inner_tol + outer_tol)`` count as
    converged for the decay check.
    """
    ns = sorted(perturbed)
    if not ns:
        raise InputError("no perturbed trajectories")
    for n in ns:
        if perturbed[n].times.shape != base.times.shape or np.any(perturbed[n].times != base.times):
            raise InputError(f"trajectory n={n} is on a different time grid")
        if auxiliaries[n].controls.shape != base.controls.shape:
            raise InputError(f"auxiliary solution n={n} does not match the base grid")
    X, V = base_problem.X, base_problem.V
    C = (constants["lip_x"] + constants["alpha"]) / (constants["m"] - constants["beta"])
    slack = 100.0 * (cfg.inner_tol + cfg.outer_tol)
    rows = []
    for n in ns:
        tr, aux = perturbed[n], auxiliaries[n].controls
        for i, t in enumerate(base.times):
            e_u = V.norm(tr.controls[i] - base.controls[i])
            e_x = X.norm(tr.states[i] - base.states[i])
            e_aux = V.norm(aux[i] - base.controls[i])
            rhs = C * e_x + e_aux + slack
            rows.append({"n": n, "t": float(t), "e_u": e_u, "e_x": e_x, "e_aux": e_aux,
                         "bound_lhs": e_u, "bound_rhs": rhs, "pass": bool(e_u <= rhs)})
    floor = slack
    decay = []
    lo, hi = ns[0], ns[-1]
    for t in times:
        i = base.node(t)
        for key, series in (("e_u", "controls"), ("e_x", "states")):
            norm = V.norm if key == "e_u" else X.norm
            first = norm(getattr(perturbed[lo], series)[i] - getattr(base, series)[i])
            last = norm(getattr(perturbed[hi], series)[i] - getattr(base, series)[i])
            ok = last <= decay_factor * first or (first <= floor and last <= floor)
            decay.append({"t": float(t), "quantity": key, "n_first": lo, "n_last": hi,
                          "first": first, "last": last, "pass": bool(ok)})
    notes = ["load perturbations are norm-convergent; weak-only convergence is not exercised"]
    return ConvergenceReport(rows, decay, dict(constants, bound_constant=C), slack, floor, notes)


@dataclass
class FamilyRun:
    base_problem: DviProblem
    base: Trajectory
    problems: dict
    perturbed: dict
    auxiliaries: dict
    report: ConvergenceReport


def run_family(base_problem: DviProblem, spec: PerturbationSpec, ns, grid, scheme="euler",
               cfg: QviConfig = QviConfig(), times=(0.25, 0.5, 1.0), base: Trajectory = None) -> FamilyRun:
    """Integrate the base problem and every member of the family, solve the
    auxiliary problems along the base path and certify."""
    if base is None:
        base = integrate(base_problem, grid, scheme, cfg)
    ns = sorted(int(n) for n in ns)
    problems = {n: build_perturbed(base_problem, spec, n) for n in ns}

    def work(n):
        try:
            tr = integrate(problems[n], grid, scheme, cfg)
        except NonConvergenceError as exc:
            raise exc.with_context(n=n) from None
        try:
            aux = solve_auxiliary(base, problems[n], cfg)
        except NonConvergenceError as exc:
            raise exc.with_context(n=n) from None
        return tr, aux

    results = pmap(work, ns)
    perturbed = {n: r[0] for n, r in zip(ns, results)}
    auxiliaries = {n: r[1] for n, r in zip(ns, results)}
    constants = uniform_constants(base_problem, problems.values())
    report = certify_convergence(base_problem, base, perturbed, auxiliaries, constants, cfg, times)
    return FamilyRun(base_problem, base, problems, perturbed, auxiliaries, report)
