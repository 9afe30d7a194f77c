"""Self-check suite shared by ``dqvi run`` (kind = "verify") and the tests.

Every check returns a :class:`Check` with a measured value, a threshold
and a verdict.  No timings or other machine-dependent data enter the
records, so two runs produce identical output.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import instances
from .control import ControlSpec, achieved_tip, canonical_sequences, lsc_probe, optimize
from .integrator import fmt, integrate, observed_order, uniform_grid
from .oracle import brute_force_qvi, brute_force_vi, registered_instances
from .perturbation import PerturbationSpec, run_family
from .rod import RodConfig, assemble, contact_diagnostics, discretize
from .vi import QviConfig, solve_qvi

SPACING = 1e-4
CONTROL_ROD = RodConfig(elements=10, c2=0.3, c1=0.05)
PERTURB_ROD = RodConfig(c2=0.3, c1=0.05, f0_amplitude=2.0)
FAMILIES = (("F",), ("A",), ("j",), ("f",), ("x0",), ("gap",), ("F", "A", "j", "f", "x0", "gap"))


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.value = float(self.value)
        self.threshold = float(self.threshold)
        self.passed = bool(self.passed)

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: {self.value:.6g} (limit {self.threshold:.6g}) {self.detail}".rstrip()

    def to_dict(self):
        return asdict(self)


def _solve(inst, cfg, u0=None):
    return solve_qvi(np.zeros(1), inst.operator(), inst.j, inst.K, inst.fbar, cfg, u0=u0)


def oracle_equivalence(cfg=QviConfig(), spacing=SPACING):
    worst, where = 0.0, ""
    for inst in registered_instances(spacing):
        ref = brute_force_qvi(inst) if inst.j.depends_on_eta else brute_force_vi(inst)
        err = float(np.max(np.abs(_solve(inst, cfg).u - ref)))
        if err >= worst:
            worst, where = err, inst.name
    limit = 2 * spacing + 1e-8
    return Check("oracle_equivalence", worst, limit, worst <= limit, f"worst instance {where}")


def uniqueness(cfg=QviConfig()):
    worst = 0.0
    for inst in registered_instances():
        a = _solve(inst, cfg, u0=np.full(inst.dim, -3.0)).u
        b = _solve(inst, cfg, u0=np.full(inst.dim, 3.0)).u
        worst = max(worst, float(inst.space.norm(a - b)))
    limit = 10 * cfg.outer_tol
    return Check("uniqueness", worst, limit, worst <= limit)


def contraction(ratios=(0.2, 0.5, 0.8), steps=200, cfg=QviConfig(), every=20):
    """Largest recorded outer rate minus beta/m over rod trajectories."""
    worst, seen, detail = -np.inf, 0, []
    for r in ratios:
        model = discretize(PERTURB_ROD)
        problem = assemble(PERTURB_ROD.replace(c2=r * float(model.E.min()) / model.c_tr**2))
        bound = problem.j.beta / problem.A.m
        traj = integrate(problem, uniform_grid(steps), "euler", cfg)
        rates = []
        for i in range(0, len(traj), every):
            res = problem.solve_at(traj.times[i], traj.states[i], cfg, u0=traj.controls[i - 1] if i else None)
            rates.extend(res.outer_rates[-3:])
        seen += len(rates)
        top = max(rates) if rates else np.nan
        detail.append(f"beta/m={bound:.3g}: max tail rate {top:.4g}")
        if rates:
            worst = max(worst, top - bound)
    ok = seen > 0 and worst <= 0.05
    return Check("contraction", float(worst), 0.05, bool(ok), "; ".join(detail))


def temporal_order():
    problem = instances.exp_decay()
    exact = instances.exp_decay_exact()
    eu = observed_order(problem, "euler", 10, 4, reference=exact)
    he = observed_order(problem, "heun", 10, 4, reference=exact)
    return [
        Check("order_euler", eu.order, 1.2, 0.8 <= eu.order <= 1.2, "window [0.8, 1.2]"),
        Check("order_heun", he.order, 2.3, 1.7 <= he.order <= 2.3, "window [1.7, 2.3]"),
    ]


def contact_physics(configs=None, steps=200, cfg=QviConfig()):
    configs = configs or [PERTURB_ROD, RodConfig(c2=0.5, f0_amplitude=3.0, theta="sine"),
                          RodConfig(elements=100, c1=0.1, c2=0.2, f0_amplitude=1.5)]
    worst_pen, worst_res, monotone = 0.0, 0.0, True
    for rc in configs:
        problem = assemble(rc)
        traj = integrate(problem, uniform_grid(steps), "euler", cfg)
        xi = traj.states[:, -1]
        monotone &= bool(np.all(np.diff(xi) >= 0.0))
        worst_pen = max(worst_pen, float(np.max(traj.controls[:, -1] - rc.gap)))
        for i in range(0, len(traj), 25):
            d = contact_diagnostics(rc, traj.states[i], traj.controls[i], traj.times[i], cfg, problem)
            r = max(d["sign_residual"], d["complementarity_residual"], d["eta_bounds_residual"],
                    d["interior_residual"], d["penetration_violation"]) / d["load_scale"]
            worst_res = max(worst_res, r)
    return [
        Check("xi_nondecreasing", float(not monotone), 0.0, monotone),
        Check("no_penetration", worst_pen, 1e-12, worst_pen <= 1e-12),
        Check("contact_residuals", worst_res, 1e-6, worst_res <= 1e-6),
    ]


def perturbation(families=FAMILIES, rod=PERTURB_ROD, steps=200, ns=(1, 4, 16, 64), amplitude=0.1,
                 cfg=QviConfig()):
    base_problem = assemble(rod)
    grid = uniform_grid(steps)
    base = integrate(base_problem, grid, "euler", cfg)
    out = []
    for fam in families:
        spec = PerturbationSpec.canonical(base_problem, fam, amplitude=amplitude)
        report = run_family(base_problem, spec, ns, grid, "euler", cfg, base=base).report
        ratio = max((d["last"] / d["first"]) if d["first"] > report.floor else 0.0 for d in report.decay)
        name = "perturb_" + ("joint" if len(fam) > 1 else fam[0])
        out.append(Check(name, ratio, 0.1, report.passed, f"bound {'PASS' if report.bound_pass else 'FAIL'}"))
    return out


def control(q0s=((1.37, 0.33), (0.9, 0.21)), grid=15, cfg=QviConfig()):
    out = []
    base = CONTROL_ROD
    probe = ControlSpec(0.0, 3.0, 0.1, 0.5, target=0.0, grid=grid)
    for k, q0 in enumerate(q0s):
        target = achieved_tip(probe, q0, base, cfg)
        spec = ControlSpec(0.0, 3.0, 0.1, 0.5, target=target, grid=grid)
        res = optimize(spec, base, cfg=cfg)
        grid_min = min(J for _, J, _ in res.grid_evaluations())
        out.append(Check(f"control_recovery_{k}", res.J_star, 1e-8, res.J_star <= 1e-8 and res.J_star <= grid_min,
                         f"q* = ({res.q_star[0]:.6f}, {res.q_star[1]:.6f})"))
    spec = ControlSpec(0.0, 3.0, 0.1, 0.5, target=achieved_tip(probe, q0s[0], base, cfg), grid=grid)
    verdicts = [lsc_probe(spec, seq, lim, base, cfg) for seq, lim in canonical_sequences(spec, q0s[0]).values()]
    gap = min(v.tail_min - v.limit_value + v.slack for v in verdicts)
    out.append(Check("lsc_probe", gap, 0.0, all(v.passed for v in verdicts), f"{sum(v.passed for v in verdicts)}/5 sequences"))
    return out


SUITES = {
    "quick": ("oracle", "uniqueness", "order", "contact"),
    "full": ("oracle", "uniqueness", "contraction", "order", "contact", "perturbation", "control"),
}


def run_suite(name="quick", cfg=QviConfig(), timings=None):
    """Run a suite.  Wall-clock per part goes into ``timings`` (if given),
    never into the checks themselves."""
    checks = []
    for part in SUITES[name]:
        start = time.perf_counter()
        if part == "oracle":
            checks.append(oracle_equivalence(cfg))
        elif part == "uniqueness":
            checks.append(uniqueness(cfg))
        elif part == "contraction":
            checks.append(contraction(cfg=cfg))
        elif part == "order":
            checks.extend(temporal_order())
        elif part == "contact":
            checks.extend(contact_physics(cfg=cfg))
        elif part == "perturbation":
            checks.extend(perturbation(cfg=cfg))
        elif part == "control":
            checks.extend(control(cfg=cfg))
        if timings is not None:
            timings[part] = time.perf_counter() - start
    return checks


def render(checks, suite):
    """Report text and JSON payload of a finished suite."""
    passed = all(c.passed for c in checks)
    text = "".join(c.line() + "\n" for c in checks)
    payload = {
        "kind": "verify",
        "suite": suite,
        "verdict": "PASS" if passed else "FAIL",
        "checks": [{"name": c.name, "value": fmt(c.value), "threshold": fmt(c.threshold),
                    "pass": c.passed, "detail": c.detail} for c in checks],
    }
    return text, payload
