"""``dqvi run <scenario.toml> [--out DIR] [--seed N]``.

Exit status: 0 on success, 1 on solver failure (or a failed verify
suite), 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .control import ControlSpec, optimize
from .errors import ConfigurationError, DqviError, InputError, NonConvergenceError, NotCertifiedError
from .instances import SYNTHETIC
from .integrator import fmt, integrate, uniform_grid
from .perturbation import CHANNELS, PerturbationSpec, run_family
from .rod import RodConfig, assemble
from .verify import SUITES, render, run_suite
from .vi import QviConfig

KINDS = ("solve", "perturb", "control", "verify")
TOP_KEYS = {"kind", "instance", "output_dir", "seed", "rod", "grid", "solver", "perturb", "control", "verify"}
GRID_KEYS = {"steps", "horizon", "scheme"}
SOLVER_KEYS = {"inner_tol", "outer_tol", "max_inner", "max_outer", "step", "residual_samples"}
PERTURB_KEYS = {"channels", "amplitude", "gap_amplitude", "ns", "times"}
VERIFY_KEYS = {"suite"}

log = logging.getLogger("dqvi")


def _strict(table, allowed, where):
    if not isinstance(table, dict):
        raise InputError(f"[{where}] must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise InputError(f"unknown keys in {where}: {', '.join(unknown)}")
    return table


def load_scenario(path):
    """Parse and validate a scenario file (strict: unknown keys rejected)."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    _strict(data, TOP_KEYS, "scenario")
    kind = data.get("kind")
    if kind not in KINDS:
        raise InputError(f"kind must be one of {', '.join(KINDS)}, got {kind!r}")
    for key, allowed in (("grid", GRID_KEYS), ("solver", SOLVER_KEYS), ("perturb", PERTURB_KEYS),
                         ("verify", VERIFY_KEYS)):
        if key in data:
            _strict(data[key], allowed, key)
    if "instance" in data:
        if data["instance"] not in SYNTHETIC:
            raise InputError(f"unknown instance {data['instance']!r}; known: {', '.join(sorted(SYNTHETIC))}")
        if "rod" in data:
            raise InputError("give either 'instance' or a [rod] table, not both")
        if kind == "control":
            raise InputError("control scenarios act on the rod; drop 'instance'")
    return data


def _solver(data, seed):
    table = dict(data.get("solver", {}))
    if seed is not None:
        table["seed"] = int(seed)
    elif "seed" in data:
        table["seed"] = int(data["seed"])
    return _build(QviConfig, table, "solver")


def _build(factory, table, where, mapping=False):
    try:
        return factory(table) if mapping else factory(**table)
    except TypeError as exc:
        raise InputError(f"bad value in [{where}]: {exc}") from None


def _problem(data):
    if "instance" in data:
        return SYNTHETIC[data["instance"]](), None
    rod = _rod(data)
    return assemble(rod), rod


def _rod(data):
    table = data.get("rod", {})
    return _build(RodConfig.from_mapping, table, "rod", mapping=True)


def _grid(data):
    g = data.get("grid", {})
    steps = int(g.get("steps", 200))
    horizon = float(g.get("horizon", 1.0))
    return uniform_grid(steps, horizon), str(g.get("scheme", "euler"))


def _write_json(path, payload):
    with open(path, "w", newline="") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _constants(problem):
    return {k: fmt(v) for k, v in sorted(problem.constants().items())}


def run_solve(data, cfg, out):
    problem, _ = _problem(data)
    grid, scheme = _grid(data)
    traj = integrate(problem, grid, scheme, cfg)
    traj.to_csv(out / "trajectory.csv")
    _write_json(out / "result.json", {
        "kind": "solve",
        "problem": problem.name,
        "scheme": traj.scheme,
        "nodes": len(traj),
        "constants": _constants(problem),
        "final_state": [fmt(v) for v in traj.states[-1]],
        "final_control": [fmt(v) for v in traj.controls[-1]],
        "min_certificate": fmt(min(traj.residuals)),
        "max_outer_iterations": int(traj.outer_iterations.max()),
    })
    print(f"solve: {len(traj)} nodes written to {out / 'trajectory.csv'}")
    return 0


def run_perturb(data, cfg, out):
    problem, _ = _problem(data)
    grid, scheme = _grid(data)
    table = data.get("perturb", {})
    channels = tuple(table.get("channels", CHANNELS))
    spec = PerturbationSpec.canonical(problem, channels, amplitude=float(table.get("amplitude", 0.1)),
                                      gap_amplitude=table.get("gap_amplitude"))
    ns = [int(n) for n in table.get("ns", [1, 4, 16, 64])]
    times = tuple(float(t) for t in table.get("times", [0.25, 0.5, 1.0]))
    fam = run_family(problem, spec, ns, grid, scheme, cfg, times)
    fam.base.to_csv(out / "trajectory.csv")
    fam.report.to_csv(out / "report.csv")
    summary = fam.report.summary()
    summary.update({"kind": "perturb", "channels": list(channels), "ns": ns, "problem": problem.name})
    _write_json(out / "result.json", summary)
    print(f"{summary['verdict']}: perturbation family {'+'.join(channels)} over n = {ns}")
    return 0 if fam.report.passed else 1


def run_control(data, cfg, out):
    if "control" not in data:
        raise InputError("control scenarios need a [control] table")
    spec = _build(ControlSpec.from_mapping, data["control"], "control", mapping=True)
    rod = _rod(data)
    res = optimize(spec, rod, cfg=cfg)
    res.to_json(out / "result.json")
    res.surface_csv(out / "surface.csv")
    print(f"control: J* = {fmt(res.J_star)} at q* = ({fmt(res.q_star[0])}, {fmt(res.q_star[1])}) [{res.method}]")
    return 0


def run_verify(data, cfg, out):
    suite = data.get("verify", {}).get("suite", "quick")
    if suite not in SUITES:
        raise InputError(f"unknown verify suite {suite!r}; choose from {', '.join(SUITES)}")
    checks = run_suite(suite, cfg)
    text, payload = render(checks, suite)
    with open(out / "report.txt", "w", newline="") as fh:
        fh.write(text)
    _write_json(out / "result.json", payload)
    passed = payload["verdict"] == "PASS"
    print(f"{'PASS' if passed else 'FAIL'}: verify {suite} ({sum(c.passed for c in checks)}/{len(checks)} checks)")
    return 0 if passed else 1


RUNNERS = {"solve": run_solve, "perturb": run_perturb, "control": run_control, "verify": run_verify}


def run(path, out=None, seed=None):
    try:
        data = load_scenario(path)
    except tomllib.TOMLDecodeError as exc:
        print(f"error: {path}: invalid TOML: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return 2
    except (InputError, ConfigurationError) as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return 2
    target = Path(out if out is not None else data.get("output_dir", "."))
    try:
        target.mkdir(parents=True, exist_ok=True)
        if not os.access(target, os.W_OK):
            raise OSError(f"{target} is not writable")
    except OSError as exc:
        print(f"error: output directory: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = _solver(data, seed)
        return RUNNERS[data["kind"]](data, cfg, target)
    except (NonConvergenceError, NotCertifiedError) as exc:
        ctx = getattr(exc, "context", {})
        extra = " ".join(f"{k}={v}" for k, v in sorted(ctx.items()))
        print(f"solver failure: {exc} {extra}".rstrip(), file=sys.stderr)
        return 1
    except (InputError, ConfigurationError) as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return 2
    except DqviError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="dqvi", description="Differential quasivariational inequality solver")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario", help="TOML scenario file")
    p_run.add_argument("--out", default=None, help="output directory (default: output_dir from the file or .)")
    p_run.add_argument("--seed", type=int, default=None, help="seed of the residual sampler")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run(args.scenario, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
