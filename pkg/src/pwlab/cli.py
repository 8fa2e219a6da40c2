"""Batch runner: ``pwlab run``, ``pwlab depths`` and ``pwlab verify``.

Exit codes: 0 when every task ran and every confident prediction matched the
observed flow, 2 when something disagreed, 1 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .comparison import run_comparison
from .flow import (BLOW_UP, GLOBAL_DECAY, Trajectory, omega_limit_check, run_flow,
                   verify_blowup_ode, verify_dissipation_identity, verify_mass_identity)
from .mesh import GridFunction, Mesh, build_mesh, write_snapshot
from .nehari import DepthTable, classify, compute_depth_table, epsilon_budget
from .scenario import Scenario, ScenarioError, load_scenario, parse_number

log = logging.getLogger("pwlab")

PHASE_COLUMNS = ("datum", "amplitude", "p", "lambda", "delta", "membership", "outcome", "t_estimate")


@dataclass
class DatumResult:
    datum: str
    amplitude: float
    p: float
    membership: str = ""
    witness_lambda: float | None = None
    witness_delta: float | None = None
    prediction: str = "none"
    outcome: str = ""
    t_estimate: float | None = None
    agreement: str = "n/a"
    checks: list[tuple[str, str]] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


@dataclass
class Summary:
    scenario: str
    results: list[DatumResult]
    errors: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if self.errors or any(r.errors for r in self.results):
            return 1
        if any(r.agreement == "no" for r in self.results):
            return 2
        return 0


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.17g}"


def _replace_dir(tmp: Path, final: Path) -> None:
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def emit_phase_table(results: Sequence[DatumResult], path: str | Path) -> Path:
    """One row per datum: membership, observed outcome and estimated blow-up time."""
    if not results:
        raise ValueError("no results to tabulate")
    path = Path(path)
    rows = [(r.datum, _fmt(r.amplitude), _fmt(r.p), _fmt(r.witness_lambda), _fmt(r.witness_delta),
             r.membership, r.outcome, _fmt(r.t_estimate)) for r in results]
    _write_rows(path, PHASE_COLUMNS, rows)
    return path


def _run_datum(s: Scenario, datum: str, amp: float, phi: GridFunction,
               table: DepthTable | None, root: Path) -> DatumResult:
    res = DatumResult(datum, amp, s.p)
    tmp = root / f".{datum}.tmp"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    params = s.params
    membership = None
    try:
        if table is not None and ("classify" in s.tasks or "verify" in s.tasks):
            membership = classify(phi, s.lambdas, s.deltas, params, table)
            res.membership, res.prediction = membership.label, membership.prediction
            for kind, par, depth, val, ival in membership.witnesses:
                if kind == "W" and res.witness_lambda is None:
                    res.witness_lambda = par
                if kind == "Z" and res.witness_delta is None:
                    res.witness_delta = par
            lines = [f"in_W_lambda[{k:g}] = {v}" for k, v in membership.in_W_lambda.items()]
            lines += [f"in_Z_delta[{k:g}] = {v}" for k, v in membership.in_Z_delta.items()]
            lines += [f"in_W_tilde = {membership.in_W_tilde}", f"in_Z_tilde = {membership.in_Z_tilde}"]
            lines += [f"witness {w[0]} param={w[1]:.17g} depth={w[2]:.17g} value={w[3]:.17g} "
                      f"nehari={w[4]:.17g}" for w in membership.witnesses]
            lines += [f"reason {k}: {v}" for k, v in sorted(membership.reasons.items())]
            (tmp / "membership.txt").write_text("\n".join(lines) + "\n")
    except Exception as e:  # recorded, the remaining tasks still run
        res.errors.append(f"classify: {e}")

    traj = None
    if "evolve" in s.tasks or "verify" in s.tasks:
        try:
            lam = res.witness_lambda if res.witness_lambda is not None else s.lambdas[0]
            cfg = s.flow_config(params.with_(lam=lam))
            traj, outcome = run_flow(phi, cfg)
            res.outcome = outcome.kind
            res.t_estimate = outcome.t_estimate
            traj.write_csv(tmp / "trajectory.csv")
            snaps = tmp / "snapshots"
            snaps.mkdir()
            for step, (_, g) in zip(traj.snapshot_steps, traj.snapshots):
                write_snapshot(snaps / f"snap_{step:07d}.csv", g)
            (tmp / "outcome.txt").write_text(outcome.summary_line(cfg) + "\n")
            if res.prediction != "none":
                res.agreement = "yes" if res.prediction == outcome.kind else "no"
        except Exception as e:
            res.errors.append(f"evolve: {e}")

    if "compare" in s.tasks:
        for delta in s.deltas:
            try:
                rep = run_comparison(phi, s.flow_config(), delta)
                rep.write_csv(tmp / f"comparison_delta_{delta:.6g}.csv")
                res.checks.append((f"ordering[delta={delta:g}]", str(rep.ordering_holds)))
                res.checks.append((f"detection_order[delta={delta:g}]", str(rep.detection_order_ok)))
            except Exception as e:
                res.errors.append(f"compare[delta={delta:g}]: {e}")

    if "verify" in s.tasks and traj is not None:
        try:
            res.checks.extend(_verify(s, traj, phi, membership, table))
            _write_rows(tmp / "verify.csv", ("check", "value"), res.checks)
        except Exception as e:
            res.errors.append(f"verify: {e}")
    if res.errors:
        (tmp / "errors.txt").write_text("\n".join(res.errors) + "\n")
    _replace_dir(tmp, root / datum)
    return res


def _verify(s: Scenario, traj: Trajectory, phi: GridFunction, membership, table) -> list[tuple[str, str]]:
    checks = []
    if len(traj.times) >= 4:
        mass = verify_mass_identity(traj)
        checks.append(("mass_identity_relative", f"{mass.relative:.6e}"))
        for lam in s.lambdas:
            diss = verify_dissipation_identity(traj, lam)
            checks.append((f"dissipation_relative[lambda={lam:g}]", f"{diss.relative:.6e}"))
            checks.append((f"E_lambda_monotone[lambda={lam:g}]", str(diss.monotone)))
    kind = traj.outcome.kind
    if kind == GLOBAL_DECAY:
        checks.append(("omega_limit_zero", str(omega_limit_check(traj))))
    if kind == BLOW_UP and membership is not None and membership.in_Z_delta.get(0.0, False):
        d0 = table.d_delta(0.0)
        budget = epsilon_budget(phi, s.params, d0)
        chk = verify_blowup_ode(traj, budget.eps, budget.lower_bound, s.params)
        checks.append(("blowup_primitive_bound", str(chk.primitive_holds)))
        checks.append(("blowup_mass_increasing", str(chk.mass_increasing)))
        checks.append(("blowup_superlinear_bound", str(chk.composite_holds)))
    if membership is not None:
        checks.append(("final_membership_consistent", str(traj.outcome.final_membership_consistent)))
    return checks


def run_scenario(s: Scenario, out_dir: str | Path, jobs: int = 1, seed: int | None = None) -> Summary:
    root = Path(out_dir) / s.name
    root.mkdir(parents=True, exist_ok=True)
    summary = Summary(s.name, [])
    seed = s.seed if seed is None else seed

    table = None
    if {"depths", "classify", "verify"} & set(s.tasks):
        try:
            table = compute_depth_table(s.mesh, s.p, s.lambdas, s.deltas,
                                        restarts=s.restarts, seed=seed)
            tmp = root / "depths.csv.tmp"
            table.write_csv(tmp)
            os.replace(tmp, root / "depths.csv")
        except Exception as e:
            summary.errors.append(f"depths: {e}")

    if not ({"classify", "evolve", "compare", "verify"} & set(s.tasks)):
        _write_summary(root, summary, table)
        return summary
    try:
        data = s.initial_data()
    except Exception as e:
        summary.errors.append(f"initial data: {e}")
        _write_summary(root, summary, table)
        return summary

    args = [(s, d, a, g, table, root) for d, a, g in data]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            summary.results = list(ex.map(_run_datum_star, args))
    else:
        summary.results = [_run_datum(*a) for a in args]
    emit_phase_table(summary.results, root / "phase_table.csv")
    _write_summary(root, summary, table)
    return summary


def _run_datum_star(a):
    return _run_datum(*a)


def format_summary(summary: Summary, table: DepthTable | None = None) -> str:
    lines = [f"scenario {summary.scenario}"]
    if table is not None:
        lines.append(f"well depth d = {table.d:.10g}")
    if summary.results:
        lines.append(f"{'datum':<34} {'member':>6} {'predicted':>12} {'observed':>12} {'agree':>5}")
        for r in summary.results:
            lines.append(f"{r.datum:<34} {r.membership or '-':>6} {r.prediction:>12} "
                         f"{r.outcome or '-':>12} {r.agreement:>5}")
            lines += [f"    error: {e}" for e in r.errors]
    lines += [f"error: {e}" for e in summary.errors]
    lines.append(f"exit code {summary.exit_code}")
    return "\n".join(lines) + "\n"


def _write_summary(root: Path, summary: Summary, table) -> None:
    tmp = root / "summary.txt.tmp"
    tmp.write_text(format_summary(summary, table))
    os.replace(tmp, root / "summary.txt")


# --- argument parsing ---

def parse_mesh_spec(spec: str) -> Mesh:
    """``a:b:n`` per axis, axes separated by commas, e.g. ``0:pi:1023`` or ``0:1:63,0:1:63``."""
    axes = [a for a in spec.split(",") if a.strip()]
    ext, counts = [], []
    for ax in axes:
        parts = ax.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad mesh axis {ax!r}; expected a:b:n")
        ext.append((parse_number(parts[0]), parse_number(parts[1])))
        counts.append(int(parts[2]))
    return build_mesh(len(axes), ext, counts)


def _list(text: str) -> list[float]:
    return [parse_number(x) for x in text.split(",") if x.strip()]


def _cmd_run(args) -> int:
    try:
        s = load_scenario(args.scenario)
    except (ScenarioError, OSError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    summary = run_scenario(s, args.out, jobs=args.jobs, seed=args.seed)
    print((Path(args.out) / s.name / "summary.txt").read_text(), end="")
    return summary.exit_code


def _cmd_depths(args) -> int:
    try:
        m = parse_mesh_spec(args.mesh)
        table = compute_depth_table(m, parse_number(args.p), _list(args.lam), _list(args.delta))
    except (ValueError, ScenarioError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "depths.csv")
    for r in table.rows:
        print(f"p={r.p:g} lambda={r.lam:g} delta={r.delta:g} depth={r.depth:.12g} ({r.method})")
    return 0


def _cmd_verify(args) -> int:
    try:
        traj = Trajectory.read_csv(args.trajectory)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    lams = _list(args.lam) if args.lam else [0.0]
    if not args.lam:
        r0 = traj.reports[0]
        if r0.M > 0:
            inferred = (r0.E_lambda - r0.J) / r0.M
            if abs(inferred) > 1e-12:
                lams.append(round(inferred, 12))
    try:
        mass = verify_mass_identity(traj)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    worst = mass.relative
    print(f"mass identity: max {mass.max_abs:.3e} median {mass.median_abs:.3e} "
          f"relative {mass.relative:.3e}")
    for lam in lams:
        d = verify_dissipation_identity(traj, lam)
        worst = max(worst, d.relative)
        print(f"dissipation identity (lambda={lam:g}): max {d.max_abs:.3e} relative {d.relative:.3e} "
              f"monotone-while-I>0 {d.monotone}")
    if args.tol is not None and worst > args.tol:
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pwlab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(func=_cmd_run)

    d = sub.add_parser("depths", help="compute a well-depth table")
    d.add_argument("--p", required=True)
    d.add_argument("--lambda", dest="lam", default="0")
    d.add_argument("--delta", default="0")
    d.add_argument("--mesh", required=True, help="a:b:n per axis, comma separated")
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_depths)

    v = sub.add_parser("verify", help="re-check the identities on a trajectory CSV")
    v.add_argument("trajectory")
    v.add_argument("--lambda", dest="lam", default=None)
    v.add_argument("--tol", type=float, default=None, help="exit 2 if a relative residual exceeds this")
    v.set_defaults(func=_cmd_verify)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
