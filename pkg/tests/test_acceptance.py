"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (collected again in the terminal
summary) and then asserts.  Run on their own with

    python3 -m pytest tests/test_acceptance.py -v
"""

import time

import numpy as np
import pytest

from acceptance_log import verdict
from pwlab.comparison import REL_TOL_CMP, run_comparison
from pwlab.flow import (BLOW_UP, GLOBAL_DECAY, INCONCLUSIVE, FlowConfig, omega_limit_check,
                        run_flow, verify_blowup_ode, verify_dissipation_identity,
                        verify_mass_identity)
from pwlab.functionals import Params, energy_J, mass_M, nehari_I, report
from pwlab.mesh import GridFunction, build_mesh
from pwlab.nehari import (classify, compute_depth_table, depth_from_A, epsilon_budget,
                          ground_state, guard_band, minimize_on_nehari, nehari_scale,
                          scale_to_level)

PI = np.pi
P3 = Params(3.0)
LAMBDAS = [0.0, 0.5, 1.0, 2.0]
DELTAS = [0.0, 1.0]


@pytest.fixture(scope="module")
def mesh():
    return build_mesh(1, [(0.0, PI)], [1023])


@pytest.fixture(scope="module")
def sine(mesh):
    return mesh.interpolate(np.sin)


@pytest.fixture(scope="module")
def table(mesh):
    return compute_depth_table(mesh, 3.0, LAMBDAS, DELTAS[1:])


def fixed_dt(dt, t_max, params=P3):
    return FlowConfig(params, dt_init=dt, dt_min=dt, t_max=t_max, adaptive=False)


def rel(a, b):
    return abs(a - b) / abs(b)


def test_criterion_01_functional_oracles(mesh):
    t0 = time.perf_counter()
    checks = {}
    worst = 0.0
    for c in (0.5, 1.0, 2.0, 10.0):
        u = c * mesh.interpolate(np.sin)
        for name, got, want in (("J", energy_J(u, P3), c**2 * PI / 4 - c**4 * 3 * PI / 32),
                                ("M", mass_M(u), c**2 * PI / 4),
                                ("I", nehari_I(u, P3), c**2 * PI / 2 - c**4 * 3 * PI / 8)):
            e = rel(got, want)
            worst = max(worst, e)
            checks[f"{name}(c={c:g})"] = e <= 1e-3
    elapsed = time.perf_counter() - t0
    checks["runtime<1s"] = elapsed < 1.0
    assert verdict(1, "functional oracles", checks, f"max rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_02_nehari_consistency(mesh, sine):
    t0 = time.perf_counter()
    t_star, w = nehari_scale(sine, P3)
    d = depth_from_A(ground_state(mesh, P3).A_min, P3)
    d_direct = minimize_on_nehari(mesh, P3)[0]  # independent start: first eigenvector
    elapsed = time.perf_counter() - t0
    checks = {
        "t*=2/sqrt3": abs(t_star - 2 / np.sqrt(3)) <= 1e-3,
        "J(t* sin)=pi/6": abs(energy_J(w, P3) - PI / 6) <= 1e-3,
        "d<=pi/6+1e-3": d <= PI / 6 + 1e-3,
        "routes agree 1e-4": rel(d_direct, d) <= 1e-4,
        "runtime<30s": elapsed < 30,
    }
    assert verdict(2, "Nehari consistency", checks,
                   f"d={d:.10f} direct={d_direct:.10f} {elapsed:.2f}s")


def test_criterion_03_depth_ordering(mesh):
    t0 = time.perf_counter()
    tab = compute_depth_table(mesh, 3.0, [0.5, 1.0, 2.0], [])
    elapsed = time.perf_counter() - t0
    d = tab.d
    seq = [tab.d_lambda(lam) for lam in (0.5, 1.0, 2.0)]
    margin = 10 * tab.solver_tol
    checks = {
        "strictly increasing": seq[0] < seq[1] < seq[2],
        "each > d + 10 tol": all(x > d + margin for x in seq),
        "runtime<2min": elapsed < 120,
    }
    assert verdict(3, "depth ordering", checks,
                   "d=%.6f d_lambda=%s %.2fs" % (d, ", ".join(f"{x:.6f}" for x in seq), elapsed))


@pytest.fixture(scope="module")
def fixed_runs(sine):
    t0 = time.perf_counter()
    runs = {dt: run_flow(0.01 * sine, fixed_dt(dt, 2.0))[0] for dt in (1e-3, 5e-4, 2.5e-4)}
    return runs, time.perf_counter() - t0


def test_criterion_04_mass_identity(fixed_runs):
    runs, elapsed = fixed_runs
    res = [verify_mass_identity(tr) for tr in runs.values()]
    r = [x.relative for x in res]
    checks = {
        "max<=1e-3 max|I|": r[0] <= 1e-3,
        "halving ratio>=1.8": r[0] / r[1] >= 1.8 and r[1] / r[2] >= 1.8,
        "runtime<1min": elapsed < 60,
    }
    assert verdict(4, "mass identity", checks,
                   "relative residuals " + ", ".join(f"{x:.3e}" for x in r))


def test_criterion_05_dissipation_identity(fixed_runs):
    runs, _ = fixed_runs
    res = [verify_dissipation_identity(tr, 1.0) for tr in runs.values()]
    r = [x.relative for x in res]
    checks = {
        "max<=1e-3 scale": r[0] <= 1e-3,
        "halving ratio>=1.8": r[0] / r[1] >= 1.8 and r[1] / r[2] >= 1.8,
        "E_lambda monotone while I>0": all(x.monotone for x in res),
    }
    assert verdict(5, "dissipation identity (lambda=1)", checks,
                   "relative residuals " + ", ".join(f"{x:.3e}" for x in r))


def test_criterion_06_global_decay(sine, table):
    t0 = time.perf_counter()
    phi = 0.01 * sine
    mem = classify(phi, [0.0], [0.0], P3, table)
    traj, out = run_flow(phi, FlowConfig(P3))
    elapsed = time.perf_counter() - t0
    t = traj.t
    ratio = np.sqrt(traj.column("M") / traj.reports[0].M)
    early = t <= 5
    dev = float(np.abs(ratio[early] / np.exp(-t[early]) - 1).max())
    r0 = report(phi, P3)
    checks = {
        "in W (guard band)": mem.in_W_lambda[0.0]
        and min(table.d - r0.J, r0.I) > guard_band(table),
        "GlobalDecay": out.kind == GLOBAL_DECAY,
        "|u|/|phi| ~ exp(-t) within 1%": dev <= 0.01,
        "omega limit": omega_limit_check(traj),
        "runtime<1min": elapsed < 60,
    }
    assert verdict(6, "global decay", checks,
                   f"t_reached={out.t_reached:.3f} max dev {dev:.2e} {elapsed:.2f}s")


def test_criterion_07_W_lambda_invariance(sine, table):
    n_traj = n_states = 0
    checks = {}
    for c in (0.01, 0.1, 0.5, 0.9):
        phi = c * sine
        mem = classify(phi, LAMBDAS, [], P3, table)
        members = [lam for lam in LAMBDAS if mem.in_W_lambda[lam]]
        if not members:
            continue
        traj, _ = run_flow(phi, FlowConfig(P3))
        n_traj += 1
        I = traj.column("I")
        for lam in members:
            E = traj.column("J") + lam * traj.column("M")
            n_states += len(E)
            checks[f"c={c:g},lambda={lam:g}"] = bool(np.all(I > 0) and np.all(E < table.d_lambda(lam)))
    checks["at least one W trajectory per lambda"] = n_traj > 0 and len(checks) >= len(LAMBDAS)
    assert verdict(7, "invariance of W_lambda", checks,
                   f"{n_traj} trajectories, {n_states} state checks")


def test_criterion_08_blowup(sine, table):
    t0 = time.perf_counter()
    phi = 10 * sine
    mem = classify(phi, [], [0.0], P3, table)
    traj, out = run_flow(phi, FlowConfig(P3))
    eb = epsilon_budget(phi, P3, table.d)
    chk = verify_blowup_ode(traj, eb.eps, eb.lower_bound, P3)
    elapsed = time.perf_counter() - t0
    checks = {
        "in Z (delta=0)": mem.in_Z_delta[0.0],
        "BlowUp": out.kind == BLOW_UP,
        "finite t_estimate": out.t_estimate is not None and np.isfinite(out.t_estimate),
        "-I_delta >= eps": chk.primitive_holds,
        "M strictly increasing": chk.mass_increasing,
        "superlinear bound": chk.composite_holds,
        "runtime<2min": elapsed < 120,
    }
    assert verdict(8, "blow-up", checks,
                   f"T~{out.t_estimate:.6g} eps={eb.eps:.4g} min margins "
                   f"{chk.min_primitive_margin:.3g}/{chk.min_composite_margin:.3g} {elapsed:.2f}s")


def test_criterion_09_well_depth_inequality(mesh, table):
    checks = {}
    worst = np.inf
    for delta in DELTAS:
        par = P3.with_(delta=delta)
        d_del = table.d_delta(delta)
        u = ground_state(mesh, par).ustar  # the direction closest to equality
        for eps in (1e-4, 1e-3, 1e-2, 0.1, 1.0):
            v = scale_to_level(u, par, -eps)
            r = report(v, par)
            slack = r.J_delta - (d_del - eps / 4)
            worst = min(worst, slack)
            checks[f"delta={delta:g},eps={eps:g}"] = (slack >= -1e-6
                                                      and abs(r.I_delta + eps) <= 1e-9 * eps)
    assert verdict(9, "well-depth inequality", checks, f"min slack {worst:.3e}")


def test_criterion_10_comparison(sine):
    rep = run_comparison(10 * sine, FlowConfig(P3), delta=1.0)
    ctrl = run_comparison(10 * sine, FlowConfig(P3), delta=0.0)
    scale = rep.scale()
    gap = np.asarray(rep.min_gap)
    neg = np.asarray(rep.neg_part_mass)
    checks = {
        "ordering_holds": rep.ordering_holds,
        "min_gap >= -1e-8 scale": bool(np.all(gap >= -REL_TOL_CMP * scale)),
        "neg_part_mass <= 1e-16 scale^2": bool(np.all(neg <= 1e-16 * scale**2)),
        "v detection not before u": rep.detection_order_ok,
        "delta=0 control identical": bool(np.all(np.asarray(ctrl.min_gap) == 0.0)),
    }
    assert verdict(10, "comparison", checks,
                   f"min gap {gap.min():.3g}, u detected at step {rep.u_blowup_step}, "
                   f"v at {rep.v_blowup_step}")


def test_criterion_11_positivity():
    m = build_mesh(1, [(0.0, PI)], [255])
    x = m.axes()[0]
    rng = np.random.default_rng(20261016)
    worst = 0.0
    checks = {}
    kinds = []
    for k in range(20):
        shape = np.abs(rng.standard_normal(m.shape)) * np.sin(x) ** rng.uniform(0.2, 2)
        amp = 10 ** rng.uniform(-2, 1.3)
        phi = GridFunction(m, amp * shape / shape.max())
        traj, out = run_flow(phi, FlowConfig(P3, t_max=5.0, snapshot_stride=1))
        kinds.append(out.kind)
        low = min(float((s.values / max(s.sup_norm(), 1e-300)).min()) for _, s in traj.snapshots)
        worst = min(worst, low)
        checks[f"datum {k}"] = low >= -1e-12
    counts = {k: kinds.count(k) for k in sorted(set(kinds))}
    assert verdict(11, "positivity preservation", checks,
                   f"min relative value {worst:.2e}, outcomes {counts}")


def test_criterion_12_dichotomy_sweep(sine, table):
    t0 = time.perf_counter()
    amps = np.logspace(-2, 1, 20)
    rows = []
    for c in amps:
        phi = c * sine
        mem = classify(phi, LAMBDAS, DELTAS, P3, table)
        _, out = run_flow(phi, FlowConfig(P3))
        rows.append((c, mem.label, mem.prediction, out.kind))
    elapsed = time.perf_counter() - t0
    kinds = [r[3] for r in rows]
    first_non_decay = next((i for i, k in enumerate(kinds) if k != GLOBAL_DECAY), len(kinds))
    last_non_blow = max((i for i, k in enumerate(kinds) if k != BLOW_UP), default=-1)
    monotone = (all(k == GLOBAL_DECAY for k in kinds[:first_non_decay])
                and all(k == BLOW_UP for k in kinds[last_non_blow + 1:])
                and all(k == INCONCLUSIVE for k in kinds[first_non_decay:last_non_blow + 1]))
    confident = [r for r in rows if r[1] != "none"]
    checks = {
        "monotone transition": monotone,
        "<=2 Inconclusive": kinds.count(INCONCLUSIVE) <= 2,
        "confident memberships agree": all(r[2] == r[3] for r in confident),
        "runtime<10min": elapsed < 600,
    }
    threshold = next((c for c, _, _, k in rows if k != GLOBAL_DECAY), None)
    assert verdict(12, "dichotomy sweep", checks,
                   f"{len(confident)}/20 confident, first non-decay at c={threshold:.4g}, "
                   f"{kinds.count(INCONCLUSIVE)} inconclusive, {elapsed:.1f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
