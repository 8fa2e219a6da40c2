"""Time evolution of u_t - Delta u + delta u = |u|^{p-1} u with zero Dirichlet data.

First-order IMEX stepping (implicit diffusion and damping, explicit reaction)
with step-doubling error control, plus the trajectory checks for the mass and
energy identities and for the blow-up and decay regimes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .functionals import FunctionalReport, Params, report_array
from .mesh import GridFunction, Mesh, ShiftedSolver

log = logging.getLogger(__name__)

GLOBAL_DECAY = "GlobalDecay"
BLOW_UP = "BlowUp"
INCONCLUSIVE = "Inconclusive"

TRAJECTORY_COLUMNS = ("t", "J", "M", "I", "E_lambda", "I_delta", "sup_norm",
                      "h1_seminorm_sq", "ut_norm_sq", "dt")


@dataclass(frozen=True)
class FlowConfig:
    params: Params
    dt_init: float = 1e-3
    dt_min: float = 1e-12
    t_max: float = 50.0
    blowup_sup_threshold: float = 1e6
    decay_h1_threshold: float = 1e-8
    snapshot_stride: int = 100
    safety: float = 0.9
    tol_step: float = 1e-6
    adaptive: bool = True
    max_steps: int = 2_000_000
    stall_steps: int = 1000

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt_init:
            raise ValueError("need 0 < dt_min <= dt_init")
        if self.t_max <= 0 or self.blowup_sup_threshold <= 0 or self.decay_h1_threshold <= 0:
            raise ValueError("horizon and thresholds must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if not 0 < self.safety <= 1 or self.tol_step <= 0:
            raise ValueError("need 0 < safety <= 1 and tol_step > 0")


@dataclass
class FlowOutcome:
    kind: str
    t_reached: float = 0.0
    t_estimate: Optional[float] = None
    last_finite_time: Optional[float] = None
    reason: str = ""
    final_membership_consistent: bool = True

    def summary_line(self, cfg: FlowConfig) -> str:
        if self.kind == BLOW_UP:
            when = f"t_estimate={self.t_estimate:.17g} last_finite_time={self.last_finite_time:.17g}"
        elif self.kind == GLOBAL_DECAY:
            when = f"t_reached={self.t_reached:.17g}"
        else:
            when = f"reason={self.reason} t_reached={self.t_reached:.17g}"
        return (f"{self.kind} {when} blowup_sup_threshold={cfg.blowup_sup_threshold:.17g} "
                f"decay_h1_threshold={cfg.decay_h1_threshold:.17g} dt_min={cfg.dt_min:.17g}")


@dataclass
class Trajectory:
    mesh: Mesh
    params: Params
    times: list[float] = field(default_factory=list)
    reports: list[FunctionalReport] = field(default_factory=list)
    snapshots: list[tuple[float, GridFunction]] = field(default_factory=list)
    snapshot_steps: list[int] = field(default_factory=list)
    ut_norm_sq: list[float] = field(default_factory=list)
    dts: list[float] = field(default_factory=list)
    config: Optional[FlowConfig] = None
    outcome: Optional[FlowOutcome] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports])

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.times)

    def write_csv(self, path: str | Path) -> None:
        """Rows align with ``times``; ut_norm_sq and dt describe the step that ended there (0 on row 0)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAJECTORY_COLUMNS)
            for k, (t, r) in enumerate(zip(self.times, self.reports)):
                ut = self.ut_norm_sq[k - 1] if k else 0.0
                dt = self.dts[k - 1] if k else 0.0
                vals = (t, r.J, r.M, r.I, r.E_lambda, r.I_delta, r.sup_norm, r.h1_seminorm_sq, ut, dt)
                w.writerow([f"{v:.17g}" for v in vals])

    @classmethod
    def read_csv(cls, path: str | Path, p: float | None = None) -> "Trajectory":
        """Rebuild a trajectory (no snapshots) from a CSV written by :meth:`write_csv`.

        J_delta and |u|^{p+1} are recovered exactly from the stored columns:
        J_delta = J + (I_delta - I)/2 and lp1 = h1 - I.
        """
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or tuple(rows[0].keys()) != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: not a trajectory file")
        traj = cls(mesh=None, params=Params(p) if p else None)  # type: ignore[arg-type]
        for k, r in enumerate(rows):
            v = {c: float(r[c]) for c in TRAJECTORY_COLUMNS}
            traj.times.append(v["t"])
            traj.reports.append(FunctionalReport(
                J=v["J"], M=v["M"], I=v["I"], E_lambda=v["E_lambda"],
                J_delta=v["J"] + 0.5 * (v["I_delta"] - v["I"]), I_delta=v["I_delta"],
                sup_norm=v["sup_norm"], h1_seminorm_sq=v["h1_seminorm_sq"],
                lp1_norm_pow=v["h1_seminorm_sq"] - v["I"]))
            if k:
                traj.ut_norm_sq.append(v["ut_norm_sq"])
                traj.dts.append(v["dt"])
        return traj


# --- stepping ---

class _Stepper:
    """IMEX step with cached factorizations of (1 + dt*delta) I - dt*Delta_h."""

    def __init__(self, m: Mesh, params: Params):
        self.m, self.params = m, params
        self._cache: dict[float, ShiftedSolver] = {}

    def solver(self, dt: float) -> ShiftedSolver:
        s = self._cache.get(dt)
        if s is None:
            if len(self._cache) > 16:
                self._cache.clear()
            s = self._cache[dt] = ShiftedSolver(self.m, 1.0 + dt * self.params.delta, dt)
        return s

    def step(self, u: np.ndarray, dt: float) -> np.ndarray:
        p = self.params.p
        with np.errstate(over="ignore", invalid="ignore"):
            rhs = u + dt * np.abs(u) ** (p - 1) * u
        if not np.all(np.isfinite(rhs)):
            raise OverflowError("reaction term overflowed")
        return self.solver(dt).solve(rhs)


def step_imex(u: GridFunction, dt: float, params: Params) -> GridFunction:
    """One IMEX step; raises OverflowError when the explicit reaction overflows."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return GridFunction(u.mesh, _Stepper(u.mesh, params).step(u.values, dt))


def _l2(m: Mesh, u: np.ndarray) -> float:
    return float(np.sqrt(m.quad_weight * np.sum(u * u)))


class _Integrator:
    """Adaptive driver shared by single runs and lockstep comparisons."""

    def __init__(self, m: Mesh, cfg: FlowConfig, params: Params):
        self.m, self.cfg = m, cfg
        self.stepper = _Stepper(m, params)

    def attempt(self, u: np.ndarray, dt: float):
        """Return (candidate, error estimate) or (None, inf) on overflow."""
        try:
            if not self.cfg.adaptive:
                return self.stepper.step(u, dt), 0.0
            full = self.stepper.step(u, dt)
            half = self.stepper.step(self.stepper.step(u, 0.5 * dt), 0.5 * dt)
        except OverflowError:
            return None, np.inf
        if not (np.all(np.isfinite(full)) and np.all(np.isfinite(half))):
            return None, np.inf
        norm = _l2(self.m, half)
        est = _l2(self.m, half - full) / norm if norm > 0 else 0.0
        return half, est

    def proposal(self, dt: float, est: float) -> float:
        cfg = self.cfg
        if not cfg.adaptive:
            return dt
        if est == 0:
            factor = 5.0
        elif not np.isfinite(est):
            factor = 0.2
        else:
            factor = min(5.0, max(0.2, cfg.safety * np.sqrt(cfg.tol_step / est)))
        return max(dt * factor, cfg.dt_min)


def _record(traj: Trajectory, t: float, u: np.ndarray, step: int, force_snapshot: bool = False):
    traj.times.append(t)
    traj.reports.append(report_array(traj.mesh, u, traj.params))
    if force_snapshot or step % traj.config.snapshot_stride == 0:
        traj.snapshots.append((t, GridFunction(traj.mesh, u)))
        traj.snapshot_steps.append(step)


def estimate_blowup_time(times: np.ndarray, mass: np.ndarray, p: float) -> float:
    """Fit M ~ c (T - t)^(-2/(p-1)) over the last decade of growth and return T.

    M^{-(p-1)/2} is then linear in t and vanishes at T.
    """
    sel = mass >= mass[-1] / 10.0
    if sel.sum() < 3:
        sel = np.zeros_like(sel)
        sel[-min(len(mass), 3):] = True
    y = mass[sel] ** (-(p - 1) / 2.0)
    slope, intercept = np.polyfit(times[sel], y, 1)
    if slope >= 0:
        return float(times[-1])
    return max(float(-intercept / slope), float(times[-1]))


def run_flow(phi: GridFunction, cfg: FlowConfig) -> tuple[Trajectory, FlowOutcome]:
    """Integrate from ``phi`` until decay, blow-up detection or the horizon."""
    m, params = phi.mesh, cfg.params
    traj = Trajectory(m, params, config=cfg)
    u = np.array(phi.values)
    t, step = 0.0, 0
    _record(traj, t, u, step, force_snapshot=True)
    if phi.is_zero():
        traj.outcome = FlowOutcome(GLOBAL_DECAY, t_reached=0.0)
        return traj, traj.outcome

    integ = _Integrator(m, cfg, params)
    dt = cfg.dt_init
    pinned = 0
    outcome = None
    while outcome is None:
        if t >= cfg.t_max * (1 - 1e-12):  # absorb round-off in the accumulated time
            outcome = FlowOutcome(INCONCLUSIVE, t_reached=t, reason="horizon")
            break
        if step >= cfg.max_steps:
            outcome = FlowOutcome(INCONCLUSIVE, t_reached=t, reason="max_steps")
            break
        h = min(dt, cfg.t_max - t)
        cand, est = integ.attempt(u, h)
        at_floor = h <= cfg.dt_min or not cfg.adaptive
        if cand is None:
            if not at_floor:
                dt = max(0.2 * h, cfg.dt_min)
                continue
            sup = traj.reports[-1].sup_norm
            if sup > cfg.blowup_sup_threshold:
                outcome = _blowup(traj, "overflow at dt_min")
            else:
                outcome = FlowOutcome(INCONCLUSIVE, t_reached=t, reason="overflow")
            break
        if est > cfg.tol_step and not at_floor:
            dt = min(integ.proposal(h, est), 0.9 * h)
            continue
        prev = traj.reports[-1]
        traj.ut_norm_sq.append(_l2(m, (cand - u) / h) ** 2)
        traj.dts.append(h)
        u, t, step = cand, float(t + h), step + 1
        _record(traj, t, u, step)
        r = traj.reports[-1]

        if np.sqrt(max(r.h1_seminorm_sq, 0.0)) <= cfg.decay_h1_threshold:
            outcome = FlowOutcome(GLOBAL_DECAY, t_reached=t)
            break
        growing = r.sup_norm > prev.sup_norm
        if at_floor:
            pinned = pinned + 1 if not growing else 0
            if growing and r.sup_norm > cfg.blowup_sup_threshold:
                outcome = _blowup(traj, "")
                break
            if cfg.adaptive and pinned >= cfg.stall_steps:
                outcome = FlowOutcome(INCONCLUSIVE, t_reached=t, reason="stall")
                break
        dt = integ.proposal(h, est)

    if not traj.snapshots or traj.snapshots[-1][0] != traj.times[-1]:
        traj.snapshots.append((traj.times[-1], GridFunction(m, u)))
        traj.snapshot_steps.append(step)
    i0, i1 = traj.reports[0].I_delta, traj.reports[-1].I_delta
    outcome.final_membership_consistent = bool(np.sign(i0) == np.sign(i1))
    traj.outcome = outcome
    log.info("flow finished: %s", outcome.summary_line(cfg))
    return traj, outcome


def _blowup(traj: Trajectory, reason: str) -> FlowOutcome:
    t = traj.t
    T = estimate_blowup_time(t, traj.column("M"), traj.params.p)
    return FlowOutcome(BLOW_UP, t_reached=float(t[-1]), t_estimate=T,
                       last_finite_time=float(t[-1]), reason=reason)


# --- trajectory identities ---

@dataclass
class ResidualReport:
    max_abs: float
    median_abs: float
    scale: float
    n: int
    monotone: Optional[bool] = None

    @property
    def relative(self) -> float:
        return self.max_abs / self.scale if self.scale > 0 else self.max_abs


def _centered_derivative(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second-order three-point derivative at interior nodes of a nonuniform grid."""
    hm = t[1:-1] - t[:-2]
    hp = t[2:] - t[1:-1]
    return (hm**2 * f[2:] - hp**2 * f[:-2] + (hp**2 - hm**2) * f[1:-1]) / (hm * hp * (hm + hp))


def _check_length(traj: Trajectory) -> None:
    if len(traj.times) < 4:
        raise ValueError("trajectory too short: need at least 3 accepted steps")


def _summarize(res: np.ndarray, scale: float, monotone=None) -> ResidualReport:
    a = np.abs(res)
    return ResidualReport(float(a.max()), float(np.median(a)), float(scale), len(a), monotone)


def verify_mass_identity(traj: Trajectory) -> ResidualReport:
    """Compare dM/dt with -I_delta (which is -I for the undamped flow)."""
    _check_length(traj)
    t = traj.t
    dM = _centered_derivative(t, traj.column("M"))
    rhs = -traj.column("I_delta")[1:-1]
    return _summarize(dM - rhs, np.max(np.abs(rhs)))


def verify_dissipation_identity(traj: Trajectory, lam: float) -> ResidualReport:
    """Compare dE/dt with -(|u_t|^2 + lam*I_delta) for E = J_delta + lam*M.

    ``monotone`` reports whether E is nonincreasing between consecutive
    records on which I_delta > 0.
    """
    _check_length(traj)
    t = traj.t
    E = traj.column("J_delta") + lam * traj.column("M")
    Id = traj.column("I_delta")
    dE = _centered_derivative(t, E)
    ut = np.asarray(traj.ut_norm_sq)
    hm, hp = t[1:-1] - t[:-2], t[2:] - t[1:-1]
    # step values live at step midpoints; interpolate to the interior record times
    ut_k = (ut[:-1] * hp + ut[1:] * hm) / (hm + hp)
    rhs = -(ut_k + lam * Id[1:-1])
    both_pos = (Id[:-1] > 0) & (Id[1:] > 0)
    monotone = bool(np.all(np.diff(E)[both_pos] <= 0))
    return _summarize(dE - rhs, np.max(np.abs(rhs)), monotone)


@dataclass
class BlowupCheck:
    eps: float
    min_primitive_margin: float  # min_t (-I_delta(v(t))) - eps
    primitive_holds: bool
    mass_increasing: bool
    final_convex: bool
    C: float
    min_composite_margin: float
    composite_holds: bool

    @property
    def all_hold(self) -> bool:
        return self.primitive_holds and self.mass_increasing and self.composite_holds


def embedding_constant(p: float, measure: float) -> float:
    """C with (1 - 2/(p+1)) |v|_{p+1}^{p+1} >= C M^{(p+1)/2}, from Hoelder on a domain of the given measure."""
    return (1.0 - 2.0 / (p + 1)) * 2.0 ** ((p + 1) / 2) * measure ** (-(p - 1) / 2)


def verify_blowup_ode(traj: Trajectory, eps: float, d_del_eps_lb: float, params: Params,
                      measure: Optional[float] = None, tol: float = 0.0) -> BlowupCheck:
    """Check the differential inequalities that force the mass to blow up.

    (a) -I_delta(v(t)) >= eps at every record;
    (b) M strictly increasing, and convex over the final decade of growth;
    (c) dM/dt = -I_delta >= -2 d_{delta,eps} + C M^{(p+1)/2}, with ``d_del_eps_lb``
        standing in for d_{delta,eps} (it dominates J_delta along the run).
    """
    if traj.outcome is None or traj.outcome.kind != BLOW_UP:
        raise ValueError("not a blow-up trajectory")
    if measure is None:
        measure = traj.mesh.measure
    p = params.p
    t = traj.t
    M = traj.column("M")
    minus_I = -traj.column("I_delta")
    margin = minus_I - eps
    C = embedding_constant(p, measure)
    composite = minus_I - (-2.0 * d_del_eps_lb + C * M ** ((p + 1) / 2))
    final = M >= M[-1] / 10.0
    convex = True
    if final.sum() >= 4:
        dM = _centered_derivative(t[final], M[final])
        convex = bool(np.all(np.diff(dM) >= -1e-12 * np.abs(dM).max()))
    return BlowupCheck(
        eps=eps,
        min_primitive_margin=float(margin.min()),
        primitive_holds=bool(np.all(margin >= -tol)),
        mass_increasing=bool(np.all(np.diff(M) > 0)),
        final_convex=convex,
        C=C,
        min_composite_margin=float(composite.min()),
        composite_holds=bool(np.all(composite >= -tol)),
    )


def omega_limit_check(traj: Trajectory) -> bool:
    """Final state below the decay threshold with a nonincreasing H^1 tail."""
    if traj.outcome is not None and traj.outcome.kind != GLOBAL_DECAY:
        return False
    thr = traj.config.decay_h1_threshold if traj.config else 1e-8
    r = traj.reports[-1]
    if r.sup_norm == 0.0:
        return True
    if np.sqrt(r.h1_seminorm_sq) > thr or r.sup_norm > thr:
        return False
    tail = traj.column("h1_seminorm_sq")[-10:]
    return bool(len(tail) >= 10 and np.all(np.diff(tail) <= 0))
