"""Lockstep integration of the undamped flow u and the damped flow v from the same data.

For nonnegative data the damped flow is a subsolution, so u >= v at all times
and blow-up of v forces blow-up of u no later.  Both flows share every time
step so nodewise gaps need no interpolation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .flow import FlowConfig, _Integrator
from .mesh import GridFunction

COMPARISON_COLUMNS = ("t", "min_gap", "neg_part_mass", "u_sup", "v_sup")
REL_TOL_CMP = 1e-8


@dataclass
class ComparisonReport:
    delta: float
    times: list[float] = field(default_factory=list)
    min_gap: list[float] = field(default_factory=list)
    neg_part_mass: list[float] = field(default_factory=list)
    u_sup: list[float] = field(default_factory=list)
    v_sup: list[float] = field(default_factory=list)
    u_mass: list[float] = field(default_factory=list)
    v_mass: list[float] = field(default_factory=list)
    u_blowup_time: Optional[float] = None
    v_blowup_time: Optional[float] = None
    u_blowup_step: Optional[int] = None
    v_blowup_step: Optional[int] = None
    stop_reason: str = ""

    def scale(self) -> np.ndarray:
        """Running sup-norm scale used for the relative ordering tolerance."""
        return np.maximum.accumulate(np.maximum(self.u_sup, self.v_sup))

    def tol_cmp(self) -> np.ndarray:
        return REL_TOL_CMP * self.scale()

    @property
    def ordering_holds(self) -> bool:
        return bool(np.all(np.asarray(self.min_gap) >= -self.tol_cmp()))

    @property
    def detection_order_ok(self) -> bool:
        """v never detects blow-up more than one step before u."""
        if self.v_blowup_step is None:
            return True
        return self.u_blowup_step is not None and self.u_blowup_step <= self.v_blowup_step + 1

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COMPARISON_COLUMNS)
            for row in zip(self.times, self.min_gap, self.neg_part_mass, self.u_sup, self.v_sup):
                w.writerow([f"{x:.17g}" for x in row])


def run_comparison(phi: GridFunction, cfg: FlowConfig, delta: float,
                   v0: GridFunction | None = None) -> ComparisonReport:
    """Integrate u (delta = 0) and v (damping ``delta``) with a shared step sequence.

    ``v0`` overrides v's initial data; it exists for fault-injection tests only.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if phi.is_zero() or np.any(phi.values < 0):
        raise ValueError("comparison needs nonnegative, nonzero initial data")
    m = phi.mesh
    iu = _Integrator(m, cfg, cfg.params.with_(delta=0.0))
    iv = _Integrator(m, cfg, cfg.params.with_(delta=delta))
    u = np.array(phi.values)
    v = np.array((v0 or phi).values)
    rep = ComparisonReport(delta)
    q = m.quad_weight

    def record(t):
        w = u - v
        rep.times.append(t)
        rep.min_gap.append(float(w.min()))
        rep.neg_part_mass.append(q * float(np.sum(np.minimum(w, 0.0) ** 2)))
        rep.u_sup.append(float(np.abs(u).max()))
        rep.v_sup.append(float(np.abs(v).max()))
        rep.u_mass.append(0.5 * q * float(np.sum(u * u)))
        rep.v_mass.append(0.5 * q * float(np.sum(v * v)))

    def blown(new_sup, old_sup, at_floor):
        return at_floor and new_sup > old_sup and new_sup > cfg.blowup_sup_threshold

    t, step, dt = 0.0, 0, cfg.dt_init
    record(t)
    grace = False  # one extra step after the first detection, for the other flow only
    while True:
        if t >= cfg.t_max * (1 - 1e-12):  # absorb round-off in the accumulated time
            rep.stop_reason = rep.stop_reason or "horizon"
            break
        if step >= cfg.max_steps:
            rep.stop_reason = "max_steps"
            break
        h = min(dt, cfg.t_max - t)
        at_floor = h <= cfg.dt_min or not cfg.adaptive
        cu, eu = iu.attempt(u, h) if rep.u_blowup_step is None else (u, 0.0)
        cv, ev = iv.attempt(v, h) if rep.v_blowup_step is None else (v, 0.0)
        if cu is None or cv is None:
            if not at_floor:
                dt = max(0.2 * h, cfg.dt_min)
                continue
            # overflow with the step pinned: counts as detection for a flow already past threshold
            if cu is None and rep.u_sup[-1] > cfg.blowup_sup_threshold and rep.u_blowup_step is None:
                rep.u_blowup_time, rep.u_blowup_step = t, step
            if cv is None and rep.v_sup[-1] > cfg.blowup_sup_threshold and rep.v_blowup_step is None:
                rep.v_blowup_time, rep.v_blowup_step = t, step
            rep.stop_reason = rep.stop_reason or "overflow"
            break
        est = max(eu, ev)
        if est > cfg.tol_step and not at_floor:
            dt = min(iu.proposal(h, eu), iv.proposal(h, ev), 0.9 * h)
            continue
        t, step = float(t + h), step + 1
        old_u, old_v = rep.u_sup[-1], rep.v_sup[-1]
        u, v = cu, cv
        if grace:
            if rep.u_blowup_step is None and blown(float(np.abs(u).max()), old_u, at_floor):
                rep.u_blowup_time, rep.u_blowup_step = t, step
            if rep.v_blowup_step is None and blown(float(np.abs(v).max()), old_v, at_floor):
                rep.v_blowup_time, rep.v_blowup_step = t, step
            break
        record(t)
        if rep.u_blowup_step is None and blown(rep.u_sup[-1], old_u, at_floor):
            rep.u_blowup_time, rep.u_blowup_step = t, step
        if rep.v_blowup_step is None and blown(rep.v_sup[-1], old_v, at_floor):
            rep.v_blowup_time, rep.v_blowup_step = t, step
        if rep.u_blowup_step is not None or rep.v_blowup_step is not None:
            rep.stop_reason = "blowup"
            if rep.u_blowup_step is not None and rep.v_blowup_step is not None:
                break
            grace = True
        elif max(rep.u_sup[-1], rep.v_sup[-1]) <= cfg.decay_h1_threshold:
            rep.stop_reason = "decay"
            break
        dt = min(iu.proposal(h, eu), iv.proposal(h, ev))
    return rep


def gronwall_diagnostic(report: ComparisonReport, floor: float | None = None) -> float:
    """Largest relative growth rate of the negative-part mass between records.

    Zero when the negative part never grows.  ``floor`` defaults to the squared
    ordering tolerance, so round-off-sized negative parts do not register.
    """
    neg = np.asarray(report.neg_part_mass)
    t = np.asarray(report.times)
    if len(t) < 2:
        return 0.0
    if floor is None:
        floor = float((REL_TOL_CMP * report.scale()[-1]) ** 2)
    rate = np.diff(neg) / np.diff(t) / np.maximum(neg[:-1], floor)
    return float(max(rate.max(), 0.0))
