"""Ground states, potential-well depths and invariant-set classification.

The depth d_delta is obtained from the minimum of the scale-free quotient

    A(u) = (|grad u|^2 + delta |u|^2) / |u|_{p+1}^2,   d_delta = (p-1)/(2(p+1)) A^{(p+1)/(p-1)},

and d_lambda by minimizing E_lambda over directions projected onto {I = 0}.
Both minimizations are Sobolev-preconditioned gradient descents with
backtracking; every iterate is replaced by its absolute value, which never
increases either objective and keeps the minimizer in the nonnegative cone.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .functionals import Params, report
from .mesh import GridFunction, Mesh, ShiftedSolver, grad_norm_sq_array, laplacian_array

log = logging.getLogger(__name__)

TOL_STATIONARITY = 1e-8
TOL_NEHARI = 1e-10
MAX_ITERS = 50_000
_ROUNDOFF = 8 * np.finfo(float).eps


class ConvergenceError(RuntimeError):
    """Minimizer did not reach the stationarity tolerance; carries the last iterate."""

    def __init__(self, msg: str, iterate: GridFunction, residual: float):
        super().__init__(msg)
        self.iterate = iterate
        self.residual = residual


class GroundState(NamedTuple):
    A_min: float
    ustar: GridFunction
    iterations: int
    residual: float


@dataclass
class WellDepths:
    d: float
    d_lambda: float
    d_delta: float
    minimizer: GridFunction
    method: str
    iterations: int = 0
    residual: float = 0.0


# --- Nehari projection ---

def nehari_scale(u: GridFunction, params: Params) -> tuple[float, GridFunction]:
    """Scale ``u`` onto {I_delta = 0}; returns the unique positive factor and t*u."""
    if u.is_zero():
        raise ValueError("the zero function has no Nehari projection")
    r = report(u, params)
    quad = r.h1_seminorm_sq + 2.0 * params.delta * r.M
    t = (quad / r.lp1_norm_pow) ** (1.0 / (params.p - 1))
    return t, t * u


def depth_from_A(A_min: float, params: Params) -> float:
    if not A_min > 0:
        raise ValueError(f"quotient minimum must be positive, got {A_min}")
    p = params.p
    return (p - 1) / (2 * (p + 1)) * A_min ** ((p + 1) / (p - 1))


# --- minimizers ---

def first_eigenvector(m: Mesh, iters: int = 200, tol: float = 1e-13) -> np.ndarray:
    """Principal Dirichlet eigenvector by power iteration on (-Delta_h)^{-1}."""
    solver = ShiftedSolver(m, 0.0, 1.0)
    u = np.ones(m.shape)
    for _ in range(iters):
        w = solver.solve(u)
        w /= np.linalg.norm(w)
        if np.linalg.norm(w - u) < tol:
            return w
        u = w
    return u


def _normalize(m: Mesh, u: np.ndarray, p: float) -> np.ndarray:
    return u / (m.quad_weight * np.sum(u ** (p + 1))) ** (1.0 / (p + 1))


def _a_form(m: Mesh, u: np.ndarray, delta: float) -> float:
    return grad_norm_sq_array(m, u) + delta * m.quad_weight * float(np.sum(u * u))


def _minimize_quotient(m: Mesh, u0: np.ndarray, params: Params, tol: float, max_iters: int):
    p, delta = params.p, params.delta
    K = ShiftedSolver(m, delta, 1.0)

    def state(u):
        A = _a_form(m, u, delta)
        # Sobolev gradient of A at N(u) = 1 is -2 g, orthogonal to u in the a-inner product
        g = A * K.solve(u ** p) - u
        gg = _a_form(m, g, delta)
        return A, g, gg, float(np.sqrt(gg / A))

    u = _normalize(m, np.abs(u0), p)
    A, g, gg, res = state(u)
    for it in range(1, max_iters + 1):
        if res <= tol:
            return u, A, it, res
        s = 1.0
        while True:
            trial = _normalize(m, np.abs(u + s * g), p)
            new = state(trial)
            if new[0] <= A - 1e-4 * s * 2 * gg:
                break
            # inside the round-off band of A only the gradient can tell progress
            if new[0] <= A * (1 + _ROUNDOFF) and new[3] < res:
                break
            s *= 0.5
            if s < 1e-12:
                raise ConvergenceError(f"quotient line search failed at residual {res:.3e}",
                                       GridFunction(m, u), res)
        u, (A, g, gg, res) = trial, new
    raise ConvergenceError(f"quotient minimization stalled at residual {res:.3e}",
                           GridFunction(m, u), res)


def ground_state(m: Mesh, params: Params, tol: float = TOL_STATIONARITY,
                 max_iters: int = MAX_ITERS, restarts: int = 0, seed: int = 0) -> GroundState:
    """Nonnegative minimizer of the quotient, normalized to |u|_{p+1} = 1."""
    params.check_dimension(m.dim)
    starts = [first_eigenvector(m)]
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        starts.append(starts[0] * (1 + 0.5 * rng.standard_normal(m.shape)))
    best = None
    for u0 in starts:
        u, A, it, res = _minimize_quotient(m, u0, params, tol, max_iters)
        if best is None or A < best.A_min:
            best = GroundState(A, GridFunction(m, u), it, res)
    return best


def euler_lagrange_residual(u: GridFunction, params: Params) -> tuple[float, float]:
    """Best-fit multiplier mu for -Delta u + delta u = mu u^p and the relative residual.

    The residual is measured in the energy norm: |u - mu K^{-1} u^p|_a / |u|_a
    with K = -Delta_h + delta.
    """
    m = u.mesh
    K = ShiftedSolver(m, params.delta, 1.0)
    rhs = np.abs(u.values) ** params.p * np.sign(u.values)
    q = K.solve(rhs)
    # a(u, q) = <u, rhs> and a(q, q) = <q, rhs>
    mu = float(np.sum(u.values * rhs)) / float(np.sum(q * rhs))
    e = u.values - mu * q
    return mu, float(np.sqrt(_a_form(m, e, params.delta) / _a_form(m, u.values, params.delta)))


def _lambda_objective(m: Mesh, w: np.ndarray, p: float, lam: float):
    """E_lambda(t*(w) w) and its L2 gradient; degree-0 homogeneous in w."""
    q = m.quad_weight
    G = grad_norm_sq_array(m, w)
    N = q * float(np.sum(np.abs(w) ** (p + 1)))
    L = q * float(np.sum(w * w))
    a, b, c = (p + 1) / (p - 1), -2 / (p - 1), 2 / (p - 1)
    c1 = (p - 1) / (2 * (p + 1))
    f = c1 * G**a * N**b + 0.5 * lam * G**c * N**-c * L
    dG = -2.0 * q * laplacian_array(m, w)
    dN = (p + 1) * q * np.abs(w) ** (p - 1) * w
    dL = 2.0 * q * w
    grad = (c1 * (a * G ** (a - 1) * N**b * dG + b * G**a * N ** (b - 1) * dN)
            + 0.5 * lam * (c * G ** (c - 1) * N**-c * L * dG
                           - c * G**c * N ** (-c - 1) * L * dN + G**c * N**-c * dL))
    return f, grad


def _minimize_lambda(m: Mesh, u0: np.ndarray, p: float, lam: float, tol: float, max_iters: int):
    K = ShiftedSolver(m, 0.0, 1.0)

    def state(w):
        f, grad = _lambda_objective(m, w, p, lam)
        # H^1_0 Riesz representative; the quadrature weight in grad cancels against K
        g = -K.solve(grad) / m.quad_weight
        slope = float(np.sum(grad * g))
        res = float(np.sqrt(grad_norm_sq_array(m, g) * grad_norm_sq_array(m, w)) / abs(f))
        return f, g, slope, res

    w = _normalize(m, np.abs(u0), p)
    f, g, slope, res = state(w)
    s = 1.0
    for it in range(1, max_iters + 1):
        if res <= tol:
            return w, f, it, res
        s = min(2.0 * s, 1e6)
        while True:
            trial = _normalize(m, np.abs(w + s * g), p)
            new = state(trial)
            if new[0] <= f + 1e-4 * s * slope:
                break
            if new[0] <= f + _ROUNDOFF * abs(f) and new[3] < res:
                break
            s *= 0.5
            if s < 1e-14:
                raise ConvergenceError(f"E_lambda line search failed at residual {res:.3e}",
                                       GridFunction(m, w), res)
        w, (f, g, slope, res) = trial, new
    raise ConvergenceError(f"E_lambda minimization stalled at residual {res:.3e}",
                           GridFunction(m, w), res)


def minimize_on_nehari(m: Mesh, params: Params, tol: float = TOL_STATIONARITY,
                       max_iters: int = MAX_ITERS, start: np.ndarray | None = None):
    """Direct route: minimize E_lambda over {I = 0}; returns (depth, minimizer, iterations, residual).

    The minimizer is returned on the manifold itself (not normalized).
    """
    params.check_dimension(m.dim)
    u0 = first_eigenvector(m) if start is None else start
    w, f, it, res = _minimize_lambda(m, u0, params.p, params.lam, tol, max_iters)
    _, on_manifold = nehari_scale(GridFunction(m, w), params.with_(delta=0.0))
    return f, on_manifold, it, res


def depth_d_lambda(m: Mesh, params: Params, tol: float = TOL_STATIONARITY,
                   max_iters: int = MAX_ITERS) -> WellDepths:
    """Depths d (formula route), d_lambda (direct route) and d_delta (formula route)."""
    base = params.with_(lam=0.0, delta=0.0)
    gs0 = ground_state(m, base, tol, max_iters)
    d = depth_from_A(gs0.A_min, base)
    if params.delta > 0:
        gsd = ground_state(m, params.with_(lam=0.0), tol, max_iters)
        d_delta = depth_from_A(gsd.A_min, params)
    else:
        d_delta = d
    d_lam, minimizer, it, res = minimize_on_nehari(m, params.with_(delta=0.0), tol, max_iters,
                                                   start=gs0.ustar.values)
    return WellDepths(d=d, d_lambda=d_lam, d_delta=d_delta, minimizer=minimizer,
                      method="direct", iterations=it, residual=res)


# --- depth tables ---

DEPTH_COLUMNS = ("p", "lambda", "delta", "depth", "method", "iterations", "residual")


@dataclass
class DepthRow:
    p: float
    lam: float
    delta: float
    depth: float
    method: str
    iterations: int
    residual: float


@dataclass
class DepthTable:
    """Precomputed well depths keyed by lambda (d_lambda) and delta (d_delta)."""

    p: float
    rows: list[DepthRow] = field(default_factory=list)
    solver_tol: float = TOL_STATIONARITY

    def d_lambda(self, lam: float) -> float:
        if lam == 0:
            return self.d_delta(0.0)
        for r in self.rows:
            if r.lam == lam and r.delta == 0 and r.method == "direct":
                return r.depth
        raise KeyError(f"no depth for lambda = {lam}")

    def d_delta(self, delta: float) -> float:
        for r in self.rows:
            if r.delta == delta and r.lam == 0 and r.method == "formula":
                return r.depth
        raise KeyError(f"no depth for delta = {delta}")

    @property
    def d(self) -> float:
        return self.d_delta(0.0)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DEPTH_COLUMNS)
            for r in self.rows:
                w.writerow([f"{r.p:.17g}", f"{r.lam:.17g}", f"{r.delta:.17g}", f"{r.depth:.17g}",
                            r.method, r.iterations, f"{r.residual:.17g}"])

    @classmethod
    def read_csv(cls, path: str | Path) -> "DepthTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty depth table")
        out = [DepthRow(float(r["p"]), float(r["lambda"]), float(r["delta"]), float(r["depth"]),
                        r["method"], int(r["iterations"]), float(r["residual"])) for r in rows]
        return cls(out[0].p, out)


def compute_depth_table(m: Mesh, p: float, lambdas: Sequence[float], deltas: Sequence[float],
                        tol: float = TOL_STATIONARITY, max_iters: int = MAX_ITERS,
                        restarts: int = 0, seed: int = 0) -> DepthTable:
    table = DepthTable(p, solver_tol=tol)
    start = None
    for delta in sorted(set([0.0, *map(float, deltas)])):
        par = Params(p, 0.0, delta)
        gs = ground_state(m, par, tol, max_iters, restarts=restarts, seed=seed)
        if delta == 0:
            start = gs.ustar.values
        table.rows.append(DepthRow(p, 0.0, delta, depth_from_A(gs.A_min, par), "formula",
                                   gs.iterations, gs.residual))
    for lam in sorted(set(map(float, lambdas))):
        f, _, it, res = minimize_on_nehari(m, Params(p, lam, 0.0), tol, max_iters, start=start)
        table.rows.append(DepthRow(p, lam, 0.0, f, "direct", it, res))
    return table


# --- classification ---

@dataclass
class SetMembership:
    in_W_lambda: dict[float, bool]
    in_Z_delta: dict[float, bool]
    in_W_tilde: bool
    in_Z_tilde: bool
    witnesses: list[tuple] = field(default_factory=list)
    reasons: dict[str, str] = field(default_factory=dict)

    @property
    def label(self) -> str:
        if self.in_W_tilde and not self.in_Z_tilde:
            return "W"
        if self.in_Z_tilde and not self.in_W_tilde:
            return "Z"
        return "none"

    @property
    def prediction(self) -> str:
        return {"W": "GlobalDecay", "Z": "BlowUp"}.get(self.label, "none")


def guard_band(depths: DepthTable) -> float:
    return max(1e-8, 10.0 * depths.solver_tol)


def classify(phi: GridFunction, lambdas: Sequence[float], deltas: Sequence[float],
             params: Params, depths: DepthTable) -> SetMembership:
    """Membership of ``phi`` in W_lambda and Z_delta, asserted only outside a guard band."""
    guard = guard_band(depths)
    in_W, in_Z, witnesses, reasons = {}, {}, [], {}
    zero = phi.is_zero()
    for lam in lambdas:
        key = f"W_{lam:g}"
        if zero:
            in_W[lam] = True
            reasons[key] = "zero datum"
            continue
        d_lam = depths.d_lambda(lam)
        r = report(phi, params.with_(lam=lam))
        ok = r.E_lambda < d_lam - guard and r.I > guard
        in_W[lam] = ok
        if ok:
            witnesses.append(("W", lam, d_lam, r.E_lambda, r.I))
        elif abs(r.E_lambda - d_lam) <= guard or abs(r.I) <= guard:
            reasons[key] = "inside guard band"
        else:
            reasons[key] = "E_lambda >= d_lambda" if r.E_lambda >= d_lam else "I <= 0"
    nonneg = bool(np.all(phi.values >= 0))
    for delta in deltas:
        key = f"Z_{delta:g}"
        if zero or not nonneg:
            in_Z[delta] = False
            reasons[key] = "zero datum" if zero else "fails C+"
            continue
        d_del = depths.d_delta(delta)
        r = report(phi, params.with_(delta=delta))
        ok = r.J_delta < d_del - guard and r.I_delta < -guard
        in_Z[delta] = ok
        if ok:
            witnesses.append(("Z", delta, d_del, r.J_delta, r.I_delta))
        elif abs(r.J_delta - d_del) <= guard or abs(r.I_delta) <= guard:
            reasons[key] = "inside guard band"
        else:
            reasons[key] = "J_delta >= d_delta" if r.J_delta >= d_del else "I_delta >= 0"
    return SetMembership(in_W, in_Z, any(in_W.values()), any(in_Z.values()), witnesses, reasons)


class EpsilonBudget(NamedTuple):
    eps: float
    lower_bound: float  # d_delta - eps/(p+1), lower bound for d_{delta,eps}


def epsilon_budget(phi: GridFunction, params: Params, d_delta: float) -> EpsilonBudget:
    """Half the admissible gap min(-I_delta(phi), d_delta - J_delta(phi))."""
    if not np.all(phi.values >= 0) or phi.is_zero():
        raise ValueError("datum is not in the nonnegative cone")
    r = report(phi, params)
    if not (r.I_delta < 0 and r.J_delta < d_delta):
        raise ValueError("datum is not in Z_delta")
    eps = 0.5 * min(-r.I_delta, d_delta - r.J_delta)
    return EpsilonBudget(eps, d_delta - eps / (params.p + 1))


def scale_to_level(u: GridFunction, params: Params, level: float) -> GridFunction:
    """Return t*u with I_delta(t*u) = level for some level < 0 (t beyond the Nehari factor)."""
    if level >= 0:
        raise ValueError("only negative levels have a unique scaling beyond the manifold")
    r = report(u, params)
    quad = r.h1_seminorm_sq + 2.0 * params.delta * r.M
    N, p = r.lp1_norm_pow, params.p
    t_star = (quad / N) ** (1.0 / (p - 1))

    def g(t):
        return t * t * quad - t ** (p + 1) * N - level

    hi = 2.0 * t_star
    while g(hi) > 0:
        hi *= 2.0
    t = brentq(g, t_star, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    return t * u


__all__ = [
    "ConvergenceError", "GroundState", "WellDepths", "DepthRow", "DepthTable", "SetMembership",
    "EpsilonBudget", "nehari_scale", "depth_from_A", "ground_state", "first_eigenvector",
    "euler_lagrange_residual", "minimize_on_nehari", "depth_d_lambda", "compute_depth_table",
    "classify", "guard_band", "epsilon_budget", "scale_to_level",
]
