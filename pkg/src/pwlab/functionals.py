"""Energy, mass and Nehari-type functionals of a grid function.

All power terms use |u|^(p+1), so every functional is even in u and defined
for non-integer p.  For nonnegative data this coincides with u^(p+1).
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from .mesh import GridFunction, Mesh, grad_norm_sq_array


def critical_exponent(n: int) -> float:
    """Sobolev exponent (n+2)/(n-2); infinite for n <= 2."""
    return np.inf if n <= 2 else (n + 2) / (n - 2)


@dataclass(frozen=True)
class Params:
    p: float
    lam: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p <= 1:
            raise ValueError(f"exponent p must be a finite number > 1, got {self.p}")
        if self.lam < 0 or self.delta < 0:
            raise ValueError("lambda and delta must be nonnegative")

    def check_dimension(self, n: int, allow_critical: bool = True) -> None:
        ps = critical_exponent(n)
        if self.p > ps or (not allow_critical and self.p == ps):
            raise ValueError(f"p = {self.p} exceeds the critical exponent {ps} in dimension {n}")

    def with_(self, **kw) -> "Params":
        return Params(**{**{"p": self.p, "lam": self.lam, "delta": self.delta}, **kw})


REPORT_COLUMNS = ("J", "M", "I", "E_lambda", "J_delta", "I_delta",
                  "sup_norm", "h1_seminorm_sq", "lp1_norm_pow")


@dataclass(frozen=True)
class FunctionalReport:
    J: float
    M: float
    I: float
    E_lambda: float
    J_delta: float
    I_delta: float
    sup_norm: float
    h1_seminorm_sq: float
    lp1_norm_pow: float

    def row(self) -> tuple[float, ...]:
        """Values in the documented CSV column order (``REPORT_COLUMNS``)."""
        return astuple(self)

    def is_finite(self) -> bool:
        return all(np.isfinite(getattr(self, f.name)) for f in fields(self))


def report_array(m: Mesh, u: np.ndarray, params: Params) -> FunctionalReport:
    """All functionals of the nodal array ``u`` in one pass."""
    p = params.p
    w = m.quad_weight
    absu = np.abs(u)
    grad = grad_norm_sq_array(m, u)
    l2 = w * float(np.sum(u * u))
    lp1 = w * float(np.sum(absu ** (p + 1)))
    M = 0.5 * l2
    J = 0.5 * grad - lp1 / (p + 1)
    I = grad - lp1
    sup = float(absu.max()) if u.size else 0.0
    return FunctionalReport(
        J=J, M=M, I=I,
        E_lambda=J + params.lam * M,
        J_delta=J + params.delta * M,
        I_delta=I + 2.0 * params.delta * M,
        sup_norm=sup, h1_seminorm_sq=grad, lp1_norm_pow=lp1,
    )


def report(u: GridFunction, params: Params) -> FunctionalReport:
    return report_array(u.mesh, u.values, params)


def energy_J(u: GridFunction, params: Params) -> float:
    return report(u, params).J


def mass_M(u: GridFunction) -> float:
    return 0.5 * u.mesh.quad_weight * float(np.sum(u.values ** 2))


def nehari_I(u: GridFunction, params: Params) -> float:
    return report(u, params).I


def energy_E_lambda(u: GridFunction, params: Params) -> float:
    return report(u, params).E_lambda


def delta_functionals(u: GridFunction, params: Params) -> tuple[float, float]:
    """Return ``(J_delta, I_delta)`` for the damped equation."""
    r = report(u, params)
    return r.J_delta, r.I_delta


def quotient_A(u: GridFunction, params: Params) -> float:
    """Scale-free Sobolev quotient (|grad u|^2 + delta |u|^2) / |u|_{p+1}^2."""
    if u.is_zero():
        raise ValueError("quotient is undefined for the zero function")
    r = report(u, params)
    return (r.h1_seminorm_sq + 2.0 * params.delta * r.M) / r.lp1_norm_pow ** (2.0 / (params.p + 1))
