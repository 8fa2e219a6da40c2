"""Uniform Cartesian grids on intervals and rectangles with zero Dirichlet data.

Only interior nodes are stored; boundary values are identically zero and enter
the stencils as ghost values.  Node ordering is lexicographic in C order: for a
rectangle the first axis is the slow index and the second the fast one, which
is also the row order of snapshot files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg


class MeshMismatchError(ValueError):
    """Raised when grid functions living on different meshes are combined."""


class LinearSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mesh:
    dim: int
    extents: tuple[tuple[float, float], ...]
    n_interior: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_interior

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((b - a) / (n + 1) for (a, b), n in zip(self.extents, self.n_interior))

    @property
    def quad_weight(self) -> float:
        return float(np.prod(self.h))

    @property
    def size(self) -> int:
        return int(np.prod(self.n_interior))

    @property
    def measure(self) -> float:
        """|Omega|, the exact area (length) of the domain."""
        return float(np.prod([b - a for a, b in self.extents]))

    def axes(self) -> list[np.ndarray]:
        """Interior node coordinates along each axis."""
        return [a + h * np.arange(1, n + 1)
                for (a, _), h, n in zip(self.extents, self.h, self.n_interior)]

    def coordinates(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.shape))

    def interpolate(self, func: Callable[..., np.ndarray]) -> "GridFunction":
        """Sample ``func(x)`` or ``func(x, y)`` at the interior nodes."""
        values = np.broadcast_to(func(*self.coordinates()), self.shape)
        return GridFunction(self, np.array(values, dtype=float))


def build_mesh(dim: int, extents: Sequence[Sequence[float]], n_interior: Sequence[int]) -> Mesh:
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if len(extents) != dim or len(n_interior) != dim:
        raise ValueError("need one interval and one node count per axis")
    ext = []
    for a, b in extents:
        a, b = float(a), float(b)
        if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
            raise ValueError(f"degenerate interval [{a}, {b}]")
        ext.append((a, b))
    counts = []
    for n in n_interior:
        if int(n) != n or n < 3:
            raise ValueError(f"need at least 3 interior nodes per axis, got {n}")
        counts.append(int(n))
    return Mesh(dim, tuple(ext), tuple(counts))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Interior nodal values of a function vanishing on the boundary."""

    mesh: Mesh
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.mesh.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.mesh, float(c) * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.mesh, -self.values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check(self.mesh, other)
        return GridFunction(self.mesh, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check(self.mesh, other)
        return GridFunction(self.mesh, self.values - other.values)

    def __abs__(self) -> "GridFunction":
        return GridFunction(self.mesh, np.abs(self.values))

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check(m: Mesh, *fs: GridFunction) -> None:
    for f in fs:
        if f.mesh != m:
            raise MeshMismatchError("grid function lives on a different mesh")


# --- array kernels (no mesh checks; used by the time stepper and solvers) ---

def laplacian_array(m: Mesh, u: np.ndarray) -> np.ndarray:
    padded = np.pad(u, 1)
    out = np.zeros_like(u)
    for axis, h in enumerate(m.h):
        lo = [slice(1, -1)] * m.dim
        hi = [slice(1, -1)] * m.dim
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        out += (padded[tuple(lo)] - 2.0 * u + padded[tuple(hi)]) / h**2
    return out


def grad_norm_sq_array(m: Mesh, u: np.ndarray) -> float:
    padded = np.pad(u, 1)
    total = 0.0
    for axis, h in enumerate(m.h):
        # keep the full stencil along `axis`, interior rows on the others
        idx = [slice(1, -1)] * m.dim
        idx[axis] = slice(None)
        d = np.diff(padded[tuple(idx)], axis=axis)
        total += float(np.sum(d * d)) / h**2
    return total * m.quad_weight


# --- public operations ---

def apply_laplacian(m: Mesh, u: GridFunction) -> GridFunction:
    _check(m, u)
    return GridFunction(m, laplacian_array(m, u.values))


def inner_l2(m: Mesh, u: GridFunction, v: GridFunction) -> float:
    _check(m, u, v)
    return m.quad_weight * float(np.sum(u.values * v.values))


def integrate_power(m: Mesh, u: GridFunction, q: float) -> float:
    if q < 1:
        raise ValueError(f"exponent must be >= 1, got {q}")
    _check(m, u)
    return m.quad_weight * float(np.sum(np.abs(u.values) ** q))


def grad_norm_sq(m: Mesh, u: GridFunction) -> float:
    _check(m, u)
    return grad_norm_sq_array(m, u.values)


def dirichlet_eigenvalue(m: Mesh, modes: Sequence[int] | None = None) -> float:
    """Exact eigenvalue of -Delta_h for the product sine with the given mode numbers."""
    modes = modes or (1,) * m.dim
    return float(sum(4.0 / h**2 * np.sin(k * np.pi * h / (2 * (b - a))) ** 2
                     for k, h, (a, b) in zip(modes, m.h, m.extents)))


def laplacian_matrix(m: Mesh) -> scipy.sparse.csr_matrix:
    """Sparse Delta_h in the lexicographic node ordering."""
    def lap1d(n, h):
        return scipy.sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)) / h**2
    if m.dim == 1:
        return lap1d(m.n_interior[0], m.h[0]).tocsr()
    (nx, ny), (hx, hy) = m.n_interior, m.h
    return (scipy.sparse.kron(lap1d(nx, hx), scipy.sparse.eye(ny))
            + scipy.sparse.kron(scipy.sparse.eye(nx), lap1d(ny, hy))).tocsr()


class ShiftedSolver:
    """Solver for ``(alpha*I - beta*Delta_h) x = b`` with alpha, beta >= 0, not both zero.

    ``method="direct"`` uses a banded Cholesky factor in 1D and a type-I sine
    transform in 2D, which diagonalizes Delta_h exactly on a uniform rectangle
    and needs no factorization.  ``"lu"`` (sparse LU) and ``"cg"`` (conjugate
    gradients) are kept as cross-checks.
    """

    def __init__(self, m: Mesh, alpha: float, beta: float, method: str = "direct", rtol: float = 1e-12):
        if alpha < 0 or beta < 0 or alpha + beta <= 0:
            raise ValueError("shifted operator must be positive definite")
        if method not in ("direct", "lu", "cg"):
            raise ValueError(f"unknown linear solver {method!r}")
        self.mesh, self.alpha, self.beta, self.rtol = m, alpha, beta, rtol
        self.method = method
        if method == "direct" and m.dim == 1:
            n, h = m.n_interior[0], m.h[0]
            ab = np.empty((2, n))
            ab[0, :] = -beta / h**2
            ab[1, :] = alpha + 2.0 * beta / h**2
            self._chol = scipy.linalg.cholesky_banded(ab, lower=False)
        elif method == "direct":
            eig = [4.0 / h**2 * np.sin(np.arange(1, n + 1) * np.pi / (2 * (n + 1))) ** 2
                   for n, h in zip(m.n_interior, m.h)]
            self._symbol = alpha + beta * np.add.outer(*eig)
        else:
            self._matrix = (alpha * scipy.sparse.eye(m.size) - beta * laplacian_matrix(m)).tocsc()
            if method == "lu":
                self._lu = scipy.sparse.linalg.splu(self._matrix)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.alpha * x - self.beta * laplacian_array(self.mesh, x)

    def solve(self, b: np.ndarray) -> np.ndarray:
        shape = b.shape
        if self.method == "direct" and self.mesh.dim == 2:
            bb = b.reshape(self.mesh.shape)
            x = scipy.fft.idstn(scipy.fft.dstn(bb, type=1) / self._symbol, type=1)
            return x.reshape(shape)
        flat = b.reshape(-1)
        if self.method == "cg":
            x, info = scipy.sparse.linalg.cg(self._matrix, flat, x0=flat / max(self.alpha, 1e-300),
                                             rtol=self.rtol, atol=0.0, maxiter=20 * flat.size)
            if info != 0:
                raise LinearSolveError(f"conjugate gradients did not converge (info={info})")
        elif self.method == "lu":
            x = self._lu.solve(flat)
        else:
            x = scipy.linalg.cho_solve_banded((self._chol, False), flat, check_finite=False)
        return x.reshape(shape)


# --- snapshot files ---

def write_snapshot(path: str | Path, u: GridFunction) -> None:
    """Write one row per node: coordinates then value, 17 significant digits."""
    m = u.mesh
    names = ["x", "y"][: m.dim]
    coords = [c.reshape(-1) for c in m.coordinates()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["value"])
        for row in zip(*coords, u.values.reshape(-1)):
            w.writerow([f"{float(v):.17g}" for v in row])


def read_snapshot(path: str | Path, m: Mesh) -> GridFunction:
    """Read a snapshot written by :func:`write_snapshot` back onto mesh ``m``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "value" or len(header) != m.dim + 1:
        raise ValueError(f"{path}: not a {m.dim}D snapshot file")
    if len(body) != m.size:
        raise MeshMismatchError(f"{path}: {len(body)} nodes, mesh has {m.size}")
    data = np.array([[float(x) for x in r] for r in body])
    expected = np.stack([c.reshape(-1) for c in m.coordinates()], axis=1)
    if not np.allclose(data[:, :-1], expected, rtol=0, atol=1e-9 * max(1.0, np.abs(expected).max())):
        raise MeshMismatchError(f"{path}: node coordinates do not match the mesh")
    return GridFunction(m, data[:, -1])
