import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pwlab.mesh import (GridFunction, MeshMismatchError, ShiftedSolver, apply_laplacian,
                        build_mesh, dirichlet_eigenvalue, grad_norm_sq, inner_l2,
                        integrate_power, read_snapshot, write_snapshot)

PI = np.pi


def unit_square(n=63):
    return build_mesh(2, [(0, 1), (0, 1)], [n, n])


def test_build_mesh_interval(line):
    assert line.h == (PI / 1024,)
    assert line.size == 1023
    assert line.measure == pytest.approx(PI)


def test_build_mesh_square():
    m = unit_square()
    assert m.h == (1 / 64, 1 / 64)
    assert m.size == 3969
    assert m.quad_weight == 1 / 64**2


@pytest.mark.parametrize("args", [
    (1, [(0, 0)], [100]),
    (1, [(1, 0)], [100]),
    (3, [(0, 1)] * 3, [5] * 3),
    (1, [(0, 1)], [2]),
    (2, [(0, 1)], [5, 5]),
])
def test_build_mesh_rejects(args):
    with pytest.raises(ValueError):
        build_mesh(*args)


def test_measure_matches_node_count_up_to_boundary_cells(line):
    # nodes * h = |Omega| - h: one missing cell
    assert line.measure - line.quad_weight * line.size == pytest.approx(line.h[0])


def test_grid_function_rejects_nonfinite(line):
    v = np.zeros(line.shape)
    v[3] = np.nan
    with pytest.raises(ValueError):
        GridFunction(line, v)


def test_grid_function_is_read_only(sine):
    with pytest.raises(ValueError):
        sine.values[0] = 1.0


def test_laplacian_sine(line, sine):
    err = np.abs(apply_laplacian(line, sine).values + sine.values).max()
    h = line.h[0]
    assert err <= h**2 / 12 * 1.01


def test_laplacian_zero(line):
    assert apply_laplacian(line, line.zeros()).is_zero()


def test_laplacian_square_eigenfunction():
    errs = []
    for n in (31, 63):
        m = unit_square(n)
        u = m.interpolate(lambda x, y: np.sin(PI * x) * np.sin(PI * y))
        errs.append(np.abs(apply_laplacian(m, u).values + 2 * PI**2 * u.values).max())
    assert errs[1] <= 2 * PI**4 / 12 * (1 / 64) ** 2
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_mesh_mismatch(line, sine):
    other = build_mesh(1, [(0, PI)], [511])
    with pytest.raises(MeshMismatchError):
        inner_l2(line, sine, other.interpolate(np.sin))
    with pytest.raises(MeshMismatchError):
        apply_laplacian(other, sine)
    with pytest.raises(MeshMismatchError):
        sine + other.zeros()


def test_inner_l2(line, sine):
    assert inner_l2(line, sine, sine) == pytest.approx(PI / 2, abs=1e-4)
    assert inner_l2(line, sine, line.zeros()) == 0.0
    assert abs(inner_l2(line, sine, line.interpolate(lambda x: np.sin(2 * x)))) <= 1e-4


def test_integrate_power(line, sine):
    assert integrate_power(line, sine, 4) == pytest.approx(3 * PI / 8, abs=1e-3)
    assert integrate_power(line, sine, 2) == pytest.approx(PI / 2, abs=1e-4)
    assert integrate_power(line, line.zeros(), 3.7) == 0.0
    with pytest.raises(ValueError):
        integrate_power(line, sine, 0.5)


def test_grad_norm_sq(line, sine):
    assert grad_norm_sq(line, sine) == pytest.approx(PI / 2, abs=1e-3)
    assert grad_norm_sq(line, line.zeros()) == 0.0
    lhs = grad_norm_sq(line, sine)
    rhs = inner_l2(line, sine, -apply_laplacian(line, sine))
    assert abs(lhs - rhs) <= 1e-10 * abs(rhs)


def test_discrete_poincare_is_sharp_on_sine(line, sine):
    lam1 = dirichlet_eigenvalue(line)
    assert lam1 == pytest.approx(4 / line.h[0] ** 2 * np.sin(PI * line.h[0] / (2 * PI)) ** 2)
    assert grad_norm_sq(line, sine) == pytest.approx(lam1 * inner_l2(line, sine, sine), rel=1e-12)


def test_quadrature_order():
    errs = []
    for n in (255, 511, 1023):
        m = build_mesh(1, [(0, PI)], [n])
        errs.append(abs(integrate_power(m, m.interpolate(np.sin), 4) - 3 * PI / 8)
                    + abs(grad_norm_sq(m, m.interpolate(np.sin)) - PI / 2))
    assert errs[0] / errs[1] >= 3.5
    assert errs[1] / errs[2] >= 3.5


small_1d = build_mesh(1, [(0.0, 2.0)], [17])
small_2d = build_mesh(2, [(0.0, 1.0), (-1.0, 2.0)], [7, 9])
finite = st.floats(-1e3, 1e3, allow_nan=False)


@st.composite
def grid_pair(draw):
    m = draw(st.sampled_from([small_1d, small_2d]))
    u = draw(arrays(float, m.shape, elements=finite))
    v = draw(arrays(float, m.shape, elements=finite))
    return m, GridFunction(m, u), GridFunction(m, v)


@settings(max_examples=200, deadline=None)
@given(grid_pair())
def test_summation_by_parts(data):
    m, u, _ = data
    lhs = grad_norm_sq(m, u)
    rhs = inner_l2(m, u, -apply_laplacian(m, u))
    scale = m.quad_weight * np.sum(u.values**2) * 4 * sum(1 / h**2 for h in m.h)
    assert abs(lhs - rhs) <= 1e-12 * max(scale, 1e-300)


@settings(max_examples=200, deadline=None)
@given(grid_pair(), finite, finite)
def test_laplacian_linear(data, a, b):
    m, u, v = data
    lhs = apply_laplacian(m, a * u + b * v).values
    rhs = a * apply_laplacian(m, u).values + b * apply_laplacian(m, v).values
    scale = (abs(a) * np.abs(u.values).max() + abs(b) * np.abs(v.values).max()) * 4 * sum(1 / h**2 for h in m.h)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(scale, 1e-300)


@settings(max_examples=200, deadline=None)
@given(grid_pair())
def test_discrete_poincare(data):
    m, u, _ = data
    lam1 = dirichlet_eigenvalue(m)
    l2 = inner_l2(m, u, u)
    assert grad_norm_sq(m, u) >= lam1 * l2 * (1 - 1e-12)


@pytest.mark.parametrize("method", ["direct", "lu", "cg"])
@pytest.mark.parametrize("m", [small_1d, small_2d], ids=["1d", "2d"])
def test_shifted_solver(m, method):
    rng = np.random.default_rng(0)
    b = rng.standard_normal(m.shape)
    S = ShiftedSolver(m, 1.5, 0.25, method=method)
    x = S.solve(b)
    assert np.abs(S.apply(x) - b).max() <= 1e-10 * np.abs(b).max()


def test_shifted_solver_rejects_indefinite(line):
    with pytest.raises(ValueError):
        ShiftedSolver(line, 0.0, 0.0)
    with pytest.raises(ValueError):
        ShiftedSolver(line, 1.0, 1.0, method="gmres")


@pytest.mark.parametrize("m", [small_1d, small_2d], ids=["1d", "2d"])
def test_snapshot_roundtrip(tmp_path, m):
    rng = np.random.default_rng(1)
    u = GridFunction(m, rng.standard_normal(m.shape) * 10.0 ** rng.integers(-30, 30, m.shape))
    path = tmp_path / "snap.csv"
    write_snapshot(path, u)
    back = read_snapshot(path, m)
    assert np.array_equal(back.values, u.values)
    header = path.read_text().splitlines()[0]
    assert header == ("x,value" if m.dim == 1 else "x,y,value")


def test_snapshot_rejects_wrong_mesh(tmp_path):
    path = tmp_path / "snap.csv"
    write_snapshot(path, small_1d.interpolate(np.sin))
    with pytest.raises(MeshMismatchError):
        read_snapshot(path, build_mesh(1, [(0.0, 2.0)], [15]))
    with pytest.raises(MeshMismatchError):
        read_snapshot(path, build_mesh(1, [(0.0, 3.0)], [17]))
    with pytest.raises(ValueError):
        read_snapshot(path, small_2d)
