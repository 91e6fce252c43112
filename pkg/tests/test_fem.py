import math

import numpy as np
import pytest
from scipy import sparse

from wilflow.errors import ConflictingConstraint, SingularMatrix, UnsupportedDegree
from wilflow.fem import (
    DofMap,
    SparseLinearSystem,
    SurfaceGradientTable,
    assemble_antisym,
    assemble_mass,
    assemble_normal_coupling_lumped,
    assemble_stiffness,
    assemble_weighted_mass,
    eliminate_dirichlet,
    exact_inner_product,
    interpolate,
    lumped_inner_product,
    lumped_masses,
    quadrature_rule,
    solve_sparse,
)
from wilflow.generators import circle, circle_nonuniform, disk, sphere
from wilflow.mesh import ElementField, NodalField, SimplicialSurface, vertex_normals


def unit_segment() -> SimplicialSurface:
    return SimplicialSurface.from_arrays([[0.0, 0.0], [1.0, 0.0]], [[0, 1]])


def unit_triangle() -> SimplicialSurface:
    return SimplicialSurface.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def interval(n: int) -> SimplicialSurface:
    x = np.linspace(0.0, 1.0, n + 1)
    j = np.arange(n)
    points = np.column_stack([x, np.zeros_like(x)])
    return SimplicialSurface.from_arrays(points, np.column_stack([j, j + 1]))


@pytest.mark.parametrize("degree", range(6))
def test_segment_rules_integrate_monomials(degree):
    rule = quadrature_rule(2, degree)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    for k in range(rule.degree + 1):
        value = float(rule.weights @ rule.points[:, 1] ** k)
        assert value == pytest.approx(1.0 / (k + 1), abs=1e-14)


@pytest.mark.parametrize("degree", range(5))
def test_triangle_rules_integrate_monomials(degree):
    rule = quadrature_rule(3, degree)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    x, y = rule.points[:, 1], rule.points[:, 2]
    for a in range(rule.degree + 1):
        for b in range(rule.degree + 1 - a):
            exact = 2.0 * math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert float(rule.weights @ (x**a * y**b)) == pytest.approx(exact, abs=1e-14)


def test_minimal_rule_selected_and_limits():
    assert quadrature_rule(3, 3).degree == 4
    assert len(quadrature_rule(3, 4).weights) == 6
    assert len(quadrature_rule(2, 4).weights) == 3
    with pytest.raises(UnsupportedDegree):
        quadrature_rule(3, 5)
    with pytest.raises(UnsupportedDegree):
        quadrature_rule(2, 6)


def test_surface_gradient_table_properties():
    mesh = sphere(2)
    table = SurfaceGradientTable.build(mesh)
    assert table.sum_error() < 1e-12
    assert table.tangency_error(mesh.element_normals) < 1e-13 * np.abs(table.gradients).max()


def test_lumped_inner_products():
    mesh = sphere(1)
    ones = np.ones(mesh.num_vertices)
    assert lumped_inner_product(mesh, ones, ones) == pytest.approx(mesh.measures.sum(), rel=1e-14)
    assert lumped_inner_product(unit_segment(), np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.5
    hat = np.array([1.0, 0.0, 0.0])
    assert lumped_inner_product(unit_triangle(), hat, hat) == pytest.approx(1.0 / 6.0)


def test_exact_inner_products():
    seg = unit_segment()
    hat = np.array([1.0, 0.0])
    square = exact_inner_product(seg, lambda p: interpolate(seg, hat, p) ** 2, 2)
    assert square == pytest.approx(1 / 3)
    fourth = exact_inner_product(seg, lambda p: interpolate(seg, hat, p) ** 4, 4)
    assert fourth == pytest.approx(1 / 5)
    tri = unit_triangle()
    h0, h1 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    value = exact_inner_product(tri, lambda p: interpolate(tri, h0, p) * interpolate(tri, h1, p), 2)
    assert value == pytest.approx(1 / 24)
    with pytest.raises(UnsupportedDegree):
        exact_inner_product(tri, lambda p: interpolate(tri, h0, p), 5)


def test_stiffness_examples():
    s = assemble_stiffness(interval(2)).toarray()
    assert s[1, 1] == pytest.approx(4.0)
    local = assemble_stiffness(unit_triangle()).toarray()
    np.testing.assert_allclose(np.diag(local), [1.0, 0.5, 0.5])
    np.testing.assert_allclose(local.sum(axis=1), 0.0, atol=1e-15)


@pytest.mark.parametrize(
    "mesh", [circle_nonuniform(40), sphere(2), disk(2)], ids=["curve", "sphere", "disk"]
)
def test_stiffness_symmetric_with_constant_kernel(mesh):
    s = assemble_stiffness(mesh)
    assert abs(s - s.T).max() < 1e-14 * abs(s).max()
    assert np.abs(s @ np.ones(mesh.num_vertices)).max() <= 1e-12 * abs(s).max()
    eigenvalues = np.linalg.eigvalsh(s.toarray())
    assert eigenvalues.min() > -1e-10


@pytest.mark.parametrize("mesh", [circle_nonuniform(40), sphere(2)], ids=["curve", "sphere"])
def test_lumped_and_exact_row_sums_agree(mesh):
    m = assemble_mass(mesh)
    np.testing.assert_allclose(np.asarray(m.sum(axis=1)).ravel(), lumped_masses(mesh), atol=1e-13)


def test_weighted_mass_with_element_coefficient():
    seg = unit_segment()
    m = assemble_mass(seg).toarray()
    np.testing.assert_allclose(m, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    doubled = assemble_weighted_mass(seg, (ElementField(np.array([2.0])),)).toarray()
    np.testing.assert_allclose(doubled, 2.0 * m)
    with pytest.raises(TypeError):
        assemble_weighted_mass(seg, (np.array([2.0]),))


def _brute_force_weighted_mass(mesh: SimplicialSurface, fields: list[np.ndarray]) -> np.ndarray:
    """Dense per-element Gauss-Legendre integration along each segment."""
    xi, w = np.polynomial.legendre.leggauss(6)
    xi, w = 0.5 * (xi + 1.0), 0.5 * w
    out = np.zeros((mesh.num_vertices, mesh.num_vertices))
    for j, (a, b) in enumerate(mesh.simplices):
        length = np.linalg.norm(mesh.vertices[b] - mesh.vertices[a])
        for s, weight in zip(xi, w):
            phi = {a: 1.0 - s, b: s}
            c = 1.0
            for f in fields:
                c *= (1.0 - s) * f[a] + s * f[b]
            for p in (a, b):
                for q in (a, b):
                    out[p, q] += length * weight * c * phi[p] * phi[q]
    return out


def test_weighted_mass_matches_brute_force_oracle():
    mesh = circle_nonuniform(12)
    rng = np.random.default_rng(7)
    kappa = rng.normal(size=mesh.num_vertices)
    kappa_bar = -0.5
    fields = (NodalField(kappa - kappa_bar), NodalField(kappa))
    assembled = assemble_weighted_mass(mesh, fields).toarray()
    oracle = _brute_force_weighted_mass(mesh, [kappa - kappa_bar, kappa])
    np.testing.assert_allclose(assembled, oracle, rtol=1e-12, atol=1e-13)


def test_antisymmetric_form():
    seg = unit_segment()
    c = 0.7
    a = assemble_antisym(seg, np.array([[c, 0.0], [c, 0.0]])).toarray()
    assert a[0, 1] == pytest.approx(c)
    assert a[1, 0] == pytest.approx(-c)

    mesh = sphere(2)
    assert assemble_antisym(mesh, np.zeros((mesh.num_vertices, 3))).count_nonzero() == 0
    rng = np.random.default_rng(11)
    eta = rng.normal(size=(mesh.num_vertices, 3))
    a = assemble_antisym(mesh, eta)
    assert (a + a.T).count_nonzero() == 0
    for _ in range(3):
        x = rng.normal(size=mesh.num_vertices)
        assert abs(x @ (a @ x)) <= 1e-12 * np.abs(x).max() ** 2 * abs(a).sum()


def test_normal_coupling_flat_and_polygon():
    flat = disk(1)
    k = flat.num_vertices
    n = assemble_normal_coupling_lumped(flat).toarray().reshape(k, k, 3)
    masses = lumped_masses(flat)
    diagonal = np.array([n[q, q] for q in range(flat.num_vertices)])
    np.testing.assert_allclose(diagonal[:, 2], masses)
    np.testing.assert_allclose(diagonal[:, :2], 0.0)

    for mesh in (sphere(1), circle(17)):
        coupling = assemble_normal_coupling_lumped(mesh)
        action = (coupling.T @ np.ones(mesh.num_vertices)).reshape(mesh.num_vertices, -1)
        expected = lumped_masses(mesh)[:, None] * vertex_normals(mesh)
        np.testing.assert_allclose(action, expected, atol=1e-14)


def test_eliminate_all_dofs_returns_boundary_data():
    dofs = DofMap.of(("u", 3, 1))
    system = SparseLinearSystem.full(sparse.identity(3, format="csr"), np.zeros(3), dofs)
    reduced = eliminate_dirichlet(system, [("u", q, float(q) + 1.0) for q in range(3)])
    assert reduced.num_free == 0
    np.testing.assert_array_equal(reduced.expand(solve_sparse(reduced)), [1.0, 2.0, 3.0])


def test_poisson_with_dirichlet_values_is_linear():
    mesh = interval(8)
    dofs = DofMap.of(("u", mesh.num_vertices, 1))
    system = SparseLinearSystem.full(assemble_stiffness(mesh), np.zeros(mesh.num_vertices), dofs)
    reduced = eliminate_dirichlet(system, [("u", 0, 0.0), ("u", 8, 1.0)])
    assert reduced.num_free == 7
    u = reduced.expand(solve_sparse(reduced))
    np.testing.assert_allclose(u, np.linspace(0.0, 1.0, 9), atol=1e-13)
    assert u[0] == 0.0 and u[8] == 1.0


def test_vector_constraints_and_conflicts():
    dofs = DofMap.of(("x", 2, 3), ("k", 2, 1))
    assert dofs.size == 8
    assert dofs.index("x", 1, 2) == 5
    assert dofs.index("k", 1) == 7
    system = SparseLinearSystem.full(sparse.identity(8, format="csr"), np.arange(8.0), dofs)
    reduced = eliminate_dirichlet(system, [("x", 0, [1.0, 2.0, 3.0]), ("k", 0, 9.0), ("k", 0, 9.0)])
    assert reduced.num_free == 4
    np.testing.assert_array_equal(reduced.expand(solve_sparse(reduced)), [1, 2, 3, 3, 4, 5, 9, 7])
    with pytest.raises(ConflictingConstraint):
        eliminate_dirichlet(system, [("k", 0, 1.0), ("k", 0, 2.0)])


def test_solve_sparse_examples():
    dofs = DofMap.of(("u", 2, 1))
    ident = SparseLinearSystem.full(sparse.identity(2, format="csr"), np.array([3.0, -1.0]), dofs)
    np.testing.assert_array_equal(solve_sparse(ident), [3.0, -1.0])
    matrix = sparse.csr_matrix([[2.0, 1.0], [1.0, 2.0]])
    small = SparseLinearSystem.full(matrix, np.array([3.0, 3.0]), dofs)
    np.testing.assert_allclose(solve_sparse(small), [1.0, 1.0], rtol=1e-14)


def test_solve_sparse_matches_dense_oracle():
    rng = np.random.default_rng(5)
    b = rng.normal(size=(100, 100))
    a = b @ b.T + 100.0 * np.eye(100)
    rhs = rng.normal(size=100)
    system = SparseLinearSystem.full(sparse.csr_matrix(a), rhs, DofMap.of(("u", 100, 1)))
    expected = np.linalg.solve(a, rhs)
    np.testing.assert_allclose(solve_sparse(system), expected, rtol=1e-10, atol=1e-12)


def test_singular_matrix_is_reported():
    dofs = DofMap.of(("u", 2, 1))
    matrix = sparse.csr_matrix([[1.0, 1.0], [1.0, 1.0]])
    system = SparseLinearSystem.full(matrix, np.array([1.0, 0.0]), dofs)
    with pytest.raises(SingularMatrix):
        solve_sparse(system)


def test_matrix_dump(tmp_path):
    dofs = DofMap.of(("u", 2, 1))
    system = SparseLinearSystem.full(sparse.identity(2, format="csr"), np.ones(2), dofs)
    solve_sparse(system, dump_dir=tmp_path, label="stage_check")
    assert (tmp_path / "stage_check.mtx").read_text().startswith("%%MatrixMarket")
