import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypstab.core import (
    CoefficientSet,
    StateField,
    build_grid,
    cell_gradient,
    divergence_a,
    materialize,
    random_smooth_state,
    sample_field,
)
from hypstab.errors import NonCharacteristicError, ValidationError


def test_grid_counts_2d():
    g = build_grid([(0, 1), (0, 1)], [4, 4])
    assert g.n_cells == 16
    assert g.spacing == pytest.approx((0.25, 0.25))
    assert g.boundary_face_count == 16


def test_grid_1d():
    g = build_grid([(0, 2)], [8])
    assert g.dim == 1 and g.spacing == pytest.approx((0.25,))
    assert g.boundary_face_count == 2


def test_grid_3d_faces():
    g = build_grid([(0, 1)] * 3, [2, 2, 2])
    assert g.n_cells == 8
    assert g.boundary_face_count == 24


@pytest.mark.parametrize(
    "corners, cells",
    [([(0, 1)], [1]), ([(1, 0)], [4]), ([(0, 1), (0, 1)], [4])],
)
def test_grid_rejects_bad_input(corners, cells):
    with pytest.raises(ValidationError):
        build_grid(corners, cells)


def test_sample_field_examples():
    assert np.all(sample_field(build_grid([(0, 1), (0, 1)], [3, 3]), lambda x: 0.0) == 0)
    g1 = build_grid([(0, 1)], [2])
    assert sample_field(g1, lambda x: x[0]) == pytest.approx([0.25, 0.75])
    g2 = build_grid([(0, 1), (0, 1)], [2, 2])
    assert sorted(sample_field(g2, lambda x: x[0] + x[1]).ravel()) == pytest.approx([0.5, 1.0, 1.0, 1.5])


def test_sample_field_rejects_nonfinite():
    g = build_grid([(0, 1)], [4])
    with pytest.raises(ValidationError), np.errstate(divide="ignore"):
        sample_field(g, lambda x: 1.0 / (x[0] - 0.375))


@settings(max_examples=30, deadline=None)
@given(
    lo=st.lists(st.floats(-5, 5), min_size=1, max_size=3),
    ext=st.lists(st.floats(0.1, 4), min_size=3, max_size=3),
    cells=st.lists(st.integers(2, 7), min_size=3, max_size=3),
)
def test_faces_cover_boundary(lo, ext, cells):
    d = len(lo)
    g = build_grid([(a, a + e) for a, e in zip(lo, ext[:d])], cells[:d])
    area = sum(s.area * s.face_count for s in g.sides())
    assert area == pytest.approx(g.surface_area(), rel=1e-12)
    # every face centre lies on exactly one side plane
    for s in g.sides():
        coord = s.centers[s.axis]
        plane = g.upper[s.axis] if s.high else g.lower[s.axis]
        assert np.allclose(coord, plane)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_sample_readback_identity(c):
    g = build_grid([(0, 1), (0, 2)], [5, 6])
    f = lambda x: c[0] + c[1] * x[0] + c[2] * np.sin(x[1])
    vals = sample_field(g, f)
    x = g.centers()
    for idx in [(0, 0), (4, 5), (2, 3)]:
        assert vals[idx] == f(x[(slice(None),) + idx])


def test_divergence_examples():
    g = build_grid([(0, 1), (0, 1)], [6, 6])
    c0 = CoefficientSet.from_functions(g, lambda x: [1.0, 0.0])
    assert np.allclose(divergence_a(c0, 0), 0.0)
    c1 = CoefficientSet.from_functions(g, lambda x: [1 + x[0], 1.0])
    assert np.allclose(divergence_a(c1, 0), 1.0, atol=1e-13)


def test_divergence_quadratic_second_order():
    g = build_grid([(0, 1), (0, 1)], [8, 8])
    c = CoefficientSet.from_functions(g, lambda x: [x[0] ** 2, 0.0 * x[0] + 1e-3])
    x = g.centers()
    div = divergence_a(c, 0)
    h = g.spacing[0]
    assert np.max(np.abs(div[1:-1] - 2 * x[0][1:-1])) <= 2 * h**2


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_divergence_affine_exact(c):
    g = build_grid([(0, 1), (0, 1)], [7, 5])
    vel = lambda x: [1.5 + c[0] * x[0] + c[1] * x[1] + 0 * x[0], 3.0 + c[2] * x[0] + c[3] * x[1]]
    coeffs = CoefficientSet.from_functions(g, vel)
    assert np.allclose(divergence_a(coeffs, 0), c[0] + c[3], atol=1e-11)


def test_analytic_divergence_preferred():
    g = build_grid([(0, 1), (0, 1)], [4, 4])
    c = CoefficientSet.from_functions(g, lambda x: [1 + x[0] ** 3, 1.0], divergence_fn=lambda x: 3 * x[0] ** 2)
    assert c.has_analytic_divergence
    assert np.allclose(divergence_a(c, 0), 3 * g.centers()[0] ** 2)


def test_vanishing_velocity_rejected():
    g = build_grid([(0, 1), (0, 1)], [4, 4])
    with pytest.raises(NonCharacteristicError):
        CoefficientSet.from_functions(g, lambda x: [0.0, 0.0])
    with pytest.raises(NonCharacteristicError):
        # vanishes at x1 = 0.375, a cell centre
        CoefficientSet.from_functions(g, lambda x: [x[0] - 0.375, 0.0])


def test_coefficient_interpolation_matches_functions():
    g = build_grid([(0, 1), (0, 1)], [16, 16])
    f = lambda x: [1 + x[0], 2 + x[1]]
    analytic = CoefficientSet.from_functions(g, f)
    sampled = CoefficientSet(g, analytic.velocity, analytic.coupling)
    pts = np.array([[0.3, 0.51], [0.7, 0.2]])
    assert np.allclose(sampled.velocity_at(pts), analytic.velocity_at(pts), atol=1e-12)


def test_materialize_broadcasts_scalars():
    out = materialize([1.0, np.arange(3.0)], (3,))
    assert out.shape == (2, 3) and np.all(out[0] == 1.0)


def test_cell_gradient_exact_for_quadratics():
    g = build_grid([(0, 1)], [9])
    x = g.centers()[0]
    assert np.allclose(cell_gradient(x**2, g, 0), 2 * x, atol=1e-12)


def test_state_field_shape_checks():
    g = build_grid([(0, 1), (0, 1)], [4, 4])
    with pytest.raises(ValidationError):
        StateField(g, np.zeros((2, 4, 3)))
    with pytest.raises(ValidationError):
        StateField(g, np.full((1, 4, 4), np.nan))
    w = random_smooth_state(g, 3, seed=5)
    assert w.values.shape == (3, 4, 4)
    assert np.array_equal(w.values, random_smooth_state(g, 3, seed=5).values)
