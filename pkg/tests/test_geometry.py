import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transinv.fields import parse_field
from transinv.geometry import GridError, build_grid, classify_boundary, integrate


def test_1d_cell_centers():
    g = build_grid(0, 1, 4, 1.0, n_steps=4)
    assert np.allclose(g.cell_centers[:, 0], [0.125, 0.375, 0.625, 0.875])
    assert g.dt == 0.25


def test_2d_face_count_and_measure():
    g = build_grid([0, 0], [1, 1], [4, 4], 1.0, n_steps=4)
    assert len(g.faces) == 16
    assert g.faces.areas.sum() == pytest.approx(4.0, abs=1e-14)


@pytest.mark.parametrize("lo,hi,n", [(1, 0, 4), (0, 0, 4), (0, 1, 1)])
def test_bad_grids_rejected(lo, hi, n):
    with pytest.raises(GridError):
        build_grid(lo, hi, n, 1.0, n_steps=4)


def test_steps_from_cfl():
    g = build_grid(0, 1, 64, 1.5, cfl=1.0, speed=[1.0])
    assert g.n_steps == 96
    g = build_grid([0, 0], [1, 1], 32, 2.0, cfl=1.0, speed=[1.0, 0.5])
    assert g.n_steps == 64


def test_unit_normals_and_opposites():
    g = build_grid([0, -1], [2, 1], [3, 5], 1.0, n_steps=2)
    f = g.faces
    assert np.allclose(np.linalg.norm(f.normals, axis=1), 1)
    for ax in range(2):
        lo = f.normals[(f.axis == ax) & (f.side == 0)]
        hi = f.normals[(f.axis == ax) & (f.side == 1)]
        assert np.allclose(lo, -hi)


def test_partition_1d():
    g = build_grid(0, 1, 8, 1.0, n_steps=8)
    p = classify_boundary(g, parse_field("1", 1, vector=True))
    assert g.faces.centers[p.plus, 0].tolist() == [1.0]
    assert g.faces.centers[p.minus, 0].tolist() == [0.0]


def test_partition_2d_oblique_and_characteristic():
    g = build_grid([0, 0], [1, 1], 4, 1.0, n_steps=4)
    p = classify_boundary(g, parse_field("(1, 0.5)", 2))
    c = g.faces.centers
    assert np.all((np.isclose(c[p.plus, 0], 1)) | (np.isclose(c[p.plus, 1], 1)))
    assert np.all((np.isclose(c[p.minus, 0], 0)) | (np.isclose(c[p.minus, 1], 0)))
    assert len(p.characteristic) == 0
    p = classify_boundary(g, parse_field("(1, 0)", 2))
    assert set(g.faces.axis[p.characteristic]) == {1}
    assert len(p.characteristic) == 8


def test_integrate_examples():
    g = build_grid([0, 0], [1, 1], 8, 1.0, n_steps=4)
    assert integrate(g, np.ones(g.size)) == pytest.approx(1.0)
    g = build_grid(0, 1, 256, 1.5, n_steps=384)
    assert integrate(g, np.sin(np.pi * g.cell_centers[:, 0])) == pytest.approx(2 / np.pi, abs=1e-4)
    p = classify_boundary(g, parse_field("1", 1, vector=True))
    val = integrate(g, np.ones((g.n_steps + 1, len(p.plus))), "boundary-time", faces=p.plus)
    assert val == pytest.approx(1.5, abs=1e-14)


def test_integrate_shape_mismatch():
    g = build_grid(0, 1, 8, 1.0, n_steps=4)
    with pytest.raises(ValueError):
        integrate(g, np.ones(7))


def test_midpoint_rule_second_order():
    errs = []
    for n in (16, 32, 64):
        g = build_grid(0, 1, n, 1.0, n_steps=2)
        errs.append(abs(integrate(g, np.exp(g.cell_centers[:, 0])) - (np.e - 1)))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.05)


@settings(max_examples=40, deadline=None)
@given(
    hx=st.floats(-2, 2),
    hy=st.floats(-2, 2),
    n=st.integers(2, 7),
)
def test_partition_is_complete_and_disjoint(hx, hy, n):
    g = build_grid([0, 0], [1, 2], [n, n + 1], 1.0, n_steps=2)
    p = classify_boundary(g, parse_field(f"({hx!r}, {hy!r})", 2))
    allf = np.concatenate([p.plus, p.minus, p.characteristic])
    assert sorted(allf.tolist()) == list(range(len(g.faces)))
    assert np.all(p.flux[p.plus] > p.eps_nu)
    assert np.all(p.flux[p.minus] < -p.eps_nu)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(-3, 3))
def test_quadrature_linear_and_monotone(vals, c):
    g = build_grid(0, 3, 6, 1.0, n_steps=2)
    f = np.array(vals)
    gg = f + abs(c)
    assert integrate(g, c * f + gg) == pytest.approx(c * integrate(g, f) + integrate(g, gg), abs=1e-9)
    assert integrate(g, f) <= integrate(g, gg) + 1e-12
