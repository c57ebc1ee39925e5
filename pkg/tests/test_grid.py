import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualgrid.grid import (UNKNOWN_PRIOR, GridMap, GridSpec, cell_to_world, read_ppm,
                           render_snapshot, shift_grid, world_to_cell, write_ppm)

SPEC = GridSpec()


def ref_cell(x, y, spec=SPEC):
    # exact rational reference for the half-open cell rule
    res = Fraction(spec.resolution_m)
    i = math.floor((Fraction(x) + Fraction(spec.origin_offset[0])) / res)
    j = math.floor((Fraction(y) + Fraction(spec.origin_offset[1])) / res)
    nx, ny = spec.shape
    return (i, j) if 0 <= i < nx and 0 <= j < ny else None


def test_default_shape():
    assert SPEC.shape == (400, 50)
    assert SPEC.cell_count == 20000


def test_center_cell():
    assert world_to_cell((0.0, 0.0), SPEC) == (200, 25)


def test_out_of_bounds():
    assert world_to_cell((1000.0, 0.0), SPEC) is None
    assert world_to_cell((0.0, -12.6), SPEC) is None


@pytest.mark.parametrize("pos", [
    (0.25, 0.25), (0.0, 0.0), (-0.25, 0.0), (0.5, 0.0), (0.4999, 0.4999), (-0.5, -0.5),
    (-100.0, -12.5), (99.75, 12.25), (100.0, 0.0), (0.0, 12.5), (-100.0001, 0.0),
])
def test_boundary_cases_match_reference(pos):
    assert world_to_cell(pos, SPEC) == ref_cell(*pos)


def test_quarter_cell_shares_center_cell():
    assert world_to_cell((0.25, 0.25), SPEC) == world_to_cell((0.0, 0.0), SPEC)


@settings(max_examples=300, deadline=None)
@given(st.floats(-120, 120), st.floats(-20, 20))
def test_world_to_cell_matches_reference(x, y):
    # skip points within float noise of a cell edge
    for v, off in ((x, 100.0), (y, 12.5)):
        r = (v + off) / 0.5
        if abs(r - round(r)) < 1e-9:
            return
    assert world_to_cell((x, y), SPEC) == ref_cell(x, y)


@given(st.integers(0, 399), st.integers(0, 49))
def test_cell_center_round_trip(i, j):
    assert world_to_cell(cell_to_world((i, j), SPEC), SPEC) == (i, j)


def test_grid_map_starts_at_prior():
    g = GridMap.create(SPEC, (3.0, -2.0, 0.1))
    assert g.simplex_error() == 0.0
    assert np.all(g.p_empty == UNKNOWN_PRIOR[0]) and np.all(g.p_dynamic == 0.0)
    # flat_index agrees with world_to_cell relative to the ego position
    pts = np.array([[3.0, -2.0], [50.0, 4.0], [-96.9, -14.4]])
    got = g.flat_index(pts)
    for p, k in zip(pts, got):
        c = world_to_cell((p[0] - 3.0, p[1] + 2.0), SPEC)
        assert k == (-1 if c is None else c[0] * 50 + c[1])


def _marked_grid():
    g = GridMap.create(SPEC)
    rng = np.random.default_rng(0)
    pd = rng.uniform(0.01, 0.5, SPEC.shape)
    g.p_dynamic = pd
    g.p_empty = (1 - pd) / 2
    g.p_static = (1 - pd) / 2
    return g


def test_zero_shift_is_identity():
    g = _marked_grid()
    h = shift_grid(g, g.ego_pose)
    assert np.array_equal(h.p_dynamic, g.p_dynamic)
    assert np.array_equal(h.anchor, g.anchor)


def test_two_cell_shift_moves_content():
    g = _marked_grid()
    h = shift_grid(g, (1.0, 0.0, 0.0))  # +2 cells along x
    assert np.array_equal(h.p_dynamic[:-2], g.p_dynamic[2:])
    for a, v in ((h.p_empty, 0.5), (h.p_static, 0.5), (h.p_dynamic, 0.0)):
        assert np.all(a[-2:] == v)
    assert np.allclose(h.anchor, g.anchor + [1.0, 0.0])
    assert h.simplex_error() < 1e-12


def test_negative_shift_along_y():
    g = _marked_grid()
    h = shift_grid(g, (0.0, -1.5, 0.0))  # -3 cells along y
    assert np.array_equal(h.p_dynamic[:, 3:], g.p_dynamic[:, :-3])
    assert np.all(h.p_dynamic[:, :3] == 0.0)


def test_sub_cell_residual_accumulates():
    g = _marked_grid()
    h = shift_grid(g, (0.15, 0.0, 0.0))
    assert np.array_equal(h.p_dynamic, g.p_dynamic)
    assert h.residual[0] == pytest.approx(0.3)
    x = 0.0
    h = g
    for _ in range(10):
        x += 0.15
        h = shift_grid(h, (x, 0.0, 0.0))
    assert np.array_equal(h.p_dynamic[:-3], g.p_dynamic[3:])
    assert abs(h.residual[0]) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=6))
def test_shifts_compose(steps):
    # a chain of shifts lands on the same window as one direct shift; it can
    # only lose content that left the window on the way
    g = _marked_grid()
    h = g
    x = y = 0.0
    for dx, dy in steps:
        x += dx
        y += dy
        h = shift_grid(h, (x, y, 0.0))
    direct = shift_grid(g, (x, y, 0.0))
    assert np.allclose(h.anchor, direct.anchor)
    kept = h.p_dynamic != 0.0
    assert np.array_equal(h.p_dynamic[kept], direct.p_dynamic[kept])
    assert np.all(h.residual > -1e-9) and np.all(h.residual < 1.0)
    # the window always covers the ego position within one cell of center
    assert np.all(np.abs(h.anchor + [100.0, 12.5] - [x, y]) <= 0.5 + 1e-9)


def test_shift_rejects_nan():
    with pytest.raises(ValueError):
        shift_grid(_marked_grid(), (np.nan, 0.0, 0.0))


def test_snapshot_ppm_round_trip(tmp_path):
    g = _marked_grid()
    g.p_dynamic[10, 10] = 0.9
    g.p_empty[10, 10] = g.p_static[10, 10] = 0.05
    img = render_snapshot(g)
    assert img.shape == (50, 400, 3)
    write_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_bad_spec():
    with pytest.raises(ValueError):
        GridSpec(length_m=10.2, resolution_m=0.5)
