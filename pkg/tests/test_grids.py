"""Measure algebra: boxes, lattice densities, atoms, and the BL metric."""

import math

import numpy as np
import pytest

from mesogas.grids import (AtomicMeasure, Box, GridMeasure, bl_distance,
                           box_mass, deposit, dilate, entropy, load_measure,
                           mass, measure_from_json, measure_to_json,
                           relative_entropy, resample, restrict, save_measure)


def test_box_volume_and_strict_membership():
    box = Box.cube(np.zeros(3), 1.0)
    assert box.volume == 8.0
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.999, -0.999, 0.0]])
    inside = box.contains(pts)
    assert inside.tolist() == [True, False, True]


def test_box_scaled_and_shrunk():
    box = Box(np.array([1.0, -2.0]), np.array([0.5, 2.0]))
    assert np.allclose(box.scaled(2.0).center, [2.0, -4.0])
    assert np.allclose(box.scaled(2.0).half_width, [1.0, 4.0])
    assert np.allclose(box.shrunk(0.25).half_width, [0.25, 1.75])
    with pytest.raises(ValueError):
        Box(np.zeros(2), np.array([1.0, 0.0]))


def test_uniform_mass_is_density_times_volume():
    m = GridMeasure.uniform(Box.cube(np.zeros(3), 1.0), 8, 1.0)
    assert mass(m) == pytest.approx(8.0, rel=1e-14)


def test_restriction_keeps_inner_mass():
    big = GridMeasure.uniform(Box.cube(np.zeros(3), 2.0), 16, 1.0)
    inner = restrict(big, Box.cube(np.zeros(3), 1.0))
    assert mass(inner) == pytest.approx(8.0, rel=1e-12)


def test_dilation_scales_mass_but_not_values():
    rng = np.random.default_rng(3)
    m = GridMeasure(Box.cube(np.zeros(3), 1.0), 4, rng.uniform(0, 1, (4, 4, 4)))
    for x in (0.5, 2.0, 3.7):
        mx = dilate(m, x)
        assert mass(mx) == pytest.approx(x ** 3 * mass(m), rel=1e-12)
        assert np.array_equal(mx.density, m.density)
        assert np.allclose(mx.box.half_width, x * m.box.half_width)


def test_dilation_of_atoms_scales_weight():
    a = AtomicMeasure(np.array([[0.1, 0.2, 0.3], [-0.4, 0.0, 0.5]]), 0.5)
    ax = dilate(a, 2.0)
    assert ax.weight == pytest.approx(0.5 * 8.0)
    assert np.allclose(ax.points, 2.0 * a.points)


def test_entropy_scaling_under_dilation():
    """ent[mu^x] = x^d ent[mu] with value-preserving dilation; dividing the
    density by x^d instead subtracts mass * d log x."""
    rng = np.random.default_rng(11)
    m = GridMeasure(Box.cube(np.zeros(3), 1.0), 5,
                    rng.uniform(0.1, 2.0, (5, 5, 5)))
    x = 1.9
    assert entropy(dilate(m, x)) == pytest.approx(x ** 3 * entropy(m),
                                                  rel=1e-12)
    normalized = dilate(m, x) * (x ** -3)
    assert entropy(normalized) == pytest.approx(
        entropy(m) - mass(m) * 3 * math.log(x), rel=1e-12)


def test_entropy_rejects_negative_density():
    m = GridMeasure(Box.cube(np.zeros(3), 1.0), 2,
                    -np.ones((2, 2, 2)), signed=True)
    with pytest.raises(ValueError):
        entropy(m)


def test_relative_entropy_reference_must_cover_support():
    box = Box.cube(np.zeros(3), 1.0)
    m = GridMeasure.uniform(box, 4, 1.0)
    ref = m.with_density(np.where(m.cell_centers()[:, 0].reshape(4, 4, 4) > 0,
                                  1.0, 0.0))
    assert relative_entropy(m, ref) == math.inf
    assert relative_entropy(m, m) == pytest.approx(0.0, abs=1e-14)


def test_relative_entropy_matches_direct_sum():
    rng = np.random.default_rng(8)
    box = Box.cube(np.zeros(3), 1.0)
    a = GridMeasure(box, 4, rng.uniform(0.1, 1.0, (4, 4, 4)))
    b = GridMeasure(box, 4, rng.uniform(0.1, 1.0, (4, 4, 4)))
    dv = a.cell_volume
    direct = float(np.sum(a.density * np.log(a.density / b.density)) * dv)
    assert relative_entropy(a, b) == pytest.approx(direct, rel=1e-12)


def test_box_mass_exact_overlap():
    m = GridMeasure.uniform(Box.cube(np.zeros(3), 1.0), 10, 2.0)
    for hw in (0.3, 0.55, 1.0, 1.7):
        got = box_mass(m, Box.cube(np.zeros(3), hw))
        want = 2.0 * (2.0 * min(hw, 1.0)) ** 3
        assert got == pytest.approx(want, rel=1e-12)


def test_box_mass_varies_smoothly_unlike_restrict():
    rng = np.random.default_rng(5)
    m = GridMeasure(Box.cube(np.zeros(3), 1.0), 8,
                    rng.uniform(0.5, 1.5, (8, 8, 8)))
    hws = np.linspace(0.3, 0.9, 25)
    vals = np.array([box_mass(m, Box.cube(np.zeros(3), h)) for h in hws])
    assert np.all(np.diff(vals) > 0)


def test_resample_preserves_uniform_values():
    m = GridMeasure.uniform(Box.cube(np.zeros(3), 1.0), 8, 3.0)
    r = resample(m, Box.cube(np.zeros(3), 0.5), 4)
    assert np.allclose(r.density, 3.0)


def test_deposit_preserves_inside_mass_and_drops_outside():
    like = GridMeasure.zeros(Box.cube(np.zeros(3), 1.0), 4)
    pts = np.array([[0.0, 0.0, 0.0], [0.3, -0.2, 0.9], [5.0, 0.0, 0.0]])
    dep = deposit(AtomicMeasure(pts, 0.25), like)
    assert mass(dep) == pytest.approx(0.5, rel=1e-12)


def test_bl_distance_two_unit_atoms():
    """For point masses the optimal test function gives min(|x - y|, 2)."""
    for r in (0.5, 1.5, 3.0):
        a = AtomicMeasure(np.array([[0.0, 0.0, 0.0]]))
        b = AtomicMeasure(np.array([[r, 0.0, 0.0]]))
        assert bl_distance(a, b) == pytest.approx(min(r, 2.0), rel=1e-9)


def test_bl_distance_identity_and_symmetry():
    rng = np.random.default_rng(21)
    box = Box.cube(np.zeros(3), 1.0)
    a = GridMeasure(box, 3, rng.uniform(0, 1, (3, 3, 3)))
    b = GridMeasure(box, 3, rng.uniform(0, 1, (3, 3, 3)))
    assert bl_distance(a, a) == pytest.approx(0.0, abs=1e-9)
    assert bl_distance(a, b) == pytest.approx(bl_distance(b, a), rel=1e-9)


def test_bl_distance_bounded_by_total_mass():
    rng = np.random.default_rng(22)
    box = Box.cube(np.zeros(3), 1.0)
    for _ in range(5):
        a = GridMeasure(box, 3, rng.uniform(0, 1, (3, 3, 3)))
        b = GridMeasure(box, 3, rng.uniform(0, 1, (3, 3, 3)))
        assert bl_distance(a, b) <= mass(a) + mass(b) + 1e-9


def test_bl_distance_site_cap():
    rng = np.random.default_rng(4)
    box = Box.cube(np.zeros(3), 1.0)
    a = GridMeasure(box, 20, rng.uniform(0.1, 1.0, (20, 20, 20)))
    b = GridMeasure(box, 10, rng.uniform(0.1, 1.0, (10, 10, 10)))
    with pytest.raises(ValueError):
        bl_distance(a, b, max_sites=100)


def test_measure_json_roundtrip(tmp_path):
    rng = np.random.default_rng(31)
    m = GridMeasure(Box.cube(np.zeros(3), 1.0), 3, rng.uniform(0, 1, (3, 3, 3)))
    back = measure_from_json(measure_to_json(m))
    assert isinstance(back, GridMeasure)
    assert np.allclose(back.density, m.density)

    a = AtomicMeasure(rng.uniform(-1, 1, (6, 3)), 0.125)
    path = tmp_path / "atoms.json"
    save_measure(a, str(path))
    back = load_measure(str(path))
    assert isinstance(back, AtomicMeasure)
    assert back.weight == pytest.approx(0.125)
    assert np.allclose(back.points, a.points)


def test_signed_measures_add_and_subtract():
    box = Box.cube(np.zeros(3), 1.0)
    a = GridMeasure.uniform(box, 4, 1.0)
    b = GridMeasure.uniform(box, 4, 0.25)
    diff = a - b
    assert diff.signed
    assert mass(diff) == pytest.approx(6.0, rel=1e-12)
    with pytest.raises(ValueError):
        a + GridMeasure.uniform(Box.cube(np.zeros(3), 2.0), 4, 1.0)
