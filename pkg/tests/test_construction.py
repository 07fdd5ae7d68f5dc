"""Cube tilings, separated placements, and their certificates."""

import math
import warnings

import numpy as np
import pytest

from mesogas import kernels
from mesogas.construction import (ConstructionParams, CubeTiling,
                                  assign_counts, certify, construct,
                                  cube_masses, fit_potential_bound,
                                  place_points, round_counts,
                                  separation_radius, tau_values,
                                  volume_estimate)
from mesogas.grids import AtomicMeasure, Box, GridMeasure, mass

BOX = Box.cube(np.zeros(3), 1.0)


def uniform_target(cells=4):
    return GridMeasure.uniform(BOX, cells, 1.0 / BOX.volume)


def test_tiling_geometry():
    t = CubeTiling.build(BOX, 0.5)
    assert t.count == 64
    assert t.size == pytest.approx(0.5)
    centers = t.centers()
    assert centers.shape == (64, 3)
    idx = t.cube_of(np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]))
    assert idx[0] >= 0 and idx[1] == -1


def test_tiling_requires_divisibility():
    with pytest.raises(ValueError):
        CubeTiling.build(BOX, 0.3)


def test_round_counts_total_and_priority():
    weights = np.array([0.51, 0.29, 0.2])
    counts = round_counts(weights, 10)
    assert counts.sum() == 10
    assert counts.tolist() == [5, 3, 2]
    # the largest fractional parts get the leftover units
    counts = round_counts(np.array([0.55, 0.45]), 1)
    assert counts.tolist() == [1, 0]


def test_assign_counts_follows_target_mass():
    target = uniform_target(4)
    tiling = CubeTiling.build(BOX, 0.5)
    counts = assign_counts(target, 128, tiling.size)
    assert counts.sum() == 128
    assert np.all(counts == 2)


def test_tau_formula():
    eta, sep = 0.5, 0.2
    counts = np.array([0, 1, 8, 27])
    taus = tau_values(counts, eta, sep, 3)
    want = sep * eta * np.array([1.0, 1.0, 0.5, 1.0 / 3.0])
    occupied = counts > 0
    assert np.allclose(taus[occupied], want[occupied])
    assert separation_radius(counts, eta, sep, 3) == pytest.approx(
        sep * eta / 3.0)


def test_place_points_respects_hard_constraints():
    target = uniform_target(4)
    params = ConstructionParams(target=target, N=96, cube_size=0.5,
                                separation=0.25)
    tiling = params.tiling
    counts = assign_counts(target, 96, tiling.size)
    config = place_points(counts, tiling, 0.25, seed=5)
    assert config.count == 96
    assert config.weight == pytest.approx(1.0 / 96)
    taus = tau_values(counts, tiling.size, 0.25, 3)
    tau_min = separation_radius(counts, tiling.size, 0.25, 3)
    assert kernels.min_pairwise_distance(config.points) >= tau_min
    idx = tiling.cube_of(config.points)
    centers = tiling.centers()
    wall = 0.5 * tiling.size - np.max(np.abs(config.points - centers[idx]),
                                      axis=1)
    assert np.all(wall >= taus[idx] - 1e-12)


def test_place_points_is_deterministic():
    target = uniform_target(2)
    tiling = CubeTiling.build(BOX, 1.0)
    counts = assign_counts(target, 40, tiling.size)
    a = place_points(counts, tiling, 0.2, seed=9)
    b = place_points(counts, tiling, 0.2, seed=9)
    assert np.array_equal(a.points, b.points)
    c = place_points(counts, tiling, 0.2, seed=10)
    assert not np.array_equal(a.points, c.points)


def test_packing_rejects_impossible_separation():
    target = uniform_target(2)
    params = ConstructionParams(target=target, N=2000, cube_size=1.0,
                                separation=0.9)
    with pytest.raises(ValueError):
        construct(params, seed=1)


def test_certify_exact_quantization_bl_bound():
    """Placing each cube's points at its center transports mass at most
    half the cube diagonal, and the certificate's BL distance agrees."""
    target = uniform_target(4)
    tiling = CubeTiling.build(BOX, 0.5)
    counts = assign_counts(target, 64, tiling.size)
    config = AtomicMeasure(tiling.centers()[counts > 0], 1.0 / 64)
    report = certify(config, target, 0.5, 0.2)
    assert report.bl_to_target <= 0.5 * math.sqrt(3) / 2 + 1e-9


def test_certify_flags_separation_violation():
    target = uniform_target(2)
    clump = AtomicMeasure(np.full((4, 3), 0.01), 0.25)
    report = certify(clump, target, 1.0, 0.2)
    assert not report.separation_ok


def test_certify_reports_bound_when_constants_given():
    target = uniform_target(4)
    params = ConstructionParams(target=target, N=128, cube_size=0.5,
                                separation=0.3)
    report = construct(params, seed=3, bound_constants=(0.5, 0.1))
    b = report.potential_bound
    assert b is not None
    eta = 0.5
    want = 0.5 * (1.0 / (128 * eta ** 3) + eta) + 0.1 * eta ** 2
    assert b["value"] == pytest.approx(want, rel=1e-12)
    assert b["satisfied"] == (report.max_potential_gap <= b["value"])


def test_fit_potential_bound_envelopes_calibration():
    records = [(64, 0.5, 0.2), (128, 0.5, 0.15), (256, 0.25, 0.1),
               (512, 0.25, 0.08)]
    C, c_lam = fit_potential_bound(records)
    assert C >= 0.0 and c_lam >= 0.0
    for n, e, g in records:
        assert C * (1.0 / (n * e ** 3) + e) + c_lam * e ** 2 >= g - 1e-12
    with pytest.raises(ValueError):
        fit_potential_bound([(64, 0.5, 0.2)])


def test_potential_gap_shrinks_with_cube_size():
    """Finer tilings track the target better while eta stays above N^{-1/3}."""
    target8 = GridMeasure.uniform(BOX, 8, 1.0 / BOX.volume)
    gaps = []
    for eta in (1.0, 0.25):
        params = ConstructionParams(target=target8, N=512, cube_size=eta,
                                    separation=0.3)
        rep = construct(params, seed=7)
        gaps.append(rep.max_potential_gap)
        assert eta > 512.0 ** (-1.0 / 3.0)
    assert gaps[1] < gaps[0]


def test_volume_estimate_anatomy():
    target = uniform_target(4)
    ref = uniform_target(4)
    ve = volume_estimate(target, ref, N=500, cube_size=0.5, separation=0.1,
                         trials=3, seed=2)
    assert ve.counts.sum() == 500
    assert ve.target == pytest.approx(0.0, abs=1e-12)
    assert ve.stirling_gap_per_N <= 0.0
    assert ve.separation_loss_per_N < 0.0
    assert ve.log_volume_per_N == pytest.approx(
        ve.multinomial_per_N + ve.separation_loss_per_N, rel=1e-12)
    with pytest.raises(ValueError):
        volume_estimate(target, ref, 500, 0.5, 0.1, trials=0, seed=2)


def test_volume_separation_loss_scales_linearly():
    target = uniform_target(4)
    ref = uniform_target(4)
    ratios = []
    for sep in (0.05, 0.1, 0.2):
        ve = volume_estimate(target, ref, N=500, cube_size=0.5,
                             separation=sep, trials=4, seed=11)
        ratios.append(ve.separation_loss_per_N / sep)
    spread = max(ratios) - min(ratios)
    assert abs(spread) < 0.25 * abs(np.mean(ratios))


def test_construct_end_to_end_report():
    target = uniform_target(4)
    params = ConstructionParams(target=target, N=200, cube_size=0.5,
                                separation=0.2)
    report = construct(params, seed=13, volume_trials=2)
    assert report.separation_ok
    assert report.boundary_ok
    assert report.min_separation >= report.tau_min
    assert np.isfinite(report.energy_gap)
    assert np.isfinite(report.bl_to_target)
    assert np.isfinite(report.log_volume_estimate)
    assert "volume" in report.extras
    obj = report.to_json()
    for key in ("min_separation", "bl_to_target", "energy_gap",
                "max_potential_gap", "separation_ok"):
        assert key in obj


def test_truncated_target_keeps_quantile_mass():
    rng = np.random.default_rng(20)
    density = rng.uniform(0.1, 1.0, (4, 4, 4))
    target = GridMeasure(BOX, 4, density)
    params = ConstructionParams(target=target, N=100, cube_size=0.5,
                                separation=0.2, truncate_quantile=0.2)
    cut, level = params.effective_target()
    assert level > 0.0
    assert mass(cut) <= mass(target)
    assert np.all((cut.density == 0.0) | (cut.density >= level - 1e-12))


def test_cube_masses_sum_to_total():
    target = uniform_target(4)
    tiling = CubeTiling.build(BOX, 0.5)
    masses = cube_masses(target, tiling)
    assert masses.sum() == pytest.approx(mass(target), rel=1e-12)
