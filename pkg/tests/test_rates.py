"""Rate functionals and their closed-form sub-minimizers."""

import math
import warnings

import numpy as np
import pytest
from scipy.linalg import cholesky
from scipy.optimize import nnls

from mesogas.coulomb import dense_kernel_matrix
from mesogas.grids import Box, GridMeasure, dilate, mass
from mesogas.rates import (ExteriorDomain, alpha_minimizer, blowup_on_domain,
                           kappa_minimizer, n_rate, phi_background_gap,
                           phi_mass_constrained, phi_rate, phi_scaling_check,
                           t_rate)

INNER = Box.cube(np.zeros(3), 0.5)


def small_domain(cells=2, factor=2):
    return ExteriorDomain.build(INNER, cells, factor)


def test_exterior_domain_partitions_lattice():
    dom = small_domain()
    total = dom.layout.density.size
    n_win = int(np.sum(~dom.exterior_mask))
    assert n_win == 2 ** 3
    assert int(np.sum(dom.exterior_mask)) == total - n_win
    assert np.allclose(dom.layout.box.half_width, 2 * INNER.half_width)


def test_exterior_domain_build_validation():
    with pytest.raises(ValueError):
        ExteriorDomain.build(INNER, 2, 1)          # factor below two
    with pytest.raises(ValueError):
        ExteriorDomain.build(INNER, 3, 2.5)        # fractional cell padding


def test_embed_places_window_measure():
    dom = small_domain()
    mu = GridMeasure.uniform(INNER, 2, 1.0)
    q = dom.embed(mu)
    assert q[~dom.exterior_mask].min() == pytest.approx(1.0)
    assert np.all(q[dom.exterior_mask] == 0.0)


def test_n_rate_zero_exactly_at_reference():
    box = Box.cube(np.zeros(3), 1.0)
    ref = 0.3
    at_ref = GridMeasure.uniform(box, 4, ref)
    assert n_rate(at_ref, ref) == pytest.approx(0.0, abs=1e-12)


def test_n_rate_nonnegative_and_convex():
    rng = np.random.default_rng(2)
    box = Box.cube(np.zeros(3), 1.0)
    ref = 0.3
    prev = None
    for _ in range(200):
        a = GridMeasure(box, 3, rng.uniform(0, 0.9, (3, 3, 3)))
        b = GridMeasure(box, 3, rng.uniform(0, 0.9, (3, 3, 3)))
        va, vb = n_rate(a, ref), n_rate(b, ref)
        vm = n_rate((a + b) * 0.5, ref)
        assert va >= 0.0 and vb >= 0.0
        assert vm <= 0.5 * (va + vb) + 1e-10


def test_n_rate_validation():
    box = Box.cube(np.zeros(3), 1.0)
    m = GridMeasure.uniform(box, 3, 1.0)
    with pytest.raises(ValueError):
        n_rate(m, 0.0)
    with pytest.raises(ValueError):
        n_rate(m, 0.3, box=Box.cube(np.zeros(3), 2.0))


def test_phi_zero_when_window_matches_background():
    dom = small_domain(4, 2)
    alpha = 0.2
    mu = GridMeasure.uniform(INNER, 4, alpha)
    rep = phi_rate(mu, alpha, dom)
    assert rep.value == pytest.approx(0.0, abs=1e-10)


def test_phi_minimizer_is_feasible():
    rng = np.random.default_rng(6)
    dom = small_domain(4, 2)
    mu = GridMeasure(INNER, 4, rng.uniform(0, 0.5, (4, 4, 4)))
    rep = phi_rate(mu, 0.1, dom)
    phi = rep.minimizer.density
    assert np.all(phi >= 0.0)
    assert np.all(phi[~dom.exterior_mask] == 0.0)
    assert rep.kkt_residual < 1e-8
    assert rep.value >= 0.0


def test_phi_matches_dense_nnls_oracle():
    """The projected-gradient solve agrees with a direct nonnegative
    least-squares solve of the same quadratic program."""
    rng = np.random.default_rng(99)
    dom = small_domain()
    lay = dom.layout
    dv = lay.cell_volume
    K = dense_kernel_matrix(lay)
    L = cholesky(K + 1e-12 * np.eye(K.shape[0]), lower=True)
    ext = dom.exterior_mask.ravel()
    for _ in range(5):
        mu = GridMeasure(INNER, 2, rng.uniform(0.05, 0.5, (2, 2, 2)))
        alpha = rng.uniform(0.05, 0.25)
        rep = phi_rate(mu, alpha, dom, tol=1e-12, max_iter=20000)
        q0 = (dom.embed(mu) - alpha).ravel()
        _, rnorm = nnls(L.T[:, ext], -L.T @ q0)
        oracle = rnorm ** 2 * dv * dv
        assert rep.value == pytest.approx(oracle, rel=1e-9, abs=1e-12)


def test_phi_mass_cap_binds_and_relaxes():
    rng = np.random.default_rng(61)
    dom = small_domain(4, 2)
    mu = GridMeasure(INNER, 4, rng.uniform(0.2, 0.6, (4, 4, 4)))
    free = phi_rate(mu, 0.05, dom)
    free_mass = mass(free.minimizer)
    capped = phi_mass_constrained(mu, 0.05, dom, 0.25 * free_mass)
    assert capped.value >= free.value - 1e-10
    assert mass(capped.minimizer) <= 0.25 * free_mass + 1e-8
    loose = phi_mass_constrained(mu, 0.05, dom, 10.0 * free_mass)
    assert loose.value == pytest.approx(free.value, rel=1e-6, abs=1e-10)
    with pytest.raises(ValueError):
        phi_mass_constrained(mu, 0.05, dom, -1.0)


def test_phi_scaling_identity():
    rng = np.random.default_rng(8)
    dom = small_domain(4, 2)
    mu = GridMeasure(INNER, 4, rng.uniform(0, 0.4, (4, 4, 4)))
    for x in (0.5, 2.0):
        lhs, rhs = phi_scaling_check(mu, 0.15, dom, x)
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-12)


def test_phi_superquadratic_in_the_deviation():
    """Doubling the deviation mu - alpha at least quadruples Phi. The
    admissible screening fields form a cone, so scaling is exact; the
    inequality form tolerates solver slack."""
    rng = np.random.default_rng(9)
    dom = small_domain(4, 2)
    for _ in range(10):
        alpha = rng.uniform(0.05, 0.3)
        dev = rng.uniform(-alpha, 0.4, (4, 4, 4))
        mu = GridMeasure(INNER, 4, alpha + dev)
        doubled = GridMeasure(INNER, 4, alpha + 2.0 * dev, signed=True)
        v1 = phi_rate(mu, alpha, dom).value
        v2 = phi_rate(doubled, alpha, dom).value
        assert v2 >= 4.0 * v1 - 1e-8


def test_kappa_closed_form_scales_the_exterior():
    dom = small_domain()
    rng = np.random.default_rng(10)
    w = dom.layout.with_density(rng.uniform(0.2, 1.0, dom.layout.density.shape))
    total = mass(w)
    i_ext = float(np.sum(w.density[dom.exterior_mask]) * dom.layout.cell_volume)
    nu_bar = 0.4 * total
    kap, mu_star, val = kappa_minimizer(nu_bar, w, dom)
    assert kap == pytest.approx((total - nu_bar) / i_ext, rel=1e-12)
    assert val == pytest.approx(kap * math.log(kap) * i_ext, rel=1e-12)
    ext_vals = mu_star.density[dom.exterior_mask]
    assert np.allclose(ext_vals, kap * w.density[dom.exterior_mask])
    assert np.all(mu_star.density[~dom.exterior_mask] == 0.0)


def test_kappa_warns_when_blowup_spills(quad, thermal):
    sol = thermal(16)
    dom = small_domain()
    up = dilate(sol.measure, 16.0 ** 0.05)
    with pytest.warns(UserWarning):
        kappa_minimizer(0.1, up, dom)


def test_alpha_closed_form(quad, thermal):
    sol = thermal(32)
    excl = Box.cube(np.zeros(3), 0.5)
    meas = sol.measure
    outside = ~excl.contains(meas.cell_centers())
    i_ext = float(meas.density.ravel()[outside].sum() * meas.cell_volume)
    for i_N, N in ((0.0, 32.0), (10.0, 32.0), (31.0, 32.0)):
        alpha, rho = alpha_minimizer(i_N, N, sol, excl)
        assert alpha == pytest.approx((1.0 - i_N / N) / i_ext, rel=1e-12)
        assert mass(rho) == pytest.approx(1.0 - i_N / N, rel=1e-9)
    with pytest.raises(ValueError):
        alpha_minimizer(-1.0, 32.0, sol, excl)
    with pytest.raises(ValueError):
        alpha_minimizer(33.0, 32.0, sol, excl)


def test_blowup_on_domain_matches_density(quad, thermal):
    sol = thermal(32)
    dom = small_domain(4, 2)
    w, logw = blowup_on_domain(sol, 32.0, 0.05, dom)
    up = dilate(sol.measure, 32.0 ** 0.05)
    direct = up.density_at(dom.layout.cell_centers()).reshape(w.shape)
    inside = direct > 0
    assert np.allclose(w[inside], direct[inside], rtol=1e-6)
    assert np.all(np.isfinite(logw[inside]))


def test_t_rate_without_energy_reduces_to_kappa(quad, thermal):
    """Dropping the quadratic term leaves exactly the exterior entropy
    problem, whose minimum the kappa closed form gives."""
    sol = thermal(32)
    params_like = type("P", (), {"N": 32.0, "lam": 0.05})()
    dom = small_domain(4, 2)
    mu = GridMeasure.uniform(INNER, 4, 0.15)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = t_rate(mu, params_like, sol, dom, include_energy=False)
        w, _ = blowup_on_domain(sol, 32.0, 0.05, dom)
        wm = dom.layout.with_density(w)
        _, _, want = kappa_minimizer(mass(mu), wm, dom)
    assert rep.value == pytest.approx(want, rel=1e-6, abs=1e-9)
    for key in ("energy_term", "entropy_term", "t_script", "mu_v0"):
        assert key in rep.extras


def test_t_rate_full_value_dominates_entropy_part(quad, thermal):
    sol = thermal(32)
    params_like = type("P", (), {"N": 32.0, "lam": 0.05})()
    dom = small_domain(4, 2)
    mu = GridMeasure.uniform(INNER, 4, 0.15)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        full = t_rate(mu, params_like, sol, dom)
        bare = t_rate(mu, params_like, sol, dom, include_energy=False)
    assert full.extras["energy_term"] >= -1e-10
    assert full.value >= bare.value - 1e-8


def test_phi_background_gap_closes_with_n(quad, thermal):
    params16 = type("P", (), {"N": 16.0, "lam": 0.05})()
    params256 = type("P", (), {"N": 256.0, "lam": 0.05})()
    dom = small_domain(4, 2)
    rho = GridMeasure.uniform(INNER, 4, 0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g16 = phi_background_gap(rho, params16, thermal(16), dom)
        g256 = phi_background_gap(rho, params256, thermal(256), dom)
    assert g256 < g16
