"""Rate functionals for mesoscopic deviations of the gas density.

Three functionals measure the cost of seeing a density ``mu`` in the window
cube, each matched to a temperature regime:

* ``n_rate``: the entropy functional  N[mu | nu] = ent[mu|nu] + |nu| - |mu|
  against a constant reference density on the window. Closed form.

* ``phi_rate``: the screened Coulomb energy
  Phi^alpha(mu) = min_phi  E(mu - alpha 1_window + (phi - alpha) 1_exterior)
  over exterior screening densities phi >= 0, a convex QP in phi solved by
  projected gradient with Barzilai-Borwein steps. ``phi_mass_constrained``
  adds a total-mass cap on phi.

* ``t_rate``: the combined functional
  T(mu) = min_nu  E(mu + nu - w) + ent[nu | w]
  over positive exterior measures nu with the mass constraint
  |nu| = |w| - |mu|, where w is the dilated thermal measure. The entropy
  pair -int log(w) dnu + ent[nu] collapses to the relative entropy
  ent[nu|w], so the no-energy problem has the closed-form solution
  nu = kappa w exposed as ``kappa_minimizer``; with the energy on, the
  problem is solved by entropic mirror descent warm-started there.

All minimizations happen over a truncated exterior: a cube ``factor`` times
the window, carved into the same lattice so window cells and exterior cells
never overlap. Truncation error is a real modeling error; double the factor
and compare values to bound it (the reported minimizer and integrals always
refer to the truncated exterior).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .coulomb import grid_kernel, potential_field
from .grids import AtomicMeasure, Box, GridMeasure, mass, relative_entropy
from .kernels import pairwise_g_sum


@dataclass(frozen=True, eq=False)
class ExteriorDomain:
    """Window cube plus a truncated exterior, on one shared lattice.

    The truncation box is `factor` times the window, with the window
    occupying a centered block of whole cells; every lattice cell is either
    a window cell or an exterior cell.
    """

    interior: Box
    truncation: Box
    layout: GridMeasure            # zeros on the truncation lattice
    interior_mask: np.ndarray      # bool, full lattice shape
    cells_interior: int

    @classmethod
    def build(cls, interior: Box, cells_interior: int, factor: int = 4
              ) -> "ExteriorDomain":
        if factor < 2:
            raise ValueError("truncation factor must be at least 2")
        hw = interior.half_width
        if not np.allclose(hw, hw[0]):
            raise ValueError("interior must be a cube")
        n_total = factor * cells_interior
        if (n_total - cells_interior) % 2 != 0:
            raise ValueError("factor and cells_interior must align the "
                             "window with whole cells (make one of them even)")
        truncation = Box(center=interior.center.copy(),
                         half_width=hw * factor)
        layout = GridMeasure.zeros(truncation, n_total)
        off = (n_total - cells_interior) // 2
        mask = np.zeros(layout.density.shape, dtype=bool)
        mask[tuple(slice(off, off + cells_interior)
                   for _ in range(interior.d))] = True
        return cls(interior=interior, truncation=truncation, layout=layout,
                   interior_mask=mask, cells_interior=cells_interior)

    @property
    def d(self) -> int:
        return self.interior.d

    @property
    def exterior_mask(self) -> np.ndarray:
        return ~self.interior_mask

    @property
    def interior_slice(self) -> tuple:
        off = (self.layout.cells_per_axis - self.cells_interior) // 2
        return tuple(slice(off, off + self.cells_interior)
                     for _ in range(self.d))

    def embed(self, mu: GridMeasure) -> np.ndarray:
        """Density of a window measure placed on the full lattice."""
        if not mu.box.same_geometry(self.interior):
            raise ValueError("measure box does not match the window")
        if mu.cells_per_axis != self.cells_interior:
            raise ValueError("measure lattice does not match the window grid")
        full = np.zeros(self.layout.density.shape)
        full[self.interior_slice] = mu.density
        return full

    def window_measure(self, density_full: np.ndarray) -> GridMeasure:
        """Restriction of a full-lattice density to the window grid."""
        block = density_full[self.interior_slice].copy()
        return GridMeasure(self.interior, self.cells_interior, block,
                           signed=bool(np.any(block < 0)))

    def exterior_measure(self, density_full: np.ndarray) -> GridMeasure:
        dens = np.where(self.interior_mask, 0.0, density_full)
        return self.layout.with_density(dens, signed=bool(np.any(dens < 0)))

    def scaled(self, x: float) -> "ExteriorDomain":
        return ExteriorDomain.build(self.interior.scaled(x),
                                    self.cells_interior,
                                    round(self.layout.cells_per_axis
                                          / self.cells_interior))

    def covers(self, box: Box) -> bool:
        lo_t = self.truncation.center - self.truncation.half_width
        hi_t = self.truncation.center + self.truncation.half_width
        lo_b = box.center - box.half_width
        hi_b = box.center + box.half_width
        return bool(np.all(lo_t <= lo_b + 1e-12) and np.all(hi_b <= hi_t + 1e-12))


@dataclass(frozen=True, eq=False)
class RateReport:
    functional: str                # "N" | "Phi" | "T"
    value: float
    minimizer: GridMeasure | None
    iterations: int
    kkt_residual: float
    mass_error: float
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        from .grids import measure_to_json
        return {
            "functional": self.functional,
            "value": self.value,
            "mass_error": self.mass_error,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "minimizer": (None if self.minimizer is None
                          else measure_to_json(self.minimizer)),
        }


def n_rate(mu: GridMeasure, ref_density: float, box: Box | None = None) -> float:
    """ent[mu | ref 1_box] + ref*vol(box) - |mu|, in closed form.

    The reference is strictly positive on the box, so every grid measure on
    the box is absolutely continuous with respect to it; a measure living
    outside the box is rejected. mu = 0 gives the pure mass term ref*vol.
    """
    if ref_density <= 0:
        raise ValueError("reference density must be positive")
    if box is None:
        box = mu.box
    elif not mu.box.same_geometry(box):
        raise ValueError("measure must live on the reference box")
    if mu.signed and np.any(mu.density < 0):
        raise ValueError("n_rate needs a positive measure")
    dv = mu.cell_volume
    dens = mu.density
    pos = dens > 0
    rel = float(np.sum(dens[pos] * np.log(dens[pos] / ref_density)) * dv)
    return rel + ref_density * box.volume - float(np.sum(dens) * dv)


def _background_full(background, domain: ExteriorDomain) -> np.ndarray:
    if np.isscalar(background):
        return np.full(domain.layout.density.shape, float(background))
    bg = np.asarray(background, dtype=float)
    if bg.shape != domain.layout.density.shape:
        raise ValueError("background array must match the full lattice")
    return bg


def _phi_solve(mu: GridMeasure, background, domain: ExteriorDomain,
               mass_cap: float | None, tol: float, max_iter: int
               ) -> RateReport:
    ker = grid_kernel(domain.layout)
    dv = domain.layout.cell_volume
    bg = _background_full(background, domain)
    ext = domain.exterior_mask
    q_fix = domain.embed(mu) - bg

    phi = np.where(ext, np.maximum(bg, 0.0), 0.0)

    def project(p):
        p = np.maximum(p, 0.0)
        p[~ext] = 0.0
        if mass_cap is not None and p.sum() * dv > mass_cap:
            flat = _project_simplex_cap(p[ext], mass_cap / dv)
            p = np.zeros_like(p)
            p[ext] = flat
        return p

    phi = project(phi)

    def fields(p):
        q = q_fix + p
        h = ker.potential(q)
        return q, h, float(np.sum(q * h) * dv)

    q, h, obj = fields(phi)
    lip = 2.0 * dv * dv * float(np.max(np.abs(ker._Kf)))
    step = 1.0 / lip
    memory = [obj]
    phi_prev = None
    grad_prev = None
    it = 0
    kkt = np.inf
    for it in range(1, max_iter + 1):
        grad = 2.0 * dv * h
        if phi_prev is not None:
            ds = (phi - phi_prev)[ext]
            dg = (grad - grad_prev)[ext]
            denom = float(ds @ dg)
            if denom > 0:
                step = float(ds @ ds) / denom
        phi_prev, grad_prev = phi, grad
        ref = max(memory[-10:])
        while True:
            cand = project(phi - step * grad)
            q_c, h_c, obj_c = fields(cand)
            if obj_c <= ref + 1e-14 * abs(ref) or step < 1e-18:
                break
            step *= 0.5
        phi, q, h, obj = cand, q_c, h_c, obj_c
        memory.append(obj)
        if it % 5 == 0 or it == max_iter:
            kkt = _phi_kkt(phi, 2.0 * dv * h, ext, dv, mass_cap)
            if kkt < tol:
                break

    kkt = _phi_kkt(phi, 2.0 * dv * h, ext, dv, mass_cap)
    mass_err = 0.0
    if mass_cap is not None:
        mass_err = max(0.0, float(phi.sum() * dv) - mass_cap)
    minimizer = domain.exterior_measure(phi)
    return RateReport(functional="Phi", value=obj, minimizer=minimizer,
                      iterations=it, kkt_residual=kkt, mass_error=mass_err,
                      extras={"screening_mass": float(phi.sum() * dv)})


def _phi_kkt(phi, grad, ext, dv, mass_cap) -> float:
    g = grad[ext]
    p = phi[ext]
    if mass_cap is not None and p.sum() * dv >= mass_cap * (1 - 1e-12):
        active = p > 0
        lam = -float(np.mean(g[active])) if np.any(active) else 0.0
        g = g + lam
    free = p > 0
    r = 0.0
    if np.any(free):
        r = float(np.max(np.abs(g[free])))
    if np.any(~free):
        r = max(r, float(max(0.0, -np.min(g[~free]))))
    return r


def _project_simplex_cap(z: np.ndarray, total: float) -> np.ndarray:
    """Projection onto {x >= 0, sum x = total} (for the active mass cap)."""
    if total <= 0:
        return np.zeros_like(z)
    srt = np.sort(z)[::-1]
    csum = np.cumsum(srt) - total
    idx = np.arange(1, z.size + 1)
    cond = srt - csum / idx > 0
    rho = idx[cond][-1]
    theta = csum[cond][-1] / rho
    return np.maximum(z - theta, 0.0)


def phi_rate(mu: GridMeasure, alpha, domain: ExteriorDomain,
             tol: float = 1e-8, max_iter: int = 5000) -> RateReport:
    """Phi^alpha of a window measure; alpha is a scalar or a full-lattice
    background density array (used for the thermal-background variant)."""
    return _phi_solve(mu, alpha, domain, None, tol, max_iter)


def phi_mass_constrained(mu: GridMeasure, alpha, domain: ExteriorDomain,
                         M: float, tol: float = 1e-8,
                         max_iter: int = 5000) -> RateReport:
    """Phi with the screening mass capped: int phi <= M."""
    if M < 0:
        raise ValueError("mass cap must be nonnegative")
    return _phi_solve(mu, alpha, domain, M, tol, max_iter)


def phi_scaling_check(mu: GridMeasure, alpha, domain: ExteriorDomain,
                      x: float, tol: float = 1e-8,
                      max_iter: int = 5000) -> tuple[float, float]:
    """Both sides of Phi^alpha(mu) = x^{-(d+2)} Phi^alpha_{x window}(mu^x).

    Dilation preserves density values, so the background stays alpha; the
    lattice dilates exactly, so the two sides agree to solver tolerance.
    """
    from .grids import dilate
    d = domain.d
    lhs = phi_rate(mu, alpha, domain, tol, max_iter).value
    rhs_raw = phi_rate(dilate(mu, x), alpha, domain.scaled(x),
                       tol * x ** (d + 2), max_iter).value
    return lhs, float(x ** (-(d + 2)) * rhs_raw)


def blowup_on_domain(thermal_sol, N: float, lam: float,
                     domain: ExteriorDomain) -> tuple[np.ndarray, np.ndarray]:
    """Dilated thermal density and its log on the domain lattice.

    Evaluated through the stored log density, so the log stays finite in
    the far exterior where the density itself underflows. Cells outside the
    dilated box get log = -inf (density 0).
    """
    xfac = float(N) ** lam
    centers = domain.layout.cell_centers()
    logw = thermal_sol.log_density_at(centers, dilation=xfac)
    logw = logw.reshape(domain.layout.density.shape)
    with np.errstate(over="ignore"):
        w = np.exp(logw)
    return w, logw


def kappa_minimizer(nu_bar_mass: float, blowup_measure: GridMeasure,
                    domain: ExteriorDomain) -> tuple[float, GridMeasure, float]:
    """Closed-form minimizer of ent[nu | w] over exterior nu of fixed mass.

    The constraint is |nu| = |w| - nu_bar_mass, and the minimizer is the
    scaled restriction nu = kappa w 1_exterior with
    kappa = (|w| - nu_bar_mass) / int_exterior w; the value is
    kappa log(kappa) * int_exterior w. All integrals refer to the truncated
    exterior lattice, the same feasible set every numeric solver here uses;
    if the dilated box spills past the truncation the spilled mass is
    ignored and a warning notes it.
    """
    w_dom = blowup_measure.density_at(domain.layout.cell_centers())
    w_dom = w_dom.reshape(domain.layout.density.shape)
    dv = domain.layout.cell_volume
    total = float(np.sum(w_dom) * dv)
    exact = mass(blowup_measure)
    if not domain.covers(blowup_measure.box):
        warnings.warn("dilated measure extends past the truncation box "
                      f"({exact - total:.3g} mass ignored)")
    i_ext = float(np.sum(w_dom[domain.exterior_mask]) * dv)
    if i_ext <= 0:
        raise ValueError("exterior integral of the dilated measure vanishes")
    kappa = (total - nu_bar_mass) / i_ext
    if kappa < 0:
        raise ValueError("window mass exceeds the total mass; "
                         "no positive exterior measure can balance it")
    dens = np.where(domain.interior_mask, 0.0, kappa * w_dom)
    mu_star = domain.layout.with_density(dens, signed=False)
    value = kappa * math.log(kappa) * i_ext if kappa > 0 else 0.0
    return float(kappa), mu_star, float(value)


def alpha_minimizer(i_N: float, N: float, thermal_sol,
                    excluded: Box) -> tuple[float, GridMeasure]:
    """Closed-form minimizer of ent[rho | mu_beta] outside the excluded box.

    The constraint is |rho| = 1 - i_N/N; the minimizer is the scaled
    restriction rho* = alpha mu_beta 1_exterior with
    alpha = (1 - i_N/N) / int_exterior mu_beta.
    """
    if not 0 <= i_N <= N:
        raise ValueError("need 0 <= i_N <= N")
    meas = thermal_sol.measure
    centers = meas.cell_centers()
    inside = excluded.contains(centers).reshape(meas.density.shape)
    dv = meas.cell_volume
    i_ext = float(np.sum(meas.density[~inside]) * dv)
    if i_ext <= 0:
        raise ValueError("thermal measure has no mass outside the box")
    alpha = (1.0 - i_N / N) / i_ext
    dens = np.where(inside, 0.0, alpha * meas.density)
    rho_star = meas.with_density(dens, signed=False)
    return float(alpha), rho_star


def _t_minimize(q_fixed: np.ndarray, lin_extra: np.ndarray | None,
                const_extra: float, logw: np.ndarray, target_mass: float,
                domain: ExteriorDomain, include_energy: bool,
                tol: float, max_iter: int) -> tuple[np.ndarray, float, float, int]:
    """Entropic mirror descent for min_nu E(q_fixed+nu) + <lin,nu> + ent[nu|w].

    nu lives on exterior cells with exact mass target_mass (renormalized
    every step). The iterate is kept as log nu on the cells where w > 0
    (elsewhere nu must vanish), so every array stays finite.
    Returns (nu_full, objective, kkt_residual, iterations).
    """
    ker = grid_kernel(domain.layout)
    dv = domain.layout.cell_volume
    shape = domain.layout.density.shape
    flat_idx = np.flatnonzero(domain.exterior_mask.ravel())
    logw_ext = logw.ravel()[flat_idx]
    keep = np.isfinite(logw_ext)
    if not np.any(keep):
        raise ValueError("dilated measure vanishes on the whole exterior")
    flat_idx = flat_idx[keep]
    logw_c = logw_ext[keep]
    lin_c = None if lin_extra is None else lin_extra.ravel()[flat_idx]

    def normalize(Lv):
        m = Lv.max()
        z = m + np.log(np.sum(np.exp(Lv - m)) * dv)
        return Lv - z + np.log(target_mass)

    def assemble(Lv):
        nu = np.zeros(domain.layout.density.size)
        nu[flat_idx] = np.exp(Lv)
        return nu.reshape(shape)

    def objective(Lv, nu_c, nu_full):
        val = float(np.sum(nu_c * (Lv - logw_c)) * dv) + const_extra
        if lin_c is not None:
            val += float(np.sum(lin_c * nu_c) * dv)
        if include_energy:
            q = q_fixed + nu_full
            h = ker.potential(q)
            val += float(np.sum(q * h) * dv)
            return val, h
        return val, None

    def grad(Lv, h):
        g = (Lv - logw_c) + 1.0
        if lin_c is not None:
            g = g + lin_c
        if include_energy and h is not None:
            g = g + 2.0 * h.ravel()[flat_idx]
        return g

    def kkt_of(Lv, g):
        wts = np.exp(Lv - Lv.max())
        gbar = float(np.sum(g * wts) / np.sum(wts))
        live = wts > 1e-15
        return float(np.max(np.abs(g[live] - gbar)))

    L = normalize(logw_c.copy())
    nu_full = assemble(L)
    obj, h = objective(L, nu_full.ravel()[flat_idx], nu_full)
    s = 0.5
    streak = 0
    it = 0
    kkt = np.inf
    for it in range(1, max_iter + 1):
        g = grad(L, h)
        accepted = False
        while s >= 1e-7:
            L_cand = normalize(L - s * g)
            nu_cand = assemble(L_cand)
            obj_cand, h_cand = objective(L_cand, nu_cand.ravel()[flat_idx],
                                         nu_cand)
            if obj_cand <= obj + 1e-14 * abs(obj):
                accepted = True
                break
            s *= 0.5
            streak = 0
        if not accepted:
            break
        L, nu_full, obj, h = L_cand, nu_cand, obj_cand, h_cand
        streak += 1
        if streak >= 3:
            s = min(s * 1.5, 2.0)
            streak = 0
        if it % 5 == 0:
            kkt = kkt_of(L, grad(L, h))
            if kkt < tol:
                break

    kkt = kkt_of(L, grad(L, h))
    return nu_full, obj, kkt, it


def t_rate(mu: GridMeasure, params, thermal_sol, domain: ExteriorDomain,
           include_energy: bool = True, mu_v0: float | None = None,
           tol: float = 1e-8, max_iter: int = 2000) -> RateReport:
    """T(mu) = min_nu E(mu + nu - w) + ent[nu|w] with |nu| = |w| - |mu|.

    w is the thermal measure dilated by N^lambda (params supplies N and lam).
    The report's value is T; extras carry the script variant
    T + ent[mu | mu_v0 1_window] and the energy/entropy split.
    ``include_energy=False`` drops the quadratic term, which reduces the
    problem to the closed-form kappa minimizer (used as an oracle in tests).
    """
    N, lam = float(params.N), float(params.lam)
    w, logw = blowup_on_domain(thermal_sol, N, lam, domain)
    dv = domain.layout.cell_volume
    total = float(N ** (lam * domain.d))
    covered = float(np.sum(w) * dv)
    if covered < 0.999 * total:
        warnings.warn("truncation box captures only "
                      f"{covered / total:.3%} of the dilated thermal mass; "
                      "enlarge the truncation factor")
    mu_mass = mass(mu)
    target = covered - mu_mass
    if target <= 0:
        raise ValueError("window mass exceeds the dilated thermal mass")

    q_fixed = domain.embed(mu) - w
    nu, obj, kkt, it = _t_minimize(
        q_fixed, None, 0.0, logw, target, domain, include_energy, tol, max_iter)

    ker = grid_kernel(domain.layout)
    q = q_fixed + nu
    h = ker.potential(q)
    energy_term = float(np.sum(q * h) * dv)
    extras = {"energy_term": energy_term,
              "entropy_term": obj - (energy_term if include_energy else 0.0)}

    if mu_v0 is None and getattr(thermal_sol.potential, "kind", None) == "quadratic":
        from .coulomb import SpaceParams
        mu_v0 = domain.d * thermal_sol.potential.coef / abs(
            SpaceParams(domain.d).c_d)
    if mu_v0 is not None:
        ref = GridMeasure.uniform(domain.interior, mu.cells_per_axis,
                                  value=float(mu_v0))
        extras["t_script"] = obj + relative_entropy(mu, ref)
        extras["mu_v0"] = float(mu_v0)
    minimizer = domain.exterior_measure(nu)
    return RateReport(functional="T", value=obj, minimizer=minimizer,
                      iterations=it, kkt_residual=kkt,
                      mass_error=abs(float(np.sum(nu) * dv) - target),
                      extras=extras)


def t_rate_atomic(atoms: AtomicMeasure, params, thermal_sol,
                  domain: ExteriorDomain, tol: float = 1e-8,
                  max_iter: int = 2000) -> RateReport:
    """The off-diagonal variant of t_rate for an atomic window measure.

    The interior Coulomb self-interaction drops the diagonal (finite for
    atoms); atom-to-continuum cross terms use atoms smeared at one cell
    diagonal, the same convention as the rest of the energy module.
    """
    N, lam = float(params.N), float(params.lam)
    w, logw = blowup_on_domain(thermal_sol, N, lam, domain)
    dv = domain.layout.cell_volume
    covered = float(np.sum(w) * dv)
    mu_mass = atoms.weight * atoms.count
    target = covered - mu_mass
    if target <= 0:
        raise ValueError("window mass exceeds the dilated thermal mass")

    pair = atoms.weight ** 2 * pairwise_g_sum(
        np.ascontiguousarray(atoms.points, dtype=float), domain.d)
    h_at = potential_field(atoms, domain.layout).density
    const = float(pair) - 2.0 * float(np.sum(h_at * w) * dv)
    q_fixed = -w
    nu, obj, kkt, it = _t_minimize(
        q_fixed, 2.0 * h_at, const, logw, target, domain, True, tol, max_iter)

    minimizer = domain.exterior_measure(nu)
    return RateReport(functional="T", value=obj, minimizer=minimizer,
                      iterations=it, kkt_residual=kkt,
                      mass_error=abs(float(np.sum(nu) * dv) - target),
                      extras={"pair_term": float(pair)})


def phi_background_gap(rho: GridMeasure, params, thermal_sol,
                       domain: ExteriorDomain, tol: float = 1e-8,
                       max_iter: int = 5000) -> float:
    """|Phi^{mu_V(0)}(rho) - Phi^{w_N}(rho)| for the dilated thermal
    background w_N; the gap closes as N grows."""
    from .coulomb import SpaceParams
    d = domain.d
    mu_v0 = d * thermal_sol.potential.coef / abs(SpaceParams(d).c_d)
    w, _ = blowup_on_domain(thermal_sol, float(params.N), float(params.lam),
                            domain)
    a = phi_rate(rho, mu_v0, domain, tol, max_iter).value
    b = phi_rate(rho, w, domain, tol, max_iter).value
    return abs(a - b)


def t_stability_check(mu: GridMeasure, atomic_sequence, params_sequence,
                      thermal_sequence, domain: ExteriorDomain,
                      tol: float = 1e-7, max_iter: int = 2000) -> list[float]:
    """T(mu) - T_offdiag(mu_N) along a sequence of atomic approximations.

    Entries of atomic_sequence may be GridMeasure (degenerate test mode,
    evaluated with t_rate so mu_N = mu gives exactly zero difference).
    """
    out = []
    for mu_n, params, th in zip(atomic_sequence, params_sequence,
                                thermal_sequence):
        base = t_rate(mu, params, th, domain, tol=tol, max_iter=max_iter)
        if isinstance(mu_n, GridMeasure):
            other = t_rate(mu_n, params, th, domain, tol=tol,
                           max_iter=max_iter)
        else:
            other = t_rate_atomic(mu_n, params, th, domain, tol=tol,
                                  max_iter=max_iter)
        out.append(base.value - other.value)
    return out
