"""Equilibrium and thermal equilibrium measures of a confined Coulomb gas.

Two variational problems over probability densities on a box grid:

* ``solve_equilibrium`` minimizes  I_V(mu) = E(mu) + int V dmu
  (projected gradient with Barzilai-Borwein steps and a simplex projection).
  At the minimizer the Euler-Lagrange conditions hold: 2 h^mu + V = k on the
  support, >= k off it. For V = |x|^2 in d = 3 the density is the constant
  Delta V / (2 |c_d|) = 3/(4 pi) on the unit ball.

* ``solve_thermal`` minimizes  E_beta(mu) = I_V(mu) + 1/(N beta) * ent[mu]
  by the damped fixed point  mu <- normalize(exp(-N beta (2 h^mu + V))),
  run in log space (this is mirror descent on E_beta, so a backtracking line
  search on the objective gives monotone convergence). The density is
  strictly positive everywhere and the Euler-Lagrange equation
  2 h^mu + V + (1/(N beta)) log mu = k  holds with
  k = 2 E(mu) + int V dmu + (1/(N beta)) ent[mu]  (multiply by mu and
  integrate; mass one).

The solution object keeps the log density: downstream rate functionals need
log mu_beta far into the tail, where the density itself underflows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .coulomb import GridKernel, SpaceParams, grid_kernel
from .grids import Box, GridMeasure, mass


@dataclass(frozen=True)
class Potential:
    """Confining potential: V(x) = coef * |x|^2, or tabulated cell values."""

    kind: str = "quadratic"
    coef: float = 1.0
    table: GridMeasure | None = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "tabulated"):
            raise ValueError("potential kind must be 'quadratic' or 'tabulated'")
        if self.kind == "tabulated" and self.table is None:
            raise ValueError("tabulated potential requires a table")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "quadratic":
            return self.coef * np.einsum("ik,ik->i", pts, pts)
        if not np.all(self.table.box.contains(pts)):
            raise ValueError("tabulated potential evaluated outside its box")
        return self.table.density_at(pts)

    def on_grid(self, like: GridMeasure) -> np.ndarray:
        return self(like.cell_centers()).reshape(like.density.shape)

    def equilibrium_radius(self, d: int) -> float:
        """Support radius of the equilibrium measure (quadratic V, analytic)."""
        if self.kind != "quadratic":
            raise ValueError("analytic radius known only for quadratic V")
        sp = SpaceParams(d)
        dens = d * self.coef / abs(sp.c_d)
        return (1.0 / (sp.ball_volume * dens)) ** (1.0 / d)

    def to_json(self) -> dict:
        if self.kind == "quadratic":
            return {"kind": "quadratic", "coef": self.coef}
        from .grids import measure_to_json
        return {"kind": "tabulated", "table": measure_to_json(self.table)}


@dataclass(frozen=True, eq=False)
class EquilibriumSolution:
    kind: str                      # "equilibrium" | "thermal"
    measure: GridMeasure
    potential: Potential
    k: float
    el_residual: float
    iterations: int
    objective: float
    converged: bool
    log_density: np.ndarray | None = None
    N: float | None = None
    beta: float | None = None
    support_min: float = 0.0
    support_max: float = 0.0

    def log_density_at(self, points: np.ndarray, dilation: float = 1.0) -> np.ndarray:
        """log density at points of the measure dilated by `dilation`.

        Nearest-cell evaluation; stays finite deep in the thermal tail where
        exp would underflow. Points outside the (dilated) box map to -inf.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float)) / dilation
        if self.log_density is not None:
            src = self.log_density
        else:
            with np.errstate(divide="ignore"):
                src = np.log(self.measure.density)
        holder = self.measure.with_density(src, signed=True)
        return holder.density_at(pts, fill=-np.inf)

    def log_density_smooth(self, points: np.ndarray) -> np.ndarray:
        """log density between cell centers, through the optimality field.

        The thermal density satisfies log mu = -N beta (2 h + V - k), and
        the right-hand side is evaluable at any point (h by smeared point
        evaluation, V exactly), which extends log mu off the lattice far
        more faithfully than a nearest-cell lookup. Agrees with the cell
        values up to the solver residual plus the self-cell quadrature gap.
        """
        if self.log_density is None:
            raise ValueError("pointwise log density needs a thermal solution")
        from .coulomb import default_smear_radius, potential_at_points
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        h = potential_at_points(self.measure, pts,
                                smear_radius=default_smear_radius(self.measure))
        nb = self.N * self.beta
        return -nb * (2.0 * h + self.potential(pts) - self.k)

    def to_json(self) -> dict:
        from .grids import measure_to_json
        return {
            "kind": self.kind,
            "measure": measure_to_json(self.measure),
            "potential": self.potential.to_json(),
            "k": self.k,
            "el_residual": self.el_residual,
            "iterations": self.iterations,
            "objective": self.objective,
            "converged": self.converged,
            "N": self.N,
            "beta": self.beta,
            "support_min": self.support_min,
            "support_max": self.support_max,
        }


def _project_simplex(z: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of z onto {x >= 0, sum x = total}."""
    srt = np.sort(z)[::-1]
    csum = np.cumsum(srt) - total
    idx = np.arange(1, z.size + 1)
    cond = srt - csum / idx > 0
    rho = idx[cond][-1]
    theta = csum[cond][-1] / rho
    return np.maximum(z - theta, 0.0)


def check_confining(V: Potential, like: GridMeasure) -> float:
    """Margin by which the boundary repels mass, for quadratic potentials.

    The quadratic-V equilibrium is the uniform ball of known radius r and
    Euler-Lagrange constant k = d r^{2-d}, so the effective field
    2 h + V - k is exactly computable: zero on the support, positive beyond.
    Returns its minimum over boundary cell centers. Nonpositive means the box
    does not strictly contain the equilibrium support; solvers warn.
    Tabulated potentials return +inf here (the post-solve boundary-support
    check covers them).
    """
    if V.kind != "quadratic":
        return np.inf
    from .coulomb import ball_potential
    d = like.d
    r = V.equilibrium_radius(d)
    k = d * r ** (2 - d)
    centers = like.cell_centers()
    if like.cells_per_axis <= 2:
        bpts = centers
    else:
        vals = np.zeros(like.density.shape)
        mask = np.zeros(vals.shape, dtype=bool)
        for ax in range(vals.ndim):
            sl = [slice(None)] * vals.ndim
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = vals.shape[ax] - 1
            mask[tuple(sl)] = True
        bpts = centers[mask.ravel()]
    field = 2.0 * ball_potential(np.linalg.norm(bpts, axis=1), r, d) + V(bpts)
    return float(np.min(field)) - k


def _boundary_values(vals: np.ndarray) -> np.ndarray:
    mask = np.zeros(vals.shape, dtype=bool)
    for k in range(vals.ndim):
        sl = [slice(None)] * vals.ndim
        sl[k] = 0
        mask[tuple(sl)] = True
        sl[k] = vals.shape[k] - 1
        mask[tuple(sl)] = True
    return vals[mask]


def solve_equilibrium(V: Potential, box: Box, cells_per_axis: int,
                      tol: float = 1e-4, max_iter: int = 4000,
                      support_tol: float = 1e-6) -> EquilibriumSolution:
    """Minimize I_V over probability measures on the box grid."""
    like = GridMeasure.zeros(box, cells_per_axis)
    ker = grid_kernel(like)
    margin = check_confining(V, like)
    if margin <= 1e-9:
        warnings.warn("potential may not confine the gas inside the box "
                      f"(margin {margin:.3g})")
    vgrid = V.on_grid(like)
    dv = like.cell_volume
    total = 1.0 / dv

    rho = np.full(like.density.shape, total / like.density.size)
    h = ker.potential(rho)

    def objective(r, hh):
        return float(np.sum(r * hh) * dv + np.sum(vgrid * r) * dv)

    obj = objective(rho, h)
    lip = 2.0 * dv * dv * float(np.max(np.abs(ker._Kf)))
    step = 1.0 / lip
    memory = [obj]
    rho_prev = None
    grad_prev = None
    el = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        grad = dv * (2.0 * h + vgrid)
        if rho_prev is not None:
            ds = (rho - rho_prev).ravel()
            dg = (grad - grad_prev).ravel()
            denom = float(ds @ dg)
            if denom > 0:
                step = float(ds @ ds) / denom
        rho_prev, grad_prev = rho, grad
        ref = max(memory[-10:])
        while True:
            cand = _project_simplex((rho - step * grad).ravel(), total)
            cand = cand.reshape(rho.shape)
            h_cand = ker.potential(cand)
            obj_cand = objective(cand, h_cand)
            if obj_cand <= ref + 1e-14 * abs(ref) or step < 1e-18:
                break
            step *= 0.5
        rho, h, obj = cand, h_cand, obj_cand
        memory.append(obj)

        if it % 5 == 0 or it == max_iter:
            field = 2.0 * h + vgrid
            supp = rho > support_tol * rho.max()
            k = float(np.sum(field[supp] * rho[supp]) / np.sum(rho[supp]))
            el = float(np.max(np.abs(field[supp] - k)))
            if el < tol:
                break

    field = 2.0 * h + vgrid
    supp = rho > support_tol * rho.max()
    k = float(np.sum(field[supp] * rho[supp]) / np.sum(rho[supp]))
    el = float(np.max(np.abs(field[supp] - k)))
    if cells_per_axis > 2 and float(np.max(_boundary_values(rho))) > support_tol * rho.max():
        warnings.warn("equilibrium support touches the box boundary; "
                      "enlarge the box")
    meas = like.with_density(rho, signed=False)
    return EquilibriumSolution(
        kind="equilibrium", measure=meas, potential=V, k=k, el_residual=el,
        iterations=it, objective=obj, converged=el < tol,
        support_min=float(rho[supp].min()), support_max=float(rho[supp].max()))


def thermal_box(V: Potential, N: float, beta: float, d: int,
                density_ratio: float = 1e-12) -> Box:
    """Box on which the thermal density at the boundary is negligible.

    The thermal density behaves like exp(-N beta (2h + V - k)), so the box
    half-width solves V(hw) - k = -log(density_ratio) / (N beta), dropping
    the nonnegative 2h term (which only suppresses further). k is the
    analytic Euler-Lagrange constant d r^{2-d} of the quadratic equilibrium.
    The equilibrium support also fits with margin.
    """
    if V.kind != "quadratic":
        raise ValueError("automatic box sizing requires a quadratic potential")
    r = V.equilibrium_radius(d)
    k = d * r ** (2 - d)
    hw_tail = math.sqrt((k - math.log(density_ratio) / (N * beta)) / V.coef)
    hw_supp = 1.3 * r
    return Box.cube(np.zeros(d), max(hw_tail, hw_supp))


def solve_thermal(V: Potential, N: float, beta: float,
                  box: Box | None = None, cells_per_axis: int = 32, d: int = 3,
                  tol: float = 1e-9, max_iter: int = 4000) -> EquilibriumSolution:
    """Minimize E_beta = I_V + 1/(N beta) ent by a damped log-space fixed point."""
    if N < 1 or beta <= 0:
        raise ValueError("need N >= 1 and beta > 0")
    nb = N * beta
    if box is None:
        box = thermal_box(V, N, beta, d)
    like = GridMeasure.zeros(box, cells_per_axis)
    ker = grid_kernel(like)
    vgrid = V.on_grid(like)
    dv = like.cell_volume

    def normalize(L):
        m = L.max()
        z = m + np.log(np.sum(np.exp(L - m)) * dv)
        return L - z

    L = normalize(-nb * vgrid)
    rho = np.exp(L)
    h = ker.potential(rho)

    def objective(r, LL, hh):
        return float(np.sum(r * hh) * dv + np.sum(vgrid * r) * dv
                     + np.sum(r * LL) * dv / nb)

    obj = objective(rho, L, h)
    s = 0.5
    streak = 0
    el = np.inf
    k = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        target = -nb * (2.0 * h + vgrid)
        accepted = False
        while s >= 1e-4:
            L_cand = normalize((1.0 - s) * L + s * target)
            rho_cand = np.exp(L_cand)
            h_cand = ker.potential(rho_cand)
            obj_cand = objective(rho_cand, L_cand, h_cand)
            if obj_cand <= obj + 1e-14 * abs(obj):
                accepted = True
                break
            s *= 0.5
            streak = 0
        if not accepted:
            L_cand, rho_cand, h_cand, obj_cand = L, rho, h, obj
        delta = float(np.max(np.abs(L_cand - L)))
        L, rho, h, obj = L_cand, rho_cand, h_cand, obj_cand
        streak += 1
        if streak >= 3:
            s = min(s * 1.3, 0.95)
            streak = 0

        if it % 5 == 0 or delta < 1e-13:
            e_val = float(np.sum(rho * h) * dv)
            int_v = float(np.sum(vgrid * rho) * dv)
            ent_val = float(np.sum(rho * L) * dv)
            k = 2.0 * e_val + int_v + ent_val / nb
            el = float(np.max(np.abs(2.0 * h + vgrid + L / nb - k)))
            if el < tol or delta < 1e-13:
                break

    e_val = float(np.sum(rho * h) * dv)
    int_v = float(np.sum(vgrid * rho) * dv)
    ent_val = float(np.sum(rho * L) * dv)
    k = 2.0 * e_val + int_v + ent_val / nb
    el = float(np.max(np.abs(2.0 * h + vgrid + L / nb - k)))
    if cells_per_axis > 2:
        ratio = float(np.max(_boundary_values(rho))) / float(rho.max())
        if ratio > 1e-10:
            warnings.warn("thermal density is not negligible at the box "
                          f"boundary (ratio {ratio:.2e}); enlarge the box")
    meas = like.with_density(rho, signed=False)
    return EquilibriumSolution(
        kind="thermal", measure=meas, potential=V, k=k, el_residual=el,
        iterations=it, objective=obj, converged=el < max(tol, 1e-6),
        log_density=L, N=float(N), beta=float(beta),
        support_min=float(rho.min()), support_max=float(rho.max()))


def zeta(sol: EquilibriumSolution, N: float | None = None,
         beta: float | None = None) -> np.ndarray:
    """The confinement field zeta_beta = -(1/(N beta)) log mu_beta, cellwise."""
    if sol.log_density is None:
        raise ValueError("zeta requires a thermal solution")
    N = sol.N if N is None else N
    beta = sol.beta if beta is None else beta
    return -sol.log_density / (N * beta)


def blowup(sol: EquilibriumSolution, N: float, lam: float) -> GridMeasure:
    """mu_beta^{N^lambda}: the thermal measure dilated by N^lambda (mass N^{lambda d})."""
    from .grids import dilate
    return dilate(sol.measure, float(N) ** lam)
