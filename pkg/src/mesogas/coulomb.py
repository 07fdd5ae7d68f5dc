"""Coulomb kernel g(x) = |x|^(2-d), potentials, energies, and smearing (d >= 3).

Quadrature policy
-----------------
Grid-grid quadratic forms are midpoint cell-to-cell sums with the analytic
kernel. On a regular lattice that sum is a discrete convolution, so it is
evaluated exactly (up to roundoff) with FFTs; ``GridKernel`` caches the
transformed lattice kernel per geometry. The zero-offset coefficient is the
self-interaction of the uniform ball with the cell's volume,

    E(ball of radius a, unit mass) = 2d/(d+2) * a^(2-d),

which keeps the quadratic form positive definite and finite.

Atoms entering any grid form are smeared as uniform balls of radius one cell
diagonal (overridable); by Newton's theorem the smeared kernel

    g_ball(z; r) = |z|^(2-d)                          for |z| >= r
                 = (|z|^2 + d(r^2-|z|^2)/2) / r^d     for |z| <  r

is exact, so no rasterization error enters mixed forms. Pure atomic sums are
O(N^2) direct evaluations of g.

Sphere smearing (uniform measure on a boundary sphere) has the classical
closed forms  h_shell(z; R) = g(max(|z|, R))  and  E(shell_R) = g(R); two
shells of radius R interact at exactly g(s) once their centers are s >= 2R
apart, and strictly below g(s) when the surfaces intersect (0 < s < 2R).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len, rfftn, irfftn
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

from . import kernels
from .grids import AtomicMeasure, Box, GridMeasure, Measure


@dataclass(frozen=True)
class SpaceParams:
    """Dimension bookkeeping for the kernel g(x) = |x|^(2-d).

    ``c_d`` is the constant in  Delta g = c_d * delta_0  (negative). It is
    documented for reference and used only by analytic test oracles; no
    operation in the package needs its value.
    """

    d: int

    def __post_init__(self):
        if int(self.d) < 3:
            raise ValueError("the kernel |x|^(2-d) requires d >= 3")
        object.__setattr__(self, "d", int(self.d))

    @property
    def sphere_area(self) -> float:
        """Surface area of the unit sphere S^(d-1)."""
        return 2.0 * math.pi ** (self.d / 2.0) / gamma_fn(self.d / 2.0)

    @property
    def ball_volume(self) -> float:
        """Volume of the unit ball in R^d."""
        return self.sphere_area / self.d

    @property
    def c_d(self) -> float:
        return -(self.d - 2) * self.sphere_area


@dataclass(frozen=True)
class SmearKind:
    """Uniform smearing measure: 'ball' (solid) or 'sphere' (boundary)."""

    kind: str
    radius: float

    def __post_init__(self):
        if self.kind not in ("ball", "sphere"):
            raise ValueError("smear kind must be 'ball' or 'sphere'")
        if self.radius <= 0:
            raise ValueError("smear radius must be positive")


# ---------------------------------------------------------------------------
# pointwise kernel and analytic potentials
# ---------------------------------------------------------------------------

def g_radial(r, d: int):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        out = r ** (2.0 - d)
    return out if out.ndim else float(out)


def g_eval(x, d: int):
    """g(x) = |x|^(2-d) for an array of displacement vectors (..., d)."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.einsum("...k,...k->...", x, x))
    return g_radial(r, d)


def shell_potential(r, R: float, d: int):
    """Potential of the unit-mass uniform sphere of radius R: g(max(r, R))."""
    r = np.asarray(r, dtype=float)
    out = g_radial(np.maximum(r, R), d)
    return out if np.ndim(out) else float(out)


def ball_potential(r, R: float, d: int):
    """Potential of the unit-mass uniform ball of radius R (Newton)."""
    r = np.asarray(r, dtype=float)
    r2 = r * r
    inside = (r2 + 0.5 * d * (R * R - r2)) / R ** d
    out = np.where(r >= R, g_radial(np.maximum(r, R), d), inside)
    return out if out.ndim else float(out)


def shell_self_energy(R: float, d: int) -> float:
    return float(g_radial(R, d))


def ball_self_energy(R: float, d: int) -> float:
    return 2.0 * d / (d + 2.0) * R ** (2.0 - d)


def cell_self_interaction(cell_volume: float, d: int) -> float:
    """Self-interaction coefficient of one cell: equivalent-volume ball."""
    a = (cell_volume / SpaceParams(d).ball_volume) ** (1.0 / d)
    return ball_self_energy(a, d)


def sphere_average(fn, s: float, r: float, d: int) -> float:
    """Average of the radial function fn(|y|) over the sphere |y - x| = r, |x| = s.

    Uses the cosine-angle density (1-t^2)^((d-3)/2) on [-1, 1].
    """
    if r == 0.0:
        return float(fn(s))
    norm = quad(lambda t: (1.0 - t * t) ** ((d - 3) / 2.0), -1.0, 1.0)[0]
    val = quad(
        lambda t: fn(math.sqrt(max(s * s + r * r - 2.0 * s * r * t, 0.0)))
        * (1.0 - t * t) ** ((d - 3) / 2.0),
        -1.0, 1.0, limit=200,
    )[0]
    return float(val / norm)


def shell_shell_interaction(s: float, Ra: float, Rb: float, d: int) -> float:
    """Interaction of two unit-mass spheres (radii Ra, Rb) at center distance s.

    Exactly g(s) when s >= Ra + Rb; g(max(Ra, Rb)) at s = 0; a one-dimensional
    quadrature in the intersecting range.
    """
    if s >= Ra + Rb:
        return float(g_radial(s, d))
    if s == 0.0:
        return float(g_radial(max(Ra, Rb), d))
    return sphere_average(lambda rr: shell_potential(rr, Ra, d), s, Rb, d)


def ball_ball_interaction(s: float, R: float, d: int) -> float:
    """Interaction of two unit-mass uniform balls of radius R at distance s."""
    if s >= 2.0 * R:
        return float(g_radial(s, d))

    def outer(r):
        return sphere_average(lambda rr: ball_potential(rr, R, d), s, r, d)

    val = quad(lambda r: outer(r) * d * r ** (d - 1) / R ** d, 0.0, R, limit=200)[0]
    return float(val)


# ---------------------------------------------------------------------------
# lattice kernel (FFT-backed quadratic forms)
# ---------------------------------------------------------------------------

class GridKernel:
    """Midpoint cell-to-cell Coulomb form on one lattice geometry, via FFT.

    potential(rho)[i] = cellvol * sum_j K[i-j] rho[j]   (h includes one cellvol)
    energy(rho)       = cellvol * sum_i rho[i] * potential(rho)[i]
    """

    def __init__(self, cells_per_axis: int, spacing: np.ndarray, d: int):
        n = int(cells_per_axis)
        spacing = np.asarray(spacing, dtype=float)
        self.n = n
        self.spacing = spacing
        self.d = d
        self.cell_volume = float(np.prod(spacing))
        self.shape = (n,) * d
        self._pad = tuple(next_fast_len(2 * n - 1) for _ in range(d))
        offs = []
        for k in range(d):
            m = self._pad[k]
            o = np.zeros(m)
            idx = np.arange(m)
            o[idx <= n - 1] = idx[idx <= n - 1]
            neg = idx >= m - (n - 1)
            o[neg] = idx[neg] - m
            valid = (idx <= n - 1) | neg
            offs.append((o * spacing[k], valid))
        r2 = np.zeros(self._pad)
        valid = np.ones(self._pad, dtype=bool)
        for k in range(d):
            shape1 = [1] * d
            shape1[k] = self._pad[k]
            r2 = r2 + (offs[k][0] ** 2).reshape(shape1)
            valid = valid & offs[k][1].reshape(shape1)
        K = np.zeros(self._pad)
        nz = valid & (r2 > 0)
        K[nz] = r2[nz] ** (0.5 * (2.0 - d))
        K[tuple([0] * d)] = cell_self_interaction(self.cell_volume, d)
        self._Kf = rfftn(K)
        self._K0 = K[tuple([0] * d)]

    def potential(self, rho: np.ndarray) -> np.ndarray:
        pad = np.zeros(self._pad)
        pad[tuple(slice(0, self.n) for _ in range(self.d))] = rho
        conv = irfftn(rfftn(pad) * self._Kf, s=self._pad)
        sl = tuple(slice(0, self.n) for _ in range(self.d))
        return conv[sl] * self.cell_volume

    def energy(self, rho: np.ndarray) -> float:
        return float(np.sum(rho * self.potential(rho)) * self.cell_volume)

    def cross(self, rho_a: np.ndarray, rho_b: np.ndarray) -> float:
        return float(np.sum(rho_a * self.potential(rho_b)) * self.cell_volume)


_KERNEL_CACHE: dict = {}


def grid_kernel(m: GridMeasure) -> GridKernel:
    key = (m.cells_per_axis, m.d, tuple(np.round(m.spacing, 15)))
    ker = _KERNEL_CACHE.get(key)
    if ker is None:
        ker = GridKernel(m.cells_per_axis, m.spacing, m.d)
        if len(_KERNEL_CACHE) > 32:
            _KERNEL_CACHE.clear()
        _KERNEL_CACHE[key] = ker
    return ker


def dense_kernel_matrix(like: GridMeasure) -> np.ndarray:
    """Dense (ncells, ncells) midpoint kernel matrix; small grids only."""
    centers = like.cell_centers()
    n = centers.shape[0]
    if n > 20000:
        raise ValueError("dense kernel matrix requested for a large grid")
    diff = centers[:, None, :] - centers[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    K = np.zeros((n, n))
    nz = r2 > 0
    K[nz] = r2[nz] ** (0.5 * (2.0 - like.d))
    np.fill_diagonal(K, cell_self_interaction(like.cell_volume, like.d))
    return K


# ---------------------------------------------------------------------------
# fields, energies, interactions
# ---------------------------------------------------------------------------

def default_smear_radius(like: GridMeasure) -> float:
    return like.cell_diagonal


def potential_field(m: Measure, like: GridMeasure,
                    smear_radius: float | None = None) -> np.ndarray:
    """h^m at the cell centers of `like` (array shaped like its density).

    Grid input must share `like`'s lattice. Atomic input is smeared at
    `smear_radius` (default: one cell diagonal), exactly via Newton's theorem.
    """
    if isinstance(m, GridMeasure):
        if not m.same_lattice(like):
            raise ValueError("potential_field: grid input must share the target lattice")
        return grid_kernel(like).potential(m.density)
    radius = default_smear_radius(like) if smear_radius is None else float(smear_radius)
    flat = kernels.atoms_potential_on_grid(
        np.ascontiguousarray(m.points), m.weight,
        like.box.low, like.spacing,
        np.asarray(like.density.shape, dtype=np.int64),
        like.density.size, radius, float(like.d))
    return flat.reshape(like.density.shape)


def potential_at_points(m: GridMeasure, points: np.ndarray,
                        smear_radius: float | None = None) -> np.ndarray:
    """h^m at arbitrary points, each evaluation smeared at `smear_radius`.

    `smear_radius=0` evaluates the raw kernel against cell centers.
    """
    radius = default_smear_radius(m) if smear_radius is None else float(smear_radius)
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    return kernels.grid_potential_at_points(
        np.ascontiguousarray(m.density.ravel()), m.box.low, m.spacing,
        np.asarray(m.density.shape, dtype=np.int64), pts, radius, float(m.d))


def energy(m: Measure, smear: SmearKind | None = None) -> float:
    """E(m) = double integral of g against m x m, over the whole space.

    Grid measures (signed allowed) evaluate via the lattice form. Raw atomic
    input carries infinite diagonal self-energy: +inf is returned. With a
    `smear`, atoms are replaced by the smearing measure and the energy is
    assembled from analytic pair interactions.
    """
    if isinstance(m, GridMeasure):
        return grid_kernel(m).energy(m.density)
    if smear is None:
        return math.inf
    pts, w, n = m.points, m.weight, m.count
    if smear.kind == "sphere":
        pair = lambda s: shell_shell_interaction(s, smear.radius, smear.radius, m.d)
        self_e = shell_self_energy(smear.radius, m.d)
    else:
        pair = lambda s: ball_ball_interaction(s, smear.radius, m.d)
        self_e = ball_self_energy(smear.radius, m.d)
    total = n * self_e
    for i in range(n):
        for j in range(i + 1, n):
            s = float(np.linalg.norm(pts[i] - pts[j]))
            total += 2.0 * pair(s)
    return float(w * w * total)


def interaction(a: Measure, b: Measure,
                smear_radius: float | None = None) -> float:
    """Bilinear form G(a, b) = double integral of g against a x b.

    grid x grid requires a shared lattice; atomic x grid smears the atoms
    (default one cell diagonal); atomic x atomic is the exact cross-pair sum
    (+inf if configurations share a point).
    """
    if isinstance(a, GridMeasure) and isinstance(b, GridMeasure):
        a._check_lattice(b)
        return grid_kernel(a).cross(a.density, b.density)
    if isinstance(a, AtomicMeasure) and isinstance(b, AtomicMeasure):
        diff = a.points[:, None, :] - b.points[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        if np.any(r2 == 0.0):
            return math.inf
        return float(a.weight * b.weight * np.sum(r2 ** (0.5 * (2.0 - a.d))))
    if isinstance(a, GridMeasure):
        a, b = b, a
    vals = potential_at_points(b, a.points, smear_radius=smear_radius)
    return float(a.weight * np.sum(vals))


def energy_offdiag(atoms: AtomicMeasure | None, grid: GridMeasure | None,
                   box: Box | None = None,
                   smear_radius: float | None = None) -> float:
    """E^{neq}(atoms + grid): the energy with atomic self-pairs removed.

    With `box` given, only self-pairs of atoms inside the box are removed
    (the windowed form E^{neq}_box); an atom outside the box then keeps its
    infinite self-energy and the value is +inf. Cross terms smear atoms at
    `smear_radius` (default: one cell diagonal of the grid).
    """
    total = 0.0
    if atoms is not None and atoms.count > 0:
        if box is not None and not bool(np.all(box.contains(atoms.points))):
            return math.inf
        pair_sum = kernels.pairwise_g_sum(
            np.ascontiguousarray(atoms.points), float(atoms.d))
        total += atoms.weight ** 2 * pair_sum
    if grid is not None:
        total += energy(grid)
        if atoms is not None and atoms.count > 0:
            total += 2.0 * interaction(atoms, grid, smear_radius=smear_radius)
    return float(total)


# ---------------------------------------------------------------------------
# smearing
# ---------------------------------------------------------------------------

def smear(m: AtomicMeasure, kind: SmearKind, like: GridMeasure,
          subsamples: int = 4096) -> GridMeasure:
    """Rasterize the smeared configuration onto `like`'s lattice.

    Deposits a deterministic point cloud per atom and renormalizes so each
    atom contributes exactly its weight (mass is preserved to machine
    precision). Rasterization is for deposits and visualization; quantitative
    forms use the analytic smeared kernel instead.
    """
    rng = np.random.default_rng(20240801)
    rho = np.zeros(like.density.size)
    d = m.d
    for a in range(m.count):
        z = rng.standard_normal((subsamples, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        if kind.kind == "ball":
            u = rng.random(subsamples) ** (1.0 / d)
            z *= u[:, None]
        pts = m.points[a] + kind.radius * z
        idx = like.cell_index(pts)
        idx = idx[idx >= 0]
        if idx.size == 0:
            raise ValueError("smear: atom's smearing support misses the lattice")
        w = m.weight / idx.size
        np.add.at(rho, idx, w)
    rho = rho.reshape(like.density.shape) / like.cell_volume
    return like.with_density(rho, signed=False)


def smeared_energy_bound(m: AtomicMeasure, eps: float) -> tuple[float, float]:
    """Both sides of the sphere-smearing energy bound for the empirical field.

    lhs = (1/N^2) sum_{i != j} g(x_i - x_j)
    rhs = G(phi_eps, phi_eps) - g(eps) * G(lambda_1, lambda_1) / N,

    where phi_eps smears each atom of the empirical measure (weight 1/N) by
    the uniform unit-mass sphere of radius eps and G(lambda_1, lambda_1) =
    E(unit sphere) = 1 in every d >= 3. Always lhs >= rhs; equality holds
    exactly when all pairs are at distance >= 2*eps (the stated sufficient
    condition "eps <= min distance" is loose by the factor 2: intersecting
    spheres interact strictly below g).
    """
    n, d = m.count, m.d
    pts = m.points
    lhs = kernels.pairwise_g_sum(np.ascontiguousarray(pts), float(d)) / n ** 2
    pair_total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s = float(np.linalg.norm(pts[i] - pts[j]))
            pair_total += 2.0 * shell_shell_interaction(s, eps, eps, d)
    g_eps = shell_self_energy(eps, d)
    smeared_energy = (pair_total + n * g_eps) / n ** 2
    rhs = smeared_energy - g_eps * shell_self_energy(1.0, d) / n
    return float(lhs), float(rhs)
