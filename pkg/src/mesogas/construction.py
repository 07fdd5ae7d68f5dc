"""Well-separated point configurations approximating a target measure.

The generator tiles the target's box into cubes of side ``eta_bar``, assigns
each cube an integer count by rounding N times its share of the target mass,
and fills each cube with points drawn uniformly from the cube shrunk by a
boundary layer tau_j, rejecting draws that land closer than tau_j to a point
already accepted. With

    tau_j = separation * eta_bar * n_j^(-1/d)

the layer scales like the typical interparticle distance inside the cube, so
placement succeeds for small separation factors. Points in the same cube are
at distance >= tau_j by construction, and points in different cubes are at
distance >= tau_i + tau_j because each respects its own boundary layer; the
global minimum separation is therefore at least min_j tau_j, exactly.

Three certificates accompany a configuration:

* proximity: bounded-Lipschitz distance between the empirical measure and
  the (normalized) target;
* energy: the Coulomb energy of (empirical - target), with every atom
  replaced by a uniform ball of radius tau_min/2. The separation guarantees
  make the ball-ball cross terms equal to the raw kernel (Newton), so only
  the self-energies change and the quantity is finite and exactly computable;
* potential: the sup over lattice nodes of |h^(empirical* - target)|,
  compared against a bound of the form C/(N eta^d) + C eta + c eta^2 whose
  constants are fitted on calibration runs and then held out.

A separate volume estimate quantifies how much product-reference-measure
volume the constrained placement retains, as a per-N log against the
relative-entropy target -ent[target | reference]: the combinatorial factor
is evaluated exactly with log-gamma, the volume lost to boundary layers and
separation balls is estimated by Monte Carlo, and the finite-N gap between
the exact combinatorics and its large-N limit is reported separately so the
deficit is never hidden inside the estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import kernels
from .coulomb import (SpaceParams, ball_self_energy, energy,
                      potential_at_points, potential_field)
from .grids import AtomicMeasure, Box, GridMeasure, bl_distance, mass, resample

PointConfiguration = AtomicMeasure


# ---------------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CubeTiling:
    """Partition of a box into per_axis^d closed cubes of equal side."""

    box: Box
    per_axis: int

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def count(self) -> int:
        return self.per_axis ** self.d

    @property
    def size(self) -> float:
        return float(2.0 * self.box.half_width[0] / self.per_axis)

    def centers(self) -> np.ndarray:
        low = self.box.low
        h = self.size
        axes = tuple(low[k] + (np.arange(self.per_axis) + 0.5) * h
                     for k in range(self.d))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cube_of(self, points: np.ndarray) -> np.ndarray:
        """Flat index of the cube containing each point, -1 outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (pts - self.box.low) / self.size
        idx = np.floor(rel).astype(np.int64)
        np.clip(idx, 0, self.per_axis - 1, out=idx)
        inside = np.all(np.abs(pts - self.box.center)
                        < self.box.half_width + 1e-12, axis=1)
        flat = np.zeros(pts.shape[0], dtype=np.int64)
        mult = 1
        for k in range(self.d - 1, -1, -1):
            flat += idx[:, k] * mult
            mult *= self.per_axis
        flat[~inside] = -1
        return flat

    @staticmethod
    def build(box: Box, cube_size: float) -> "CubeTiling":
        sides = 2.0 * box.half_width
        if np.ptp(sides) > 1e-9 * sides[0]:
            raise ValueError("tiling requires a cube-shaped box")
        m = sides[0] / cube_size
        per_axis = int(round(m))
        if per_axis < 1 or abs(m - per_axis) > 1e-9 * max(m, 1.0):
            raise ValueError(
                f"cube size {cube_size} does not divide the box side {sides[0]}")
        return CubeTiling(box, per_axis)


def cube_masses(nu: GridMeasure, tiling: CubeTiling) -> np.ndarray:
    """Target mass per cube; each lattice cell counts toward the cube
    holding its center, so the values partition the total mass exactly."""
    idx = tiling.cube_of(nu.cell_centers())
    w = nu.density.ravel() * nu.cell_volume
    out = np.zeros(tiling.count)
    ok = idx >= 0
    np.add.at(out, idx[ok], w[ok])
    return out


# ---------------------------------------------------------------------------
# parameters and report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstructionParams:
    """Inputs of the generator.

    ``target`` is treated as a probability measure (normalized by its mass).
    ``truncate_quantile``, when set, caps the target density at that quantile
    of its positive values and renormalizes before any counting, taming
    targets with extreme peaks; the cap actually applied is recorded in the
    report.
    """

    target: GridMeasure
    N: int
    cube_size: float
    separation: float
    truncate_quantile: float | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one point")
        if not 0.0 < self.separation < 1.0:
            raise ValueError("separation factor must lie in (0, 1)")
        if np.any(self.target.density < 0):
            raise ValueError("target must be a positive measure")
        if mass(self.target) <= 0:
            raise ValueError("target must carry positive mass")
        CubeTiling.build(self.target.box, self.cube_size)

    @property
    def tiling(self) -> CubeTiling:
        return CubeTiling.build(self.target.box, self.cube_size)

    def effective_target(self) -> tuple[GridMeasure, float | None]:
        """Target after optional quantile truncation, plus the cap used."""
        if self.truncate_quantile is None:
            return self.target, None
        rho = self.target.density
        pos = rho[rho > 0]
        level = float(np.quantile(pos, self.truncate_quantile))
        capped = np.minimum(rho, level)
        total = mass(self.target)
        scale = total / (capped.sum() * self.target.cell_volume)
        return self.target.with_density(capped * scale, signed=False), level


@dataclass
class ConstructionReport:
    """Certified summary of one generated configuration."""

    configuration: AtomicMeasure
    min_separation: float
    tau_min: float
    bl_to_target: float
    energy_gap: float
    max_potential_gap: float
    log_volume_estimate: float = math.nan
    separation_ok: bool = True
    boundary_ok: bool = True
    potential_bound: dict | None = None
    truncation_level: float | None = None
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "points": self.configuration.points.tolist(),
            "weight": self.configuration.weight,
            "min_separation": self.min_separation,
            "tau_min": self.tau_min,
            "bl_to_target": self.bl_to_target,
            "energy_gap": self.energy_gap,
            "max_potential_gap": self.max_potential_gap,
            "log_volume_estimate": self.log_volume_estimate,
            "separation_ok": self.separation_ok,
            "boundary_ok": self.boundary_ok,
            "truncation_level": self.truncation_level,
        }
        if self.potential_bound is not None:
            out["potential_bound"] = self.potential_bound
        if self.extras:
            out["extras"] = self.extras
        return out


# ---------------------------------------------------------------------------
# counting
# ---------------------------------------------------------------------------

def round_counts(weights: np.ndarray, N: int) -> np.ndarray:
    """Integer counts n_j in {floor(N w_j), ceil(N w_j)} with sum exactly N.

    Cubes ranked by descending fractional part of N w_j receive the
    ceilings; ties break by cube index, so the rounding is deterministic.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must carry positive mass")
    shares = N * w / total
    base = np.floor(shares).astype(np.int64)
    frac = shares - base
    deficit = int(round(N - base.sum()))
    if deficit:
        order = np.argsort(-frac, kind="stable")
        base[order[:deficit]] += 1
    return base


def assign_counts(nu: GridMeasure, N: int, cube_size: float) -> np.ndarray:
    """Per-cube counts for the tiling of nu's box by cubes of side cube_size."""
    tiling = CubeTiling.build(nu.box, cube_size)
    return round_counts(cube_masses(nu, tiling), N)


def tau_values(counts: np.ndarray, cube_size: float, separation: float,
               d: int) -> np.ndarray:
    """Boundary-layer/separation radius per cube; zero where the count is."""
    n = np.asarray(counts, dtype=float)
    tau = np.zeros_like(n)
    occ = n > 0
    tau[occ] = separation * cube_size * n[occ] ** (-1.0 / d)
    return tau


_tau = tau_values


def _check_packing(n_j: int, cube_size: float, tau: float, d: int,
                   cube_index: int):
    inner = cube_size - 2.0 * tau
    if inner <= 0:
        raise ValueError(
            f"placement infeasible in cube {cube_index}: boundary layer "
            f"{tau:.4g} swallows the cube of side {cube_size:.4g}; "
            "reduce the separation factor")
    ball = SpaceParams(d).ball_volume * (0.5 * tau) ** d
    if n_j * ball > (cube_size - tau) ** d:
        raise ValueError(
            f"placement infeasible in cube {cube_index}: {n_j} disjoint "
            f"balls of radius {0.5 * tau:.4g} cannot fit; "
            "reduce the separation factor")


def place_points(counts: np.ndarray, tiling: CubeTiling, separation: float,
                 seed: int) -> AtomicMeasure:
    """Sequential rejection placement, cube by cube.

    Each cube uses its own RNG stream derived from (seed, cube index), so
    the output is deterministic and cubes could be filled in any order (or
    in parallel) without changing it. A cube's budget is 100 attempts per
    requested point; exhausting it raises with the same advice as the
    packing pre-check.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (tiling.count,):
        raise ValueError("counts do not match the tiling")
    d = tiling.d
    eta = tiling.size
    centers = tiling.centers()
    taus = _tau(counts, eta, separation, d)
    total = int(counts.sum())
    out = np.empty((total, d))
    pos = 0
    for j in np.flatnonzero(counts > 0):
        n_j = int(counts[j])
        tau = taus[j]
        _check_packing(n_j, eta, tau, d, int(j))
        rng = np.random.default_rng((seed, int(j)))
        half = 0.5 * eta - tau
        placed = np.empty((n_j, d))
        got = 0
        budget = 100 * n_j
        while got < n_j:
            if budget <= 0:
                raise ValueError(
                    f"placement budget exhausted in cube {j} after accepting "
                    f"{got}/{n_j} points; reduce the separation factor")
            y = centers[j] + rng.uniform(-half, half, size=d)
            budget -= 1
            if got == 0 or np.min(
                    np.linalg.norm(placed[:got] - y, axis=1)) >= tau:
                placed[got] = y
                got += 1
        out[pos:pos + n_j] = placed
        pos += n_j
    return AtomicMeasure(points=out, weight=1.0 / max(total, 1))


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

def _normalized(nu: GridMeasure) -> GridMeasure:
    m = mass(nu)
    return nu if abs(m - 1.0) < 1e-12 else nu * (1.0 / m)


def separation_radius(counts: np.ndarray, cube_size: float,
                      separation: float, d: int) -> float:
    """min_j tau_j over occupied cubes: the guaranteed global separation."""
    taus = _tau(counts, cube_size, separation, d)
    occ = np.asarray(counts) > 0
    if not occ.any():
        return 0.0
    return float(taus[occ].min())


def _smear_for(tau_min: float, fallback: float) -> float:
    return 0.5 * tau_min if tau_min > 0 else fallback


def energy_gap(configuration: AtomicMeasure, nu: GridMeasure,
               tau_min: float) -> tuple[float, float]:
    """E(empirical* - nu) with atoms smeared at tau_min/2, and that radius.

    Below the guaranteed separation the smeared balls are disjoint, so the
    cross pair terms equal the raw kernel (Newton) and only the per-atom
    self-energies depend on the radius.
    """
    nu = _normalized(nu)
    pts, w, n_pts = configuration.points, configuration.weight, configuration.count
    r_s = _smear_for(tau_min, 0.25 * nu.spacing[0])
    d = nu.d
    pair = kernels.pairwise_g_sum(np.ascontiguousarray(pts), float(d)) \
        if n_pts > 1 else 0.0
    self_e = n_pts * ball_self_energy(r_s, d)
    cross = float(np.sum(potential_at_points(nu, pts, smear_radius=r_s)))
    return float(w * w * (pair + self_e) - 2.0 * w * cross + energy(nu)), r_s


def potential_gap(configuration: AtomicMeasure, nu: GridMeasure,
                  tau_min: float) -> tuple[float, float]:
    """sup over nu's lattice nodes of |h^(empirical* - nu)|, and the radius."""
    nu = _normalized(nu)
    r_s = _smear_for(tau_min, 0.25 * nu.spacing[0])
    h_emp = potential_field(configuration, nu, smear_radius=r_s)
    h_nu = potential_field(nu, nu)
    return float(np.max(np.abs(h_emp - h_nu))), r_s


def certify(configuration: AtomicMeasure, nu: GridMeasure, cube_size: float,
            separation: float, bound_constants: tuple[float, float] | None = None,
            bl_max_sites: int = 1200,
            truncation_level: float | None = None) -> ConstructionReport:
    """Measure everything the construction promises, for any candidate.

    Exact checks (no tolerance): the global minimum pairwise distance is at
    least min_j tau_j, and every point keeps distance tau_j to its cube's
    boundary, where the counts n_j are read off the configuration itself.
    Quantitative certificates: BL distance to the normalized target (on a
    coarsened lattice when the exact LP would exceed ``bl_max_sites``), the
    smeared energy gap, and the sup-node potential gap, optionally compared
    against C/(N eta^d) + C eta + c eta^2 with the given constants.
    """
    nu = _normalized(nu)
    tiling = CubeTiling.build(nu.box, cube_size)
    d = tiling.d
    eta = tiling.size
    pts = configuration.points
    n_pts = configuration.count

    cube_idx = tiling.cube_of(pts)
    counts = np.zeros(tiling.count, dtype=np.int64)
    inside = cube_idx >= 0
    np.add.at(counts, cube_idx[inside], 1)
    taus = _tau(counts, eta, separation, d)
    tau_min = separation_radius(counts, eta, separation, d)

    min_sep = kernels.min_pairwise_distance(np.ascontiguousarray(pts)) \
        if n_pts > 1 else math.inf
    separation_ok = bool(inside.all()) and min_sep >= tau_min

    centers = tiling.centers()
    boundary_ok = bool(inside.all())
    if boundary_ok and n_pts > 0:
        gap_to_wall = 0.5 * eta - np.max(
            np.abs(pts - centers[cube_idx]), axis=1)
        boundary_ok = bool(np.all(gap_to_wall >= taus[cube_idx] - 1e-12))

    # proximity
    bl_nu = nu
    if nu.density.size + n_pts > bl_max_sites:
        budget = max(bl_max_sites - n_pts, 8)
        cpa = max(int(budget ** (1.0 / d)), 2)
        bl_nu = _normalized(resample(nu, nu.box, cpa))
    bl = bl_distance(configuration, bl_nu, max_sites=bl_max_sites)

    e_gap, r_s = energy_gap(configuration, nu, tau_min)
    max_gap, _ = potential_gap(configuration, nu, tau_min)

    bound = None
    if bound_constants is not None:
        C, c_lam = bound_constants
        value = C * (1.0 / (n_pts * eta ** d) + eta) + c_lam * eta ** 2
        bound = {"C": C, "c_lambda": c_lam, "value": value,
                 "satisfied": bool(max_gap <= value)}

    return ConstructionReport(
        configuration=configuration,
        min_separation=float(min_sep),
        tau_min=float(tau_min),
        bl_to_target=float(bl),
        energy_gap=float(e_gap),
        max_potential_gap=max_gap,
        separation_ok=separation_ok,
        boundary_ok=boundary_ok,
        potential_bound=bound,
        truncation_level=truncation_level,
        extras={"counts_nonzero": int(np.count_nonzero(counts)),
                "smear_radius": r_s, "cube_size": eta},
    )


def fit_potential_bound(records) -> tuple[float, float]:
    """Fit (C, c_lambda) so that gap <= C (1/(N eta^d) + eta) + c_lambda eta^2.

    ``records`` holds (N, eta, measured_gap) triples from calibration runs.
    A nonnegative least-squares fit sets the shape; the result is then
    scaled up so the bound envelopes every calibration point, which makes
    the held-out comparison a genuine certificate rather than a regression.
    """
    rows = [(float(n), float(e), float(g)) for n, e, g in records]
    if len(rows) < 2:
        raise ValueError("need at least two calibration records")
    A = np.array([[1.0 / (n * e ** 3) + e, e ** 2] for n, e, _ in rows])
    y = np.array([g for _, _, g in rows])
    from scipy.optimize import nnls
    coef, _ = nnls(A, y)
    if np.all(coef == 0):
        coef = np.array([y.max(), 0.0])
    pred = A @ coef
    ok = pred > 0
    scale = float(np.max(y[ok] / pred[ok])) if ok.any() else 1.0
    coef = coef * max(scale, 1.0)
    return float(coef[0]), float(coef[1])


# ---------------------------------------------------------------------------
# volume
# ---------------------------------------------------------------------------

@dataclass
class VolumeEstimate:
    """Per-N log-volume of the constrained placements, with its anatomy.

    log_volume_per_N = multinomial_per_N + separation_loss_per_N. The
    multinomial term is exact (log-gamma); its deviation from the Sanov
    evaluation of the same count histogram is the finite-N combinatorial
    gap, reported as stirling_gap_per_N (nonpositive). Iterating the object
    yields (log_volume_per_N, target).
    """

    log_volume_per_N: float
    target: float
    multinomial_per_N: float
    sanov_per_N: float
    stirling_gap_per_N: float
    separation_loss_per_N: float
    counts: np.ndarray

    def __iter__(self):
        return iter((self.log_volume_per_N, self.target))


def volume_estimate(nu: GridMeasure, mu_ref: GridMeasure, N: int,
                    cube_size: float, separation: float, trials: int,
                    seed: int, probes: int = 128) -> VolumeEstimate:
    """Estimate (1/N) log of the reference-product volume of the placements.

    The combinatorial factor N! / prod n_j! times prod mu_ref(K_j)^{n_j}
    is evaluated exactly. The volume each cube loses to its boundary layer
    and to the sequential separation balls is estimated by Monte Carlo:
    within a trial the points are placed sequentially and the admissible
    fraction before each placement is measured with uniform probes. The
    reference is assumed close to constant within cubes (it enters through
    cube masses only).
    """
    if trials < 1 or probes < 8:
        raise ValueError("need at least one trial and eight probes")
    nu = _normalized(nu)
    tiling = CubeTiling.build(nu.box, cube_size)
    if not mu_ref.box.same_geometry(nu.box):
        raise ValueError("reference must live on the target's box")
    d, eta = tiling.d, tiling.size
    counts = round_counts(cube_masses(nu, tiling), N)
    q = cube_masses(mu_ref, tiling)
    q = q / q.sum()

    occ = counts > 0
    if np.any(q[occ] <= 0):
        raise ValueError("reference mass vanishes on a cube that needs points")
    log_multi = float(gammaln(N + 1) - gammaln(counts + 1).sum()
                      + (counts[occ] * np.log(q[occ])).sum())
    p = counts / N
    sanov = float(-(p[occ] * np.log(p[occ] / q[occ])).sum())

    taus = _tau(counts, eta, separation, d)
    centers = tiling.centers()
    rng = np.random.default_rng(seed)
    loss = 0.0
    for j in np.flatnonzero(occ):
        n_j = int(counts[j])
        tau = taus[j]
        _check_packing(n_j, eta, tau, d, int(j))
        half = 0.5 * eta - tau
        loss += n_j * d * math.log(2.0 * half / eta)
        if n_j == 1:
            continue
        per_trial = np.zeros(trials)
        for t in range(trials):
            placed = np.empty((n_j, d))
            placed[0] = centers[j] + rng.uniform(-half, half, size=d)
            acc = 0.0
            for pth in range(1, n_j):
                cand = centers[j] + rng.uniform(-half, half, size=(probes, d))
                dist = np.linalg.norm(
                    cand[:, None, :] - placed[None, :pth, :], axis=2)
                ok = np.all(dist >= tau, axis=1)
                frac = ok.mean()
                if frac == 0.0:
                    frac = 0.5 / probes
                    cand_ok = centers[j] + rng.uniform(-half, half, size=d)
                else:
                    cand_ok = cand[np.flatnonzero(ok)[0]]
                acc += math.log(frac)
                placed[pth] = cand_ok
            per_trial[t] = acc
        loss += float(per_trial.mean())

    multinomial_per_N = log_multi / N
    sep_loss_per_N = loss / N
    target = float(-_relative_entropy_prob(nu, mu_ref))
    return VolumeEstimate(
        log_volume_per_N=multinomial_per_N + sep_loss_per_N,
        target=target,
        multinomial_per_N=multinomial_per_N,
        sanov_per_N=sanov,
        stirling_gap_per_N=multinomial_per_N - sanov,
        separation_loss_per_N=sep_loss_per_N,
        counts=counts,
    )


def _relative_entropy_prob(nu: GridMeasure, mu_ref: GridMeasure) -> float:
    from .grids import relative_entropy
    a = _normalized(nu)
    b = _normalized(mu_ref)
    if not a.same_lattice(b):
        b = _normalized(resample(b, a.box, a.cells_per_axis))
    return relative_entropy(a, b)


# ---------------------------------------------------------------------------
# one-call pipeline
# ---------------------------------------------------------------------------

def construct(params: ConstructionParams, seed: int,
              bound_constants: tuple[float, float] | None = None,
              volume_trials: int = 0) -> ConstructionReport:
    """Counts, placement, and certification in one call.

    ``volume_trials > 0`` additionally runs the Monte-Carlo volume estimate
    against the target's own box-uniform reference and stores the per-N log
    in the report.
    """
    target, level = params.effective_target()
    tiling = params.tiling
    counts = round_counts(cube_masses(target, tiling), params.N)
    config = place_points(counts, tiling, params.separation, seed)
    report = certify(config, target, params.cube_size, params.separation,
                     bound_constants=bound_constants,
                     truncation_level=level)
    if volume_trials > 0:
        ref = GridMeasure.uniform(target.box, target.cells_per_axis,
                                  1.0 / target.box.volume)
        est = volume_estimate(target, ref, params.N, params.cube_size,
                              params.separation, volume_trials, seed + 1)
        report.log_volume_estimate = est.log_volume_per_N
        report.extras["volume"] = {
            "target": est.target,
            "multinomial_per_N": est.multinomial_per_N,
            "stirling_gap_per_N": est.stirling_gap_per_N,
            "separation_loss_per_N": est.separation_loss_per_N,
        }
    return report
