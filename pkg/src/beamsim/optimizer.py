"""Constrained antenna pattern optimisation.

Maximise the peak gain of the full array over the element spacings and the
taper ratios, subject to a side-lobe suppression floor that must hold for
every sub-array size used by the codebook and every steering direction in
the admissible box.

Search: full-factorial grid over (d_x, d_z, alpha_x, alpha_z), candidates
visited in decreasing gain so the first feasible one is the grid optimum,
then a few rounds of coordinate descent with halving steps.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .antenna import (
    ArrayDesign,
    SteeringAngles,
    _centered_af,
    _midpoint_grid,
    peak_gain_g0,
    sidelobe_level_db,
    taper_weights,
)

logger = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    """No evaluated design satisfies the side-lobe constraint."""


@dataclass(frozen=True)
class DesignSpace:
    n_x_min: int
    n_x_max: int
    n_z_min: int
    n_z_max: int
    d_x_max: float = 0.5
    d_z_max: float = 0.7
    theta_min: float = math.radians(92.0)
    theta_max: float = math.radians(110.0)
    phi_max: float = math.radians(50.0)
    sl_threshold_db: float = 30.0
    alpha_min: float = 0.05

    def __post_init__(self):
        if not (1 <= self.n_x_min <= self.n_x_max and 1 <= self.n_z_min <= self.n_z_max):
            raise ValueError("element-count bounds must be ordered and >= 1")
        if not (self.d_x_max > 0 and self.d_z_max > 0):
            raise ValueError("spacing bounds must be positive")
        if not (0 <= self.theta_min <= self.theta_max <= math.pi):
            raise ValueError("elevation steering bounds must be ordered within [0, pi]")
        if not (0 <= self.phi_max <= math.pi / 2):
            raise ValueError("phi_max must lie in [0, pi/2]")
        if self.sl_threshold_db < 0:
            raise ValueError("side-lobe threshold must be non-negative")
        if not (0 < self.alpha_min <= 1):
            raise ValueError("alpha_min must lie in (0, 1]")

    @property
    def center_steer(self) -> SteeringAngles:
        return SteeringAngles(0.5 * (self.theta_min + self.theta_max), 0.0)

    def steering_grid(self, per_axis: int) -> list[SteeringAngles]:
        thetas = np.linspace(self.theta_min, self.theta_max, per_axis)
        phis = np.linspace(-self.phi_max, self.phi_max, per_axis)
        return [SteeringAngles(float(t), float(p)) for t in thetas for p in phis]

    def contains(self, design: ArrayDesign) -> bool:
        return (
            self.n_x_min <= design.n_x <= self.n_x_max
            and self.n_z_min <= design.n_z <= self.n_z_max
            and design.d_x <= self.d_x_max + 1e-12
            and design.d_z <= self.d_z_max + 1e-12
        )


@dataclass(frozen=True)
class OptimizedDesign:
    design: ArrayDesign
    achieved_gain_db: float
    worst_sidelobe_db: float
    feasible: bool
    level_sizes: tuple[tuple[int, int], ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "design": asdict(self.design),
            "achieved_gain_db": self.achieved_gain_db,
            "worst_sidelobe_db": self.worst_sidelobe_db,
            "feasible": self.feasible,
            "level_sizes": [list(s) for s in self.level_sizes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizedDesign":
        return cls(
            design=ArrayDesign(**data["design"]),
            achieved_gain_db=float(data["achieved_gain_db"]),
            worst_sidelobe_db=float(data["worst_sidelobe_db"]),
            feasible=bool(data["feasible"]),
            level_sizes=tuple(tuple(s) for s in data.get("level_sizes", ())),
        )


def _per_axis(steer_samples: int) -> int:
    k = math.isqrt(steer_samples)
    if k * k != steer_samples or k < 3:
        raise ValueError("steer_samples must be a square number >= 9")
    return k


def check_feasibility(
    candidate: ArrayDesign,
    space: DesignSpace,
    steer_samples: int = 25,
    level_sizes=None,
    grid_resolution: int = 512,
) -> tuple[bool, float]:
    """Worst side-lobe suppression over the level sizes and a steering grid.

    ``candidate`` supplies the spacings and tapers; ``level_sizes`` defaults
    to the candidate's own size.
    """
    sizes = list(level_sizes) if level_sizes else [(candidate.n_x, candidate.n_z)]
    worst = math.inf
    for nx, nz in sizes:
        sub = candidate.resized(nx, nz)
        for steer in space.steering_grid(_per_axis(steer_samples)):
            worst = min(worst, sidelobe_level_db(sub, steer, grid_resolution))
    return worst >= space.sl_threshold_db, worst


class _ConstraintChecker:
    """Early-exit feasibility test.

    The (size, steering) pair that rejected the previous candidate is tried
    first: neighbouring candidates tend to fail on the same pair.
    """

    def __init__(self, space, level_sizes, per_axis, grid_resolution):
        self.space = space
        self.grid_resolution = grid_resolution
        self.checks = [(s, st) for s in level_sizes for st in space.steering_grid(per_axis)]
        self.evaluations = 0

    def feasible(self, design: ArrayDesign) -> bool:
        th = self.space.sl_threshold_db
        for i, (size, steer) in enumerate(self.checks):
            self.evaluations += 1
            if sidelobe_level_db(design.resized(*size), steer, self.grid_resolution) < th:
                if i:
                    self.checks.insert(0, self.checks.pop(i))
                return False
        return True


def _batch_gain_db(nx, nz, dxs, axs, dzs, azs, steer, resolution):
    """G0 in dB on the full factorial grid, shape (len(dxs), len(dzs), len(axs), len(azs)).

    The midpoint quadrature separates into a row part (depends on d_x,
    alpha_x) and a column part (d_z, alpha_z); each is computed once.
    """
    u, v, kernel = _midpoint_grid(resolution)
    rows = {}
    for dx, ax in itertools.product(dxs, axs):
        wx, _ = taper_weights(ArrayDesign(nx, nz, dx, 0.5, ax, 1.0))
        a = _centered_af(wx, dx, u - steer.u)
        rows[dx, ax] = np.sum(a * a * kernel, axis=1)
    cols = {}
    for dz, az in itertools.product(dzs, azs):
        _, wz = taper_weights(ArrayDesign(nx, nz, 0.5, dz, 1.0, az))
        b = _centered_af(wz, dz, v - steer.v)
        cols[dz, az] = b * b
    out = np.empty((len(dxs), len(dzs), len(axs), len(azs)))
    for (i, dx), (j, dz), (k, ax), (m, az) in itertools.product(
        enumerate(dxs), enumerate(dzs), enumerate(axs), enumerate(azs)
    ):
        out[i, j, k, m] = 10.0 * np.log10(4.0 * np.pi / float(np.dot(rows[dx, ax], cols[dz, az])))
    return out


def optimize(
    space: DesignSpace,
    level_sizes,
    grid_points: int = 8,
    refine_rounds: int = 3,
    steer_samples: int = 25,
    grid_resolution: int = 512,
    quadrature_resolution: int = 512,
) -> OptimizedDesign:
    """Best feasible full-array design for the given codebook level sizes.

    Raises :class:`InfeasibleError` when no grid point meets the side-lobe
    threshold.
    """
    sizes = [tuple(int(v) for v in s) for s in level_sizes]
    if not sizes:
        raise ValueError("level_sizes must not be empty")
    for nx, nz in sizes:
        if not (space.n_x_min <= nx <= space.n_x_max and space.n_z_min <= nz <= space.n_z_max):
            raise ValueError(f"level size {(nx, nz)} outside the element-count bounds")
    nx_full, nz_full = max(sizes, key=lambda s: (s[0] * s[1], s))
    steer0 = space.center_steer
    per_axis = _per_axis(steer_samples)
    checker = _ConstraintChecker(space, sizes, per_axis, grid_resolution)

    dxs = np.linspace(space.d_x_max / grid_points, space.d_x_max, grid_points)
    dzs = np.linspace(space.d_z_max / grid_points, space.d_z_max, grid_points)
    alphas = np.geomspace(space.alpha_min, 1.0, grid_points)
    alphas[-1] = 1.0
    gains = _batch_gain_db(nx_full, nz_full, dxs, alphas, dzs, alphas, steer0, quadrature_resolution)

    order = sorted(
        itertools.product(range(grid_points), repeat=4),
        # higher gain first; ties go to the physically smaller array
        key=lambda idx: (-round(float(gains[idx]), 9), dzs[idx[1]], dxs[idx[0]], idx),
    )
    best = None
    for i, j, k, m in order:
        cand = ArrayDesign(nx_full, nz_full, float(dxs[i]), float(dzs[j]), float(alphas[k]), float(alphas[m]))
        if checker.feasible(cand):
            best = cand
            best_gain = float(gains[i, j, k, m])
            break
    if best is None:
        raise InfeasibleError(
            f"no grid design reaches {space.sl_threshold_db} dB side-lobe suppression "
            f"({checker.evaluations} side-lobe evaluations)"
        )
    logger.info("grid optimum %s at %.2f dB after %d SL evaluations", best, best_gain, checker.evaluations)

    # coordinate descent around the grid optimum
    def gain_db(d: ArrayDesign) -> float:
        return 10.0 * math.log10(peak_gain_g0(d, steer0, quadrature_resolution, check_convergence=False))

    best_gain = gain_db(best)
    # spacings move linearly, taper ratios geometrically (like the grid)
    log_amin = math.log(space.alpha_min)
    bounds = {"d_x": (1e-3, space.d_x_max), "d_z": (1e-3, space.d_z_max),
              "alpha_x": (log_amin, 0.0), "alpha_z": (log_amin, 0.0)}
    grid_step = 1.0 / max(grid_points - 1, 1)
    steps = {
        "d_x": 0.5 * space.d_x_max * grid_step,
        "d_z": 0.5 * space.d_z_max * grid_step,
        "alpha_x": -0.5 * log_amin * grid_step,
        "alpha_z": -0.5 * log_amin * grid_step,
    }

    def coord(d, name):
        val = getattr(d, name)
        return math.log(val) if name.startswith("alpha") else val

    for _ in range(refine_rounds):
        for name in ("d_x", "d_z", "alpha_x", "alpha_z"):
            lo, hi = bounds[name]
            for sign in (1.0, -1.0):
                x = min(hi, max(lo, coord(best, name) + sign * steps[name]))
                val = math.exp(x) if name.startswith("alpha") else x
                if val == getattr(best, name):
                    continue
                cand = ArrayDesign(**{**asdict(best), name: float(min(val, 1.0) if name.startswith("alpha") else val)})
                g = gain_db(cand)
                if g > best_gain and checker.feasible(cand):
                    best, best_gain = cand, g
                    break
        steps = {k: 0.5 * v for k, v in steps.items()}

    ok, worst = check_feasibility(best, space, steer_samples, sizes, grid_resolution)
    return OptimizedDesign(best, best_gain, worst, ok, tuple(sizes))
