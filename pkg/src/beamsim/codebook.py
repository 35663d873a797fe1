"""Multilevel beam codebook.

Level 0 holds one wide beam covering the whole sector.  Every beam at level
``l < L`` has two children at level ``l + 1`` built from the next, larger
sub-array; the children split the parent's nominal angular region in two
along either azimuth or elevation.  Coverage of a beam is its best-server
region among the beams of its level on a ground raster.

With ``relaxed=False`` the coverage of level ``l + 1`` is assigned inside
each parent's coverage only, so the union of two children never leaves the
parent.  With ``relaxed=True`` it is the plain best-server map of the level
and children may cover ground their parent does not.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .antenna import ArrayDesign, SteeringAngles, _centered_af, pattern_power, peak_gain_g0, taper_weights
from .optimizer import OptimizedDesign

logger = logging.getLogger(__name__)

AZIMUTH = "azimuth"
ELEVATION = "elevation"


class CoverageError(RuntimeError):
    """A level leaves too much of the sector without a serving beam."""


@dataclass(frozen=True)
class SectorGeometry:
    """Trisector hexagonal cell seen from its own site.

    The site sits at the origin with the sector boresight along +x.  The
    sector is the hexagon of circumradius ``isd/3`` that has the site as a
    vertex; it reaches ``2 isd / 3`` along boresight.
    """

    isd_m: float
    antenna_height_m: float = 30.0
    ue_height_m: float = 1.5
    pixel_m: float = 5.0
    span_deg: float = 120.0

    @property
    def cell_radius_m(self) -> float:
        return self.isd_m / 3.0

    @property
    def height_diff_m(self) -> float:
        return self.antenna_height_m - self.ue_height_m

    @property
    def area_km2(self) -> float:
        r = self.cell_radius_m / 1000.0
        return 1.5 * math.sqrt(3.0) * r * r

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        r = self.cell_radius_m
        h = r * math.sqrt(3.0) / 2.0
        return 0.0, 2.0 * r, -h, h

    def contains(self, x, y):
        r = self.cell_radius_m
        apothem = r * math.sqrt(3.0) / 2.0
        dx = np.asarray(x, dtype=float) - r
        dy = np.asarray(y, dtype=float)
        inside = np.ones(np.broadcast(dx, dy).shape, dtype=bool)
        for ang in (30.0, 90.0, 150.0):
            a = math.radians(ang)
            proj = np.abs(dx * math.cos(a) + dy * math.sin(a))
            inside &= proj <= apothem + 1e-9
        return inside

    def directions(self, x, y):
        """(theta, phi) from the sector antenna towards ground points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        rho = np.hypot(x, y)
        theta = 0.5 * np.pi + np.arctan2(self.height_diff_m, rho)
        return theta, np.arctan2(y, x)

    def steer_towards(self, x: float, y: float) -> SteeringAngles:
        theta, phi = self.directions(x, y)
        return SteeringAngles(float(theta), float(phi))

    def pixel_grid(self):
        """Pixel centres (X, Y) on a y-symmetric grid and the in-sector mask."""
        x0, x1, _, y1 = self.bbox
        c = self.pixel_m
        nx = int(math.ceil((x1 - x0) / c))
        ny_half = int(math.ceil(y1 / c))
        xs = x0 + (np.arange(nx) + 0.5) * c
        k = np.arange(ny_half) + 0.5
        ys = np.concatenate([-k[::-1], k]) * c
        X, Y = np.meshgrid(xs, ys)
        return X, Y, self.contains(X, Y)


@dataclass(frozen=True)
class LevelSpec:
    n_x: int
    n_z: int
    split_axis: Optional[str] = None

    def __post_init__(self):
        if self.split_axis not in (None, AZIMUTH, ELEVATION):
            raise ValueError(f"unknown split axis {self.split_axis!r}")


@dataclass(frozen=True)
class Beam:
    id: int
    level: int
    index: int
    subarray: tuple[int, int]
    steer: SteeringAngles
    peak_gain_db: float
    parent: Optional[int] = None
    children: tuple[int, ...] = ()


@dataclass
class Codebook:
    levels: list[list[Beam]]
    design: OptimizedDesign
    geometry: SectorGeometry
    level_specs: list[LevelSpec]
    relaxed: bool = False
    rasters: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._by_id = {b.id: b for lvl in self.levels for b in lvl}
        if not self.rasters:
            self.rasters = compute_rasters(self)

    @property
    def depth(self) -> int:
        """Highest level index L."""
        return len(self.levels) - 1

    @property
    def beams(self) -> list[Beam]:
        return [b for lvl in self.levels for b in lvl]

    @property
    def root(self) -> Beam:
        return self.levels[0][0]

    def beam(self, beam_id: int) -> Beam:
        return self._by_id[beam_id]

    def children(self, beam: Beam) -> list[Beam]:
        return [self._by_id[c] for c in beam.children]

    def subarray_design(self, beam: Beam) -> ArrayDesign:
        return self.design.design.resized(*beam.subarray)

    def gains(self, x, y, beams=None) -> np.ndarray:
        """Absolute linear gain of each beam towards ground points, shape (n_points, n_beams)."""
        beams = self.beams if beams is None else beams
        theta, phi = self.geometry.directions(np.ravel(x), np.ravel(y))
        out = np.empty((theta.size, len(beams)))
        for k, b in enumerate(beams):
            f = pattern_power(self.subarray_design(b), b.steer, theta, phi)
            out[:, k] = 10.0 ** (b.peak_gain_db / 10.0) * f
        return out

    def coverage(self, beam: Beam) -> np.ndarray:
        return coverage(beam, self.rasters[beam.level])

    def sector_pixels(self) -> int:
        return int(self.geometry.pixel_grid()[2].sum())

    def inclusion_report(self) -> list[float]:
        """Per parent level, fraction of child-covered pixels inside the parent's coverage."""
        out = []
        for l in range(self.depth):
            inside = total = 0
            for parent in self.levels[l]:
                pmask = self.coverage(parent)
                for child in self.children(parent):
                    cmask = self.coverage(child)
                    total += int(cmask.sum())
                    inside += int((cmask & pmask).sum())
            out.append(inside / total if total else 1.0)
        return out

    def inclusion_holds(self) -> bool:
        return all(frac == 1.0 for frac in self.inclusion_report())

    # -- serialisation ------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "beamsim-codebook/1",
            "design": self.design.to_dict(),
            "geometry": asdict(self.geometry),
            "relaxed": self.relaxed,
            "level_specs": [asdict(s) for s in self.level_specs],
            "beams": [
                {
                    "id": b.id,
                    "level": b.level,
                    "index": b.index,
                    "subarray": list(b.subarray),
                    "theta_e": b.steer.theta_e,
                    "phi_e": b.steer.phi_e,
                    "peak_gain_db": b.peak_gain_db,
                    "parent": b.parent,
                    "children": list(b.children),
                }
                for b in self.beams
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Codebook":
        levels: list[list[Beam]] = []
        for rec in data["beams"]:
            beam = Beam(
                id=int(rec["id"]),
                level=int(rec["level"]),
                index=int(rec["index"]),
                subarray=tuple(rec["subarray"]),
                steer=SteeringAngles(float(rec["theta_e"]), float(rec["phi_e"])),
                peak_gain_db=float(rec["peak_gain_db"]),
                parent=rec["parent"],
                children=tuple(rec["children"]),
            )
            while len(levels) <= beam.level:
                levels.append([])
            levels[beam.level].append(beam)
        return cls(
            levels=levels,
            design=OptimizedDesign.from_dict(data["design"]),
            geometry=SectorGeometry(**data["geometry"]),
            level_specs=[LevelSpec(**s) for s in data["level_specs"]],
            relaxed=bool(data["relaxed"]),
        )

    def save(self, path) -> None:
        # json writes floats with repr(), which round-trips bit-exactly
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "Codebook":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def export_rasters_csv(self, directory) -> list:
        """One CSV per level: x_m, y_m, beam_id (0 outside the sector)."""
        from pathlib import Path

        X, Y, _ = self.geometry.pixel_grid()
        paths = []
        for l, raster in enumerate(self.rasters):
            path = Path(directory) / f"coverage_level{l}.csv"
            table = np.column_stack([X.ravel(), Y.ravel(), raster.ravel()])
            np.savetxt(path, table, delimiter=",", header="x_m,y_m,beam_id", comments="", fmt=["%.2f", "%.2f", "%d"])
            paths.append(path)
        return paths


def coverage(beam: Beam, level_raster: np.ndarray) -> np.ndarray:
    """Boolean pixel mask of the ground where ``beam`` is the best server of its level."""
    return level_raster == beam.id


def level0_steering(design: ArrayDesign, geometry: SectorGeometry) -> SteeringAngles:
    """Boresight azimuth with the downtilt that puts the upper -3 dB elevation point on the cell edge."""
    _, wz = taper_weights(design)
    theta_edge = float(geometry.directions(2.0 * geometry.cell_radius_m, 0.0)[0])

    def excess(theta_e):
        a = _centered_af(wz, design.d_z, np.array([math.cos(theta_edge) - math.cos(theta_e)]))[0]
        return a * a - 0.5

    hi = theta_edge
    while excess(hi) > 0 and hi < math.pi - 1e-3:
        hi = min(hi + math.radians(1.0), math.pi - 1e-3)
    if excess(hi) > 0:
        return SteeringAngles(theta_edge, 0.0)
    return SteeringAngles(brentq(excess, theta_edge, hi, xtol=1e-12), 0.0)


def _split(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Halve a pixel set at the median of ``values``."""
    med = np.median(values[mask])
    return mask & (values < med), mask & (values >= med)


def build_codebook(
    design: OptimizedDesign,
    geometry: SectorGeometry,
    levels_spec,
    relaxed: bool = False,
    max_gap_fraction: float = 0.02,
    quadrature_resolution: int = 512,
) -> Codebook:
    """Construct the beam tree and its coverage rasters.

    ``levels_spec[0]`` is the level-0 sub-array; each following entry gives
    the sub-array size of that level and the axis along which parents are
    split.
    """
    specs = [s if isinstance(s, LevelSpec) else LevelSpec(*s) for s in levels_spec]
    if not specs:
        raise ValueError("levels_spec must contain at least the level-0 entry")
    for s in specs[1:]:
        if s.split_axis is None:
            raise ValueError("levels above 0 need a split axis")

    X, Y, inside = geometry.pixel_grid()
    theta, phi = geometry.directions(X, Y)
    axis_values = {AZIMUTH: phi, ELEVATION: theta}
    full = design.design
    gain_cache: dict = {}

    def gain_db(size, steer):
        key = (size, steer)
        if key not in gain_cache:
            g0 = peak_gain_g0(full.resized(*size), steer, quadrature_resolution, check_convergence=False)
            gain_cache[key] = 10.0 * math.log10(g0)
        return gain_cache[key]

    size0 = (specs[0].n_x, specs[0].n_z)
    steer0 = level0_steering(full.resized(*size0), geometry)
    # (steer, size, nominal region mask, parent position) per beam under construction
    staged = [[(steer0, size0, inside, None)]]
    for l, spec in enumerate(specs[1:], start=1):
        level = []
        for p, (_, _, region, _) in enumerate(staged[l - 1]):
            for half in _split(axis_values[spec.split_axis], region):
                if not half.any():
                    logger.info("pruned empty child of level-%d beam %d", l - 1, p + 1)
                    continue
                steer = geometry.steer_towards(float(X[half].mean()), float(Y[half].mean()))
                level.append((steer, (spec.n_x, spec.n_z), half, p))
        staged.append(level)

    # assign ids in level order; indices within a level follow 2j-1, 2j
    ids = []
    next_id = 1
    for level in staged:
        ids.append(list(range(next_id, next_id + len(level))))
        next_id += len(level)
    children: dict[tuple[int, int], list[int]] = {}
    for l in range(1, len(staged)):
        for k, (_, _, _, p) in enumerate(staged[l]):
            children.setdefault((l - 1, p), []).append(ids[l][k])
    levels = []
    for l, level in enumerate(staged):
        beams = []
        for k, (steer, size, _, p) in enumerate(level):
            beams.append(
                Beam(
                    id=ids[l][k],
                    level=l,
                    index=k + 1,
                    subarray=size,
                    steer=steer,
                    peak_gain_db=gain_db(size, steer),
                    parent=None if p is None else ids[l - 1][p],
                    children=tuple(children.get((l, k), ())),
                )
            )
        levels.append(beams)

    book = Codebook(levels=levels, design=design, geometry=geometry, level_specs=specs, relaxed=relaxed)
    n_sector = int(inside.sum())
    for l, raster in enumerate(book.rasters):
        gaps = int((inside & (raster == 0)).sum())
        if gaps > max_gap_fraction * n_sector:
            raise CoverageError(f"level {l} leaves {gaps}/{n_sector} sector pixels uncovered")
    return book


def compute_rasters(book: Codebook) -> list[np.ndarray]:
    """Best-server beam id per pixel for every level (0 outside the sector or uncovered)."""
    X, Y, inside = book.geometry.pixel_grid()
    xs, ys = X[inside], Y[inside]
    rasters = []
    owner = None
    for l, level in enumerate(book.levels):
        g = book.gains(xs, ys, level)
        ids = np.array([b.id for b in level])
        if l == 0 or book.relaxed:
            best = ids[np.argmax(g, axis=1)]
            best[g.max(axis=1) <= 0] = 0
        else:
            # restrict each pixel to the children of its current owner
            col = {b.id: k for k, b in enumerate(level)}
            best = np.zeros(len(xs), dtype=int)
            for parent in book.levels[l - 1]:
                sel = owner == parent.id
                if not sel.any():
                    continue
                kids = list(parent.children)
                if not kids:
                    continue
                sub = g[np.ix_(sel, [col[c] for c in kids])]
                best[sel] = np.asarray(kids)[np.argmax(sub, axis=1)]
        raster = np.zeros(X.shape, dtype=int)
        raster[inside] = best
        rasters.append(raster)
        owner = best
    return rasters


# -- beam selection -------------------------------------------------------------------


def select_beam_step(
    book: Codebook,
    current_best: Beam,
    cursor: Optional[Beam],
    sinr_of: Callable[[Beam], float],
    relaxed: Optional[bool] = None,
    max_level: Optional[int] = None,
    best_sinr: Optional[float] = None,
) -> tuple[Beam, Optional[Beam], int]:
    """One iteration of the greedy descent.

    Probes the two children of ``cursor`` and keeps the best of them and
    ``current_best``.  Returns ``(new_best, next_cursor, probes_used)``;
    ``next_cursor`` is ``None`` once the search has converged.  Pass
    ``best_sinr`` to avoid re-evaluating ``current_best``.
    """
    relaxed = book.relaxed if relaxed is None else relaxed
    top = book.depth if max_level is None else min(max_level, book.depth)
    if cursor is None or cursor.level >= top or not cursor.children:
        return current_best, None, 0
    kids = book.children(cursor)
    scores = [sinr_of(k) for k in kids]
    best_child = kids[int(np.argmax(scores))]
    if best_sinr is None:
        best_sinr = sinr_of(current_best)
    if max(scores) > best_sinr:
        new_best = best_child
        nxt = best_child
    else:
        new_best = current_best
        nxt = best_child if relaxed else None
    if nxt is not None and (nxt.level >= top or not nxt.children):
        nxt = None
    return new_best, nxt, len(kids)


def hierarchical_search(
    book: Codebook,
    sinr_of: Callable[[Beam], float],
    relaxed: Optional[bool] = None,
    max_level: Optional[int] = None,
) -> tuple[Beam, list[float], int]:
    """Run the descent to convergence.

    Returns the selected beam, the running-best SINR after every step and
    the total number of probes (the level-0 probe included).
    """
    best = cursor = book.root
    trace = [sinr_of(best)]
    probes = 1
    while cursor is not None:
        best, cursor, used = select_beam_step(book, best, cursor, sinr_of, relaxed, max_level, trace[-1])
        if not used:
            break
        probes += used
        trace.append(sinr_of(best))
    return best, trace, probes


def exhaustive_best(book: Codebook, sinr_of: Callable[[Beam], float], level: Optional[int] = None) -> Beam:
    pool = book.levels[book.depth if level is None else level]
    return max(pool, key=sinr_of)
