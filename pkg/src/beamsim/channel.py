"""Link budget of the beamformed sector and its macro interferers.

Received power of a link, in watts::

    P * G(direction) * 10^(-PL/10) * 10^(-X/10) * h

with the 128.1 + 37.6 log10(d[km]) path loss, log-normal shadowing ``X``
frozen per user/sector pair and unit-mean Nakagami-m power fading ``h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .antenna import ArrayDesign, SteeringAngles, pattern_power
from .codebook import Beam, Codebook, SectorGeometry

MIN_DISTANCE_M = 10.0


class OutsideSectorError(ValueError):
    """The user position is not inside the beamformed sector."""


@dataclass(frozen=True)
class RadioConfig:
    carrier_ghz: float = 2.6
    bandwidth_hz: float = 10e6
    noise_dbm_hz: float = -174.0
    tx_power_dbm: float = 46.0206  # 40 W
    efficiency: float = 0.75
    se_cap: float = 4.8  # bps/Hz
    shadowing_std_db: float = 6.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.carrier_ghz <= 0 or self.efficiency <= 0 or self.se_cap <= 0:
            raise ValueError("radio parameters must be positive")
        if self.shadowing_std_db < 0:
            raise ValueError("shadowing std must be non-negative")

    @property
    def tx_power_w(self) -> float:
        return 10.0 ** ((self.tx_power_dbm - 30.0) / 10.0)

    @property
    def noise_w(self) -> float:
        return 10.0 ** ((self.noise_dbm_hz - 30.0) / 10.0) * self.bandwidth_hz


@dataclass(frozen=True)
class SectorAntenna:
    """A fixed (non-beamformed) sector pattern."""

    design: ArrayDesign
    steer: SteeringAngles
    peak_gain_db: float

    @classmethod
    def from_beam(cls, book: Codebook, beam: Beam) -> "SectorAntenna":
        return cls(book.subarray_design(beam), beam.steer, beam.peak_gain_db)


@dataclass(frozen=True)
class NetworkLayout:
    """Hexagonal trisector network centred on the beamformed site.

    Sites sit on a hexagonal lattice of spacing ``isd_m`` with neighbours at
    azimuths 0, 60, ... degrees; sectors point at 0/120/240 degrees.  The
    beamformed sector is sector 0 of the central site.  ``rings`` full rings
    of sites surround it.
    """

    isd_m: float
    rings: int = 2
    antenna_height_m: float = 30.0
    ue_height_m: float = 1.5
    interferer_ids: Optional[tuple[int, ...]] = None
    sites: np.ndarray = field(init=False, repr=False)
    sector_xy: np.ndarray = field(init=False, repr=False)
    sector_azimuth: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a1 = np.array([1.0, 0.0])
        a2 = np.array([0.5, math.sqrt(3.0) / 2.0])
        sites = []
        for q in range(-self.rings, self.rings + 1):
            for r in range(-self.rings, self.rings + 1):
                if (abs(q) + abs(r) + abs(q + r)) // 2 <= self.rings:
                    sites.append(self.isd_m * (q * a1 + r * a2))
        # central site first, then by distance and angle for a stable order
        sites.sort(key=lambda p: (round(float(np.hypot(*p)), 6), round(math.atan2(p[1], p[0]) % (2 * math.pi), 9)))
        sites = np.array(sites)
        xy = np.repeat(sites, 3, axis=0)
        az = np.tile(np.radians([0.0, 120.0, 240.0]), len(sites))
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "sector_xy", xy)
        object.__setattr__(self, "sector_azimuth", az)
        if self.interferer_ids is not None:
            bad = [i for i in self.interferer_ids if not 0 < i < len(xy)]
            if bad:
                raise ValueError(f"invalid interferer sector ids {bad}")

    @property
    def n_sectors(self) -> int:
        return len(self.sector_xy)

    @property
    def interferers(self) -> tuple[int, ...]:
        if self.interferer_ids is not None:
            return tuple(self.interferer_ids)
        return tuple(range(1, self.n_sectors))

    @property
    def height_diff_m(self) -> float:
        return self.antenna_height_m - self.ue_height_m

    def local_directions(self, sector: int, x, y):
        """Distance (m, 3-D) and (theta, phi) of ground points seen from a sector antenna."""
        dx = np.asarray(x, dtype=float) - self.sector_xy[sector, 0]
        dy = np.asarray(y, dtype=float) - self.sector_xy[sector, 1]
        az = self.sector_azimuth[sector]
        ca, sa = math.cos(az), math.sin(az)
        lx = ca * dx + sa * dy
        ly = -sa * dx + ca * dy
        rho = np.hypot(lx, ly)
        dist = np.maximum(np.hypot(rho, self.height_diff_m), MIN_DISTANCE_M)
        theta = 0.5 * np.pi + np.arctan2(self.height_diff_m, rho)
        return dist, theta, np.arctan2(ly, lx)


@dataclass
class LinkState:
    pathloss_db: float
    shadowing_db: float
    fading_power: float = 1.0
    m_shape: float = math.inf

    def __post_init__(self):
        if self.m_shape == math.inf and self.fading_power != 1.0:
            raise ValueError("no-fading links must have unit fading power")


def pathloss_db(distance_km):
    d = np.maximum(np.asarray(distance_km, dtype=float), MIN_DISTANCE_M / 1000.0)
    out = 128.1 + 37.6 * np.log10(d)
    return out if out.ndim else float(out)


def draw_fading(m_shape: float, rng: np.random.Generator, size=None):
    """Nakagami-m fading power: Gamma(m, 1/m), unit mean; exactly 1 for m = inf."""
    if m_shape == math.inf:
        return 1.0 if size is None else np.ones(size)
    if not m_shape >= 1:
        raise ValueError(f"Nakagami shape must be >= 1, got {m_shape}")
    return rng.gamma(m_shape, 1.0 / m_shape, size)


def draw_shadowing(rng: np.random.Generator, size, std_db: float = 6.0):
    return rng.normal(0.0, std_db, size)


def rate(sinr_linear, radio: RadioConfig):
    """Achievable bit rate (bits/s): capped, derated Shannon."""
    s = np.maximum(np.asarray(sinr_linear, dtype=float), 0.0)
    bw = radio.bandwidth_hz
    out = np.minimum(radio.efficiency * bw * np.log2(1.0 + s), radio.se_cap * bw)
    return out if out.ndim else float(out)


class LinkBudget:
    """Mean received powers for the serving beams and every interferer.

    Everything except fast fading is deterministic given the shadowing
    draws, so it is evaluated once per user.
    """

    def __init__(self, book: Codebook, layout: NetworkLayout, radio: RadioConfig,
                 interferer: Optional[SectorAntenna] = None):
        self.book = book
        self.layout = layout
        self.radio = radio
        self.interferer = interferer or SectorAntenna.from_beam(book, book.root)

    def check_inside(self, x, y):
        inside = self.book.geometry.contains(x, y)
        if not np.all(inside):
            raise OutsideSectorError("user position outside the beamformed sector")

    def pathloss_linear(self, sector: int, x, y):
        dist, _, _ = self.layout.local_directions(sector, x, y)
        return 10.0 ** (-pathloss_db(dist / 1000.0) / 10.0)

    def serving_power(self, x, y, shadowing_db) -> np.ndarray:
        """Mean received power (W) per beam, shape (n_users, n_beams)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        self.check_inside(x, y)
        loss = self.pathloss_linear(0, x, y) * 10.0 ** (-np.asarray(shadowing_db, dtype=float) / 10.0)
        return self.radio.tx_power_w * self.book.gains(x, y) * loss[:, None]

    def interference_power(self, x, y, shadowing_db) -> np.ndarray:
        """Mean received power (W) from each interferer, shape (n_users, n_interferers).

        ``shadowing_db`` has one column per interferer.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        shadow = np.atleast_2d(np.asarray(shadowing_db, dtype=float))
        ant = self.interferer
        g0 = 10.0 ** (ant.peak_gain_db / 10.0)
        out = np.empty((len(x), len(self.layout.interferers)))
        for k, sector in enumerate(self.layout.interferers):
            dist, theta, phi = self.layout.local_directions(sector, x, y)
            gain = g0 * pattern_power(ant.design, ant.steer, theta, phi)
            out[:, k] = gain * 10.0 ** (-(pathloss_db(dist / 1000.0) + shadow[:, k]) / 10.0)
        return self.radio.tx_power_w * out

    def link_states(self, x: float, y: float, shadowing_db: Sequence[float], m_shape: float = math.inf,
                    fading: Optional[Sequence[float]] = None) -> list[LinkState]:
        """Per-link state of one user: serving sector first, then the interferers."""
        sectors = (0,) + self.layout.interferers
        out = []
        for k, sector in enumerate(sectors):
            dist, _, _ = self.layout.local_directions(sector, x, y)
            h = 1.0 if fading is None else float(fading[k])
            out.append(LinkState(pathloss_db(float(dist) / 1000.0), float(shadowing_db[k]), h, m_shape))
        return out


def sinr(user_pos, beam: Beam, budget: LinkBudget, link_states: Sequence[LinkState]) -> float:
    """Linear SINR of a user served by ``beam``.

    ``link_states[0]`` is the serving sector; the rest follow
    ``layout.interferers``.
    """
    x, y = user_pos
    budget.check_inside(x, y)
    radio = budget.radio
    book = budget.book
    theta, phi = book.geometry.directions(x, y)
    g = 10.0 ** (beam.peak_gain_db / 10.0) * float(pattern_power(book.subarray_design(beam), beam.steer, theta, phi))
    serving = link_states[0]
    signal = radio.tx_power_w * g * 10.0 ** (-(serving.pathloss_db + serving.shadowing_db) / 10.0) * serving.fading_power

    ant = budget.interferer
    g0 = 10.0 ** (ant.peak_gain_db / 10.0)
    interference = 0.0
    for sector, link in zip(budget.layout.interferers, link_states[1:]):
        _, th, ph = budget.layout.local_directions(sector, x, y)
        gi = g0 * float(pattern_power(ant.design, ant.steer, th, ph))
        interference += radio.tx_power_w * gi * 10.0 ** (-(link.pathloss_db + link.shadowing_db) / 10.0) * link.fading_power
    return signal / (interference + radio.noise_w)


def search_match_fraction(budget: LinkBudget, n_users: int = 1000, seed: int = 0) -> float:
    """Share of uniformly placed users whose greedy search ends on the best leaf beam.

    Uses mean SINR without shadowing.  A diagnostic only: the greedy
    descent does not promise the exhaustive optimum.
    """
    from .codebook import exhaustive_best, hierarchical_search

    book = budget.book
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = book.geometry.bbox
    pts = np.empty((0, 2))
    while len(pts) < n_users:
        cand = np.column_stack([rng.uniform(x0, x1, 2 * n_users), rng.uniform(y0, y1, 2 * n_users)])
        pts = np.vstack([pts, cand[book.geometry.contains(cand[:, 0], cand[:, 1])]])
    pts = pts[:n_users]
    sig = budget.serving_power(pts[:, 0], pts[:, 1], np.zeros(n_users))
    intf = budget.interference_power(pts[:, 0], pts[:, 1], np.zeros((n_users, len(budget.layout.interferers))))
    sinr_all = sig / (intf.sum(axis=1) + budget.radio.noise_w)[:, None]
    col = {b.id: k for k, b in enumerate(book.beams)}
    hits = 0
    for row in sinr_all:
        def sinr_of(b, row=row):
            return row[col[b.id]]
        best, _, _ = hierarchical_search(book, sinr_of)
        hits += best is exhaustive_best(book, sinr_of)
    return hits / n_users
