"""Rectangular dipole sub-array in front of an infinite PEC reflector.

Angle convention: ``theta`` is measured from the +z axis (zenith), ``phi``
from the array boresight (+x, normal to the reflector).  The reflector
occupies the x=0 plane, so only ``|phi| <= pi/2`` radiates.  Spacings are in
wavelengths.

In direction cosines ``u = sin(theta) sin(phi)`` (along the rows) and
``v = cos(theta)`` (along the columns) the pattern factorises as

    f = |AF_x(u)|^2 |AF_z(v)|^2 * sin^2(pi/2 * w) * (1 - v^2)^1.5,

with ``w = sqrt(1 - u^2 - v^2)``.  :func:`sidelobe_level_db` works on a
(u, v) grid for that reason.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "ArrayDesign",
    "SteeringAngles",
    "Direction",
    "PatternSample",
    "NonConvergenceError",
    "taper_weights",
    "array_factor_x",
    "array_factor_z",
    "image_factor",
    "dipole_gain",
    "normalized_pattern",
    "pattern_power",
    "peak_gain_g0",
    "sidelobe_level_db",
    "sample_pattern",
    "BORESIGHT",
]


class NonConvergenceError(RuntimeError):
    """Quadrature refinement changed the integral by more than the tolerance."""


@dataclass(frozen=True)
class ArrayDesign:
    n_x: int
    n_z: int
    d_x: float = 0.5
    d_z: float = 0.5
    alpha_x: float = 1.0
    alpha_z: float = 1.0

    def __post_init__(self):
        if self.n_x < 1 or self.n_z < 1:
            raise ValueError(f"element counts must be >= 1, got {self.n_x}x{self.n_z}")
        if not (0 < self.d_x and 0 < self.d_z):
            raise ValueError("element spacings must be positive")
        if not (0 < self.alpha_x <= 1 and 0 < self.alpha_z <= 1):
            raise ValueError("taper ratios must lie in (0, 1]")

    @property
    def length_x(self) -> float:
        return (self.n_x - 1) * self.d_x

    @property
    def length_z(self) -> float:
        return (self.n_z - 1) * self.d_z

    def resized(self, n_x: int, n_z: int) -> "ArrayDesign":
        """Same spacings and taper ratios on a different sub-array size."""
        return ArrayDesign(n_x, n_z, self.d_x, self.d_z, self.alpha_x, self.alpha_z)


@dataclass(frozen=True)
class SteeringAngles:
    theta_e: float
    phi_e: float

    @property
    def u(self) -> float:
        return math.sin(self.theta_e) * math.sin(self.phi_e)

    @property
    def v(self) -> float:
        return math.cos(self.theta_e)


BORESIGHT = SteeringAngles(math.pi / 2, 0.0)


@dataclass(frozen=True)
class Direction:
    theta: float
    phi: float


@dataclass(frozen=True)
class PatternSample:
    direction: Direction
    normalized_gain: float
    absolute_gain_db: float


def _gaussian_taper(n: int, d: float, alpha: float) -> NDArray[np.float64]:
    # sigma^2 = (L/2)^2 / (-ln alpha) puts exactly alpha at the edge elements
    if n == 1 or alpha >= 1.0:
        return np.ones(n)
    half = 0.5 * (n - 1) * d
    sigma2 = half * half / -math.log(alpha)
    pos = np.arange(n) * d - half
    w = np.exp(-(pos * pos) / sigma2)
    return w / w.max()


def taper_weights(design: ArrayDesign) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gaussian amplitude taper along x and z, normalised to a unit centre.

    The edge-to-centre amplitude ratio equals ``alpha`` in each direction.
    """
    return (
        _gaussian_taper(design.n_x, design.d_x, design.alpha_x),
        _gaussian_taper(design.n_z, design.d_z, design.alpha_z),
    )


def _array_factor(weights, spacing, cosine, cosine_e):
    psi = 2.0 * np.pi * spacing * (np.asarray(cosine, dtype=float) - cosine_e)
    idx = np.arange(len(weights))
    phasors = np.exp(-1j * np.multiply.outer(psi, idx))
    return phasors @ weights / weights.sum()


def array_factor_x(design: ArrayDesign, steer: SteeringAngles, theta: ArrayLike, phi: ArrayLike):
    """Normalised complex array factor of the rows (x elements)."""
    wx, _ = taper_weights(design)
    u = np.sin(theta) * np.sin(phi)
    return _array_factor(wx, design.d_x, u, steer.u)


def array_factor_z(design: ArrayDesign, steer: SteeringAngles, theta: ArrayLike, phi: ArrayLike = 0.0):
    """Normalised complex array factor of the columns (z elements)."""
    _, wz = taper_weights(design)
    v = np.cos(theta) + np.zeros_like(np.asarray(phi, dtype=float))
    return _array_factor(wz, design.d_z, v, steer.v)


def image_factor(theta: ArrayLike, phi: ArrayLike):
    """Dipole/image pair factor of a reflector a quarter wavelength behind.

    Zero behind the reflector (``|phi| > pi/2``).
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    val = np.sin(0.5 * np.pi * np.sin(theta) * np.cos(phi))
    return np.where(np.abs(phi) <= 0.5 * np.pi, np.maximum(val, 0.0), 0.0)


def dipole_gain(theta: ArrayLike):
    return np.sin(np.asarray(theta, dtype=float)) ** 3


def normalized_pattern(design: ArrayDesign, steer: SteeringAngles, theta: ArrayLike, phi: ArrayLike):
    """Normalised gain ``f`` in the observation direction(s) ``(theta, phi)``."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))
    afx = array_factor_x(design, steer, theta, phi)
    afz = array_factor_z(design, steer, theta, phi)
    f = np.abs(afx * afx * afz * afz) * image_factor(theta, phi) ** 2 * dipole_gain(theta)
    return f if f.ndim else float(f)


# -- fast real-valued path ----------------------------------------------------
#
# Symmetric real weights make the phase-centred array factor real, so
# |AF|^2 reduces to a cosine sum.  Used on dense grids.


def _centered_af(weights: NDArray, spacing: float, delta: NDArray) -> NDArray:
    """Signed, phase-centred array factor as a function of a cosine offset."""
    psi = 2.0 * np.pi * spacing * delta
    k = np.arange(len(weights)) - 0.5 * (len(weights) - 1)
    half = len(weights) // 2
    # pair symmetric elements: w_k cos(k psi) + w_-k cos(-k psi)
    out = np.zeros_like(psi)
    for i in range(half):
        out += 2.0 * weights[i] * np.cos(k[i] * psi)
    if len(weights) % 2:
        out += weights[half]
    return out / weights.sum()


def _envelope(u: NDArray, v: NDArray) -> NDArray:
    """Image-factor^2 times dipole pattern, written in direction cosines."""
    w2 = 1.0 - u * u - v * v
    inside = w2 >= 0
    w = np.sqrt(np.where(inside, w2, 0.0))
    env = np.sin(0.5 * np.pi * w) ** 2 * np.clip(1.0 - v * v, 0.0, None) ** 1.5
    return np.where(inside, env, 0.0)


def pattern_power(design: ArrayDesign, steer: SteeringAngles, theta: ArrayLike, phi: ArrayLike):
    """Same value as :func:`normalized_pattern`, evaluated with real arithmetic.

    Intended for large vectorised evaluations (coverage rasters, link gains).
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    wx, wz = taper_weights(design)
    u = np.sin(theta) * np.sin(phi)
    v = np.cos(theta)
    ax = _centered_af(wx, design.d_x, u - steer.u)
    az = _centered_af(wz, design.d_z, v - steer.v)
    env = image_factor(theta, phi) ** 2 * dipole_gain(theta)
    return ax * ax * az * az * env


@lru_cache(maxsize=8)
def _midpoint_grid(n: int):
    step = np.pi / n
    theta = (np.arange(n) + 0.5) * step
    phi = -0.5 * np.pi + (np.arange(n) + 0.5) * step
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    u = np.sin(tt) * np.sin(pp)
    v = np.cos(theta)
    # element pattern, image factor, Jacobian and cell area folded together
    kernel = image_factor(tt, pp) ** 2 * dipole_gain(tt) * np.sin(tt) * step * step
    return u, v, kernel


def _pattern_integral(design: ArrayDesign, steer: SteeringAngles, n: int) -> float:
    u, v, kernel = _midpoint_grid(n)
    wx, wz = taper_weights(design)
    ax = _centered_af(wx, design.d_x, u - steer.u)
    az = _centered_af(wz, design.d_z, v - steer.v)
    # sum over phi first, then theta: fixed reduction order
    per_theta = np.sum(ax * ax * kernel, axis=1)
    return float(np.dot(per_theta, az * az))


def peak_gain_g0(
    design: ArrayDesign,
    steer: SteeringAngles = BORESIGHT,
    resolution: int = 512,
    check_convergence: bool = True,
    tol: float = 5e-3,
) -> float:
    """Peak gain ``G0`` (linear) from power conservation.

    Midpoint rule on a ``resolution x resolution`` grid over theta in [0, pi]
    and phi in [-pi/2, pi/2].  With ``check_convergence`` the integral is
    recomputed at double resolution and :class:`NonConvergenceError` is
    raised when the two differ by more than ``tol`` (relative).
    """
    if resolution < 64:
        raise ValueError("quadrature resolution must be >= 64")
    integral = _pattern_integral(design, steer, resolution)
    if check_convergence:
        fine = _pattern_integral(design, steer, 2 * resolution)
        if abs(fine - integral) > tol * fine:
            raise NonConvergenceError(
                f"G0 integral moved {abs(fine - integral) / fine:.3%} on refinement "
                f"({resolution} -> {2 * resolution})"
            )
    return 4.0 * np.pi / integral


def to_db(x):
    return 10.0 * np.log10(x)


# -- side lobes -----------------------------------------------------------------


@lru_cache(maxsize=4)
def _cosine_grid(n: int):
    c = -1.0 + (np.arange(n) + 0.5) * (2.0 / n)
    uu, vv = np.meshgrid(c, c, indexing="xy")  # rows follow v, columns follow u
    return c, _envelope(uu, vv)


def _main_interval(af: NDArray, center: int) -> tuple[int, int]:
    """Index range [lo, hi] between the first local minima of |af| around ``center``."""
    mag = np.abs(af)
    n = len(mag)
    # the steering cosine can fall between samples: climb to the lobe top first
    while center + 1 < n and mag[center + 1] > mag[center]:
        center += 1
    while center - 1 >= 0 and mag[center - 1] > mag[center]:
        center -= 1
    hi = center
    while hi + 1 < n and mag[hi + 1] <= mag[hi]:
        hi += 1
    lo = center
    while lo - 1 >= 0 and mag[lo - 1] <= mag[lo]:
        lo -= 1
    return lo, hi


def sidelobe_level_db(design: ArrayDesign, steer: SteeringAngles, grid_resolution: int = 1024) -> float:
    """Side-lobe suppression in dB: main-lobe peak over the strongest lobe outside it.

    The main lobe is the cell around the steering direction bounded by the
    first local minima of the row and column array factors along the two
    principal cuts.  Returns ``math.inf`` when nothing radiates outside that
    cell (e.g. a single element).
    """
    c, env = _cosine_grid(grid_resolution)
    wx, wz = taper_weights(design)
    ax = _centered_af(wx, design.d_x, c - steer.u)
    az = _centered_af(wz, design.d_z, c - steer.v)
    iu = int(np.argmin(np.abs(c - steer.u)))
    iv = int(np.argmin(np.abs(c - steer.v)))
    ulo, uhi = _main_interval(ax, iu)
    vlo, vhi = _main_interval(az, iv)

    px = ax * ax
    pz = az * az
    main = pz[vlo:vhi + 1, None] * px[None, ulo:uhi + 1] * env[vlo:vhi + 1, ulo:uhi + 1]
    peak = max(float(main.max()), float(normalized_pattern(design, steer, steer.theta_e, steer.phi_e)))

    side = 0.0
    rows_out = np.r_[0:vlo, vhi + 1:grid_resolution]
    cols_out = np.r_[0:ulo, uhi + 1:grid_resolution]
    if rows_out.size:
        side = max(side, float((pz[rows_out, None] * px[None, :] * env[rows_out, :]).max()))
    if cols_out.size:
        block = pz[vlo:vhi + 1, None] * px[None, cols_out] * env[vlo:vhi + 1][:, cols_out]
        side = max(side, float(block.max()))
    if side <= 0.0 or peak <= 0.0:
        return math.inf
    return float(10.0 * np.log10(peak / side))


def sample_pattern(
    design: ArrayDesign, steer: SteeringAngles, directions: list[Direction], g0: float | None = None
) -> list[PatternSample]:
    if g0 is None:
        g0 = peak_gain_g0(design, steer, check_convergence=False)
    out = []
    for d in directions:
        f = float(normalized_pattern(design, steer, d.theta, d.phi))
        gain_db = 10.0 * math.log10(g0 * f) if f > 0 else -math.inf
        out.append(PatternSample(d, f, gain_db))
    return out
