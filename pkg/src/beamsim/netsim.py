"""Event-based simulation of the beamformed sector.

Sessions arrive as a spatial Poisson process over the sector, download an
exponentially sized file and leave.  Time advances in scheduling slots; in
each slot the proportional-fair scheduler gives the whole band to one user,
after which that user takes one step of the hierarchical beam search.
Idle periods are skipped.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .channel import LinkBudget, draw_fading, rate
from .codebook import Codebook, SectorGeometry, select_beam_step

logger = logging.getLogger(__name__)

P0_W = 260.0
PC_SLOPE = 2 * 4.7


class SimulationUnstable(RuntimeError):
    """The number of users in the system exceeded the configured cap."""


@dataclass(frozen=True)
class Hotspot:
    x_m: float
    y_m: float
    std_m: float
    peak_intensity: float  # users/s/km^2 at the centre


@dataclass(frozen=True)
class TrafficModel:
    uniform_intensity: float  # users/s/km^2
    hotspot: Optional[Hotspot] = None

    def __post_init__(self):
        if self.uniform_intensity < 0 or (self.hotspot and self.hotspot.peak_intensity < 0):
            raise ValueError("traffic intensities must be non-negative")

    def intensity(self, x, y):
        lam = np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(self.uniform_intensity))
        if self.hotspot is not None:
            h = self.hotspot
            r2 = (np.asarray(x) - h.x_m) ** 2 + (np.asarray(y) - h.y_m) ** 2
            lam = lam + h.peak_intensity * np.exp(-0.5 * r2 / (h.std_m * h.std_m))
        return lam

    @property
    def max_intensity(self) -> float:
        return self.uniform_intensity + (self.hotspot.peak_intensity if self.hotspot else 0.0)

    def arrival_rate(self, region: SectorGeometry, cell_m: float = 2.0) -> float:
        """Expected arrivals per second inside ``region`` (midpoint rule)."""
        x0, x1, y0, y1 = region.bbox
        xs = np.arange(x0 + 0.5 * cell_m, x1, cell_m)
        ys = np.arange(y0 + 0.5 * cell_m, y1, cell_m)
        X, Y = np.meshgrid(xs, ys)
        lam = np.where(region.contains(X, Y), self.intensity(X, Y), 0.0)
        return float(lam.sum() * (cell_m / 1000.0) ** 2)


def draw_arrivals(traffic: TrafficModel, dt: float, region: SectorGeometry, rng: np.random.Generator):
    """Arrival times in [0, dt) and positions, by thinning a homogeneous process.

    Returns ``(times, xy)`` sorted by time.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    lam_max = traffic.max_intensity
    x0, x1, y0, y1 = region.bbox
    area_km2 = (x1 - x0) * (y1 - y0) / 1e6
    n = rng.poisson(lam_max * area_km2 * dt) if lam_max > 0 else 0
    t = rng.uniform(0.0, dt, n)
    x = rng.uniform(x0, x1, n)
    y = rng.uniform(y0, y1, n)
    keep = rng.uniform(0.0, lam_max, n) < traffic.intensity(x, y) if n else np.zeros(0, bool)
    keep &= region.contains(x, y)
    t, x, y = t[keep], x[keep], y[keep]
    order = np.argsort(t, kind="stable")
    return t[order], np.column_stack([x[order], y[order]])


def power_consumption(busy_fraction, tx_power_w: float, p0: float = P0_W, slope: float = PC_SLOPE):
    """Linear base-station power model (W)."""
    busy = np.asarray(busy_fraction, dtype=float)
    if np.any((busy < 0) | (busy > 1)):
        raise ValueError("busy fraction must lie in [0, 1]")
    out = p0 + slope * tx_power_w * busy
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SimParams:
    m_shape: float = math.inf
    level_cap: Optional[int] = None
    slot_s: float = 1e-3
    pf_window: float = 100.0
    mean_file_bits: float = 4e6
    user_cap: int = 500
    cet_percentile: float = 5.0


@dataclass
class KpiReport:
    mut_bps: float
    cet_bps: float
    pc_w: float
    busy_fraction: float
    sessions: int
    mean_probes: float
    max_probes: int
    beam_histogram: dict
    seed: int
    config: dict = field(default_factory=dict)
    traces: list = field(default_factory=list, repr=False)

    def to_dict(self, with_traces: bool = False) -> dict:
        d = asdict(self)
        d["beam_histogram"] = {str(k): v for k, v in sorted(self.beam_histogram.items())}
        if not with_traces:
            d.pop("traces")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "KpiReport":
        data = dict(data)
        data["beam_histogram"] = {int(k): v for k, v in data["beam_histogram"].items()}
        data.setdefault("traces", [])
        return cls(**data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "KpiReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_traces_csv(self, path) -> None:
        cols = ["session", "arrival_s", "x_m", "y_m", "file_bits", "sojourn_s", "throughput_bps", "final_beam", "probes"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for tr in self.traces:
                w.writerow([tr[c] for c in cols])

    def write_histogram_csv(self, path) -> None:
        total = sum(self.beam_histogram.values()) or 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beam_id", "slots", "probability"])
            for k, v in sorted(self.beam_histogram.items()):
                w.writerow([k, v, v / total])


@dataclass
class Sessions:
    """Everything about the offered sessions that does not depend on scheduling."""

    arrival: np.ndarray
    xy: np.ndarray
    file_bits: np.ndarray
    signal: np.ndarray  # (n, n_beams) mean received power per beam, W
    interference: np.ndarray  # (n, n_interferers) mean received power, W

    def __len__(self):
        return len(self.arrival)


def generate_sessions(budget: LinkBudget, traffic: TrafficModel, horizon: float, seed: int,
                      mean_file_bits: float = 4e6, shadowing_std_db: Optional[float] = None) -> Sessions:
    """Arrivals, file sizes and mean link powers, from independent streams of ``seed``.

    The streams do not depend on scheduling or fading, so runs that differ
    only in those share the same sessions.
    """
    root = np.random.SeedSequence(seed)
    s_arr, s_file, s_shadow, _ = root.spawn(4)
    times, xy = draw_arrivals(traffic, horizon, budget.book.geometry, np.random.default_rng(s_arr))
    n = len(times)
    bits = np.maximum(np.ceil(np.random.default_rng(s_file).exponential(mean_file_bits, n)), 1).astype(np.int64)
    std = budget.radio.shadowing_std_db if shadowing_std_db is None else shadowing_std_db
    shadow = np.random.default_rng(s_shadow).normal(0.0, std, (n, 1 + len(budget.layout.interferers)))
    if n:
        sig = budget.serving_power(xy[:, 0], xy[:, 1], shadow[:, 0])
        intf = budget.interference_power(xy[:, 0], xy[:, 1], shadow[:, 1:])
    else:
        sig = np.zeros((0, len(budget.book.beams)))
        intf = np.zeros((0, len(budget.layout.interferers)))
    return Sessions(times, xy, bits, sig, intf)


@dataclass
class UserSession:
    """One download in progress.

    ``signal`` holds the mean received power of every beam (codebook
    order) and ``interference`` that of every interferer, shadowing
    included; fading is applied per slot on top.
    """

    id: int
    x_m: float
    y_m: float
    arrival_s: float
    file_bits: int
    remaining_bits: float
    pf_avg: float
    signal: np.ndarray
    interference: np.ndarray
    noise_w: float
    best: int = 0  # column of the current best beam
    cursor: Optional[int] = 0  # column of the search cursor, None once converged
    best_sinr: float = 0.0
    probes: int = 1
    served_bits: float = 0.0

    @property
    def mean_sinr(self) -> np.ndarray:
        return self.signal / (self.interference.sum() + self.noise_w)


def new_session(sessions: Sessions, index: int, book: Codebook, radio, top: int) -> UserSession:
    """The state of a session on arrival: level-0 beam, PF average seeded with its level-0 rate."""
    sig = sessions.signal[index]
    intf = sessions.interference[index]
    s0 = sig[0] / (intf.sum() + radio.noise_w)
    root_kids = len(book.children(book.root))
    return UserSession(
        id=index, x_m=float(sessions.xy[index, 0]), y_m=float(sessions.xy[index, 1]),
        arrival_s=float(sessions.arrival[index]), file_bits=int(sessions.file_bits[index]),
        remaining_bits=float(sessions.file_bits[index]), pf_avg=max(float(rate(s0, radio)), 1.0),
        signal=sig, interference=intf, noise_w=radio.noise_w,
        cursor=0 if top > 0 and root_kids else None, best_sinr=float(s0),
    )


def schedule_slot(users: list, slot_s: float, book: Codebook, radio, fading=None, beta: float = 0.01,
                  max_level: Optional[int] = None):
    """Serve one slot with the proportional-fair rule, then advance the served user's beam search.

    ``fading`` is an optional ``(len(users), 1 + n_interferers)`` array of
    power gains.  Updates the sessions in place and returns ``(index, rate,
    bits, probes_used)``; removing a finished session is left to the caller.
    """
    if not users:
        raise ValueError("no active users")
    inst = np.empty(len(users))
    for u, us in enumerate(users):
        if fading is None:
            s = us.signal[us.best] / (us.interference.sum() + us.noise_w)
        else:
            h = fading[u]
            s = us.signal[us.best] * h[0] / (float(np.dot(us.interference, h[1:])) + us.noise_w)
        inst[u] = rate(s, radio)
    i = int(np.argmax(inst / np.array([us.pf_avg for us in users])))
    us = users[i]
    bits = min(inst[i] * slot_s, us.remaining_bits)
    for other in users:
        other.pf_avg *= 1.0 - beta
    us.pf_avg += beta * bits / slot_s
    us.remaining_bits -= bits
    us.served_bits += bits
    used = 0
    if us.remaining_bits > 0.0 and us.cursor is not None:
        beams = book.beams
        sinr = us.mean_sinr
        col = {b.id: k for k, b in enumerate(beams)}
        new_best, cursor, used = select_beam_step(
            book, beams[us.best], beams[us.cursor], lambda b: sinr[col[b.id]],
            max_level=max_level, best_sinr=us.best_sinr,
        )
        us.probes += used
        us.cursor = None if cursor is None else col[cursor.id]
        if col[new_best.id] != us.best:
            us.best = col[new_best.id]
            us.best_sinr = float(sinr[us.best])
    return i, float(inst[i]), float(bits), used


_NEED_FADING = 1
_UNSTABLE = 2
_DONE = 0


@njit(cache=True, nogil=True)
def _slot_loop(arrival, file_bits, sig_all, intf_all, itot_all, sinr_all,
               children, n_kids, level, top, relaxed,
               slot, beta, n_slots, k_warm, cap, fading, bw_eff, rate_cap, noise,
               act_sess, rem, avg, sig, intf, best, cursor, best_sinr, probes, counters,
               depart, final_beam, probes_out, hist, pool):
    # counters: n_active, next arrival, slot index, busy slots in window, pool position
    n = counters[0]
    nxt = counters[1]
    k = counters[2]
    n_sess = arrival.shape[0]
    n_intf = intf_all.shape[1]
    inst = np.empty(cap)
    while k < n_slots:
        if n == 0:
            if nxt >= n_sess:
                break
            k = max(k, int(math.ceil(arrival[nxt] / slot - 1e-12)))
            if k >= n_slots:
                break
        t = k * slot
        if fading and counters[4] + (n + 1) * (n_intf + 1) > pool.shape[0]:
            # not enough pre-drawn fading: let the caller refill (arrivals may add one user)
            need_n = n
            j = nxt
            while j < n_sess and arrival[j] <= t + 1e-12:
                need_n += 1
                j += 1
            if counters[4] + need_n * (n_intf + 1) > pool.shape[0]:
                counters[0] = n
                counters[1] = nxt
                counters[2] = k
                counters[5] = need_n * (n_intf + 1)
                return _NEED_FADING
        while nxt < n_sess and arrival[nxt] <= t + 1e-12:
            if n >= cap:
                counters[0] = n
                counters[1] = nxt
                counters[2] = k
                return _UNSTABLE
            act_sess[n] = nxt
            rem[n] = file_bits[nxt]
            s0 = sinr_all[nxt, 0]
            r0 = min(bw_eff * math.log2(1.0 + max(s0, 0.0)), rate_cap)
            avg[n] = max(r0, 1.0)
            sig[n] = sig_all[nxt, 0]
            for q in range(n_intf):
                intf[n, q] = intf_all[nxt, q]
            best[n] = 0
            cursor[n] = 0 if top > 0 and n_kids[0] > 0 else -1
            best_sinr[n] = s0
            probes[n] = 1
            n += 1
            nxt += 1

        # proportional-fair choice on the current beams
        pos = counters[4]
        ibest = 0
        score = -1.0
        for u in range(n):
            if fading:
                acc = 0.0
                for q in range(n_intf):
                    acc += intf[u, q] * pool[pos + 1 + q]
                s = sig[u] * pool[pos] / (acc + noise)
                pos += n_intf + 1
            else:
                s = sig[u] / (itot_all[act_sess[u]] + noise)
            r = min(bw_eff * math.log2(1.0 + max(s, 0.0)), rate_cap)
            inst[u] = r
            if r / avg[u] > score:
                score = r / avg[u]
                ibest = u
        counters[4] = pos
        i = ibest
        ri = inst[i]
        bits = min(ri * slot, rem[i])
        for u in range(n):
            avg[u] *= 1.0 - beta
        avg[i] += beta * bits / slot
        used = best[i]
        if k >= k_warm:
            counters[3] += 1
            hist[used] += 1

        rem[i] -= bits
        if rem[i] <= 0.0:
            s_id = act_sess[i]
            depart[s_id] = t + bits / ri
            final_beam[s_id] = used
            probes_out[s_id] = probes[i]
            last = n - 1
            if i != last:
                act_sess[i] = act_sess[last]
                rem[i] = rem[last]
                avg[i] = avg[last]
                sig[i] = sig[last]
                for q in range(n_intf):
                    intf[i, q] = intf[last, q]
                best[i] = best[last]
                cursor[i] = cursor[last]
                best_sinr[i] = best_sinr[last]
                probes[i] = probes[last]
            n = last
        elif cursor[i] >= 0:
            # one greedy step of the beam search, on mean SINR
            c = cursor[i]
            s_id = act_sess[i]
            bc = -1
            bs = -np.inf
            for j in range(n_kids[c]):
                kid = children[c, j]
                v = sinr_all[s_id, kid]
                if v > bs:
                    bs = v
                    bc = kid
            probes[i] += n_kids[c]
            if bs > best_sinr[i]:
                best[i] = bc
                best_sinr[i] = bs
                sig[i] = sig_all[s_id, bc]
                nx = bc
            elif relaxed:
                nx = bc
            else:
                nx = -1
            if nx >= 0 and (level[nx] >= top or n_kids[nx] == 0):
                nx = -1
            cursor[i] = nx
        k += 1
    counters[0] = n
    counters[1] = nxt
    counters[2] = k
    return _DONE


def beam_tables(book: Codebook):
    """Children table (column indices, -1 padded), child counts and levels of the beams."""
    col = {b.id: k for k, b in enumerate(book.beams)}
    if col[book.root.id] != 0:
        raise ValueError("the root beam must come first")
    nb = len(book.beams)
    children = np.full((nb, 2), -1, dtype=np.int64)
    n_kids = np.zeros(nb, dtype=np.int64)
    for b in book.beams:
        kids = book.children(b)
        if len(kids) > 2:
            raise ValueError("beams have at most two children")
        n_kids[col[b.id]] = len(kids)
        for j, kid in enumerate(kids):
            children[col[b.id], j] = col[kid.id]
    level = np.array([b.level for b in book.beams], dtype=np.int64)
    return children, n_kids, level


def run(budget: LinkBudget, traffic: TrafficModel, params: SimParams, seed: int, sim_duration: float,
        warmup: Optional[float] = None, sessions: Optional[Sessions] = None, config: Optional[dict] = None,
        fading_block: int = 1 << 20) -> KpiReport:
    """Simulate ``sim_duration`` seconds and aggregate KPIs.

    KPIs use sessions arriving after ``warmup`` (default 10% of the horizon)
    and finished before the horizon; the power figure averages the busy
    fraction over the same window.  Raises :class:`SimulationUnstable` when
    more than ``params.user_cap`` users are in the system.
    """
    book: Codebook = budget.book
    radio = budget.radio
    if sim_duration <= 0:
        raise ValueError("sim_duration must be positive")
    warmup = 0.1 * sim_duration if warmup is None else warmup
    if not 0 <= warmup < sim_duration:
        raise ValueError("warmup must lie in [0, sim_duration)")
    if sessions is None:
        sessions = generate_sessions(budget, traffic, sim_duration, seed, params.mean_file_bits)
    top = book.depth if params.level_cap is None else max(0, min(params.level_cap, book.depth))
    fading = params.m_shape != math.inf
    if fading and not params.m_shape >= 1:
        raise ValueError(f"Nakagami shape must be >= 1, got {params.m_shape}")
    rng_fading = np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[3])
    _check_offered_load(budget, traffic, sessions, params, top)

    noise = radio.noise_w
    slot = params.slot_s
    n_sess = len(sessions)
    n_intf = sessions.interference.shape[1]
    itot_all = sessions.interference.sum(axis=1)
    sinr_all = np.ascontiguousarray(sessions.signal / (itot_all + noise)[:, None])
    children, n_kids, level = beam_tables(book)
    cap = params.user_cap
    nb = len(book.beams)

    act_sess = np.zeros(cap, dtype=np.int64)
    rem = np.zeros(cap)
    avg = np.zeros(cap)
    sig = np.zeros(cap)
    intf = np.zeros((cap, n_intf))
    best = np.zeros(cap, dtype=np.int64)
    cursor = np.full(cap, -1, dtype=np.int64)
    best_sinr = np.zeros(cap)
    probes = np.zeros(cap, dtype=np.int64)
    counters = np.zeros(6, dtype=np.int64)
    depart = np.full(n_sess, np.nan)
    final_beam = np.full(n_sess, -1, dtype=np.int64)
    probes_out = np.zeros(n_sess, dtype=np.int64)
    hist = np.zeros(nb, dtype=np.int64)
    pool = np.zeros(0)

    n_slots = int(math.floor(sim_duration / slot + 1e-9))
    k_warm = int(math.ceil(warmup / slot - 1e-9))
    while True:
        code = _slot_loop(
            sessions.arrival, sessions.file_bits.astype(float), np.ascontiguousarray(sessions.signal),
            np.ascontiguousarray(sessions.interference), itot_all, sinr_all,
            children, n_kids, level, top, book.relaxed,
            slot, 1.0 / params.pf_window, n_slots, k_warm, cap, fading,
            radio.efficiency * radio.bandwidth_hz, radio.se_cap * radio.bandwidth_hz, noise,
            act_sess, rem, avg, sig, intf, best, cursor, best_sinr, probes, counters,
            depart, final_beam, probes_out, hist, pool,
        )
        if code == _NEED_FADING:
            pool = draw_fading(params.m_shape, rng_fading, max(fading_block, int(counters[5])))
            counters[4] = 0
            continue
        if code == _UNSTABLE:
            raise SimulationUnstable(
                f"more than {cap} users in the system at t={counters[2] * slot:.3f}s; lower the arrival intensity"
            )
        break

    ids = np.array([b.id for b in book.beams])
    window_slots = max(n_slots - k_warm, 1)
    busy = int(counters[3]) / window_slots
    done = (sessions.arrival >= warmup) & ~np.isnan(depart) & (depart <= sim_duration)
    sojourn = depart - sessions.arrival
    thr = np.full(n_sess, np.nan)
    thr[done] = sessions.file_bits[done] / sojourn[done]
    thr_done = thr[done]
    traces = [
        {
            "session": int(s),
            "arrival_s": float(sessions.arrival[s]),
            "x_m": float(sessions.xy[s, 0]),
            "y_m": float(sessions.xy[s, 1]),
            "file_bits": int(sessions.file_bits[s]),
            "sojourn_s": float(sojourn[s]),
            "throughput_bps": float(thr[s]),
            "final_beam": int(ids[final_beam[s]]),
            "probes": int(probes_out[s]),
        }
        for s in np.flatnonzero(done)
    ]
    any_done = bool(thr_done.size)
    return KpiReport(
        mut_bps=float(thr_done.mean()) if any_done else 0.0,
        cet_bps=float(np.percentile(thr_done, params.cet_percentile)) if any_done else 0.0,
        pc_w=power_consumption(busy, radio.tx_power_w),
        busy_fraction=busy,
        sessions=int(done.sum()),
        mean_probes=float(probes_out[done].mean()) if any_done else 0.0,
        max_probes=int(probes_out[done].max()) if any_done else 0,
        beam_histogram={int(ids[j]): int(hist[j]) for j in np.flatnonzero(hist)},
        seed=int(seed),
        config=config or {},
        traces=traces,
    )


def _check_offered_load(budget: LinkBudget, traffic: TrafficModel, sessions: Sessions, params: SimParams, top: int):
    """Warn when the offered load exceeds a rough estimate of the cell capacity."""
    if len(sessions) == 0:
        return
    lam = traffic.arrival_rate(budget.book.geometry)
    sample = slice(0, min(len(sessions), 500))
    level_cols = [k for k, b in enumerate(budget.book.beams) if b.level <= top]
    sinr = sessions.signal[sample][:, level_cols] / (sessions.interference[sample].sum(axis=1) + budget.radio.noise_w)[:, None]
    r = rate(sinr.max(axis=1), budget.radio)
    capacity = 1.0 / np.mean(1.0 / np.maximum(r, 1.0))
    offered = lam * params.mean_file_bits
    if offered >= capacity:
        msg = f"offered load {offered / 1e6:.2f} Mbit/s exceeds estimated capacity {capacity / 1e6:.2f} Mbit/s"
        logger.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
