import math

import numpy as np
import pytest
from scipy import stats

from beamsim.channel import (
    LinkBudget,
    LinkState,
    NetworkLayout,
    OutsideSectorError,
    RadioConfig,
    draw_fading,
    draw_shadowing,
    pathloss_db,
    rate,
    search_match_fraction,
    sinr,
)
from beamsim.codebook import hierarchical_search


class TestPathloss:
    @pytest.mark.parametrize("d_km, expected", [(1.0, 128.1), (0.5, 116.78), (10.0, 165.7)])
    def test_examples(self, d_km, expected):
        assert pathloss_db(d_km) == pytest.approx(expected, abs=0.01)

    def test_clamped_at_ten_metres(self):
        assert pathloss_db(0.001) == pathloss_db(0.01)
        assert pathloss_db(0.0) == pathloss_db(0.01)

    def test_vectorised(self):
        out = pathloss_db(np.array([0.5, 1.0]))
        assert out.shape == (2,)


class TestRate:
    def test_examples(self):
        radio = RadioConfig()
        assert rate(0.0, radio) == 0.0
        assert rate(1.0, radio) == pytest.approx(7.5e6)
        assert rate(1e12, radio) == pytest.approx(48e6)

    def test_monotone(self):
        s = np.logspace(-3, 4, 500)
        r = rate(s, RadioConfig())
        assert np.all(np.diff(r) >= 0)

    def test_radio_validation(self):
        with pytest.raises(ValueError):
            RadioConfig(bandwidth_hz=0.0)
        with pytest.raises(ValueError):
            RadioConfig(shadowing_std_db=-1.0)

    def test_noise_power(self):
        # -174 dBm/Hz over 10 MHz is -104 dBm
        assert 10 * math.log10(RadioConfig().noise_w) + 30 == pytest.approx(-104.0)


class TestSamplers:
    @pytest.mark.parametrize("m", [1, 2, 5, 10])
    def test_nakagami_moments(self, m):
        h = draw_fading(m, np.random.default_rng(100 + m), 10**6)
        assert abs(h.mean() - 1.0) < 0.01
        assert abs(h.var() / (1.0 / m) - 1.0) < 0.03

    def test_no_fading_is_exactly_one(self):
        rng = np.random.default_rng(0)
        assert draw_fading(math.inf, rng) == 1.0
        assert np.all(draw_fading(math.inf, rng, 10) == 1.0)

    def test_m1_amplitude_is_rayleigh(self):
        amp = np.sqrt(draw_fading(1, np.random.default_rng(7), 20000))
        # unit mean power -> Rayleigh scale 1/sqrt(2)
        res = stats.kstest(amp, stats.rayleigh(scale=1 / math.sqrt(2)).cdf)
        assert res.pvalue > 0.01

    @pytest.mark.parametrize("m", [0.5, 0.0, -1.0, float("nan")])
    def test_rejects_small_shape(self, m):
        with pytest.raises(ValueError):
            draw_fading(m, np.random.default_rng(0))

    def test_shadowing_std(self):
        x = draw_shadowing(np.random.default_rng(3), 10**5)
        assert abs(x.std() / 6.0 - 1.0) < 0.03
        assert abs(x.mean()) < 0.1


class TestLayout:
    def test_two_rings(self):
        lay = NetworkLayout(500.0)
        assert len(lay.sites) == 19
        assert lay.n_sectors == 57
        assert lay.interferers == tuple(range(1, 57))
        assert np.allclose(lay.sector_xy[0], 0.0)
        assert lay.sector_azimuth[0] == 0.0

    def test_site_spacing(self):
        lay = NetworkLayout(500.0)
        d = np.hypot(*lay.sites[1:7].T)
        assert np.allclose(d, 500.0)
        assert np.allclose(np.hypot(*lay.sites[7:].T).min(), 500.0 * math.sqrt(3))

    def test_interferer_subset(self):
        lay = NetworkLayout(500.0, interferer_ids=(1, 2))
        assert lay.interferers == (1, 2)
        with pytest.raises(ValueError):
            NetworkLayout(500.0, interferer_ids=(0,))
        with pytest.raises(ValueError):
            NetworkLayout(500.0, interferer_ids=(57,))

    def test_local_directions_boresight(self):
        lay = NetworkLayout(500.0)
        dist, theta, phi = lay.local_directions(0, 200.0, 0.0)
        assert dist == pytest.approx(math.hypot(200.0, 28.5))
        assert theta == pytest.approx(0.5 * math.pi + math.atan2(28.5, 200.0))
        assert phi == pytest.approx(0.0)


class TestSinr:
    def test_hand_link_budget(self, relaxed_book):
        # no interferers, user on the ground at the level-0 steering direction
        radio = RadioConfig()
        budget = LinkBudget(relaxed_book, NetworkLayout(500.0, interferer_ids=()), radio)
        root = relaxed_book.root
        th, ph = root.steer.theta_e, root.steer.phi_e
        rho = 28.5 / math.tan(th - 0.5 * math.pi)
        x, y = rho * math.cos(ph), rho * math.sin(ph)
        d_km = math.hypot(rho, 28.5) / 1000
        envelope_db = 10 * math.log10(math.sin(0.5 * math.pi * math.sin(th) * math.cos(ph)) ** 2 * math.sin(th) ** 3)
        snr_db = 46.0206 + root.peak_gain_db + envelope_db - (128.1 + 37.6 * math.log10(d_km)) - (-174.0 + 70.0 - 30.0 + 30.0)
        links = budget.link_states(x, y, [0.0])
        assert 10 * math.log10(sinr((x, y), root, budget, links)) == pytest.approx(snr_db, abs=1e-6)

    def test_equal_power_interferer_gives_zero_db(self, relaxed_book):
        # noise switched off; the interferer's shadowing offsets its power to equal the serving power
        radio = RadioConfig(noise_dbm_hz=-math.inf)
        budget = LinkBudget(relaxed_book, NetworkLayout(500.0, interferer_ids=(4,)), radio)
        x, y = 250.0, 30.0
        beam = relaxed_book.beam(5)
        col = [b.id for b in relaxed_book.beams].index(5)
        p_s = budget.serving_power(x, y, 0.0)[0, col]
        p_i = budget.interference_power(x, y, [[0.0]])[0, 0]
        links = budget.link_states(x, y, [0.0, 10 * math.log10(p_i / p_s)])
        assert sinr((x, y), beam, budget, links) == pytest.approx(1.0, rel=1e-12)

    def test_scalar_matches_vectorised(self, budget, relaxed_book):
        rng = np.random.default_rng(5)
        n_i = len(budget.layout.interferers)
        for x, y in [(300.0, 0.0), (120.0, -60.0), (80.0, 70.0)]:
            shadow = rng.normal(0, 6, 1 + n_i)
            fading = rng.gamma(2.0, 0.5, 1 + n_i)
            links = budget.link_states(x, y, shadow, m_shape=2.0, fading=fading)
            sig = budget.serving_power(x, y, shadow[0])[0]
            intf = budget.interference_power(x, y, shadow[None, 1:])[0]
            denom = float(np.dot(intf, fading[1:])) + budget.radio.noise_w
            for k, beam in enumerate(relaxed_book.beams):
                assert sinr((x, y), beam, budget, links) == pytest.approx(sig[k] * fading[0] / denom, rel=1e-9)

    def test_interference_subset_bound(self, relaxed_book):
        radio = RadioConfig()
        full = NetworkLayout(500.0)
        rng = np.random.default_rng(11)
        x, y = 200.0, 40.0
        shadow = rng.normal(0, 6, full.n_sectors)
        beam = relaxed_book.beam(9)
        s_full = sinr((x, y), beam, LinkBudget(relaxed_book, full, radio), LinkBudget(relaxed_book, full, radio).link_states(x, y, shadow))
        for _ in range(10):
            subset = tuple(sorted(rng.choice(np.arange(1, 57), size=int(rng.integers(1, 56)), replace=False).tolist()))
            lay = NetworkLayout(500.0, interferer_ids=subset)
            b = LinkBudget(relaxed_book, lay, radio)
            links = b.link_states(x, y, np.concatenate([[shadow[0]], shadow[list(subset)]]))
            assert sinr((x, y), beam, b, links) >= s_full

    def test_serving_gain_monotone(self, budget, relaxed_book):
        x, y = 200.0, 40.0
        shadow = np.zeros(57)
        beam = relaxed_book.beam(9)
        base = sinr((x, y), beam, budget, budget.link_states(x, y, shadow))
        better = sinr((x, y), beam, budget, budget.link_states(x, y, np.concatenate([[-3.0], shadow[1:]])))
        assert better > base

    def test_outside_sector(self, budget, relaxed_book):
        links = budget.link_states(-100.0, 0.0, np.zeros(57))
        with pytest.raises(OutsideSectorError):
            sinr((-100.0, 0.0), relaxed_book.root, budget, links)
        with pytest.raises(OutsideSectorError):
            budget.serving_power([100.0, -100.0], [0.0, 0.0], [0.0, 0.0])

    def test_link_state_validation(self):
        with pytest.raises(ValueError):
            LinkState(128.0, 0.0, fading_power=0.5)

    def test_hotspot_trace_increases(self, budget, relaxed_book):
        x, y = 300.0, 0.0
        links = budget.link_states(x, y, np.zeros(57))
        _, trace, probes = hierarchical_search(relaxed_book, lambda b: sinr((x, y), b, budget, links))
        assert len(trace) == 4
        assert probes == 7
        assert all(b > a for a, b in zip(trace, trace[1:]))


def test_search_match_fraction_in_range(budget):
    frac = search_match_fraction(budget, n_users=200, seed=1)
    assert 0.0 < frac <= 1.0
