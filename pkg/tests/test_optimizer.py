import math

import pytest

from beamsim.antenna import ArrayDesign, peak_gain_g0
from beamsim.optimizer import (
    DesignSpace,
    InfeasibleError,
    OptimizedDesign,
    check_feasibility,
    optimize,
)

TOY = DesignSpace(2, 8, 2, 8, theta_min=math.radians(92), theta_max=math.radians(104), phi_max=math.radians(40),
                  sl_threshold_db=25.0)
TOY_SIZES = [(4, 4), (8, 8)]


def toy_opt(space=TOY, **kw):
    kw = {"grid_points": 4, "refine_rounds": 2, "steer_samples": 9, "grid_resolution": 256, **kw}
    return optimize(space, TOY_SIZES, **kw)


class TestDesignSpace:
    @pytest.mark.parametrize("kw", [
        {"n_x_min": 5, "n_x_max": 4, "n_z_min": 1, "n_z_max": 2},
        {"n_x_min": 1, "n_x_max": 4, "n_z_min": 1, "n_z_max": 2, "phi_max": 2.0},
        {"n_x_min": 1, "n_x_max": 4, "n_z_min": 1, "n_z_max": 2, "theta_min": 2.0, "theta_max": 1.0},
        {"n_x_min": 1, "n_x_max": 4, "n_z_min": 1, "n_z_max": 2, "sl_threshold_db": -1.0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DesignSpace(**kw)

    def test_steering_grid_covers_box(self):
        g = TOY.steering_grid(3)
        assert len(g) == 9
        assert min(s.theta_e for s in g) == TOY.theta_min and max(s.phi_e for s in g) == TOY.phi_max


class TestFeasibility:
    def test_uniform_full_array_fails_thirty_db(self):
        ok, worst = check_feasibility(ArrayDesign(12, 32, 0.45, 0.6), DesignSpace(2, 12, 4, 32), 9)
        assert not ok
        assert 10.0 < worst < 16.0

    def test_strong_taper_passes(self):
        ok, worst = check_feasibility(ArrayDesign(12, 32, 0.4, 0.5, 0.05, 0.05), DesignSpace(2, 12, 4, 32), 9)
        assert ok and worst >= 30.0

    def test_single_element_never_binds(self):
        ok, worst = check_feasibility(ArrayDesign(1, 1), TOY, 9)
        assert ok and worst == math.inf

    def test_steer_samples_must_be_square(self):
        with pytest.raises(ValueError):
            check_feasibility(ArrayDesign(2, 2), TOY, 10)
        with pytest.raises(ValueError):
            check_feasibility(ArrayDesign(2, 2), TOY, 4)


class TestOptimize:
    def test_result_is_feasible_and_consistent(self):
        r = toy_opt()
        assert r.feasible and r.worst_sidelobe_db >= TOY.sl_threshold_db
        assert r.design.n_x == 8 and r.design.n_z == 8
        assert r.achieved_gain_db == pytest.approx(
            10 * math.log10(peak_gain_g0(r.design, TOY.center_steer, check_convergence=False)), abs=1e-9)

    def test_deterministic(self):
        assert toy_opt() == toy_opt()

    def test_no_constraint_pushes_spacings_to_max(self):
        free = DesignSpace(2, 8, 2, 8, d_x_max=0.5, d_z_max=0.5, sl_threshold_db=0.0)
        r = toy_opt(free)
        assert r.design.d_x == pytest.approx(0.5) and r.design.d_z == pytest.approx(0.5)

    def test_relaxing_threshold_never_lowers_gain(self):
        tight = toy_opt()
        loose = toy_opt(DesignSpace(**{**TOY.__dict__, "sl_threshold_db": TOY.sl_threshold_db - 5}))
        assert loose.achieved_gain_db >= tight.achieved_gain_db - 1e-12

    def test_not_worse_than_grid(self):
        r0 = toy_opt(refine_rounds=0)
        r = toy_opt()
        assert r.achieved_gain_db >= r0.achieved_gain_db - 1e-9

    def test_held_out_audit(self):
        r = toy_opt()
        ok, _ = check_feasibility(r.design, TOY, 25, TOY_SIZES, 512)
        assert ok

    def test_infeasible_everywhere(self):
        with pytest.raises(InfeasibleError):
            # no taper allowed: uniform arrays stay near 13 dB
            toy_opt(DesignSpace(**{**TOY.__dict__, "sl_threshold_db": 20.0, "alpha_min": 1.0}))

    def test_sizes_must_fit_bounds(self):
        with pytest.raises(ValueError):
            optimize(TOY, [(9, 4)])
        with pytest.raises(ValueError):
            optimize(TOY, [])

    def test_record_round_trip(self):
        r = toy_opt()
        assert OptimizedDesign.from_dict(r.to_dict()) == r
