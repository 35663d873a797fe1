import json
import math

import numpy as np
import pytest

from beamsim.codebook import (
    AZIMUTH,
    Codebook,
    CoverageError,
    LevelSpec,
    SectorGeometry,
    build_codebook,
    coverage,
    exhaustive_best,
    hierarchical_search,
    level0_steering,
    select_beam_step,
)

from conftest import FIXED_DESIGN, MASS_LEVELS


def sinr_table(book, seed=0, n=1000):
    """Random positive 'SINR' per beam for n users, as callbacks."""
    rng = np.random.default_rng(seed)
    vals = rng.lognormal(0.0, 2.0, (n, len(book.beams)))
    col = {b.id: k for k, b in enumerate(book.beams)}
    return [lambda b, row=row: row[col[b.id]] for row in vals]


class TestGeometry:
    def test_hexagon(self):
        g = SectorGeometry(500.0)
        r = 500.0 / 3
        assert g.contains(np.array([1.0, 2 * r - 1, r]), np.array([0.0, 0.0, r * math.sqrt(3) / 2 - 1])).all()
        assert not g.contains(np.array([-1.0, 2 * r + 1]), np.array([0.0, 0.0])).any()
        assert g.area_km2 == pytest.approx(1.5 * math.sqrt(3) * r * r / 1e6)

    def test_directions(self):
        g = SectorGeometry(500.0)
        th, ph = g.directions(np.array([28.5]), np.array([28.5]))
        assert th[0] == pytest.approx(math.pi / 2 + math.atan2(28.5, 28.5 * math.sqrt(2)))
        assert ph[0] == pytest.approx(math.pi / 4)


class TestStructure:
    def test_mass_event_levels(self, relaxed_book):
        assert [len(l) for l in relaxed_book.levels] == [1, 2, 4, 8]
        assert relaxed_book.depth == 3
        assert [b.id for b in relaxed_book.beams] == list(range(1, 16))
        for l, level in enumerate(relaxed_book.levels):
            assert {b.subarray for b in level} == {MASS_LEVELS[l][:2]}
        root = relaxed_book.root
        assert root.parent is None and root.index == 1
        for b in relaxed_book.beams[:-8]:
            assert len(b.children) == 2
            for c in relaxed_book.children(b):
                assert c.parent == b.id and c.level == b.level + 1

    def test_azimuth_split_children_sit_left_and_right(self, relaxed_book):
        a, b = relaxed_book.children(relaxed_book.root)
        assert a.steer.phi_e == pytest.approx(-b.steer.phi_e, abs=1e-9)
        assert a.steer.phi_e < 0 < b.steer.phi_e

    def test_elevation_split(self, relaxed_book):
        for parent in relaxed_book.levels[2]:
            near, far = sorted(relaxed_book.children(parent), key=lambda c: -c.steer.theta_e)
            assert near.steer.theta_e > far.steer.theta_e

    def test_level0_downtilt_reaches_edge(self, small_geometry):
        from beamsim.antenna import array_factor_z

        d = FIXED_DESIGN.resized(2, 4)
        s = level0_steering(d, small_geometry)
        edge = small_geometry.directions(2 * small_geometry.cell_radius_m, 0.0)[0]
        assert abs(array_factor_z(d, s, edge)) ** 2 == pytest.approx(0.5, abs=1e-9)
        assert s.theta_e > edge

    def test_rural_all_azimuth(self, fixed_design):
        g = SectorGeometry(1732.0, pixel_m=40.0)
        d = fixed_design.design.__class__(20, 14, 0.34, 0.7, 0.15, 0.19)
        od = fixed_design.__class__(d, 27.4, 30.0, True)
        book = build_codebook(od, g, [(2, 4, None), (5, 14, AZIMUTH), (10, 14, AZIMUTH), (20, 14, AZIMUTH)])
        assert all(spec.split_axis == AZIMUTH for spec in book.level_specs[1:])
        for level in book.levels[1:]:
            phis = [b.steer.phi_e for b in level]
            assert phis == sorted(phis)

    def test_single_level(self, fixed_design, small_geometry):
        book = build_codebook(fixed_design, small_geometry, [(2, 4, None)])
        assert book.depth == 0
        assert int(book.coverage(book.root).sum()) == book.sector_pixels()
        best, trace, probes = hierarchical_search(book, lambda b: 3.0)
        assert best is book.root and probes == 1 and trace == [3.0]

    def test_split_axis_required(self, fixed_design, small_geometry):
        with pytest.raises(ValueError):
            build_codebook(fixed_design, small_geometry, [(2, 4, None), (6, 16, None)])
        with pytest.raises(ValueError):
            LevelSpec(2, 2, "diagonal")

    def test_gap_tolerance_enforced(self, fixed_design, small_geometry):
        # a negative tolerance makes even a gap-free level fail: exercises the error path
        build_codebook(fixed_design, small_geometry, MASS_LEVELS[:2], max_gap_fraction=0.0)
        with pytest.raises(CoverageError):
            build_codebook(fixed_design, small_geometry, MASS_LEVELS[:2], max_gap_fraction=-1.0)


class TestCoverage:
    @pytest.mark.parametrize("name", ["relaxed_book", "strict_book"])
    def test_partition(self, name, request):
        book = request.getfixturevalue(name)
        n = book.sector_pixels()
        _, _, inside = book.geometry.pixel_grid()
        for level in book.levels:
            masks = [book.coverage(b) for b in level]
            assert sum(int(m.sum()) for m in masks) == n
            stack = np.sum(masks, axis=0)
            assert np.all(stack[inside] == 1) and np.all(stack[~inside] == 0)

    def test_level0_covers_sector(self, relaxed_book):
        assert int(relaxed_book.coverage(relaxed_book.root).sum()) == relaxed_book.sector_pixels()

    def test_siblings_disjoint(self, relaxed_book):
        for b in relaxed_book.beams:
            kids = relaxed_book.children(b)
            if kids:
                assert not (relaxed_book.coverage(kids[0]) & relaxed_book.coverage(kids[1])).any()

    def test_inclusion_when_not_relaxed(self, strict_book):
        assert strict_book.inclusion_holds()
        for b in strict_book.beams:
            for c in strict_book.children(b):
                assert not (strict_book.coverage(c) & ~strict_book.coverage(b)).any()

    def test_relaxed_inclusion_is_reported(self, relaxed_book):
        rep = relaxed_book.inclusion_report()
        assert len(rep) == 3 and all(0.5 < v <= 1.0 for v in rep)

    def test_coverage_function(self, relaxed_book):
        beam = relaxed_book.levels[2][1]
        np.testing.assert_array_equal(coverage(beam, relaxed_book.rasters[2]), relaxed_book.rasters[2] == beam.id)


class TestSearch:
    def test_probe_budget_and_monotone_best(self, relaxed_book, strict_book):
        for book in (relaxed_book, strict_book):
            limit = 2 * book.depth + 1
            for sinr_of in sinr_table(book):
                best, trace, probes = hierarchical_search(book, sinr_of)
                assert probes <= limit
                assert all(b >= a for a, b in zip(trace, trace[1:]))
                assert trace[-1] == sinr_of(best)

    def test_stops_when_children_worse(self, strict_book):
        root = strict_book.root

        def sinr_of(b):
            return 10.0 if b is root else 1.0

        new_best, cursor, probes = select_beam_step(strict_book, root, root, sinr_of)
        assert new_best is root and cursor is None and probes == 2

    def test_relaxed_keeps_descending(self, relaxed_book):
        root = relaxed_book.root

        def sinr_of(b):
            return 100.0 if b is root else float(b.id)

        best, trace, probes = hierarchical_search(relaxed_book, sinr_of)
        assert best is root and probes == 7

    def test_level_cap(self, relaxed_book):
        for sinr_of in sinr_table(relaxed_book, n=50):
            best, _, probes = hierarchical_search(relaxed_book, sinr_of, max_level=1)
            assert best.level <= 1 and probes <= 3
            best, _, probes = hierarchical_search(relaxed_book, sinr_of, max_level=0)
            assert best is relaxed_book.root and probes == 1

    def test_exhaustive(self, relaxed_book):
        sinr_of = sinr_table(relaxed_book, n=1)[0]
        best = exhaustive_best(relaxed_book, sinr_of)
        assert best.level == 3
        assert sinr_of(best) == max(sinr_of(b) for b in relaxed_book.levels[3])


class TestSerialization:
    def test_round_trip_bit_exact(self, relaxed_book, tmp_path):
        path = tmp_path / "cb.json"
        relaxed_book.save(path)
        again = Codebook.load(path)
        assert again.beams == relaxed_book.beams
        assert again.relaxed and again.design == relaxed_book.design
        for a, b in zip(again.rasters, relaxed_book.rasters):
            np.testing.assert_array_equal(a, b)
        assert json.loads(path.read_text())["format"] == "beamsim-codebook/1"

    def test_raster_csv(self, relaxed_book, tmp_path):
        paths = relaxed_book.export_rasters_csv(tmp_path)
        assert len(paths) == 4
        rows = np.genfromtxt(paths[3], delimiter=",", names=True)
        assert set(np.unique(rows["beam_id"])) == {0} | {b.id for b in relaxed_book.levels[3]}
