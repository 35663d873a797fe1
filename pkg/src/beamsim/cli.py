"""Command line entry point: optimize, codebook, simulate, report.

Exit codes: 0 success, 1 infeasible design / uncoverable sector / unstable
simulation, 2 bad configuration or usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .antenna import pattern_power
from .channel import LinkBudget, search_match_fraction
from .codebook import Codebook, CoverageError, build_codebook
from .config import ConfigError, ScenarioConfig, load_config
from .netsim import KpiReport, SimulationUnstable, generate_sessions, run
from .optimizer import InfeasibleError, OptimizedDesign, optimize

logger = logging.getLogger("beamsim")


def worker_count() -> int:
    raw = os.environ.get("BEAMSIM_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"BEAMSIM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("BEAMSIM_THREADS must be >= 1")
    return n


def design_for(cfg: ScenarioConfig) -> OptimizedDesign:
    o = cfg.optimizer
    return optimize(cfg.design_space, cfg.level_sizes, grid_points=o.grid_points, refine_rounds=o.refine_rounds,
                    steer_samples=o.steer_samples, grid_resolution=o.grid_resolution,
                    quadrature_resolution=o.quadrature_resolution)


def codebook_for(cfg: ScenarioConfig, design: OptimizedDesign) -> Codebook:
    specs = [(lv.n_x, lv.n_z, lv.split_axis) for lv in cfg.levels]
    return build_codebook(design, cfg.geometry, specs, relaxed=cfg.relaxed,
                          quadrature_resolution=cfg.optimizer.quadrature_resolution)


def run_label(m_shape: float, level_cap: Optional[int], caps) -> str:
    m = "inf" if m_shape == math.inf else f"{m_shape:g}"
    if set(caps) <= {0, None}:
        return f"{m} {'wo.' if level_cap == 0 else 'w.'}"
    lvl = "full" if level_cap is None else str(level_cap)
    return f"Level {lvl}" if len({*caps}) > 1 and m == "inf" else f"m={m} level {lvl}"


def simulate_all(cfg: ScenarioConfig, book: Codebook, seed: Optional[int] = None,
                 threads: Optional[int] = None) -> list[KpiReport]:
    """Every (m, level cap) combination of the config, sharing one set of sessions."""
    seed = cfg.seed if seed is None else seed
    sim = cfg.simulation
    budget = LinkBudget(book, cfg.layout(), cfg.radio)
    sessions = generate_sessions(budget, cfg.traffic, sim.horizon_s, seed, sim.mean_file_bits)
    combos = [(m, cap) for m in sim.m_shapes for cap in sim.level_caps]
    echo = cfg.to_dict()
    echo["seed"] = seed

    def one(combo):
        m, cap = combo
        params = sim.params(m, cap)
        conf = dict(echo, run={"m_shape": "inf" if m == math.inf else m, "level_cap": cap,
                               "label": run_label(m, cap, sim.level_caps)})
        return run(budget, cfg.traffic, params, seed, sim.horizon_s, sim.warmup_s, sessions=sessions, config=conf)

    workers = min(threads or worker_count(), len(combos))
    if workers <= 1:
        return [one(c) for c in combos]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, combos))


def _pct(value: float, base: float) -> str:
    if base == 0:
        return ""
    return f" ({100.0 * (value / base - 1.0):.0f}%)"


def _pct_pc(value: float, base: float) -> str:
    return f" ({100.0 * (value / base - 1.0):.2f}%)"


def _baseline(rep: KpiReport, reports: list[KpiReport]) -> Optional[KpiReport]:
    run_info = rep.config.get("run", {})
    if run_info.get("level_cap") == 0:
        return None
    for other in reports:
        o = other.config.get("run", {})
        if o.get("level_cap") == 0 and o.get("m_shape") == run_info.get("m_shape"):
            return other
    return None


def kpi_table(reports: list[KpiReport]) -> list[list[str]]:
    """Rows of (label, MUT, CET, PC), with gains against the matching level-0 run."""
    rows = [["", "MUT (Mbps)", "CET (Mbps)", "PC (W)"]]
    for i, rep in enumerate(reports):
        label = rep.config.get("run", {}).get("label", f"run {i + 1}")
        base = _baseline(rep, reports) if len(reports) > 1 else None
        mut, cet, pc = rep.mut_bps / 1e6, rep.cet_bps / 1e6, rep.pc_w
        if base is None:
            rows.append([label, f"{mut:.2f}", f"{cet:.2f}", f"{pc:.0f}"])
        else:
            rows.append([
                label,
                f"{mut:.2f}{_pct(rep.mut_bps, base.mut_bps)}",
                f"{cet:.2f}{_pct(rep.cet_bps, base.cet_bps)}",
                f"{pc:.0f}{_pct_pc(rep.pc_w, base.pc_w)}",
            ])
    return rows


def format_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows)


def export_patterns_csv(book: Codebook, directory, n_points: int = 361, grid_points: int = 91) -> None:
    """Principal cuts and a coarse (theta, phi) grid of every level's first beam, absolute gain in dBi."""
    directory = Path(directory)
    with open(directory / "pattern_grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "beam_id", "theta_rad", "phi_rad", "gain_dbi"])
        th, ph = np.meshgrid(np.linspace(0.0, np.pi, grid_points), np.linspace(-np.pi / 2, np.pi / 2, grid_points),
                             indexing="ij")
        for level in book.levels:
            beam = level[0]
            f = pattern_power(book.subarray_design(beam), beam.steer, th, ph)
            db = beam.peak_gain_db + 10.0 * np.log10(np.maximum(f, 1e-30))
            for t, p, v in zip(th.ravel(), ph.ravel(), db.ravel()):
                w.writerow([beam.level, beam.id, repr(float(t)), repr(float(p)), f"{v:.6f}"])
    with open(directory / "pattern_cuts.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "beam_id", "cut", "angle_rad", "gain_dbi"])
        for level in book.levels:
            beam = level[0]
            design = book.subarray_design(beam)
            g0 = 10.0 ** (beam.peak_gain_db / 10.0)
            phis = np.linspace(-np.pi / 2, np.pi / 2, n_points)
            thetas = np.linspace(0.0, np.pi, n_points)
            cuts = {
                "azimuth": (phis, pattern_power(design, beam.steer, np.full_like(phis, beam.steer.theta_e), phis)),
                "elevation": (thetas, pattern_power(design, beam.steer, thetas, np.full_like(thetas, beam.steer.phi_e))),
            }
            for cut, (ang, f) in cuts.items():
                db = 10.0 * np.log10(np.maximum(g0 * f, 1e-30))
                for a, v in zip(ang, db):
                    w.writerow([beam.level, beam.id, cut, repr(float(a)), f"{v:.6f}"])


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_or_optimize(path: Path, cfg: ScenarioConfig) -> OptimizedDesign:
    if path.is_file():
        with open(path) as fh:
            return OptimizedDesign.from_dict(json.load(fh))
    logger.info("no design at %s, optimizing", path)
    od = design_for(cfg)
    with open(path, "w") as fh:
        json.dump(od.to_dict(), fh, indent=1)
    return od


def cmd_optimize(args, cfg: ScenarioConfig) -> int:
    out = _out_dir(args, cfg)
    od = design_for(cfg)
    with open(out / "design.json", "w") as fh:
        json.dump(od.to_dict(), fh, indent=1)
    print(f"gain {od.achieved_gain_db:.2f} dB, worst side-lobe suppression {od.worst_sidelobe_db:.2f} dB, "
          f"feasible={od.feasible}")
    print(f"design {od.design}")
    return 0 if od.feasible else 1


def cmd_codebook(args, cfg: ScenarioConfig) -> int:
    out = _out_dir(args, cfg)
    od = _load_or_optimize(Path(args.design) if args.design else out / "design.json", cfg)
    book = codebook_for(cfg, od)
    book.save(out / "codebook.json")
    book.export_rasters_csv(out)
    export_patterns_csv(book, out)
    for beam in book.beams:
        print(f"beam {beam.id:2d} level {beam.level} {beam.subarray} "
              f"theta {beam.steer.theta_e:.4f} phi {beam.steer.phi_e:+.4f} rad, "
              f"G0 {beam.peak_gain_db:.2f} dB, {int(book.coverage(beam).sum())} px")
    print("inclusion (share of each level's pixels inside the parent footprint): "
          + ", ".join(f"{v:.4f}" for v in book.inclusion_report()))
    match = search_match_fraction(LinkBudget(book, cfg.layout(), cfg.radio))
    print(f"greedy search matches the exhaustive best leaf for {100.0 * match:.1f}% of 1000 uniform users")
    return 0


def cmd_simulate(args, cfg: ScenarioConfig) -> int:
    out = _out_dir(args, cfg)
    book_path = Path(args.codebook) if args.codebook else out / "codebook.json"
    if book_path.is_file():
        book = Codebook.load(book_path)
    else:
        logger.info("no codebook at %s, building one", book_path)
        book = codebook_for(cfg, _load_or_optimize(out / "design.json", cfg))
        book.save(book_path)
    reports = simulate_all(cfg, book, args.seed)
    for rep in reports:
        tag = rep.config["run"]["label"].replace(" ", "_").replace(".", "").replace("=", "")
        rep.save(out / f"report_{tag}.json")
        rep.write_traces_csv(out / f"traces_{tag}.csv")
        rep.write_histogram_csv(out / f"histogram_{tag}.csv")
    print(format_table(kpi_table(reports)))
    return 0


def cmd_report(args, cfg: Optional[ScenarioConfig]) -> int:
    if not args.reports:
        print("report: at least one report file is required", file=sys.stderr)
        return 2
    reports = [KpiReport.load(p) for p in args.reports]
    rows = kpi_table(reports)
    print(format_table(rows))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "kpi_table.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        for p, rep in zip(args.reports, reports):
            rep.write_histogram_csv(out / f"histogram_{Path(p).stem}.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beamsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="scenario YAML file or preset name")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output directory (default: config output_dir)")
        sp.add_argument("--levels", type=int, help="cap the beam search at this level")

    common(sub.add_parser("optimize", help="optimize the array design"))
    sp = sub.add_parser("codebook", help="build the codebook and coverage rasters")
    common(sp)
    sp.add_argument("--design", help="design file (default: <out>/design.json)")
    sp = sub.add_parser("simulate", help="run the configured simulations")
    common(sp)
    sp.add_argument("--codebook", help="codebook file (default: <out>/codebook.json)")
    sp = sub.add_parser("report", help="compare KPI report files")
    common(sp, config_required=False)
    sp.add_argument("reports", nargs="*")
    return p


COMMANDS = {"optimize": cmd_optimize, "codebook": cmd_codebook, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = None
        if args.config:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
            if args.levels is not None:
                if not 0 <= args.levels < len(cfg.levels):
                    raise ConfigError(f"--levels must lie in [0, {len(cfg.levels) - 1}]")
                cfg = replace(cfg, simulation=replace(cfg.simulation, level_caps=(args.levels,)))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InfeasibleError, CoverageError, SimulationUnstable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
