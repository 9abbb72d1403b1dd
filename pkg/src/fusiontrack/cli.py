"""Command-line entry point: simulate, track, search, evaluate and sweep.

Exit codes: 0 success, 1 invalid input (config, flags or files), 2 runtime
failure. Every output file is written to a temporary name and renamed.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .eval_harness import (SUMMARY_HEADER, ErrorReport, compare_methods, compute_errors,
                           summary_line, write_cdf)
from .experiments import METHODS, run_tracker, simulate_scene
from .features import FeatureStream, read_features, write_features
from .geometry import LOS, NLOS
from .initial_search import CandidateGrid, NoFeasibleStartError, search_initial
from .plot import cdf_svg, trajectory_svg
from .trajectory_sim import SampledTrajectory, read_trajectory, write_trajectory

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
RESULT_COLUMNS = ["t", "x_true", "y_true", "x_est", "y_est", "error_m", "E1", "E2",
                  "confidence", "snapped"]
SWEEP_COLUMNS = ["cell", "parameter", "value", "seed"] + list(SUMMARY_HEADER) + ["status"]


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# --- file helpers ------------------------------------------------------------

def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _render(writer_fn, *args) -> str:
    buf = io.StringIO()
    writer_fn(*args, buf)
    return buf.getvalue()


def _fmt(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def result_csv(method: str, t, est, truth: SampledTrajectory | None, output) -> str:
    buf = io.StringIO()
    buf.write(f"#method={method}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for k in range(len(t)):
        if truth is not None:
            xt, yt = truth.positions[k]
            err = math.hypot(est[k, 0] - xt, est[k, 1] - yt)
        else:
            xt = yt = err = math.nan
        writer.writerow([_fmt(t[k]), _fmt(xt), _fmt(yt), _fmt(est[k, 0]), _fmt(est[k, 1]),
                         _fmt(err), _fmt(output.e1[k]), _fmt(output.e2[k]),
                         _fmt(output.confidence[k]), int(bool(output.snapped[k]))])
    return buf.getvalue()


def read_result(path) -> tuple[str, np.ndarray, np.ndarray]:
    """Method name, timestamps and estimated positions from a result CSV."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    method = path.stem
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "method":
                method = value.strip()
        elif line:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header != RESULT_COLUMNS:
        raise ValueError(f"{path}: header {header} does not match {RESULT_COLUMNS}")
    rows = [(float(r[0]), float(r[3]), float(r[4])) for r in reader]
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return method, arr[:, 0], arr[:, 1:]


def _parse_xy(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--init expects 'x,y', got {text!r}") from None
    return x, y


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        changes["layout__mode"] = args.mode
    if getattr(args, "links", None) is not None:
        changes["layout__links"] = args.links
    return cfg.with_values(**changes) if changes else cfg


def _truth_for(features_path: Path, explicit) -> SampledTrajectory | None:
    if explicit:
        return read_trajectory(explicit)
    sibling = Path(features_path).with_name("truth.csv")
    return read_trajectory(sibling) if sibling.exists() else None


def _stream_links(cfg: ExperimentConfig, feats: FeatureStream, requested):
    n = requested if requested is not None else feats.n_links
    if n > feats.n_links:
        raise UsageError(f"--links {n} exceeds the {feats.n_links} links in the feature file")
    return feats.select_links(n), cfg.links(feats.mode, n)


# --- commands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    scene = simulate_scene(cfg)
    out = Path(args.out)
    write_atomic(out / "truth.csv", _render(write_trajectory, scene.truth))
    write_atomic(out / "features.csv", _render(write_features, scene.features))
    write_atomic(out / "config.txt", cfg.serialize())
    print(f"simulated {len(scene.truth)} samples ({scene.features.mode}, "
          f"{len(scene.links)} links) -> {out}")
    return EXIT_OK


def cmd_track(args) -> int:
    if args.init is None and not args.search:
        raise UsageError("an initial position is required: pass --init x,y or --search")
    cfg = _load_config(args)
    feats, links = _stream_links(cfg, read_features(args.features), args.links)
    truth = _truth_for(args.features, args.truth)
    if truth is not None and len(truth) != len(feats):
        raise UsageError("truth and feature files differ in length")
    init = _parse_xy(args.init) if args.init is not None else None
    run = run_tracker(cfg, feats, links, args.method, init, args.search)
    est = run.positions
    out = Path(args.out)
    write_atomic(out / f"result_{args.method}.csv",
                 result_csv(args.method, feats.timestamps, est, truth, run.output))
    lines = ["#start=" + " ".join(f"{s.x!r},{s.y!r}" for s in run.starts)]
    if run.search is not None:
        lines.append(f"#search_margin={run.search.runner_up_margin!r}")
        write_atomic(out / f"search_{args.method}.csv", _render(run.search.write_surface))
    lines.append(",".join(SUMMARY_HEADER))
    if truth is not None:
        line = summary_line(args.method, compute_errors(est, truth))
    else:
        line = f"{args.method},,,,"
    lines.append(line)
    write_atomic(out / f"summary_{args.method}.csv", "\n".join(lines) + "\n")
    print(lines[0][1:])
    print(line)
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _load_config(args)
    feats, links = _stream_links(cfg, read_features(args.features), args.links)
    pair = cfg.pair if args.method == "fusion" else None
    grid = CandidateGrid.covering(cfg.arena, cfg.search__cell)
    res = search_initial(feats, links, grid, cfg.weights(links), cfg.arena, pair,
                         cfg.solver_options(), cfg.search__window)
    out = Path(args.out)
    write_atomic(out / "search.csv", _render(res.write_surface))
    write_atomic(out / "search_summary.csv",
                 "best_x,best_y,best_loss,runner_up_margin\n"
                 f"{res.best.x!r},{res.best.y!r},{res.best_loss!r},{res.runner_up_margin!r}\n")
    print(f"start={res.best.x!r},{res.best.y!r} margin={res.runner_up_margin:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth = read_trajectory(args.truth)
    reports: dict[str, ErrorReport] = {}
    tracks = {"truth": truth.positions}
    for path in args.results:
        method, t, est = read_result(path)
        if method in reports:
            raise UsageError(f"method {method!r} given twice")
        est_traj = SampledTrajectory(t, est, np.zeros_like(est))
        reports[method] = compute_errors(est_traj, truth)
        tracks[method] = est
    out = Path(args.out)
    summary = [",".join(SUMMARY_HEADER)] + [summary_line(m, r) for m, r in reports.items()]
    write_atomic(out / "summary.csv", "\n".join(summary) + "\n")
    write_atomic(out / "cdf.csv", _render(write_cdf, reports))
    if len(reports) >= 2:
        write_atomic(out / "comparison.csv", _render(compare_methods(reports).write_csv))
    cfg = _load_config(args)
    write_atomic(out / "trajectories.svg", trajectory_svg(cfg.arena, tracks))
    write_atomic(out / "cdf.svg", cdf_svg({m: r.cdf for m, r in reports.items()}))
    print("\n".join(summary))
    return EXIT_OK


# --- sweep -------------------------------------------------------------------

def sweep_cells(cfg: ExperimentConfig) -> list[tuple[int, str, ExperimentConfig]]:
    """(index, value, cell config) for every value x repeat; seeds are base + index."""
    if not cfg.sweep__values:
        raise ConfigError("sweep.values", "empty sweep")
    cells = []
    for value in cfg.sweep__values:
        try:
            changes = _sweep_change(cfg.sweep__parameter, value)
        except ValueError as exc:
            raise ConfigError("sweep.values", str(exc)) from None
        for _ in range(cfg.sweep__repeats):
            index = len(cells)
            seed = (cfg.seed + index) % 2 ** 64
            cells.append((index, value, cfg.with_values(seed=seed, **changes)))
    return cells


def _sweep_change(parameter: str, value: str) -> dict:
    if parameter == "links":
        return {"layout__links": int(value)}
    if parameter == "noise":
        return {"wifi__noise_sigma_r": float(value)}
    if parameter == "grid":
        return {"search__cell": float(value)}
    if parameter == "segmentation":
        low = value.lower()
        if low not in ("on", "off"):
            raise ValueError(f"segmentation values are 'on'/'off', got {value!r}")
        return {"search__segment": low == "on"}
    raise ValueError(f"unknown sweep parameter {parameter!r}")


def run_cell(cell: tuple[int, str, ExperimentConfig]) -> list[str]:
    index, value, cfg = cell
    head = [str(index), cfg.sweep__parameter, value, str(cfg.seed)]
    try:
        scene = simulate_scene(cfg)
        if cfg.sweep__parameter in ("grid", "segmentation"):
            run = run_tracker(cfg, scene.features, scene.links, "fusion", search=True)
        else:
            run = run_tracker(cfg, scene.features, scene.links, "fusion",
                              initial=scene.truth.positions[0])
        line = summary_line("fusion", compute_errors(run.positions, scene.truth))
        return head + line.split(",") + ["ok"]
    except Exception as exc:  # a failed cell is recorded, the sweep goes on
        msg = f"error: {type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
        return head + ["fusion", "", "", "", ""] + [msg]


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    changes = {}
    if args.param is not None:
        changes["sweep__parameter"] = args.param
    if args.values is not None:
        changes["sweep__values"] = tuple(v for v in args.values.replace(",", " ").split() if v)
    if args.repeats is not None:
        changes["sweep__repeats"] = args.repeats
    if changes:
        cfg = cfg.with_values(**changes)
    cells = sweep_cells(cfg)
    workers = max(1, args.workers)
    if workers == 1:
        rows = [run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, cells))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    writer.writerows(rows)
    out = Path(args.out)
    write_atomic(out / "sweep.csv", buf.getvalue())
    agg = io.StringIO()
    w = csv.writer(agg, lineterminator="\n")
    w.writerow(["parameter", "value", "cells", "failed", "mean_median_m"])
    for value in cfg.sweep__values:
        mine = [r for r in rows if r[2] == value]
        ok = [float(r[5]) for r in mine if r[-1] == "ok"]
        w.writerow([cfg.sweep__parameter, value, len(mine), len(mine) - len(ok),
                    repr(float(np.mean(ok))) if ok else ""])
    write_atomic(out / "sweep_summary.csv", agg.getvalue())
    print(agg.getvalue(), end="")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------

def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fusiontrack",
                     description="Wi-Fi/acoustic fusion tracking simulation lab.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, layout=True):
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--seed", type=_u64, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        if layout:
            p.add_argument("--mode", choices=(LOS, NLOS), help="sensing mode")
            p.add_argument("--links", type=int, help="number of Wi-Fi links")

    p = sub.add_parser("simulate", help="write truth and feature files")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="track a feature file")
    p.add_argument("features")
    common(p)
    p.add_argument("--truth", help="truth CSV (default: truth.csv next to the features)")
    p.add_argument("--method", choices=METHODS, default="fusion")
    start = p.add_mutually_exclusive_group()
    start.add_argument("--init", help="initial position x,y")
    start.add_argument("--search", action="store_true", help="search the initial position")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("search", help="initial-position search only")
    p.add_argument("features")
    common(p)
    p.add_argument("--method", choices=METHODS, default="fusion")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="compare result files against the truth")
    p.add_argument("results", nargs="+")
    p.add_argument("--truth", required=True)
    common(p, layout=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    common(p)
    p.add_argument("--param", help="links, noise, grid or segmentation")
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--repeats", type=int, help="seeds per value")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"fusiontrack: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NoFeasibleStartError as exc:
        print(f"fusiontrack: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, FileNotFoundError) as exc:
        # missing, malformed or mutually inconsistent input files
        print(f"fusiontrack: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"fusiontrack: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
