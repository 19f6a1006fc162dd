"""Command-line entry point: simulate, preprocess, train, eval, ablate, fuse, plot.

Every invocation writes into its own run directory named
``<command>-<timestamp>-<config hash>`` under ``--out`` and echoes the
resolved config there.  Failures print one ``error: <kind>: <message>`` line
to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .autonn.checkpoint import CheckpointError, load_module, save_module
from .config import ConfigError, RunConfig, describe_keys, load_config
from .datagen import AScan, PairDataset, generate_dataset, make_pair, random_scene, simulate_section, split
from .fusion import (
    FusionRun, dead_reckoning, fuse, load_run, overall_weighted, save_run, simulate_run, ate_rmse,
    write_trajectory_csv,
)
from .odomnet import NetConfig, OdomNet
from .plotting import plot_ablation, plot_bscan, plot_file, plot_history, plot_trajectories
from .preprocess import assemble_bscan, preprocess_array, read_trace_csv, save_bscans, write_trace_csv
from .trainer import (
    evaluate_relative, mean_predictor_rmse, run_ablation, train, write_ablation_csv, write_history_csv,
    write_reports_csv,
)

log = logging.getLogger("gprodom")

THREADS_ENV = "GPR_ODOM_THREADS"


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ run plumbing

class Run:
    """Output directory of one invocation plus its metadata record."""

    def __init__(self, out: Path, command: str, cfg: RunConfig, argv: list[str]):
        stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
        base = f"{command}-{stamp}-{cfg.digest()[:10]}"
        out.mkdir(parents=True, exist_ok=True)
        d, k = out / base, 1
        while d.exists():
            d, k = out / f"{base}-{k}", k + 1
        d.mkdir()
        self.dir = d
        self.cfg = cfg
        self.meta = {
            "command": command,
            "argv": argv,
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "seed": cfg.seed,
            "train_seed": cfg.train.seed,
            "config_sha256": cfg.digest(),
            "started_utc": stamp,
            "inputs": {},
            "outputs": [],
        }
        (d / "config.json").write_text(cfg.to_json() + "\n")

    def path(self, *parts: str) -> Path:
        p = self.dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def output(self, p: Path) -> Path:
        self.meta["outputs"].append(str(Path(p).relative_to(self.dir)))
        return p

    def finish(self) -> None:
        self.meta["finished_utc"] = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
        (self.dir / "run.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_rows(path: Path, header: list[str], rows: list[list]) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _need(value: str | None, what: str, flag: str) -> Path:
    if value is None:
        raise UsageError(f"{what} not given; pass {flag} or set it in the config paths section")
    p = Path(value)
    if not p.exists():
        raise FileNotFoundError(f"{what} {p} does not exist")
    return p


def _load_dataset(run: Run) -> PairDataset:
    d = _need(run.cfg.paths.dataset, "dataset", "--dataset")
    if (d / "dataset").is_dir() and not (d / "pairs.bin").exists():
        d = d / "dataset"  # a simulate run directory
    ds = PairDataset.load(d)
    run.meta["inputs"]["dataset"] = str(d)
    run.meta["dataset_sha256"] = ds.content_hash()
    return ds


def _split(run: Run, ds: PairDataset) -> tuple[PairDataset, PairDataset, list[str], list[str]]:
    tr, te = split(ds.trajectory_names, run.cfg.data.split_spec)
    if not tr or not te:
        raise UsageError(f"split leaves train={tr} test={te}; both need at least one trajectory")
    run.meta["split"] = {"train": tr, "test": te}
    return ds.subset(tr), ds.subset(te), tr, te


def _checkpoint_files(value: str | None) -> tuple[Path, Path, Path]:
    p = _need(value, "checkpoint", "--checkpoint")
    d = p if p.is_dir() else p.parent
    ckpt = d / "model.ckpt" if p.is_dir() else p
    for f in (ckpt, d / "net.json", d / "model.json"):
        if not f.exists():
            raise FileNotFoundError(f"missing checkpoint file {f}")
    return ckpt, d / "net.json", d / "model.json"


def load_model(value: str | None) -> tuple[OdomNet, dict]:
    ckpt, net_json, info_json = _checkpoint_files(value)
    model = load_module(ckpt, OdomNet(NetConfig.load(net_json)))
    model.eval()
    return model, json.loads(info_json.read_text())


# ------------------------------------------------------------------ commands

def cmd_simulate(run: Run) -> None:
    """Pair dataset, raw trace sections for preprocess, and fusion sensor runs."""
    cfg = run.cfg
    ds = generate_dataset(cfg.scene, cfg.motion, cfg.preprocess, cfg.data.n_pairs, cfg.data.n_trajectories, cfg.seed)
    ds.save(run.path("dataset"))
    run.meta["dataset_sha256"] = ds.content_hash()
    rows = []
    for i, name in enumerate(ds.trajectory_names):
        lab = ds.labels[ds.trajectory_index == i]
        rows.append([name, lab.size, float(lab.mean()), float(lab.std())])
        # same scene as the pairs of this trajectory
        scene = random_scene(cfg.scene, np.random.default_rng(cfg.seed * 1000 + i))
        rng = np.random.default_rng([cfg.seed, 1, i])
        sp = cfg.preprocess.trace_spacing
        n = cfg.data.raw_traces
        pos = 2 * sp + sp * np.arange(n) + rng.uniform(-0.5, 0.5, n) * cfg.motion.jitter * sp
        raw = simulate_section(scene, pos, cfg.scene.dt, cfg.scene.n_samples, rng)
        traces = [AScan(raw[:, j], cfg.scene.dt, 0.0, float(p)) for j, p in enumerate(pos)]
        write_trace_csv(run.path("raw", f"{name}.csv"), traces, run.path("raw", f"{name}_positions.csv"))
    run.output(_write_rows(run.path("dataset_summary.csv"), ["trajectory", "pairs", "label_mean_m", "label_std_m"],
                           rows))
    for k in range(cfg.data.n_runs):
        fr = simulate_run(cfg.sim, seed=cfg.seed * 100 + k, name=f"sim_{k:02d}")
        save_run(run.path("runs"), fr)
    log.info("simulated %d pairs over %d trajectories and %d fusion runs", len(ds), len(ds.trajectory_names),
             cfg.data.n_runs)


def cmd_preprocess(run: Run) -> None:
    cfg = run.cfg
    src = _need(cfg.paths.input, "trace CSV", "--input")
    pos_path = cfg.paths.positions
    if pos_path is None and src.with_name(f"{src.stem}_positions.csv").exists():
        pos_path = str(src.with_name(f"{src.stem}_positions.csv"))
    run.meta["inputs"].update({"traces": str(src), "positions": pos_path})
    traces = read_trace_csv(src, pos_path)
    if any(t.position is None for t in traces):
        raise UsageError("preprocess needs along-track positions for every trace (--positions)")
    matrix = np.stack([t.samples for t in traces], axis=1)
    clean = preprocess_array(matrix, traces[0].dt, cfg.preprocess, traces[0].t0)
    conditioned = [t.with_samples(clean[:, j]) for j, t in enumerate(traces)]
    scans = assemble_bscan(conditioned, cfg.preprocess)
    save_bscans(run.output(run.path("bscans.bin")), scans)
    rows = [[i, b.origin, b.width, float(np.sqrt(np.mean(b.traces ** 2)))] for i, b in enumerate(scans)]
    run.output(_write_rows(run.path("bscans.csv"), ["index", "origin_m", "traces", "rms"], rows))
    run.output(plot_bscan(run.path("bscan_000.svg"), scans[0].traces, "conditioned B-scan 0",
                          (scans[0].origin, scans[0].origin + scans[0].width * scans[0].trace_spacing,
                           scans[0].traces.shape[0], 0)))
    log.info("wrote %d B-scans", len(scans))


def _eval_metrics(report, baseline: float) -> dict:
    return {"variant": report.variant, "overall_rmse_m": report.overall,
            "per_trajectory_rmse_m": report.per_trajectory, "pairs": report.counts,
            "mean_predictor_rmse_m": baseline, "ratio_to_mean_predictor": report.overall / baseline}


def cmd_train(run: Run) -> None:
    cfg = run.cfg
    ds = _load_dataset(run)
    tr_set, te_set, _, _ = _split(run, ds)
    ckpt = run.path("model.ckpt")
    model, hist = train(tr_set, cfg.net, replace(cfg.train, checkpoint=str(ckpt)),
                        on_epoch=lambda r: log.info("epoch %d: train %.4f m, val %.4f m", r["epoch"],
                                                    r["train_loss_m"], r["eval_rmse_m"]))
    save_module(run.output(ckpt), model)
    model.cfg.save(run.output(run.path("net.json")))
    _write_json(run.output(run.path("model.json")), {
        "variant": model.variant, "validation_rmse_m": hist.best_eval_rmse, "best_epoch": hist.best_epoch,
        "diverged": hist.diverged, "dataset_sha256": run.meta["dataset_sha256"], "split": run.meta["split"],
    })
    write_history_csv(run.output(run.path("history.csv")), hist)
    run.output(plot_history(run.path("history.svg"), hist.epochs, f"{model.variant} training"))
    report = evaluate_relative(model, te_set)
    write_reports_csv(run.output(run.path("eval.csv")), [report])
    _write_json(run.output(run.path("metrics.json")), _eval_metrics(report, mean_predictor_rmse(tr_set, te_set)))
    run.meta["train_seconds"] = hist.seconds
    log.info("test RMSE %.4f m over %d pairs", report.overall, report.count)


def cmd_eval(run: Run) -> None:
    cfg = run.cfg
    model, info = load_model(cfg.paths.checkpoint)
    run.meta["inputs"]["checkpoint"] = cfg.paths.checkpoint
    ds = _load_dataset(run)
    tr_set, te_set, _, _ = _split(run, ds)
    report = evaluate_relative(model, te_set)
    write_reports_csv(run.output(run.path("eval.csv")), [report])
    _write_json(run.output(run.path("metrics.json")), _eval_metrics(report, mean_predictor_rmse(tr_set, te_set)))
    log.info("test RMSE %.4f m over %d pairs", report.overall, report.count)


def cmd_ablate(run: Run) -> None:
    cfg = run.cfg
    ds = _load_dataset(run)
    tr_set, te_set, _, _ = _split(run, ds)

    def on_variant(v, model, hist, rep):
        write_history_csv(run.output(run.path("history", f"{v}.csv")), hist)
        log.info("%s: test RMSE %.4f m", v, rep.overall)

    reports = run_ablation(tr_set, te_set, cfg.net, cfg.train, on_variant=on_variant)
    write_ablation_csv(run.output(run.path("ablation.csv")), reports)
    base = mean_predictor_rmse(tr_set, te_set)
    run.output(plot_ablation(run.path("ablation.svg"), [r.label for r in reports],
                             [100 * r.overall for r in reports], 100 * base))
    full = next((r for r in reports if r.variant == "full"), None)
    concat = next((r for r in reports if r.variant == "feature_concat"), None)
    summary = {"mean_predictor_rmse_m": base, "overall_rmse_m": {r.variant: r.overall for r in reports}}
    if full and concat:
        summary["reduction_full_vs_feature_concat"] = 1.0 - full.overall / concat.overall
    _write_json(run.output(run.path("metrics.json")), summary)


def network_distances(model: OdomNet, fr: FusionRun, cfg: RunConfig, index: int) -> np.ndarray:
    """Predict inter-frame distances from B-scan pairs simulated at the run's true steps."""
    gt = fr.ground_truth
    fx = np.interp(fr.frame_times, gt[:, 0], gt[:, 1])
    fy = np.interp(fr.frame_times, gt[:, 0], gt[:, 2])
    steps = np.hypot(np.diff(fx), np.diff(fy))
    pre = cfg.preprocess
    width = pre.L * pre.trace_spacing
    margin = 2 * pre.trace_spacing
    track = max(cfg.scene.track_length, float(steps.sum()) + width + 2 * margin + 1.0)
    scene_cfg = replace(cfg.scene, track_length=track)
    scene = random_scene(scene_cfg, np.random.default_rng([cfg.seed, 2, index]))
    starts = margin + np.concatenate([[0.0], np.cumsum(steps)[:-1]])
    prev, cur = [], []
    for k, (s, step) in enumerate(zip(starts, steps)):
        pair = make_pair(scene, float(s), float(step), scene_cfg, cfg.motion, pre,
                         np.random.default_rng([cfg.seed, 3, index, k]))
        prev.append(pair.b_prev)
        cur.append(pair.b_cur)
    return model.predict(np.stack(prev), np.stack(cur))


def cmd_fuse(run: Run) -> None:
    cfg = run.cfg
    if cfg.paths.runs is not None:
        d = _need(cfg.paths.runs, "runs directory", "--runs")
        if (d / "runs").is_dir():
            d = d / "runs"  # a simulate run directory
        run.meta["inputs"]["runs"] = str(d)
        runs = [load_run(p) for p in sorted(q for q in d.iterdir() if q.is_dir())]
        if not runs:
            raise FileNotFoundError(f"no trajectory directories under {d}")
    else:
        runs = [simulate_run(cfg.sim, seed=cfg.seed * 100 + k, name=f"sim_{k:02d}") for k in range(cfg.data.n_runs)]
    fcfg = cfg.fusion
    if cfg.paths.checkpoint is not None:
        model, info = load_model(cfg.paths.checkpoint)
        run.meta["inputs"]["checkpoint"] = cfg.paths.checkpoint
        fcfg = replace(fcfg, gpr_std=float(info["validation_rmse_m"]))
        for k, fr in enumerate(runs):
            pred = network_distances(model, fr, cfg, k)
            fr.gpr_odom = np.column_stack([fr.frame_times[:-1], fr.frame_times[1:], pred])
        run.meta["gpr_source"] = "network"
    else:
        run.meta["gpr_source"] = "recorded"
    run.meta["gpr_std_m"] = fcfg.gpr_std
    rows, per = [], {}
    for fr in runs:
        base = fuse(fr, fcfg, use_gpr=False)
        fused = fuse(fr, fcfg, use_gpr=True)
        dr = dead_reckoning(fr)
        gt = fr.ground_truth
        dr_ate = ate_rmse(fr.frame_times, dr[:, :2], gt[:, 0], gt[:, 1:3], fcfg.assoc_tol)
        write_trajectory_csv(run.output(run.path("trajectories", f"{fr.name}_fused.csv")), fused)
        write_trajectory_csv(run.output(run.path("trajectories", f"{fr.name}_baseline.csv")), base)
        run.output(plot_trajectories(run.path("trajectories", f"{fr.name}.svg"), gt[:, 1:3], {
            "dead reckoning": dr[:, :2], "imu + wheel": base.states[:, :2],
            "imu + wheel + gpr": fused.states[:, :2]}, fr.name))
        rows.append([fr.name, fr.length, dr_ate, base.ate, fused.ate])
        per[fr.name] = {"length_m": fr.length, "dead_reckoning_ate_m": dr_ate, "baseline_ate_m": base.ate,
                        "fused_ate_m": fused.ate, "fused_iterations": fused.solve.iterations,
                        "fused_converged": fused.solve.converged, "factors": fused.factor_counts}
    lengths = [r[1] for r in rows]
    overall = {"baseline_ate_m": overall_weighted([r[3] for r in rows], lengths),
               "fused_ate_m": overall_weighted([r[4] for r in rows], lengths),
               "dead_reckoning_ate_m": overall_weighted([r[2] for r in rows], lengths)}
    rows.append(["overall", float(sum(lengths)), overall["dead_reckoning_ate_m"], overall["baseline_ate_m"],
                 overall["fused_ate_m"]])
    run.output(_write_rows(run.path("metrics.csv"),
                           ["trajectory", "length_m", "dead_reckoning_ate_m", "baseline_ate_m", "fused_ate_m"], rows))
    _write_json(run.output(run.path("metrics.json")), {"per_trajectory": per, "overall_weighted": overall})
    log.info("overall ATE: baseline %.3f m, fused %.3f m", overall["baseline_ate_m"], overall["fused_ate_m"])


def cmd_plot(run: Run) -> None:
    src = _need(run.cfg.paths.input, "plot input", "--input")
    run.meta["inputs"]["plot"] = str(src)
    run.output(plot_file(src, run.path(f"{src.stem}.svg")))


COMMANDS: dict[str, tuple[Callable[[Run], None], str, list[str]]] = {
    "simulate": (cmd_simulate, "generate the pair dataset, raw traces and fusion sensor runs", []),
    "preprocess": (cmd_preprocess, "condition a trace CSV and cut it into B-scans", ["input", "positions"]),
    "train": (cmd_train, "train a network and evaluate it on the test trajectories", ["dataset"]),
    "eval": (cmd_eval, "evaluate a checkpoint on the test trajectories", ["dataset", "checkpoint"]),
    "ablate": (cmd_ablate, "train and compare the four network configurations", ["dataset"]),
    "fuse": (cmd_fuse, "factor-graph fusion with and without GPR distances", ["runs", "checkpoint"]),
    "plot": (cmd_plot, "render a history, ablation, trajectory CSV or B-scan store to SVG", ["input"]),
}

PATH_HELP = {
    "dataset": "pair dataset directory or simulate run directory",
    "checkpoint": "model.ckpt file or train run directory (fuse: puts the network in the loop)",
    "runs": "fusion runs directory or simulate run directory (default: simulate fresh runs)",
    "input": "input file",
    "positions": "along-track positions CSV (default: <input stem>_positions.csv if present)",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config (see config keys below)")
    common.add_argument("--out", metavar="DIR", default="runs", help="parent of the run directory (default: runs)")
    common.add_argument("--seed", type=int, metavar="N", help="override the global seed")
    common.add_argument("--quiet", action="store_true", help="only print the run directory and errors")
    parser = argparse.ArgumentParser(
        prog="gprodom", description="GPR odometry toolkit: synthetic data, network training and fusion.",
        epilog=f"environment: {THREADS_ENV}=N caps numeric library threads.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, text, path_flags) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text, epilog=describe_keys(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        for flag in path_flags:
            p.add_argument(f"--{flag}", metavar="PATH", help=PATH_HELP[flag])
    return parser


def _cap_threads() -> None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
        return
    threadpool_limits(limits=n)  # process-wide for the rest of the invocation


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        _cap_threads()
        cfg = load_config(args.config, args.seed)
        overrides = {k: getattr(args, k) for k in PATH_HELP if getattr(args, k, None) is not None}
        if overrides:
            cfg = replace(cfg, paths=replace(cfg.paths, **overrides))
        run = Run(Path(args.out), args.command, cfg, argv)
        if not args.quiet:
            print(cfg.to_json(), file=sys.stderr)
        COMMANDS[args.command][0](run)
        run.finish()
    except (ConfigError, UsageError, CheckpointError, ValueError, OSError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    print(run.dir)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
