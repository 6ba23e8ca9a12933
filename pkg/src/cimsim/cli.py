"""Experiment driver: profile -> optimize -> simulate -> summarize.

Every sweep cell (sigma, policy[, threshold]) produces one JSON report;
summarize collapses a report directory into a CSV of curves.  All randomness
derives from the config seed plus the cell's position in the sweep grid, so
identical configs reproduce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import optimizer, profiler
from .archsim import (ChipConfig, PEConfig, collect_layer_streams, map_layers,
                      simulate_network)
from .bitplane import QuantizedTensor
from .config import ConfigError, ExperimentConfig, parse_config
from .errormodel import write_error_delay_csv
from .optimizer import InfeasibleThresholdError
from .workloads import load_tiny_mlp, synthetic_cnn, CNN_SEED


class PipelineError(RuntimeError):
    pass


@dataclass
class Workload:
    name: str
    network: object
    images: QuantizedTensor
    labels: np.ndarray | None
    profile_images: QuantizedTensor


def load_workload(cfg: ExperimentConfig) -> Workload:
    if cfg.network == "synthetic_cnn":
        network, images = synthetic_cnn(n_images=cfg.images)
        _, prof = synthetic_cnn(seed=CNN_SEED + 1, n_images=cfg.profile_samples)
        return Workload("synthetic_cnn", network, images, None, prof)
    if cfg.network == "tiny_mlp":
        network, x_q, labels = load_tiny_mlp()
        n = min(cfg.images, x_q.values.shape[0])
        images = QuantizedTensor(values=x_q.values[:n].copy(), scale=x_q.scale,
                                 signed=False, bits=x_q.bits)
        k = min(cfg.profile_samples, x_q.values.shape[0])
        prof = QuantizedTensor(values=x_q.values[-k:].copy(), scale=x_q.scale,
                               signed=False, bits=x_q.bits)
        return Workload("tiny_mlp", network, images, labels[:n], prof)
    raise ConfigError(f"unknown workload {cfg.network!r}; "
                      f"available: synthetic_cnn, tiny_mlp")


def chip_config(cfg: ExperimentConfig) -> ChipConfig:
    return ChipConfig(n_pes=cfg.n_pes,
                      pe=PEConfig(arrays_per_pe=cfg.arrays_per_pe,
                                  array_rows=cfg.array_rows,
                                  array_cols=cfg.array_cols),
                      energy=cfg.energy, noc_hops=cfg.noc_hops,
                      noc_latency_cycles=cfg.noc_latency_cycles)


def pmf_cache_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / f"pmfs_{cfg.network}.txt"


def profile_workload(cfg: ExperimentConfig, work: Workload,
                     use_cache: bool = True) -> dict:
    """Per-layer LayerProfiles, loaded from the PMF cache when present."""
    path = pmf_cache_path(cfg)
    if use_cache and path.exists():
        return profiler.load_pmf_cache(path)
    streams = collect_layer_streams(work.network, work.profile_images)
    profiles = {}
    for layer, stream in zip(work.network.layers, streams):
        profiles[layer.name] = profiler.profile_layer(
            layer.weights, stream, range(1, cfg.max_wordlines + 1),
            policy=cfg.profile_policy)
    path.parent.mkdir(parents=True, exist_ok=True)
    profiler.save_pmf_cache(path, profiles)
    return profiles


def build_tables(cfg: ExperimentConfig, work: Workload, profiles: dict,
                 sigma: float) -> list:
    device = cfg.device(sigma)
    return [
        optimizer.build_tradeoff_table(profiles[layer.name], device,
                                       quant_scale=layer.quant_divisor,
                                       robust_mass=cfg.robust_mass)
        for layer in work.network.layers
    ]


def optimize_luts(cfg: ExperimentConfig, work: Workload, tables: list,
                  threshold: float) -> dict:
    """One LUT per layer; raises InfeasibleThresholdError naming the layer."""
    luts = {}
    for idx, (layer, table) in enumerate(zip(work.network.layers, tables)):
        try:
            luts[idx] = optimizer.optimize_lut(table, threshold)
        except InfeasibleThresholdError as e:
            raise InfeasibleThresholdError(threshold, e.min_achievable) from None
    return luts


def _cell_tag(sigma: float, policy: str, threshold: float | None) -> str:
    tag = f"{policy}_s{sigma}".replace(".", "p")
    if threshold is not None:
        tag += f"_t{threshold}".replace(".", "p")
    return tag


def _cell_seed(cfg: ExperimentConfig, sigma: float, policy: str,
               threshold: float | None):
    si = cfg.sigmas.index(sigma)
    pi = cfg.policies.index(policy)
    ti = cfg.thresholds.index(threshold) + 1 if threshold is not None else 0
    return np.random.SeedSequence([cfg.seed, si, pi, ti])


def run_cell(cfg: ExperimentConfig, work: Workload, profiles: dict,
             sigma: float, policy: str, threshold: float | None) -> dict:
    """Simulate one sweep cell over the configured trials."""
    device = cfg.device(sigma)
    chip = chip_config(cfg)
    mapping = map_layers(work.network, chip)
    meta = {
        "workload": work.name, "sigma": sigma, "policy": policy,
        "threshold": threshold, "seed": cfg.seed, "trials": cfg.trials,
        "images": int(work.images.values.shape[0]), "adc_bits": cfg.adc_bits,
    }

    luts = None
    lut_info = None
    if policy == "counting_cards":
        tables = build_tables(cfg, work, profiles, sigma)
        try:
            luts = optimize_luts(cfg, work, tables, threshold)
        except InfeasibleThresholdError as e:
            return {"meta": meta, "infeasible": {
                "threshold": threshold, "min_achievable": e.min_achievable}}
        lut_info = {
            work.network.layers[i].name: {
                "choice": luts[i].choice.tolist(),
                "achieved_error": luts[i].achieved_error,
                "achieved_delay": luts[i].achieved_delay,
            } for i in sorted(luts)
        }

    rng = np.random.default_rng(_cell_seed(cfg, sigma, policy, threshold))
    trial_reports = []
    for _ in range(cfg.trials):
        trial_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        rep = simulate_network(work.network, work.images, mapping, device,
                               policy, trial_rng, luts=luts, chip=chip,
                               labels=work.labels)
        trial_reports.append(rep)

    per_layer = []
    for li, layer in enumerate(work.network.layers):
        maes = np.array([r.per_layer[li]["mae"] for r in trial_reports])
        per_layer.append({
            "name": layer.name,
            "mae": float(maes.mean()),
            "mae_ci95": (1.96 * float(maes.std(ddof=1)) / np.sqrt(len(maes))
                         if len(maes) > 1 else 0.0),
            "cycles_per_image": float(np.mean(
                [r.per_layer[li]["cycles_per_image"] for r in trial_reports])),
            "adc_reads": float(np.mean(
                [r.per_layer[li]["adc_reads"] for r in trial_reports])),
            "energy_pj": float(np.mean(
                [r.per_layer[li]["energy_pj"] for r in trial_reports])),
            "stalls": float(np.mean(
                [r.per_layer[li]["stalls"] for r in trial_reports])),
            "copies": trial_reports[0].per_layer[li]["copies"],
        })
    chip_stats = {
        key: float(np.mean([r.chip[key] for r in trial_reports]))
        for key in ("cycles_per_image", "latency_cycles", "adc_reads",
                    "energy_pj_per_image", "final_mae")
    }
    if work.labels is not None:
        chip_stats["accuracy"] = float(np.mean(
            [r.chip["accuracy"] for r in trial_reports]))
        chip_stats["ref_accuracy"] = trial_reports[0].chip["ref_accuracy"]

    report = {"meta": meta, "per_layer": per_layer, "chip": chip_stats}
    if lut_info is not None:
        report["luts"] = lut_info
    return report


def _cells(cfg: ExperimentConfig) -> list:
    cells = []
    for sigma in cfg.sigmas:
        for policy in cfg.policies:
            if policy == "counting_cards":
                for thr in cfg.thresholds:
                    cells.append((sigma, policy, thr))
            else:
                cells.append((sigma, policy, None))
    return cells


def _run_cell_job(args):
    cfg, sigma, policy, threshold = args
    work = load_workload(cfg)
    profiles = profile_workload(cfg, work)
    report = run_cell(cfg, work, profiles, sigma, policy, threshold)
    return _cell_tag(sigma, policy, threshold), report


def run_pipeline(cfg: ExperimentConfig) -> list:
    """Profile, optimize, and simulate the whole sweep grid.

    Returns the written report paths; infeasible counting-cards cells are
    reported as such and do not stop the run.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    work = load_workload(cfg)
    profile_workload(cfg, work)  # ensure the cache exists before forking

    cells = _cells(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_cell_job,
                                    [(cfg, s, p, t) for (s, p, t) in cells]))
    else:
        profiles = profile_workload(cfg, work)
        results = [( _cell_tag(s, p, t),
                     run_cell(cfg, work, profiles, s, p, t))
                   for (s, p, t) in cells]

    paths = []
    for tag, report in results:
        path = out / f"report_{tag}.json"
        path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
        paths.append(path)
    return paths


def emit_summary(report_dir, out_path=None) -> Path:
    """Collapse a report directory into one deterministic CSV of curves."""
    report_dir = Path(report_dir)
    reports = sorted(report_dir.glob("report_*.json"))
    if not reports:
        raise PipelineError(f"no report files in {report_dir}")
    rows = []
    for path in reports:
        data = json.loads(path.read_text())
        meta = data["meta"]
        thr = meta.get("threshold")
        if "infeasible" in data:
            rows.append((meta["sigma"], meta["policy"],
                         "" if thr is None else repr(thr), "infeasible", "", "", ""))
            continue
        mae = float(np.mean([pl["mae"] for pl in data["per_layer"]]))
        acc = data["chip"].get("accuracy", "")
        rows.append((
            meta["sigma"], meta["policy"], "" if thr is None else repr(thr),
            repr(mae), repr(acc) if acc != "" else "",
            repr(data["chip"]["cycles_per_image"]),
            repr(data["chip"]["energy_pj_per_image"]),
        ))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    out_path = Path(out_path) if out_path else report_dir / "summary.csv"
    with open(out_path, "w") as f:
        f.write("sigma,policy,threshold,mae,accuracy_proxy,cycles,energy\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
    return out_path


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _load_cfg(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def _cmd_profile(args) -> int:
    cfg = _load_cfg(args)
    work = load_workload(cfg)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    profile_workload(cfg, work, use_cache=not args.force)
    print(pmf_cache_path(cfg))
    return 0


def _cmd_optimize(args) -> int:
    cfg = _load_cfg(args)
    work = load_workload(cfg)
    profiles = profile_workload(cfg, work)
    sigma = args.sigma if args.sigma is not None else cfg.sigmas[0]
    thresholds = [args.threshold] if args.threshold is not None else cfg.thresholds
    if not thresholds:
        raise ConfigError("no thresholds given (flag or sweep.thresholds)")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = build_tables(cfg, work, profiles, sigma)
    for layer, table in zip(work.network.layers, tables):
        tag = f"{layer.name}_s{sigma}".replace(".", "p")
        write_error_delay_csv(out / f"table_{tag}.csv", table)
    for thr in thresholds:
        try:
            luts = optimize_luts(cfg, work, tables, thr)
        except InfeasibleThresholdError as e:
            print(f"threshold {thr}: infeasible (minimum {e.min_achievable})")
            continue
        for li, lut in sorted(luts.items()):
            name = work.network.layers[li].name
            tag = f"{name}_s{sigma}_t{thr}".replace(".", "p")
            optimizer.write_lut_text(out / f"lut_{tag}.txt", lut)
            (out / f"lut_{tag}.bin").write_bytes(
                optimizer.pack_lut(lut, cfg.max_wordlines))
        total = sum(luts[i].achieved_error for i in luts)
        print(f"threshold {thr}: total achieved error {total}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    work = load_workload(cfg)
    profiles = profile_workload(cfg, work)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    if args.sigma not in cfg.sigmas:
        raise ConfigError(f"--sigma {args.sigma} is not in sweep.sigmas")
    if args.policy == "counting_cards" and args.threshold not in cfg.thresholds:
        raise ConfigError(f"--threshold {args.threshold} is not in sweep.thresholds")
    threshold = args.threshold if args.policy == "counting_cards" else None
    report = run_cell(cfg, work, profiles, args.sigma, args.policy, threshold)
    path = Path(cfg.output_dir) / f"report_{_cell_tag(args.sigma, args.policy, threshold)}.json"
    path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    print(path)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    for path in run_pipeline(cfg):
        print(path)
    return 0


def _cmd_summarize(args) -> int:
    cfg = _load_cfg(args)
    directory = args.dir if args.dir else cfg.output_dir
    print(emit_summary(directory))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cimsim",
        description="Simulate and schedule in-memory VMM under device variance")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", required=True, help="TOML config path")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--output-dir", help="override output directory")

    p = sub.add_parser("profile", help="collect per-pair PMFs for the workload")
    common(p)
    p.add_argument("--force", action="store_true", help="ignore the PMF cache")
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("optimize", help="build trade-off tables and solve LUTs")
    common(p)
    p.add_argument("--sigma", type=float, help="device sigma (default: first of sweep)")
    p.add_argument("--threshold", type=float, help="error budget (default: all of sweep)")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("simulate", help="simulate one sweep cell")
    common(p)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--policy", required=True,
                   choices=["baseline", "zero_skip", "counting_cards"])
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="run the whole sweep grid")
    common(p)
    p.add_argument("--workers", type=int, help="parallel cell workers")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("summarize", help="emit summary CSV from reports")
    common(p)
    p.add_argument("--dir", help="report directory (default: output_dir)")
    p.set_defaults(func=_cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(json.dumps({"error": "config", "message": str(e)}), file=sys.stderr)
        return 2
    except (PipelineError, InfeasibleThresholdError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
