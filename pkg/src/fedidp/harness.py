"""Experiment front-end: config loading, seed sweeps, CSV/JSON/SVG outputs.

The pipeline is a pure function of the config: identical configs produce
byte-identical CSVs, summaries, and plots. Distinct (distribution, seed)
runs are independent and can execute in parallel worker processes.

Exit codes: 0 success, 2 config error, 3 planner infeasibility.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .accountant import InfeasibleBudgetError
from .data import (
    FederatedDataset,
    assign_privacy_groups,
    make_synthetic,
    partition_iid,
    partition_label_skew,
)
from .engine import (
    EngineConfig,
    Mode,
    non_private_plan,
    run_training,
    scale_baseline_plan,
)
from .planner import PrivacyGroupSpec, get_group_sampling_rates

OUTPUT_DIR_ENV = "FEDIDP_OUT"

CSV_COLUMNS = ["round", "sampled", "clip_norm", "noise_std", "train_loss", "eval_loss", "eval_acc"]

# Client fractions per budget tier, strictest first. "nonprivate" lifts all
# privacy constraints instead of assigning tiers.
DISTRIBUTION_PRESETS = {
    "strict": (1.0, 0.0, 0.0),
    "relaxed": (0.0, 0.0, 1.0),
    "acquisti": (0.34, 0.43, 0.23),
    "jensen": (0.54, 0.37, 0.09),
    "nonprivate": (0.0, 0.0, 0.0),
}


class ConfigError(ValueError):
    """Invalid experiment configuration; maps to exit code 2."""


@dataclass(frozen=True)
class DistributionSpec:
    name: str
    fractions: tuple[float, ...]

    @property
    def non_private(self) -> bool:
        return all(f == 0.0 for f in self.fractions)


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset
    num_classes: int
    dim: int
    samples_per_class: int
    test_samples_per_class: int
    class_separation: float
    partition: str
    alpha: float
    num_clients: int
    data_seed: int
    # privacy
    epsilons: tuple[float, ...]
    distributions: tuple[DistributionSpec, ...]
    delta: float
    # engine
    mode: str
    rounds: int
    cohort: int
    server_lr: float
    client_epochs: int
    client_batch_size: int
    client_lr: float
    hidden_dims: tuple[int, ...]
    clip_norm_init: float
    clip_quantile: float
    clip_lr: float
    count_noise_frac: float
    eval_interval: int
    # sweep
    seeds: tuple[int, ...]
    output_dir: str | None


_SCHEMA = {
    "dataset": {
        "num_classes": (int, 5),
        "dim": (int, 16),
        "samples_per_class": (int, 400),
        "test_samples_per_class": (int, 200),
        "class_separation": (float, 3.0),
        "partition": (str, "iid"),
        "alpha": (float, 0.5),
        "num_clients": (int, 100),
        "data_seed": (int, 7),
    },
    "privacy": {
        "epsilons": (list, [1.0, 2.0, 3.0]),
        "distributions": (list, ["strict", "jensen", "acquisti", "relaxed", "nonprivate"]),
        "delta": (float, 1e-5),
    },
    "engine": {
        "mode": (str, "IDP_SAMPLE"),
        "rounds": (int, 200),
        "cohort": (int, 10),
        "server_lr": (float, 1.0),
        "client_epochs": (int, 2),
        "client_batch_size": (int, 32),
        "client_lr": (float, 0.05),
        "hidden_dims": (list, [64]),
        "clip_norm_init": (float, 0.1),
        "clip_quantile": (float, 0.5),
        "clip_lr": (float, 0.2),
        "count_noise_frac": (float, 0.05),
        "eval_interval": (int, 1),
    },
}


def _coerce(block: str, key: str, kind, value):
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{block}.{key} must be a number, got {value!r}")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{block}.{key} must be an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"{block}.{key} must be a {kind.__name__}, got {value!r}")
    return value


def _resolve_distribution(entry, epsilons) -> DistributionSpec:
    if isinstance(entry, str):
        if entry not in DISTRIBUTION_PRESETS:
            raise ConfigError(
                f"unknown distribution {entry!r}; presets are "
                f"{sorted(DISTRIBUTION_PRESETS)} or an explicit fractions list"
            )
        return DistributionSpec(entry, DISTRIBUTION_PRESETS[entry])
    if not isinstance(entry, list) or not all(
        isinstance(f, (int, float)) and not isinstance(f, bool) for f in entry
    ):
        raise ConfigError(f"distribution entries must be preset names or fraction lists, got {entry!r}")
    fractions = tuple(float(f) for f in entry)
    if len(fractions) != len(epsilons):
        raise ConfigError(
            f"fractions must have one entry per epsilon ({len(epsilons)}), got {len(fractions)}"
        )
    if any(f < 0 for f in fractions):
        raise ConfigError("fractions must be non-negative")
    total = sum(fractions)
    if total != 0.0 and abs(total - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1 (or all be 0 for non-private), got {total}")
    name = "-".join(f"{f * 100:g}" for f in fractions)
    return DistributionSpec(name, fractions)


def load_config(path) -> ExperimentConfig:
    """Parses and fully validates an experiment config file.

    Missing keys are filled with defaults; unknown keys are rejected by
    name.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    known_top = set(_SCHEMA) | {"seeds", "output_dir"}
    for key in raw:
        if key not in known_top:
            raise ConfigError(f"unknown config key {key!r}")

    values = {}
    for block, fields in _SCHEMA.items():
        given = raw.get(block, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{block} must be a JSON object")
        for key in given:
            if key not in fields:
                raise ConfigError(f"unknown config key {block}.{key!r}")
        for key, (kind, default) in fields.items():
            values[key] = _coerce(block, key, kind, given.get(key, default))

    seeds = raw.get("seeds", [1, 2, 3])
    if (
        not isinstance(seeds, list)
        or not seeds
        or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds)
    ):
        raise ConfigError("seeds must be a non-empty list of integers")
    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir must be a string or null")

    epsilons = values.pop("epsilons")
    if not epsilons or not all(
        isinstance(e, (int, float)) and not isinstance(e, bool) and e > 0 for e in epsilons
    ):
        raise ConfigError("privacy.epsilons must be a list of positive numbers")
    epsilons = tuple(float(e) for e in epsilons)
    if list(epsilons) != sorted(epsilons) or len(set(epsilons)) != len(epsilons):
        raise ConfigError("privacy.epsilons must be strictly ascending")

    distributions = tuple(
        _resolve_distribution(d, epsilons) for d in values.pop("distributions")
    )
    if not distributions:
        raise ConfigError("privacy.distributions must not be empty")

    hidden = values.pop("hidden_dims")
    if not all(isinstance(h, int) and h > 0 for h in hidden):
        raise ConfigError("engine.hidden_dims must be positive integers")

    config = ExperimentConfig(
        epsilons=epsilons,
        distributions=distributions,
        hidden_dims=tuple(hidden),
        seeds=tuple(seeds),
        output_dir=output_dir,
        **values,
    )
    _validate_semantics(config)
    return config


def _validate_semantics(config: ExperimentConfig) -> None:
    if config.partition not in ("iid", "label_skew"):
        raise ConfigError(f"dataset.partition must be 'iid' or 'label_skew', got {config.partition!r}")
    if config.mode not in Mode.__members__:
        raise ConfigError(f"engine.mode must be one of {list(Mode.__members__)}, got {config.mode!r}")
    if not 0 < config.cohort <= config.num_clients:
        raise ConfigError("engine.cohort must be in [1, num_clients]")
    if config.dim < config.num_classes:
        raise ConfigError("dataset.dim must be >= dataset.num_classes")
    if config.num_clients > config.num_classes * config.samples_per_class:
        raise ConfigError("dataset.num_clients exceeds the number of training samples")
    if not 0 < config.delta < 1:
        raise ConfigError("privacy.delta must be in (0, 1)")
    if config.mode == "UNIFORM_DP":
        for dist in config.distributions:
            if not dist.non_private and sum(f > 0 for f in dist.fractions) != 1:
                raise ConfigError(
                    f"UNIFORM_DP mode needs single-group distributions, got {dist.name!r}"
                )


def build_dataset(config: ExperimentConfig) -> FederatedDataset:
    train = make_synthetic(
        config.num_classes,
        config.dim,
        config.samples_per_class,
        config.class_separation,
        seed=config.data_seed,
    )
    test = make_synthetic(
        config.num_classes,
        config.dim,
        config.test_samples_per_class,
        config.class_separation,
        seed=config.data_seed + 1,
    )
    if config.partition == "iid":
        return partition_iid(
            train, config.num_clients, config.data_seed, test, config.num_classes
        )
    return partition_label_skew(
        train, config.num_clients, config.alpha, config.data_seed, test, config.num_classes
    )


def _active_groups(config: ExperimentConfig, dist: DistributionSpec):
    """Drops empty tiers so the plan only sees groups that hold clients."""
    active = [(e, f) for e, f in zip(config.epsilons, dist.fractions) if f > 0]
    return tuple(e for e, _ in active), tuple(f for _, f in active)


def prepare_distribution(
    config: ExperimentConfig, data: FederatedDataset, dist: DistributionSpec
):
    """Assigns privacy groups for one distribution and builds its plan."""
    if dist.non_private:
        for shard in data.shards:
            shard.group_index = 0
        groups = (PrivacyGroupSpec(math.inf, config.num_clients),)
        return non_private_plan(groups, config.cohort, config.num_clients)

    eps, fractions = _active_groups(config, dist)
    assign_privacy_groups(data.shards, fractions, seed=config.data_seed)
    sizes = [0] * len(fractions)
    for shard in data.shards:
        sizes[shard.group_index] += 1
    groups = tuple(PrivacyGroupSpec(e, s) for e, s in zip(eps, sizes))
    if config.mode == "SCALE":
        return scale_baseline_plan(
            groups, config.delta, config.rounds, config.cohort, config.num_clients
        )
    return get_group_sampling_rates(
        groups, config.delta, config.rounds, config.cohort, config.num_clients
    )


def _engine_config(config: ExperimentConfig, dist: DistributionSpec, seed: int) -> EngineConfig:
    mode = Mode.NON_PRIVATE if dist.non_private else Mode(config.mode)
    return EngineConfig(
        mode=mode,
        rounds=config.rounds,
        server_lr=config.server_lr,
        client_epochs=config.client_epochs,
        client_batch_size=config.client_batch_size,
        client_lr=config.client_lr,
        hidden_dims=config.hidden_dims,
        clip_norm_init=config.clip_norm_init,
        clip_quantile=config.clip_quantile,
        clip_lr=config.clip_lr,
        count_noise_frac=config.count_noise_frac,
        eval_interval=config.eval_interval,
        seed=seed,
    )


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for m in history:
            writer.writerow(
                [
                    m.round_index,
                    m.sampled_count,
                    _format(m.clip_norm_used),
                    _format(m.noise_std_applied),
                    _format(m.train_loss),
                    _format(m.eval_loss),
                    _format(m.eval_accuracy),
                ]
            )


def _run_one(config: ExperimentConfig, dist: DistributionSpec, plan, seed: int, out_dir: str):
    """One (distribution, seed) cell; safe to run in a worker process."""
    data = build_dataset(config)
    if dist.non_private:
        for shard in data.shards:
            shard.group_index = 0
    else:
        _, fractions = _active_groups(config, dist)
        assign_privacy_groups(data.shards, fractions, seed=config.data_seed)
    engine_cfg = _engine_config(config, dist, seed)
    _, history = run_training(engine_cfg, data, plan)
    csv_path = Path(out_dir) / f"{dist.name}_seed{seed}.csv"
    write_metrics_csv(history, csv_path)
    evaluated = [m.eval_accuracy for m in history if not math.isnan(m.eval_accuracy)]
    return {
        "distribution": dist.name,
        "seed": seed,
        "csv": csv_path.name,
        "final_accuracy": evaluated[-1],
        "best_accuracy": max(evaluated),
    }


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """Plans and trains every (distribution, seed) cell and writes results.

    Returns the summary dict, which is also written to summary.json in the
    output directory.
    """
    out_dir = resolve_output_dir(config, out_dir)
    os.makedirs(out_dir, exist_ok=True)

    data = build_dataset(config)
    plans = {dist.name: prepare_distribution(config, data, dist) for dist in config.distributions}

    cells = [
        (config, dist, plans[dist.name], seed, str(out_dir))
        for dist in config.distributions
        for seed in config.seeds
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(cell) for cell in cells]

    summary: dict = {}
    for dist in config.distributions:
        rows = [r for r in results if r["distribution"] == dist.name]
        finals = [r["final_accuracy"] for r in rows]
        bests = [r["best_accuracy"] for r in rows]
        plan = plans[dist.name]
        summary[dist.name] = {
            "final_accuracy": {
                "mean": float(np.mean(finals)),
                "std": float(np.std(finals)),
                "per_seed": {str(r["seed"]): r["final_accuracy"] for r in rows},
            },
            "best_accuracy": {
                "mean": float(np.mean(bests)),
                "std": float(np.std(bests)),
                "per_seed": {str(r["seed"]): r["best_accuracy"] for r in rows},
            },
            "csv_files": [r["csv"] for r in rows],
            "plan": plan_as_dict(plan),
        }
    with open(Path(out_dir) / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _run_cell(cell):
    return _run_one(*cell)


def plan_as_dict(plan) -> dict:
    if hasattr(plan, "sigmas"):
        return {
            "rate": plan.rate,
            "groups": [
                {
                    "epsilon": g.epsilon if math.isfinite(g.epsilon) else "inf",
                    "size": g.size,
                    "sigma": s,
                }
                for g, s in zip(plan.groups, plan.sigmas)
            ],
        }
    return plan.as_dict()


def resolve_output_dir(config: ExperimentConfig | None, cli_out=None) -> str:
    if cli_out:
        return str(cli_out)
    if config is not None and config.output_dir:
        return config.output_dir
    return os.environ.get(OUTPUT_DIR_ENV, "fedidp_runs")


def emit_curve_plot(csv_paths, out_path) -> None:
    """Writes one SVG of accuracy-vs-round curves, one polyline per CSV."""
    if not csv_paths:
        raise ValueError("need at least one metrics CSV")
    curves = []
    for path in csv_paths:
        points = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or "round" not in header or "eval_acc" not in header:
                raise ValueError(f"{path}: row 1: missing round/eval_acc columns")
            r_col, a_col = header.index("round"), header.index("eval_acc")
            for row_num, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise ValueError(f"{path}: row {row_num}: expected {len(header)} fields")
                try:
                    rnd = float(row[r_col])
                    acc = float(row[a_col])
                except ValueError:
                    raise ValueError(f"{path}: row {row_num}: non-numeric round/eval_acc")
                if not math.isnan(acc):
                    points.append((rnd, acc))
        if not points:
            raise ValueError(f"{path}: no evaluated rounds to plot")
        label = Path(path).stem
        curves.append((label, points))
    _write_svg(curves, out_path)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _write_svg(curves, out_path) -> None:
    width, height = 640, 420
    margin_l, margin_r, margin_t, margin_b = 60, 180, 20, 40
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    xs = [x for _, pts in curves for x, _ in pts]
    x_min, x_max = min(xs), max(xs)
    y_min, y_max = 0.0, 1.0
    x_span = (x_max - x_min) or 1.0

    def sx(x):
        return margin_l + (x - x_min) / x_span * plot_w

    def sy(y):
        return margin_t + (y_max - y) / (y_max - y_min) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" '
        f'y2="{margin_t + plot_h}" stroke="black"/>',
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" x2="{margin_l + plot_w}" '
        f'y2="{margin_t + plot_h}" stroke="black"/>',
        f'<text x="{margin_l - 8}" y="{sy(0.0) + 4}" text-anchor="end" font-size="11">0.0</text>',
        f'<text x="{margin_l - 8}" y="{sy(0.5) + 4}" text-anchor="end" font-size="11">0.5</text>',
        f'<text x="{margin_l - 8}" y="{sy(1.0) + 4}" text-anchor="end" font-size="11">1.0</text>',
        f'<text x="{sx(x_min)}" y="{height - 12}" text-anchor="middle" font-size="11">{x_min:g}</text>',
        f'<text x="{sx(x_max)}" y="{height - 12}" text-anchor="middle" font-size="11">{x_max:g}</text>',
        f'<text x="{margin_l + plot_w / 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">round</text>',
    ]
    for k, (label, pts) in enumerate(curves):
        color = _PALETTE[k % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = margin_t + 16 + 18 * k
        lx = margin_l + plot_w + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{lx + 26}" y="{ly}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedidp",
        description="Federated learning simulator with individualized DP via client sampling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment sweep from a config file")
    p_run.add_argument("config", help="path to the experiment config (JSON)")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p_plot = sub.add_parser("plot", help="plot accuracy curves from metrics CSVs")
    p_plot.add_argument("csvs", nargs="+", help="metrics CSV files")
    p_plot.add_argument("--out", required=True, help="output SVG path")

    p_plan = sub.add_parser("plan", help="print sampling plans for a config without training")
    p_plan.add_argument("config", help="path to the experiment config (JSON)")

    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            config = load_config(args.config)
            summary = run_experiment(config, out_dir=args.out, jobs=args.jobs)
            out_dir = resolve_output_dir(config, args.out)
            print(f"wrote {len(summary)} distribution summaries to {out_dir}/summary.json")
            return 0
        if args.command == "plot":
            for path in args.csvs:
                if not os.path.exists(path):
                    print(f"error: no such CSV: {path}", file=sys.stderr)
                    return 2
            emit_curve_plot(args.csvs, args.out)
            print(f"wrote {args.out}")
            return 0
        if args.command == "plan":
            config = load_config(args.config)
            data = build_dataset(config)
            plans = {
                dist.name: plan_as_dict(prepare_distribution(config, data, dist))
                for dist in config.distributions
            }
            print(json.dumps(plans, indent=2, sort_keys=True))
            return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except InfeasibleBudgetError as err:
        print(f"planner infeasible: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
