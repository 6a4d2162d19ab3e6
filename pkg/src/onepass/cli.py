"""Command-line front end.

Subcommands::

    run              one run of the configured harness
    sweep            replay steps x storage fractions (plus multi-epoch) over seeds
    baseline         multi-epoch (or naive one-pass) baseline
    gen-data         write a synthetic dataset in the binary format
    validate-config  parse and check a config, print the effective values
    aggregate        summarize existing report.json files

Exit status: 0 on success, 2 for configuration errors, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Any

from onepass.config import ConfigError, DatasetConfig, ExperimentConfig, load_config, parse_config
from onepass.harness import RunReport, report_to_json, run_multi_epoch, run_naive, run_one_pass
from onepass.stream import generate_blobs, write_dataset

SUMMARY_FIELDS = ("method", "effective_epochs", "storage", "compute", "n", "mean_accuracy", "stderr")


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _report_config(config: ExperimentConfig) -> dict:
    doc = config.to_dict()
    doc.pop("output_dir")
    return doc


def _base_hash(config: ExperimentConfig) -> str:
    """Hash of everything a sweep cell shares with its neighbours."""
    neutral = dataclasses.replace(
        config.with_harness(replay_steps=0, storage_fraction=0.0),
        seed=0,
        n_seeds=1,
        output_dir="",
        sweep=type(config.sweep)(),
    )
    return neutral.config_hash()


def _report_doc(report: RunReport, config: ExperimentConfig, seed: int) -> str:
    reported = dataclasses.replace(config, seed=seed, n_seeds=1, output_dir="")
    return report_to_json(
        report,
        {
            "config": _report_config(reported),
            "config_hash": reported.config_hash(),
            "base_config_hash": _base_hash(config),
            "seeds": {"data_seed": config.dataset.seed, "order_seed": seed, "run_seed": seed},
            "effective_epochs": report.effective_epochs,
            "storage_fraction": config.harness.storage_fraction if report.method == "epr" else report.storage_metric,
        },
    )


def write_report(out_dir: Path, report: RunReport, config: ExperimentConfig, seed: int) -> None:
    atomic_write(out_dir / "report.json", _report_doc(report, config, seed))
    atomic_write(out_dir / "telemetry.csv", report.telemetry_csv())


@lru_cache(maxsize=4)
def _load(dataset_json: str):
    return DatasetConfig(**json.loads(dataset_json)).load()


def _dataset(config: ExperimentConfig):
    return _load(json.dumps(dataclasses.asdict(config.dataset), sort_keys=True))


def execute(config: ExperimentConfig, kind: str, seed: int, epochs: int = 1) -> RunReport:
    train, test = _dataset(config)
    h = config.harness
    if kind == "multi_epoch":
        return run_multi_epoch(epochs, train, test, config.learner, seed, seed, h.baseline_epochs, h.eval_points)
    if kind == "naive":
        return run_naive(train, test, config.learner, seed, seed, h.baseline_epochs, h.eval_points)
    return run_one_pass(h, train, test, config.learner, seed, seed)


def _sweep_task(args: tuple[str, str, int, int, str]) -> str:
    config_json, kind, seed, epochs, out_dir = args
    config = parse_config(json.loads(config_json))
    write_report(Path(out_dir), execute(config, kind, seed, epochs), config, seed)
    return out_dir


def sweep_tasks(config: ExperimentConfig, out: Path) -> list[tuple[str, str, int, int, str]]:
    """Cells in lexicographic order: (k, storage, seed), then multi-epoch (epochs, seed)."""
    tasks = []
    for k in sorted(config.sweep.replay_steps):
        for frac in sorted(config.sweep.storage_fractions):
            cell = config.with_harness(replay_steps=k, storage_fraction=frac)
            for seed in config.seeds():
                path = out / "epr" / f"k{k}_s{frac:g}" / f"seed{seed}"
                tasks.append((cell.to_json(), "epr", seed, 1, str(path)))
    if config.sweep.multi_epoch:
        for epochs in sorted({k + 1 for k in config.sweep.replay_steps}):
            for seed in config.seeds():
                path = out / "multi_epoch" / f"e{epochs}" / f"seed{seed}"
                tasks.append((config.to_json(), "multi_epoch", seed, epochs, str(path)))
    return tasks


def aggregate_reports(paths: list[str | Path]) -> list[dict[str, Any]]:
    """Mean and standard error (sample std / sqrt(n)) of accuracy per cell."""
    if not paths:
        raise ValueError("no reports to aggregate")
    cells: dict[tuple, list[float]] = defaultdict(list)
    seen: dict[tuple, set[int]] = defaultdict(set)
    compute: dict[tuple, float] = {}
    base = None
    for path in paths:
        doc = json.loads(Path(path).read_text())
        if base is None:
            base = doc["base_config_hash"]
        elif doc["base_config_hash"] != base:
            raise ValueError(f"{path}: report comes from an incompatible configuration")
        key = (doc["method"], doc["effective_epochs"], doc["storage_fraction"])
        seed = doc["seeds"]["order_seed"]
        if seed in seen[key]:
            raise ValueError(f"{path}: duplicate seed {seed} for cell {key}")
        seen[key].add(seed)
        cells[key].append(doc["top1_accuracy"])
        compute[key] = doc["nominal_compute_metric"]
    rows = []
    for key in sorted(cells):
        accs = cells[key]
        n = len(accs)
        mean = math.fsum(accs) / n
        if n > 1:
            var = math.fsum((a - mean) ** 2 for a in accs) / (n - 1)
            stderr = math.sqrt(var / n)
        else:
            stderr = 0.0
        method, epochs, storage = key
        rows.append(
            {
                "method": method,
                "effective_epochs": epochs,
                "storage": storage,
                "compute": compute[key],
                "n": n,
                "mean_accuracy": mean,
                "stderr": stderr,
            }
        )
    return rows


def summary_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def format_table(rows: list[dict[str, Any]]) -> str:
    """Effective epochs down, storage fractions across, multi-epoch last."""
    storages = sorted({r["storage"] for r in rows if r["method"] != "multi_epoch"})
    by_key = {(r["method"], r["effective_epochs"], r["storage"]): r for r in rows}
    epochs = sorted({r["effective_epochs"] for r in rows})
    header = ["epochs", "compute"] + [f"{s:.0%}" for s in storages] + ["multi-epoch"]
    lines = ["  ".join(f"{h:>14}" for h in header)]
    for e in epochs:
        cells = [str(e), f"{e}/{_baseline(rows)}"]
        for s in storages:
            r = by_key.get(("epr", e, s)) or by_key.get(("naive", e, s))
            cells.append(_cell(r))
        multi = next((r for r in rows if r["method"] == "multi_epoch" and r["effective_epochs"] == e), None)
        cells.append(_cell(multi))
        lines.append("  ".join(f"{c:>14}" for c in cells))
    return "\n".join(lines)


def _baseline(rows) -> int:
    r = rows[0]
    return round(r["effective_epochs"] / r["compute"])


def _cell(row) -> str:
    if row is None:
        return "-"
    return f"{100 * row['mean_accuracy']:.1f}±{100 * row['stderr']:.1f}"


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    sys.stdout.write(config.to_json())
    return 0


def _cmd_run(args) -> int:
    config = load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    out = Path(args.out or config.output_dir)
    h = config.harness
    kind = "naive" if h.replay_steps == 0 and h.storage_fraction == 0 else "epr"
    report = execute(config, kind, seed)
    write_report(out, report, config, seed)
    print(
        f"accuracy={report.top1_accuracy:.4f} storage={report.storage_metric:.4f} "
        f"compute={report.compute_metric:.4f} -> {out / 'report.json'}"
    )
    return 0


def _cmd_baseline(args) -> int:
    config = load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    out = Path(args.out or config.output_dir)
    if args.naive:
        report = execute(config, "naive", seed)
    else:
        report = execute(config, "multi_epoch", seed, args.epochs)
    write_report(out, report, config, seed)
    print(f"accuracy={report.top1_accuracy:.4f} compute={report.compute_metric:.4f} -> {out / 'report.json'}")
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    tasks = sweep_tasks(config, out)
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            done = list(pool.map(_sweep_task, tasks))
    else:
        done = [_sweep_task(t) for t in tasks]
    rows = aggregate_reports([Path(d) / "report.json" for d in done])
    atomic_write(out / "summary.csv", summary_csv(rows))
    print(format_table(rows))
    return 0


def _cmd_aggregate(args) -> int:
    rows = aggregate_reports(args.reports)
    text = summary_csv(rows)
    if args.out:
        atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_gen_data(args) -> int:
    raw = json.loads(Path(args.spec).read_text())
    config = parse_config({"dataset": raw.get("dataset", raw)}).dataset
    if config.source != "synthetic-blobs":
        raise ConfigError("dataset.source", "gen-data only generates synthetic-blobs")
    blobs = generate_blobs(config.spec())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "train.opds", blobs.train)
    write_dataset(out / "test.opds", blobs.test)
    print(f"wrote {len(blobs.train)} train / {len(blobs.test)} test examples to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onepass", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="replay steps x storage grid over seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("baseline", help="multi-epoch or naive one-pass baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--naive", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("validate-config", help="check a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("aggregate", help="summarize report.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_aggregate)
    return parser


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "epochs", 1) < 1:
            raise ConfigError("--epochs", "must be >= 1")
        if getattr(args, "parallel", 1) < 1:
            raise ConfigError("--parallel", "must be >= 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if "config" in vars(args) and str(exc.filename) == str(args.config) else 1
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
