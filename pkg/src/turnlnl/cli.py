"""Command-line front end: ``gen``, ``run`` and ``report``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ExperimentConfig, RunSpec, load_config
from .dataset import Dataset, SplitSpec, SyntheticSpec, generate_synthetic, read_dataset, split, write_dataset
from .errors import ConfigError, DataError, NumericError, TurnError
from .model import identity_extractor, init_head, init_model, pretrain_extractor, save_model
from .noise import inject
from .optim import AdamWConfig
from .pipeline import EpochRecord, run_baseline, run_turn
from .select import selection_dump_lines

log = logging.getLogger("turnlnl")

SUMMARY_COLUMNS = ("method", "tuning", "noise", "ratio", "tau", "e_lp", "e_fft", "seed",
                   "best_acc", "last_acc", "final_purity", "wall_ms", "config_id")
METRIC_FIELDS = ("run_id", "stage", "epoch", "train_loss", "test_acc", "val_acc", "selected", "purity", "wall_ms")
REPORT_ROWS = ("ce-lp", "ce-fft", "gce-lp", "gce-fft", "elr-lp", "elr-fft", "turn")
PRETRAIN_OPTIM = AdamWConfig(lr=1e-3)


# ------------------------------------------------------------------ data setup


@dataclass
class Bundle:
    train: Dataset
    test: Dataset
    pretrain: Dataset | None = None
    valid: Dataset | None = None
    train_noisy: Dataset | None = None


def _read_optional(path: Path) -> Dataset | None:
    return read_dataset(path) if path.is_dir() else None


def load_bundle(spec: RunSpec, seed: int) -> Bundle:
    """Synthetic splits for ``seed`` or the bundles under ``[data] path``."""
    d = spec["data"]
    if d["source"] == "synthetic":
        train, test, pre = generate_synthetic(SyntheticSpec(
            d["classes"], d["dim"], d["train_per_class"], d["test_per_class"], d["pretrain_per_class"],
            d["separation"], seed))
        valid = None
        if d["valid_fraction"] > 0:
            train, valid = split(train, SplitSpec(d["valid_fraction"], seed))
        return Bundle(train, test, pre, valid)
    root = Path(d["path"])
    if not root.is_dir():
        raise DataError(f"{root}: bundle directory not found")
    return Bundle(read_dataset(root / "train"), read_dataset(root / "test"), _read_optional(root / "pretrain"),
                  _read_optional(root / "valid"), _read_optional(root / "train_noisy"))


def noisy_train(spec: RunSpec, bundle: Bundle, seed: int):
    """Training set for a run plus the flip statistics, if noise was injected here."""
    if spec.has_noise and spec["noise"]["kind"] != "none":
        noisy, draw = inject(bundle.train, spec.noise_spec(seed))
        return noisy.dataset, noisy, draw
    if bundle.train_noisy is not None:
        return bundle.train_noisy, None, None
    return bundle.train, None, None


def prepare_model(spec: RunSpec, bundle: Bundle, seed: int):
    """Pretrained MLP extractor for raw inputs; identity for feature bundles."""
    m = spec["model"]
    train = bundle.train
    if train.kind == "feature":
        return identity_extractor(train.dim), init_head(train.dim, train.num_classes, seed)
    F = spec["data"]["feature_dim"]
    ext, head = init_model(train.dim, m["hidden"], F, train.num_classes, seed)
    if m["pretrain_epochs"] > 0:
        if bundle.pretrain is None or len(bundle.pretrain) == 0:
            raise DataError("raw-input bundle has no pretrain split but pretrain_epochs > 0")
        ext = pretrain_extractor(ext, None, bundle.pretrain, m["pretrain_epochs"], PRETRAIN_OPTIM, seed,
                                 spec["optim"]["batch"])
    return ext, head


def config_id(spec: RunSpec) -> str:
    vals = {s: dict(v) for s, v in spec.values.items()}
    vals["run"].pop("seed")
    vals["run"].pop("deterministic")
    vals["noise"]["active"] = spec.has_noise
    blob = json.dumps(vals, sort_keys=True, default=str).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


# ------------------------------------------------------------------ one run


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def execute_run(spec: RunSpec, run_id: str, out_dir: Path) -> dict:
    """Run one sweep point; stream metrics to ``out_dir`` and return its summary row."""
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = spec.seed
    bundle = load_bundle(spec, seed)
    train, noisy, _ = noisy_train(spec, bundle, seed)
    ext, head = prepare_model(spec, bundle, seed)
    (out_dir / "config.json").write_text(json.dumps(spec.values, indent=2, sort_keys=True, default=str) + "\n")

    metrics = open(out_dir / "metrics.jsonl", "w")
    dump = open(out_dir / "selection.csv", "w") if spec.method == "turn" else None

    def on_epoch(rec: EpochRecord):
        row = {"run_id": run_id, "stage": rec.stage, "epoch": rec.epoch, "train_loss": rec.train_loss,
               "test_acc": rec.test_acc, "val_acc": rec.val_acc, "selected": rec.selected,
               "purity": rec.purity, "wall_ms": rec.wall_ms}
        metrics.write(json.dumps(row) + "\n")
        metrics.flush()

    def on_selection(epoch, result):
        dump.write("\n".join(selection_dump_lines(epoch, result, train.given_labels, train.true_labels)) + "\n")
        dump.flush()

    try:
        if dump is not None:
            dump.write("epoch,class,candidates,N,purity\n")
        if spec.method == "turn":
            report = run_turn(ext, head, train, bundle.test, spec.turn_config(), bundle.valid, on_epoch,
                              spec["model"]["adapter"], on_selection)
        else:
            report = run_baseline(ext, head, train, bundle.test, spec.baseline_config(), bundle.valid, on_epoch,
                                  spec["model"]["adapter"])
    finally:
        metrics.close()
        if dump is not None:
            dump.close()
    save_model(report.extractor, report.head, out_dir / "model.tmd")

    n, t = spec["noise"], spec["turn"]
    is_turn = spec.method == "turn"
    noise_kind = n["kind"] if spec.has_noise else "none"
    epochs = spec.baseline_config().n_epochs if not is_turn else None
    row = {
        "method": spec.method, "tuning": spec.tuning, "noise": noise_kind,
        "ratio": n["ratio"] if noise_kind != "none" else 0.0,
        "tau": t["tau"] if is_turn else None,
        "e_lp": t["e_lp"] if is_turn else (epochs if spec.tuning == "lp" else None),
        "e_fft": t["e_fft"] if is_turn else (epochs if spec.tuning == "fft" else None),
        "seed": seed, "best_acc": report.best, "last_acc": report.last,
        "final_purity": report.final_purity, "wall_ms": report.wall_ms, "config_id": config_id(spec),
    }
    return {k: _fmt(v) for k, v in row.items()}


def _worker(args):
    spec, run_id, out_dir = args
    try:
        return run_id, execute_run(spec, run_id, Path(out_dir)), None
    except TurnError as exc:
        return run_id, None, (type(exc).__name__, str(exc))


# ------------------------------------------------------------------ commands


def _seeds(cfg: ExperimentConfig, flag_seed: int | None) -> ExperimentConfig:
    if flag_seed is not None:
        return cfg.with_seeds([flag_seed])
    env = os.environ.get("TURNLNL_SEED")
    if env:
        try:
            return cfg.with_seeds([int(env)])
        except ValueError:
            raise ConfigError(f"TURNLNL_SEED={env!r} is not an integer") from None
    return cfg


def _threads(deterministic: bool) -> int:
    if deterministic:
        return 1
    env = os.environ.get("TURNLNL_THREADS", "0")
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"TURNLNL_THREADS={env!r} is not an integer") from None
    if n < 0:
        raise ConfigError("TURNLNL_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _noise_lines(noisy, draw) -> list[str]:
    ds = noisy.dataset
    lines = [f"rows = {len(ds)}", f"flipped = {int(noisy.flip_mask.sum())}",
             f"flip_fraction = {noisy.flip_fraction:.6f}"]
    if draw is not None:
        lines.append(f"mean_flip_rate = {float(draw.flip_rates.mean()):.6f}")
    truth = ds.true_labels
    for c in range(ds.num_classes):
        members = truth == c
        lines.append(f"class_{c}_flipped = {int(noisy.flip_mask[members].sum())} / {int(members.sum())}")
    return lines


def cmd_gen(cfg: ExperimentConfig, out: Path) -> int:
    seeds = cfg.get("run", "seed")
    for seed in seeds:
        spec = cfg.runs()[0]
        target = out if len(seeds) == 1 else out / f"seed-{seed}"
        bundle = load_bundle(RunSpec({**spec.values, "run": {**spec["run"], "seed": seed}}, spec.has_noise), seed)
        target.mkdir(parents=True, exist_ok=True)
        for name in ("train", "test", "pretrain", "valid"):
            ds = getattr(bundle, name)
            if ds is not None:
                write_dataset(ds, target / name)
        if not cfg.has_noise:
            continue
        ratios = cfg.get("noise", "ratio")
        report = [f"kind = {cfg.get('noise', 'kind')}", f"seed = {seed}"]
        for ratio in ratios:
            vals = {**spec.values, "noise": {**spec["noise"], "ratio": ratio}}
            noisy_spec = RunSpec(vals, True)
            noisy, draw = inject(bundle.train, noisy_spec.noise_spec(seed))
            sub = "train_noisy" if len(ratios) == 1 else f"train_noisy-{ratio:g}"
            write_dataset(noisy.dataset, target / sub)
            report += [f"ratio = {ratio:g}", f"bundle = {sub}"] + _noise_lines(noisy, draw)
        (target / "noise_report.txt").write_text("\n".join(report) + "\n")
    return 0


def _append_summary(path: Path, row: dict):
    new = not path.exists() or path.stat().st_size == 0
    if not new:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
        if tuple(header or ()) != SUMMARY_COLUMNS:
            raise DataError(f"{path}: existing summary has different columns")
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS)
        if new:
            w.writeheader()
        w.writerow(row)


def cmd_run(cfg: ExperimentConfig, out: Path, deterministic: bool) -> int:
    deterministic = deterministic or cfg.get("run", "deterministic")
    specs = cfg.runs()
    jobs = [(s, s.run_id(i), str(out / "runs" / s.run_id(i))) for i, s in enumerate(specs)]
    out.mkdir(parents=True, exist_ok=True)
    summary = out / "summary.csv"
    workers = min(_threads(deterministic), len(jobs)) or 1
    failures: list[tuple[str, str, str]] = []

    def collect(run_id, row, err):
        if err is not None:
            failures.append((run_id, *err))
            log.error("run %s failed: %s: %s", run_id, *err)
        else:
            _append_summary(summary, row)
            log.info("run %s done: best %s last %s", run_id, row["best_acc"], row["last_acc"])

    if workers == 1:
        with threadpool_limits(1) if deterministic else nullcontext():
            for job in jobs:
                collect(*_worker(job))
    else:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_worker, job) for job in jobs]
            for fut in as_completed(futures):
                collect(*fut.result())
    if failures:
        codes = {"NumericError": 4, "DataError": 3, "ConfigError": 2}
        worst = max(codes.get(kind, 1) for _, kind, _ in failures)
        for run_id, kind, msg in failures:
            print(f"run {run_id} failed ({kind}): {msg}", file=sys.stderr)
        return worst
    return 0


def _read_summary(path: Path) -> list[dict]:
    if path.is_dir():
        path = path / "summary.csv"
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise DataError(f"{path}: {exc}") from None
    if rows and not set(SUMMARY_COLUMNS) <= set(rows[0]):
        raise DataError(f"{path}: not a summary file")
    return rows


def _row_label(row) -> str:
    return "turn" if row["method"] == "turn" else f"{row['method']}-{row['tuning']}"


def _col_label(row) -> str:
    return "clean" if row["noise"] == "none" else f"{row['noise']} {float(row['ratio']):g}"


def pivot(rows: list[dict]) -> list[list[str]]:
    """Rows method x tuning, columns noise settings, cells "best / last" in percent.

    Duplicate (config_id, seed) rows keep the first occurrence; remaining rows
    sharing a cell are averaged.
    """
    seen, kept = set(), []
    for row in rows:
        key = (row["config_id"], row["seed"], row["method"], row["tuning"], row["noise"], row["ratio"])
        if key in seen:
            log.warning("duplicate summary row for config %s seed %s dropped", row["config_id"], row["seed"])
            continue
        seen.add(key)
        kept.append(row)
    cells = defaultdict(list)
    for row in kept:
        try:
            cells[_row_label(row), _col_label(row)].append((float(row["best_acc"]), float(row["last_acc"])))
        except ValueError:
            raise DataError(f"unparseable accuracy in summary row {row}") from None
    cols = sorted({c for _, c in cells}, key=lambda c: (c != "clean", c.split(" ")[0],
                                                         float(c.split(" ")[1]) if " " in c else 0.0))
    extra = sorted({r for r, _ in cells} - set(REPORT_ROWS))
    order = [r for r in REPORT_ROWS if any((r, c) in cells for c in cols)] + extra
    table = [["method"] + cols]
    for r in order:
        line = [r]
        for c in cols:
            vals = cells.get((r, c))
            if not vals:
                line.append("")
                continue
            b, l = np.mean(vals, axis=0) * 100
            line.append(f"{b:.2f} / {l:.2f}")
        table.append(line)
    return table


def cmd_report(inputs: list[Path], out: Path | None) -> int:
    rows = []
    for p in inputs:
        rows += _read_summary(p)
    table = pivot(rows)
    if out is None:
        csv.writer(sys.stdout).writerows(table)
        return 0
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        csv.writer(fh).writerows(table)
    return 0


# ------------------------------------------------------------------ entry


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="experiment config file")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory (report: file)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override [run] seed")
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                        help="single worker, single BLAS thread")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="turnlnl", parents=[common],
                                description="Noisy-label training with linear probing and clean-sample fine-tuning.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write dataset bundles (and a noisy train bundle)")
    sub.add_parser("run", parents=[common], help="run every point of the config's sweep")
    rep = sub.add_parser("report", parents=[common], help="pivot summary.csv files into a table")
    rep.add_argument("inputs", nargs="+", type=Path, help="run directories or summary.csv files")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    opts = vars(args)
    verbose = opts.get("verbose", 0)
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.inputs, opts.get("out"))
        if "config" not in opts:
            raise ConfigError(f"{args.command} needs --config")
        if "out" not in opts:
            raise ConfigError(f"{args.command} needs --out")
        seed = opts.get("seed")
        if seed is not None and not 0 <= seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = _seeds(load_config(args.config), seed)
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        return cmd_run(cfg, args.out, opts.get("deterministic", False))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
