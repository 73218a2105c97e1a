"""Command-line entry point: ``apm train|eval|sweep|synth|prepare-iris|prepare-heart``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as datamod
from .errors import ConfigError, DataError
from .evaluate import (RESULTS_HEADER, SweepGrid, _plan_seed, evaluate_fold, fold_arrays, fold_seed,
                       format_best_worst, inject_exogenous, rank_cells, run_sweep)
from .poolfile import PoolFile
from .seeding import STAGE_TEST, child
from .simulation import HyperParams
from .training import train

log = logging.getLogger("apm")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3
FULL_DATA_KEY = 1000

CONFIG_KEYS = {"data", "hyper", "grid", "exogenous", "seed", "out", "pool", "results"}
HYPER_KEYS = set(HyperParams.__dataclass_fields__)


@dataclass
class RunConfig:
    data: str | None = None
    hyper: dict = field(default_factory=dict)
    grid: dict | None = None
    exogenous: dict | None = None
    seed: int = 0
    out: str | None = None
    pool: str | None = None
    results: str | None = None

    @classmethod
    def from_file(cls, path) -> RunConfig:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        unknown = set(doc) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"config {path}: unknown keys {sorted(unknown)}")
        bad = set(doc.get("hyper", {})) - HYPER_KEYS
        if bad:
            raise ConfigError(f"config {path}: unknown hyper keys {sorted(bad)}")
        return cls(**doc)


def _seed(value: str) -> int:
    v = int(value)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _common(p: argparse.ArgumentParser, hyper: bool = True) -> None:
    p.add_argument("--config", help="JSON run config; flags given explicitly override it")
    p.add_argument("--data")
    p.add_argument("--seed", type=_seed)
    if hyper:
        p.add_argument("--liquidity", type=float)
        p.add_argument("--lambda", dest="arrival_rate", type=float)
        p.add_argument("--cash", type=float)
        p.add_argument("--duration", type=float)
        p.add_argument("--generations", type=int)
        p.add_argument("--agents", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apm", description="artificial prediction market")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a pool and write it to a pool file")
    _common(p)
    p.add_argument("--fold", type=int, help="train on the training split of this CV fold")
    p.add_argument("--out")

    p = sub.add_parser("eval", help="evaluate a pool on held-out data")
    _common(p, hyper=False)
    p.add_argument("--pool")
    p.add_argument("--exo", choices=("gt", "gtinv", "random"))
    p.add_argument("--exo-frac", type=float)
    p.add_argument("--exo-no-open", action="store_true", help="exogenous agents skip the t=0 round")
    p.add_argument("--allow-mismatch", action="store_true",
                   help="evaluate even if the data differs from the training data")
    p.add_argument("--results", help="append the metrics row to this CSV")
    p.add_argument("--trade-log", help="write every trade as JSON lines")

    p = sub.add_parser("sweep", help="cross-validated grid sweep")
    _common(p)
    p.add_argument("--grid", help="JSON with liquidity_factors, lambdas, cashes")
    p.add_argument("--out")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("synth", help="write the synthetic replication-like dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=192)
    p.add_argument("--features", type=int, default=41)
    p.add_argument("--seed", type=_seed, default=0)

    p = sub.add_parser("prepare-iris", help="write binary Iris (setosa=0, others=1)")
    p.add_argument("--data", help="raw iris.data file; defaults to the copy shipped with scikit-learn")
    p.add_argument("--out", required=True)

    p = sub.add_parser("prepare-heart", help="convert UCI processed.cleveland.data to CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    for name in ("data", "seed", "out", "pool", "results"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    flag_map = {"liquidity": "liquidity_factor", "arrival_rate": "arrival_rate",
                "cash": "initial_cash", "duration": "duration", "generations": "generations",
                "agents": "n_agents"}
    for flag, key in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg.hyper[key] = v
    return cfg


def _hyper(cfg: RunConfig, need_cell: bool = True) -> HyperParams:
    h = dict(cfg.hyper)
    if not need_cell:
        h.setdefault("liquidity_factor", 1.0)
        h.setdefault("arrival_rate", 1.0)
        h.setdefault("initial_cash", 1.0)
    for key, flag in (("liquidity_factor", "--liquidity"), ("arrival_rate", "--lambda"),
                      ("initial_cash", "--cash")):
        if key not in h:
            raise ConfigError(f"missing {flag}")
    return HyperParams(**h)


def _need(value, flag: str):
    if value is None:
        raise ConfigError(f"missing {flag}")
    return value


def _plan(ds, seed):
    return datamod.make_folds(ds, 5, _plan_seed(seed))


def cmd_train(args) -> int:
    cfg = _config(args)
    hyper = _hyper(cfg)
    out = _need(cfg.out, "--out")
    ds = datamod.load_csv(_need(cfg.data, "--data"))
    if args.fold is not None:
        plan = _plan(ds, cfg.seed)
        if not 0 <= args.fold < plan.k:
            raise ConfigError(f"--fold must be in [0, {plan.k})")
        x, y, _, _, norm = fold_arrays(ds, plan, args.fold)
        seed = fold_seed(cfg.seed, 0, args.fold)
        split = {"kind": "fold", "fold": args.fold, "k": plan.k}
    else:
        norm = ds.normalization
        x, y = norm.apply(ds.features), np.asarray(ds.labels)
        seed = fold_seed(cfg.seed, 0, FULL_DATA_KEY)
        split = {"kind": "full"}

    def show(r):
        print(f"generation {r.generation}: rmse {r.rmse:.4f} survivors {r.survivors} "
              f"pool {r.pool_size_after_refill}")

    pool, reports = train(x, y, hyper, seed, on_report=show)
    PoolFile(hyper, cfg.seed, ds.fingerprint(), ds.dim, norm, pool, reports, split).save(out)
    print(f"wrote {len(pool)} genomes to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    pf = PoolFile.load(_need(cfg.pool, "--pool"))
    ds = datamod.load_csv(_need(cfg.data, "--data"))
    if ds.fingerprint() != pf.fingerprint and not args.allow_mismatch:
        raise ConfigError("dataset fingerprint does not match the pool's training data "
                          "(use --allow-mismatch to override)")
    if ds.dim != pf.n_features:
        raise ConfigError(f"pool expects {pf.n_features} features, data has {ds.dim}")
    if pf.split.get("kind") == "fold" and ds.fingerprint() == pf.fingerprint:
        fold = int(pf.split["fold"])
        idx = _plan(ds, pf.seed).test_indices(fold)
        test_seed = child(fold_seed(pf.seed, 0, fold), STAGE_TEST)
    else:
        fold = "all"
        idx = np.arange(len(ds))
        test_seed = child(fold_seed(pf.seed, 0, FULL_DATA_KEY), STAGE_TEST)
    if args.seed is not None:
        test_seed = child(args.seed, STAGE_TEST)
    x = pf.normalization.apply(ds.features[idx])
    y = np.asarray(ds.labels)[idx]
    exo = None
    frac = None
    if args.exo:
        frac = _need(args.exo_frac, "--exo-frac")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            exo = inject_exogenous(pf.pool, args.exo, frac)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    elif args.exo_frac is not None:
        raise ConfigError("--exo-frac needs --exo")
    ev = evaluate_fold(pf.pool, x, y, pf.hyper, test_seed, exo, fold, frac,
                       exo_at_open=not args.exo_no_open)
    row = ev.row
    print(",".join(RESULTS_HEADER))
    print(",".join(row.to_csv_row()))
    if cfg.results:
        path = Path(cfg.results)
        new = not path.exists() or path.stat().st_size == 0
        with open(path, "a") as fh:
            if new:
                fh.write(",".join(RESULTS_HEADER) + "\n")
            fh.write(",".join(row.to_csv_row()) + "\n")
    if args.trade_log:
        with open(args.trade_log, "w") as fh:
            for rec in ev.records:
                for line in rec.log_lines():
                    fh.write(line + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    hyper = _hyper(cfg, need_cell=False)
    out = _need(cfg.out, "--out")
    ds = datamod.load_csv(_need(cfg.data, "--data"))
    grid = SweepGrid()
    if args.grid:
        try:
            grid = SweepGrid.from_dict(json.loads(Path(args.grid).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read grid {args.grid}: {exc.strerror or exc}") from exc
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"grid {args.grid}: {exc}") from exc
    elif cfg.grid:
        grid = SweepGrid.from_dict(cfg.grid)
    jobs = args.jobs or os.cpu_count() or 1

    def progress(index, rows):
        avg = rows[-1]
        log.info("cell %d %s: f1 %s acc %s scored %.1f", index, avg.cell, avg.f1, avg.accuracy,
                 avg.scored_pct)

    outcome = run_sweep(ds, grid, hyper, cfg.seed, out, resume=args.resume, jobs=jobs,
                        on_cell=progress)
    for index, err in sorted(outcome.failed.items()):
        print(f"cell {index} failed: {err}", file=sys.stderr)
    averaged = [r for r in outcome.rows if r.fold == "avg"]
    if averaged:
        best, worst = rank_cells(averaged)
        print(format_best_worst(best, worst))
    print(f"{len(averaged)} cells in {out} ({outcome.skipped} resumed, {len(outcome.failed)} failed)")
    return EXIT_OK if averaged else EXIT_INTERNAL


def cmd_synth(args) -> int:
    if args.rows < 2 or args.features < 1:
        raise ConfigError("--rows must be >= 2 and --features >= 1")
    ds = datamod.synth_replication_like(args.rows, args.features, args.seed)
    try:
        datamod.save_csv(ds, args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    print(f"wrote {len(ds)} x {ds.dim} dataset to {args.out}")
    return EXIT_OK


def cmd_prepare_iris(args) -> int:
    rows = datamod.read_iris_raw(args.data) if args.data else datamod.bundled_iris_rows()
    ds = datamod.prepare_iris(rows)
    _write(ds, args.out)
    return EXIT_OK


def cmd_prepare_heart(args) -> int:
    ds = datamod.prepare_heart(datamod.read_heart_raw(args.data))
    _write(ds, args.out)
    return EXIT_OK


def _write(ds, out) -> None:
    try:
        datamod.save_csv(ds, out)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc.strerror or exc}") from exc
    zeros, ones = ds.class_counts()
    print(f"wrote {len(ds)} rows ({zeros} zeros, {ones} ones) to {out}")


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "synth": cmd_synth,
            "prepare-iris": cmd_prepare_iris, "prepare-heart": cmd_prepare_heart}


def main(argv=None) -> int:
    level = os.environ.get("APM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
