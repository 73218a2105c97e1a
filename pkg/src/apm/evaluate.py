"""Test-time evaluation, exogenous agents, metrics and the hyper-parameter sweep."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import ExogenousPopulation, ExogenousSpec, ExoKind, Pool
from .data import Dataset, FoldPlan, Normalization, make_folds
from .errors import ConfigError
from .seeding import STAGE_TEST, child, rng_for
from .simulation import HyperParams, MarketRunRecord, classify, run_market
from .training import GenerationReport, train

log = logging.getLogger(__name__)

NA = "NA"
STUDIED_GT_FRACTIONS = (0.001, 0.005, 0.01)
STUDIED_RANDOM_FRACTIONS = (0.01, 0.05, 0.1, 0.5)

LIQUIDITY_GRID = (5, 10, 20, 50, 75, 100, 150, 200, 300)
CASH_GRID = (1, 2, 3, 4, 5, 10, 20)
LAMBDA_GRID = (0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0)

RESULTS_HEADER = ("liquidity_factor", "lambda", "initial_cash", "fold", "exo_kind", "exo_fraction",
                  "accuracy", "f1", "scored_pct", "avg_participation", "defined_folds")


@dataclass(frozen=True)
class SweepGrid:
    liquidity_factors: tuple = LIQUIDITY_GRID
    lambdas: tuple = LAMBDA_GRID
    cashes: tuple = CASH_GRID

    def __post_init__(self):
        for name in ("liquidity_factors", "lambdas", "cashes"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"grid axis {name} is empty")
            if any(not (isinstance(v, (int, float)) and v > 0) for v in values):
                raise ConfigError(f"grid axis {name} must hold positive numbers")
            object.__setattr__(self, name, values)

    def cells(self) -> list[tuple[float, float, float]]:
        return list(itertools.product(self.liquidity_factors, self.lambdas, self.cashes))

    def __len__(self) -> int:
        return len(self.liquidity_factors) * len(self.lambdas) * len(self.cashes)

    @classmethod
    def from_dict(cls, d: dict) -> SweepGrid:
        unknown = set(d) - {"liquidity_factors", "lambdas", "cashes"}
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in d.items()})


@dataclass
class MetricsRow:
    liquidity_factor: float
    arrival_rate: float
    initial_cash: float
    fold: int | str
    accuracy: float | None
    f1: float | None
    scored_pct: float
    avg_participation: float
    exo_kind: str | None = None
    exo_fraction: float | None = None
    defined_folds: int = 0
    avg_participation_all: float = field(default=math.nan, compare=False)

    @property
    def cell(self) -> tuple[float, float, float]:
        return (self.liquidity_factor, self.arrival_rate, self.initial_cash)

    def to_csv_row(self) -> list[str]:
        return [_fmt(self.liquidity_factor), _fmt(self.arrival_rate), _fmt(self.initial_cash),
                str(self.fold), self.exo_kind or "", _fmt(self.exo_fraction),
                _fmt(self.accuracy, NA), _fmt(self.f1, NA), _fmt(self.scored_pct),
                _fmt(self.avg_participation), str(self.defined_folds)]

    @classmethod
    def from_csv_row(cls, row: dict) -> MetricsRow:
        fold = row["fold"]
        return cls(
            _num(row["liquidity_factor"]), _num(row["lambda"]), _num(row["initial_cash"]),
            fold if fold == "avg" else int(fold),
            _opt(row["accuracy"]), _opt(row["f1"]), _num(row["scored_pct"]),
            _num(row["avg_participation"]), row["exo_kind"] or None,
            _opt(row["exo_fraction"]), int(row["defined_folds"]))


def _fmt(v, missing: str = "") -> str:
    if v is None:
        return missing
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def _num(s: str) -> float:
    v = float(s)
    return int(v) if v.is_integer() else v


def _opt(s: str) -> float | None:
    return None if s in ("", NA) else float(s)


# --------------------------------------------------------------------------
# metrics

def classification_metrics(predictions, labels) -> tuple[float | None, float | None, float]:
    """Accuracy and F1 (positive class 1) over the scored subset, and scored %.

    ``None`` entries in ``predictions`` are abstentions.  Undefined metrics
    come back as ``None``.
    """
    labels = np.asarray(labels)
    scored = np.array([p is not None for p in predictions], dtype=bool)
    total = labels.size
    scored_pct = 100.0 * scored.sum() / total if total else 0.0
    if not scored.any():
        return None, None, scored_pct
    p = np.array([q for q in predictions if q is not None], dtype=np.int64)
    y = labels[scored]
    accuracy = float(np.mean(p == y))
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else None
    return accuracy, f1, float(scored_pct)


# --------------------------------------------------------------------------
# exogenous agents

def inject_exogenous(pool: Pool, kind: ExoKind | str, fraction: float,
                     bank: float = math.inf) -> ExogenousPopulation:
    """Exogenous agents to run alongside ``pool``; the pool itself is not touched.

    Their count is ``round(fraction * len(pool))``, at least one.
    """
    if isinstance(kind, str):
        kind = ExoKind.parse(kind)
    if not (0 < fraction <= 1):
        raise ConfigError(f"exogenous fraction must be in (0, 1], got {fraction}")
    allowed = STUDIED_RANDOM_FRACTIONS if kind == ExoKind.RANDOM else STUDIED_GT_FRACTIONS
    if not any(math.isclose(fraction, a) for a in allowed):
        warnings.warn(f"{kind.label} fraction {fraction} is outside the studied set {allowed}",
                      stacklevel=2)
    spec = ExogenousSpec(kind, fraction, bank)
    return ExogenousPopulation.build(spec, len(pool), first_id=len(pool))


@dataclass
class FoldEvaluation:
    row: MetricsRow
    records: list[MarketRunRecord]
    predictions: list


def evaluate_fold(pool: Pool, x_test: np.ndarray, y_test: np.ndarray, hyper: HyperParams, seed,
                  exogenous: ExogenousPopulation | None = None, fold: int | str = 0,
                  exo_fraction: float | None = None, exo_at_open: bool = True) -> FoldEvaluation:
    """One market per test point (stream ``(seed, point)``), then metrics."""
    records = []
    for j in range(x_test.shape[0]):
        records.append(run_market(pool, x_test[j], hyper, rng_for(seed, j),
                                  true_label=int(y_test[j]), exogenous=exogenous,
                                  point_index=j, exo_at_open=exo_at_open))
    preds = [classify(r) for r in records]
    acc, f1, scored_pct = classification_metrics(preds, y_test)
    kind = None
    if exogenous is not None and len(exogenous):
        kind = exogenous.agents[0].kind.label
    row = MetricsRow(
        hyper.liquidity_factor, hyper.arrival_rate, hyper.initial_cash, fold, acc, f1, scored_pct,
        float(np.mean([r.trained_participants for r in records])) if records else 0.0,
        kind, exo_fraction if kind else None,
        int(acc is not None and f1 is not None),
        float(np.mean([r.participants for r in records])) if records else 0.0)
    return FoldEvaluation(row, records, preds)


def average_rows(rows: list[MetricsRow]) -> MetricsRow:
    """Fold average; accuracy and F1 use only folds where both are defined."""
    defined = [r for r in rows if r.accuracy is not None and r.f1 is not None]
    first = rows[0]
    return MetricsRow(
        first.liquidity_factor, first.arrival_rate, first.initial_cash, "avg",
        float(np.mean([r.accuracy for r in defined])) if defined else None,
        float(np.mean([r.f1 for r in defined])) if defined else None,
        float(np.mean([r.scored_pct for r in rows])),
        float(np.mean([r.avg_participation for r in rows])),
        first.exo_kind, first.exo_fraction, len(defined),
        float(np.mean([r.avg_participation_all for r in rows])))


# --------------------------------------------------------------------------
# cross-validation and sweep

@dataclass
class FoldResult:
    fold: int
    pool: Pool
    reports: list[GenerationReport]
    normalization: Normalization
    evaluation: FoldEvaluation


def fold_arrays(ds: Dataset, plan: FoldPlan, fold: int):
    """Train/test arrays for ``fold`` with z-scoring fitted on the training rows only."""
    tr, te = plan.train_indices(fold), plan.test_indices(fold)
    norm = Normalization.fit(ds.features[tr])
    return (norm.apply(ds.features[tr]), ds.labels[tr], norm.apply(ds.features[te]),
            ds.labels[te], norm)


def fold_seed(master_seed, cell_index: int, fold: int):
    return child(master_seed, cell_index, fold)


def cross_validate(ds: Dataset, hyper: HyperParams, master_seed, cell_index: int = 0,
                   plan: FoldPlan | None = None, exogenous: tuple[str, float] | None = None,
                   folds=None) -> list[FoldResult]:
    plan = plan or make_folds(ds, 5, _plan_seed(master_seed))
    results = []
    for f in (range(plan.k) if folds is None else folds):
        xtr, ytr, xte, yte, norm = fold_arrays(ds, plan, f)
        seed = fold_seed(master_seed, cell_index, f)
        pool, reports = train(xtr, ytr, hyper, seed)
        exo = None
        frac = None
        if exogenous is not None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                exo = inject_exogenous(pool, exogenous[0], exogenous[1])
            frac = exogenous[1]
        ev = evaluate_fold(pool, xte, yte, hyper, child(seed, STAGE_TEST), exo, f, frac)
        results.append(FoldResult(f, pool, reports, norm, ev))
    return results


def _plan_seed(master_seed) -> int:
    # fold plan is shared by every cell of a sweep
    ss = child(master_seed, 0xF0)
    return int(ss.generate_state(1)[0])


def run_cell(ds: Dataset, hyper: HyperParams, master_seed, cell_index: int,
             plan: FoldPlan) -> list[MetricsRow]:
    results = cross_validate(ds, hyper, master_seed, cell_index, plan)
    rows = [r.evaluation.row for r in results]
    return rows + [average_rows(rows)]


def exogenous_study(ds: Dataset, hyper: HyperParams, master_seed, cell_index: int,
                    conditions, plan: FoldPlan | None = None) -> dict:
    """Fold-averaged rows for one sweep cell under several exogenous conditions.

    Each fold's pool is trained once, on the same stream the sweep used for
    this cell, and every condition is evaluated on the same test stream.
    ``conditions`` holds ``(kind, fraction)`` pairs; ``None`` is the baseline.
    """
    plan = plan or make_folds(ds, 5, _plan_seed(master_seed))
    rows: dict = {c: [] for c in conditions}
    for f in range(plan.k):
        xtr, ytr, xte, yte, _ = fold_arrays(ds, plan, f)
        seed = fold_seed(master_seed, cell_index, f)
        pool, _ = train(xtr, ytr, hyper, seed)
        for c in conditions:
            exo, frac = None, None
            if c is not None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    exo = inject_exogenous(pool, c[0], c[1])
                frac = c[1]
            ev = evaluate_fold(pool, xte, yte, hyper, child(seed, STAGE_TEST), exo, f, frac)
            rows[c].append(ev.row)
    return {c: average_rows(r) for c, r in rows.items()}


def _cell_job(args):
    ds, hyper, master_seed, index, plan = args
    try:
        return index, run_cell(ds, hyper, master_seed, index, plan), None
    except Exception as exc:  # one failed cell must not abort the sweep
        return index, None, f"{type(exc).__name__}: {exc}"


def read_results(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [MetricsRow.from_csv_row(r) for r in csv.DictReader(fh)]


def _complete_prefix(path: Path) -> list[list[str]]:
    """Raw rows of whole cells (five folds plus the average) already on disk."""
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != RESULTS_HEADER:
        raise ConfigError(f"{path} is not a results file")
    keep, pending = [], []
    for row in rows[1:]:
        if len(row) != len(RESULTS_HEADER):
            break
        pending.append(row)
        if row[3] == "avg":
            keep.extend(pending)
            pending = []
    return keep


def _rows_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


@dataclass
class SweepOutcome:
    rows: list[MetricsRow]
    failed: dict[int, str]
    skipped: int


def run_sweep(ds: Dataset, grid: SweepGrid, hyper_defaults: HyperParams, master_seed: int,
              out_path=None, resume: bool = False, jobs: int = 1,
              on_cell=None) -> SweepOutcome:
    """Cross-validate every grid cell; rows for each cell are written together.

    With ``resume``, cells already complete in ``out_path`` are skipped.
    Output order is grid order regardless of ``jobs``.
    """
    cells = grid.cells()
    plan = make_folds(ds, 5, _plan_seed(master_seed))
    done: set[tuple] = set()
    if out_path is not None:
        out_path = Path(out_path)
        prefix = _complete_prefix(out_path) if resume else []
        done = {(_num(r[0]), _num(r[1]), _num(r[2])) for r in prefix}
        with open(out_path, "w", newline="") as fh:
            fh.write(_rows_text([RESULTS_HEADER, *prefix]))
    todo = [(i, c) for i, c in enumerate(cells) if tuple(_num(_fmt(v)) for v in c) not in done]
    args = [(ds, hyper_defaults.replace(liquidity_factor=c[0], arrival_rate=c[1], initial_cash=c[2]),
             master_seed, i, plan) for i, c in todo]
    failed: dict[int, str] = {}
    if jobs > 1 and len(args) > 1:
        import multiprocessing as mp

        ctx = mp.get_context("fork") if hasattr(os, "fork") else mp.get_context()
        with ctx.Pool(jobs) as workers:
            outcomes = workers.imap(_cell_job, args)
            collected = _drain(outcomes, out_path, failed, on_cell)
    else:
        collected = _drain(map(_cell_job, args), out_path, failed, on_cell)
    rows = read_results(out_path) if out_path is not None else collected
    return SweepOutcome(rows, failed, len(cells) - len(todo))


def _drain(outcomes, out_path, failed, on_cell) -> list[MetricsRow]:
    collected = []
    for index, rows, error in outcomes:
        if error is not None:
            log.error("cell %d failed: %s", index, error)
            failed[index] = error
            continue
        if out_path is not None:
            with open(out_path, "a", newline="") as fh:
                fh.write(_rows_text([r.to_csv_row() for r in rows]))
                fh.flush()
                os.fsync(fh.fileno())
        collected.extend(rows)
        if on_cell is not None:
            on_cell(index, rows)
    return collected


# --------------------------------------------------------------------------
# ranking

def _rank_key(r: MetricsRow):
    missing = float("inf")
    return (-(r.f1) if r.f1 is not None else missing,
            -(r.accuracy) if r.accuracy is not None else missing,
            -r.scored_pct, r.liquidity_factor, r.arrival_rate, r.initial_cash)


def rank_cells(rows: list[MetricsRow], k: int = 5) -> tuple[list[MetricsRow], list[MetricsRow]]:
    """Best and worst ``k`` fold-averaged rows, both listed from better to worse."""
    avg = [r for r in rows if r.fold == "avg"]
    ordered = sorted(avg, key=_rank_key)
    return ordered[:k], ordered[-k:]


def format_best_worst(best: list[MetricsRow], worst: list[MetricsRow]) -> str:
    def line(r):
        f1 = "NA" if r.f1 is None else f"{r.f1:.2f}"
        acc = "NA" if r.accuracy is None else f"{r.accuracy:.2f}"
        return (f"{_fmt(r.liquidity_factor):>9} {_fmt(r.arrival_rate):>6} {_fmt(r.initial_cash):>5} | "
                f"{f1:>5} {acc:>8} {r.scored_pct:8.1f}")

    head = f"{'Liquidity':>9} {'lambda':>6} {'Cash':>5} | {'F1':>5} {'Accuracy':>8} {'Scored %':>8}"
    rule = "-" * len(head)
    return "\n".join([head, rule, *map(line, best), rule, *map(line, worst)])
