import csv
import math
import warnings

import numpy as np
import pytest

import apm.evaluate as ev
from apm.agents import ExoKind
from apm.errors import ConfigError
from apm.evaluate import (NA, RESULTS_HEADER, MetricsRow, SweepGrid, average_rows,
                          classification_metrics, inject_exogenous, rank_cells, read_results,
                          run_sweep)
from apm.simulation import HyperParams
from apm.training import init_pool


def test_metrics_examples():
    acc, f1, scored = classification_metrics([1, 0, None, 1], [1, 0, 1, 0])
    assert acc == pytest.approx(2 / 3) and scored == 75
    acc, f1, scored = classification_metrics([1, 0, 0, 1], [1, 1, 0, 0])
    assert f1 == pytest.approx(0.5) and acc == 0.5
    assert classification_metrics([1, 0, 1], [1, 0, 1]) == (1.0, 1.0, 100.0)


def test_metrics_undefined():
    assert classification_metrics([None, None], [0, 1]) == (None, None, 0.0)
    acc, f1, _ = classification_metrics([0, 0], [0, 0])
    assert acc == 1.0 and f1 is None


def test_abstentions_only_change_scored_pct():
    base = classification_metrics([1, 0, 1, 1], [1, 0, 0, 1])
    padded = classification_metrics([1, 0, 1, 1, None, None], [1, 0, 0, 1, 0, 1])
    assert base[:2] == padded[:2]
    assert padded[2] == pytest.approx(400 / 6)


@pytest.fixture(scope="module")
def big_pool():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 2))
    y = np.arange(20) % 2
    return init_pool(x, y, HyperParams(5, 1, 1, n_agents=1080), 0)


@pytest.mark.parametrize("kind,fraction,count", [
    ("gt", 0.001, 1), ("random", 0.5, 540), ("gtinv", 0.01, 11),
])
def test_inject_counts(big_pool, kind, fraction, count):
    before = big_pool.copy()
    exo = inject_exogenous(big_pool, kind, fraction)
    assert len(exo) == count
    assert all(a.kind == ExoKind.parse(kind) for a in exo.agents)
    assert [a.id for a in exo.agents] == list(range(1080, 1080 + count))
    assert big_pool.same_as(before)


def test_inject_warns_outside_studied_set(big_pool):
    with pytest.warns(UserWarning, match="outside"):
        inject_exogenous(big_pool, ExoKind.GT, 0.2)
    with pytest.raises(ConfigError):
        inject_exogenous(big_pool, ExoKind.GT, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        inject_exogenous(big_pool, ExoKind.RANDOM, 0.05)


def row(f1, acc, lf=5, lam=1, cash=1, scored=100.0):
    return MetricsRow(lf, lam, cash, "avg", acc, f1, scored, 10.0)


def test_rank_order():
    rows = [row(0.84, 0.79, lf=5), row(0.65, 0.66, lf=10), row(0.84, 0.76, lf=20)]
    best, worst = rank_cells(rows, k=5)
    assert [(r.f1, r.accuracy) for r in best] == [(0.84, 0.79), (0.84, 0.76), (0.65, 0.66)]
    single = [row(0.5, 0.5)]
    assert rank_cells(single)[0] == rank_cells(single)[1] == single


def test_rank_undefined_last_and_hyper_tiebreak():
    rows = [row(None, None, lf=5), row(0.1, 0.2, lf=10), row(0.7, 0.7, lf=300), row(0.7, 0.7, lf=50)]
    best, worst = rank_cells(rows, k=2)
    assert [r.liquidity_factor for r in best] == [50, 300]
    assert worst[-1].f1 is None


def test_average_rows_skips_undefined_folds():
    folds = [MetricsRow(5, 1, 1, 0, 1.0, 1.0, 100.0, 4.0),
             MetricsRow(5, 1, 1, 1, None, None, 0.0, 0.0),
             MetricsRow(5, 1, 1, 2, 0.5, None, 50.0, 2.0),
             MetricsRow(5, 1, 1, 3, 0.6, 0.4, 90.0, 3.0)]
    avg = average_rows(folds)
    assert avg.fold == "avg" and avg.defined_folds == 2
    assert avg.accuracy == pytest.approx(0.8) and avg.f1 == pytest.approx(0.7)
    assert avg.scored_pct == pytest.approx(60.0)


def test_csv_row_round_trip():
    r = MetricsRow(75, 0.025, 10, 3, None, 0.5, 96.66666666666667, 12.5, "gt", 0.001, 1)
    text = r.to_csv_row()
    assert text[6] == NA and text[3] == "3" and text[0] == "75"
    back = MetricsRow.from_csv_row(dict(zip(RESULTS_HEADER, text)))
    assert back == r


def test_grid():
    g = SweepGrid()
    assert len(g) == 441 and len(g.cells()) == 441
    assert g.cells()[0] == (5, 0.01, 1)
    with pytest.raises(ConfigError):
        SweepGrid.from_dict({"liquidity": [5]})
    with pytest.raises(ConfigError):
        SweepGrid(liquidity_factors=())


@pytest.fixture(scope="module")
def tiny():
    from apm.data import synth_replication_like
    return synth_replication_like(n_rows=40, n_features=3, seed=2)


TINY_HYPER = HyperParams(5, 0.25, 1, n_agents=40, generations=1)


def test_single_cell_sweep_rows(tmp_path, tiny):
    out = tmp_path / "r.csv"
    res = run_sweep(tiny, SweepGrid((5,), (0.25,), (1,)), TINY_HYPER, 1, out)
    assert len(res.rows) == 6 and not res.failed
    assert [r.fold for r in res.rows] == [0, 1, 2, 3, 4, "avg"]
    with open(out) as fh:
        assert next(csv.reader(fh)) == list(RESULTS_HEADER)


def test_sweep_resume_identical(tmp_path, tiny):
    grid = SweepGrid((5, 20), (0.25,), (1,))
    full = tmp_path / "full.csv"
    run_sweep(tiny, grid, TINY_HYPER, 4, full)
    lines = full.read_text().splitlines(keepends=True)
    assert len(lines) == 13
    part = tmp_path / "part.csv"
    part.write_text("".join(lines[:9]))   # first cell plus two rows of the second
    res = run_sweep(tiny, grid, TINY_HYPER, 4, part, resume=True)
    assert res.skipped == 1
    assert part.read_bytes() == full.read_bytes()


def test_sweep_parallel_matches_serial(tmp_path, tiny):
    grid = SweepGrid((5, 20), (0.25,), (1,))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_sweep(tiny, grid, TINY_HYPER, 4, a, jobs=1)
    run_sweep(tiny, grid, TINY_HYPER, 4, b, jobs=2)
    assert a.read_bytes() == b.read_bytes()


def test_failed_cell_does_not_abort(tmp_path, tiny, monkeypatch):
    real = ev.run_cell

    def flaky(ds, hyper, master_seed, index, plan):
        if index == 0:
            raise RuntimeError("boom")
        return real(ds, hyper, master_seed, index, plan)

    monkeypatch.setattr(ev, "run_cell", flaky)
    out = tmp_path / "r.csv"
    res = run_sweep(tiny, SweepGrid((5, 20), (0.25,), (1,)), TINY_HYPER, 0, out)
    assert set(res.failed) == {0} and "boom" in res.failed[0]
    assert len(read_results(out)) == 6


def test_participation_counts_trained_only(tiny):
    results = ev.cross_validate(tiny, TINY_HYPER, 0, exogenous=("gt", 0.01), folds=[0])
    r = results[0].evaluation.row
    assert r.exo_kind == "gt" and r.exo_fraction == 0.01
    assert r.avg_participation_all >= r.avg_participation
    assert math.isfinite(r.avg_participation)
