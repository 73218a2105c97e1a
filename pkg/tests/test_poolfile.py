import json

import numpy as np
import pytest

from apm.data import synth_replication_like
from apm.errors import ConfigError
from apm.evaluate import evaluate_fold
from apm.poolfile import PoolFile
from apm.simulation import HyperParams
from apm.training import train


@pytest.fixture(scope="module")
def trained():
    ds = synth_replication_like(n_rows=40, n_features=3, seed=8)
    x, y = ds.normalized(), np.asarray(ds.labels)
    hyper = HyperParams(20, 0.25, 2, n_agents=40, generations=2)
    pool, reports = train(x, y, hyper, 3)
    return ds, x, y, hyper, PoolFile(hyper, 3, ds.fingerprint(), ds.dim, ds.normalization, pool, reports)


def test_round_trip_is_exact(tmp_path, trained):
    ds, x, y, hyper, pf = trained
    path = tmp_path / "p.json"
    pf.save(path)
    back = PoolFile.load(path)
    assert back.pool.same_as(pf.pool) and back.hyper == hyper
    assert [r.to_dict() for r in back.reports] == [r.to_dict() for r in pf.reports]
    assert back.to_json() == pf.to_json()
    direct = evaluate_fold(pf.pool, x, y, hyper, 11)
    loaded = evaluate_fold(back.pool, back.normalization.apply(ds.features), y, back.hyper, 11)
    assert direct.row == loaded.row
    assert all(a.same_as(b) for a, b in zip(direct.records, loaded.records))


def test_version_and_dimension_checks(tmp_path, trained):
    pf = trained[-1]
    doc = json.loads(pf.to_json())
    doc["format_version"] = 99
    bad = tmp_path / "v.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="format_version"):
        PoolFile.load(bad)
    doc["format_version"] = 1
    doc["dataset"]["n_features"] = 7
    bad.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="dimension"):
        PoolFile.load(bad)
    junk = tmp_path / "j.json"
    junk.write_text("not json")
    with pytest.raises(ConfigError):
        PoolFile.load(junk)
