import csv
import itertools

import numpy as np
import pytest

from zonalseg.data import D1, D2
from zonalseg.evaluation import (
    METRICS_COLUMNS,
    MetricsRecord,
    aggregate,
    dsc_metric,
    make_fold_plan,
    make_folds,
    read_summary,
    regime_split,
    write_metrics,
)


def test_dsc_examples():
    g = np.zeros((4, 4), dtype=bool)
    g[0, :2] = True
    assert dsc_metric(g, g) == 100.0
    assert dsc_metric(g, np.roll(g, 2, axis=0)) == 0.0
    s = np.zeros_like(g)
    s[0, :4] = True
    assert round(dsc_metric(s, g), 2) == 66.67
    assert dsc_metric(np.zeros_like(g), np.zeros_like(g)) == 100.0
    with pytest.raises(ValueError):
        dsc_metric(g, g[:2])


def test_dsc_is_symmetric(rng):
    for _ in range(50):
        a, b = rng.random((8, 8)) > 0.5, rng.random((8, 8)) > 0.6
        assert dsc_metric(a, b) == dsc_metric(b, a)


def _ranges(groups):
    return [(g[0], g[-1]) for g in groups]


def test_published_folds():
    assert _ranges(make_folds(D1)) == [(1, 5), (6, 10), (11, 15), (16, 21)]
    assert _ranges(make_folds(D2)) == [(1, 5), (6, 10), (11, 15), (16, 19)]
    assert make_folds(8) == [[1, 2], [3, 4], [5, 6], [7, 8]]
    with pytest.raises(ValueError):
        make_folds(3)


@pytest.mark.parametrize("n", range(4, 30))
def test_folds_partition_patients(n):
    groups = make_folds(n)
    flat = list(itertools.chain.from_iterable(groups))
    assert sorted(flat) == list(range(1, n + 1)) and len(flat) == len(set(flat))
    sizes = [len(g) for g in groups]
    assert max(sizes) - min(sizes) <= 1


def test_regime_splits_fold_one():
    plan = make_fold_plan({"d1": 21, "d2": 19})
    s = regime_split("d1", plan, 0)
    assert s.train == {"d1": list(range(6, 22))}
    assert s.test == {"d1": [1, 2, 3, 4, 5], "d2": list(range(1, 20))}
    s = regime_split("mixed", plan, 0)
    assert s.train == {"d1": list(range(6, 22)), "d2": list(range(6, 20))}
    assert s.test == {"d1": [1, 2, 3, 4, 5], "d2": [1, 2, 3, 4, 5]}
    with pytest.raises(ValueError):
        regime_split("d3", plan, 0)
    with pytest.raises(ValueError):
        regime_split("mixed", make_fold_plan({"d1": 21}), 0)


def _rec(dsc, fold=0, **kw):
    base = dict(architecture="unet", pretrained=False, train_regime="mixed", test_dataset="d1", zone="cg")
    base.update(kw)
    return MetricsRecord(fold=fold, dsc=dsc, **base)


def test_aggregate_population_std():
    (row,) = aggregate([_rec(v, i) for i, v in enumerate((80, 82, 84, 86))])
    assert row.mean == 83.0 and abs(row.std - 2.2360679) < 1e-6 and row.n_folds == 4
    assert aggregate([_rec(70)])[0].std == 0.0


def test_write_metrics(tmp_path):
    path = write_metrics([], tmp_path / "empty.csv")
    assert path.read_text() == ",".join(METRICS_COLUMNS) + "\n"
    write_metrics([_rec(80, 0), _rec(90, 1)], tmp_path / "m.csv")
    (row,) = read_summary(tmp_path / "m.csv")
    assert (row.mean, row.std) == (85.0, 5.0)


def test_full_matrix_has_72_cells(tmp_path):
    records = [
        _rec(50 + fold, fold, architecture=a, pretrained=p, train_regime=r, test_dataset=t, zone=z)
        for a in ("segnet", "unet", "pix2pix") for p in (False, True) for r in ("d1", "d2", "mixed")
        for t in ("d1", "d2") for z in ("cg", "pz") for fold in range(4)
    ]
    write_metrics(records, tmp_path / "m.csv", per_fold=True)
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sum(r["fold"] == "all" for r in rows) == 72
    assert sum(r["fold"] != "all" for r in rows) == 288
    assert all(float(r["dsc_mean"]) == 51.5 for r in rows if r["fold"] == "all")


def test_record_rejects_out_of_range_dsc():
    with pytest.raises(ValueError):
        _rec(101.0)
