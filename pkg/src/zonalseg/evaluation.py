"""DSC metric, patient fold plans, train/test regimes and Table-1 style summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

REGIMES = ("d1", "d2", "mixed")
TEST_DATASETS = ("d1", "d2")
ZONES = ("cg", "pz")
METRICS_COLUMNS = ("arch", "pretrained", "train_regime", "test_dataset", "zone", "fold", "dsc_mean", "dsc_std")

# patient index groups used for the two clinical datasets (21 and 19 patients)
PUBLISHED_FOLDS = {
    21: ((1, 5), (6, 10), (11, 15), (16, 21)),
    19: ((1, 5), (6, 10), (11, 15), (16, 19)),
}


def dsc_metric(segmentation: np.ndarray, gold: np.ndarray) -> float:
    """``2|S & G| / (|S| + |G|) * 100``; two empty masks score 100."""
    s = np.asarray(segmentation, dtype=bool)
    g = np.asarray(gold, dtype=bool)
    if s.shape != g.shape:
        raise ValueError(f"segmentation {s.shape} and gold {g.shape} differ in shape")
    total = int(np.count_nonzero(s)) + int(np.count_nonzero(g))
    if total == 0:
        return 100.0
    return 200.0 * int(np.count_nonzero(s & g)) / total


@dataclass(frozen=True)
class FoldPlan:
    """Four disjoint groups of 1-based patient indices per dataset."""

    groups: dict

    def test_patients(self, dataset: str, fold: int) -> list[int]:
        return list(self.groups[dataset][fold])

    def train_patients(self, dataset: str, fold: int) -> list[int]:
        return [p for i, g in enumerate(self.groups[dataset]) if i != fold for p in g]

    def all_patients(self, dataset: str) -> list[int]:
        return [p for g in self.groups[dataset] for p in g]


def make_folds(patients, n_folds: int = 4) -> list[list[int]]:
    """Contiguous patient groups; the clinical counts reproduce the published split.

    ``patients`` is a patient count or anything with a ``patient_count``
    attribute (a dataset descriptor).
    """
    patient_count = int(getattr(patients, "patient_count", patients))
    if patient_count < n_folds:
        raise ValueError(f"need at least {n_folds} patients, got {patient_count}")
    if n_folds == 4 and patient_count in PUBLISHED_FOLDS:
        return [list(range(a, b + 1)) for a, b in PUBLISHED_FOLDS[patient_count]]
    base, extra = divmod(patient_count, n_folds)
    groups, start = [], 1
    for i in range(n_folds):
        # remainder goes to the last groups, as in the 21-patient split
        size = base + (1 if i >= n_folds - extra else 0)
        groups.append(list(range(start, start + size)))
        start += size
    return groups


def make_fold_plan(patient_counts: dict[str, int]) -> FoldPlan:
    return FoldPlan({ds: make_folds(n) for ds, n in patient_counts.items()})


@dataclass(frozen=True)
class Split:
    train: dict[str, list[int]]
    test: dict[str, list[int]]


def regime_split(regime: str, plan: FoldPlan, fold: int) -> Split:
    """Patients to train on and to test on for one cross-validation round.

    Individual regimes train on the other folds of their dataset and test on
    the held-out fold plus the whole other dataset; the mixed regime trains on
    the other folds of both and tests on both held-out folds.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    missing = [ds for ds in TEST_DATASETS if ds not in plan.groups]
    if missing:
        raise ValueError(f"fold plan lacks dataset(s) {missing} needed by regime {regime!r}")
    if regime == "mixed":
        train = {ds: plan.train_patients(ds, fold) for ds in TEST_DATASETS}
        test = {ds: plan.test_patients(ds, fold) for ds in TEST_DATASETS}
        return Split(train, test)
    other = "d2" if regime == "d1" else "d1"
    train = {regime: plan.train_patients(regime, fold)}
    test = {regime: plan.test_patients(regime, fold), other: plan.all_patients(other)}
    return Split(train, {ds: test[ds] for ds in TEST_DATASETS})


@dataclass(frozen=True)
class MetricsRecord:
    architecture: str
    pretrained: bool
    train_regime: str
    test_dataset: str
    zone: str
    fold: int
    dsc: float
    slice_std: float = 0.0
    n_slices: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.dsc <= 100.0:
            raise ValueError(f"DSC {self.dsc} outside [0, 100]")

    @property
    def cell(self) -> tuple:
        return (self.architecture, self.pretrained, self.train_regime, self.test_dataset, self.zone)


@dataclass(frozen=True)
class SummaryRow:
    architecture: str
    pretrained: bool
    train_regime: str
    test_dataset: str
    zone: str
    mean: float
    std: float
    n_folds: int

    @property
    def cell(self) -> tuple:
        return (self.architecture, self.pretrained, self.train_regime, self.test_dataset, self.zone)


def aggregate(records: Iterable[MetricsRecord]) -> list[SummaryRow]:
    """Mean and population std over folds for every table cell, in first-seen order."""
    cells: dict[tuple, list[float]] = {}
    for r in records:
        cells.setdefault(r.cell, []).append(r.dsc)
    rows = []
    for cell, values in cells.items():
        arr = np.asarray(values, dtype=np.float64)
        rows.append(SummaryRow(*cell, mean=float(arr.mean()), std=float(arr.std()), n_folds=len(values)))
    return rows


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def write_metrics(records: Sequence[MetricsRecord], path, per_fold: bool = False) -> Path:
    """Table-1 shaped CSV: one ``fold=all`` row per cell, optionally preceded by per-fold rows.

    Per-fold rows carry the mean and population std over that fold's test slices.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        if per_fold:
            for r in records:
                writer.writerow([r.architecture, int(r.pretrained), r.train_regime, r.test_dataset, r.zone,
                                 r.fold, _fmt(r.dsc), _fmt(r.slice_std)])
        for row in aggregate(records):
            writer.writerow([row.architecture, int(row.pretrained), row.train_regime, row.test_dataset, row.zone,
                             "all", _fmt(row.mean), _fmt(row.std)])
    return path


def read_summary(path) -> list[SummaryRow]:
    """Read the ``fold=all`` rows of a metrics CSV."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for rec in reader:
            if rec["fold"] != "all":
                continue
            rows.append(SummaryRow(rec["arch"], rec["pretrained"] in ("1", "true", "True"), rec["train_regime"],
                                   rec["test_dataset"], rec["zone"], float(rec["dsc_mean"]), float(rec["dsc_std"]),
                                   0))
    return rows
