"""Four-round cross-validation over the d1/d2/mixed training regimes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .data import PatientRecord
from .evaluation import TEST_DATASETS, FoldPlan, MetricsRecord, dsc_metric, make_fold_plan, regime_split
from .losses import DEFAULT_LAMBDA_SEG
from .models import DEFAULT_LEVELS, build_model, build_pix2pix
from .optim import OptimizerConfig, default_optimizers
from .preprocess import PreprocConfig
from .training import SlicePrediction, Trainer, TrainItem, load_pretrained, segment_slices

log = logging.getLogger(__name__)

DATASET_CODES = {"d1": 1, "d2": 2, "promise_like": 3}


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines one training run besides the data."""

    architecture: str
    base_width: int = 64
    levels: Optional[int] = None
    discriminator_levels: int = 5
    epochs: Optional[int] = None
    seed: int = 0
    preproc: PreprocConfig = field(default_factory=PreprocConfig)
    optimizers: Optional[dict] = None
    lambda_seg: float = DEFAULT_LAMBDA_SEG

    @property
    def model_levels(self) -> int:
        return self.levels if self.levels is not None else DEFAULT_LEVELS[self.architecture]

    def optimizer_configs(self) -> dict[str, OptimizerConfig]:
        return self.optimizers if self.optimizers is not None else default_optimizers(self.architecture)

    @property
    def n_epochs(self) -> int:
        return self.epochs if self.epochs is not None else self.optimizer_configs()["model"].epochs


def build_networks(config: RunConfig):
    """(model, discriminator-or-None) for ``config``."""
    if config.architecture == "pix2pix":
        return build_pix2pix(config.base_width, config.model_levels, config.discriminator_levels, config.seed)
    return build_model(config.architecture, config.base_width, config.model_levels, config.seed), None


def make_trainer(config: RunConfig, target: str = "cg", mask_input: bool = True, seed_offset: int = 0,
                 log_fn: Optional[Callable[[dict], None]] = None) -> Trainer:
    model, disc = build_networks(config)
    return Trainer(model, config.optimizer_configs(), config.preproc, config.seed + seed_offset, discriminator=disc,
                   target=target, mask_input=mask_input, lambda_seg=config.lambda_seg, log_fn=log_fn)


def train_items(datasets: dict[str, Sequence[PatientRecord]], patients: dict[str, Sequence[int]]) -> list[TrainItem]:
    items = []
    for ds, ids in patients.items():
        wanted = set(ids)
        for record in datasets[ds]:
            if record.patient_id in wanted:
                for k, s in enumerate(record.slices, start=1):
                    items.append(TrainItem((DATASET_CODES[ds], record.patient_id, k), s))
    return items


@dataclass
class CrossValResult:
    records: list[MetricsRecord] = field(default_factory=list)
    constraint_violations: int = 0
    outputs_checked: int = 0
    examples: dict = field(default_factory=dict)
    histories: list = field(default_factory=list)

    def mean_dsc(self, test_dataset: str, zone: str) -> float:
        values = [r.dsc for r in self.records if r.test_dataset == test_dataset and r.zone == zone]
        return float(np.mean(values)) if values else float("nan")


def evaluate_slices(predictions: Sequence[SlicePrediction]) -> tuple[list[float], list[float], int]:
    """Per-slice CG and PZ DSC against the gold masks plus the count of invariant violations."""
    cg, pz, bad = [], [], 0
    for p in predictions:
        bad += p.zonal.violations()
        cg.append(dsc_metric(p.zonal.cg, p.sample.cg_mask))
        pz.append(dsc_metric(p.zonal.pz, p.sample.pz_mask))
    return cg, pz, bad


def run_cross_validation(
    regime: str,
    datasets: dict[str, Sequence[PatientRecord]],
    config: RunConfig,
    pretrained: Optional[Checkpoint] = None,
    plan: Optional[FoldPlan] = None,
    folds: Optional[Sequence[int]] = None,
    log_fn: Optional[Callable[[dict], None]] = None,
    checkpoint_dir=None,
) -> CrossValResult:
    """Train and test one architecture under ``regime`` for every fold.

    ``datasets`` maps ``d1``/``d2`` to patient records already harmonized to
    ``config.preproc.target_size``. Per-slice DSC values are averaged within
    each fold, giving one record per (fold, test dataset, zone). With
    ``checkpoint_dir`` the trained model of every fold is saved there.
    """
    for ds in TEST_DATASETS:
        if ds not in datasets:
            raise ValueError(f"regime {regime!r} needs dataset {ds!r}")
    plan = plan or make_fold_plan({ds: len(datasets[ds]) for ds in TEST_DATASETS})
    by_id = {ds: {r.patient_id: r for r in records} for ds, records in datasets.items()}
    for ds in TEST_DATASETS:
        if sorted(by_id[ds]) != sorted(plan.all_patients(ds)):
            raise ValueError(f"dataset {ds!r} patient ids do not match the fold plan")

    result = CrossValResult()
    n_folds = len(plan.groups[TEST_DATASETS[0]])
    for fold in folds if folds is not None else range(n_folds):
        split = regime_split(regime, plan, fold)
        fold_log = (lambda rec, f=fold: log_fn({"fold": f + 1, **rec})) if log_fn else None
        trainer = make_trainer(config, seed_offset=fold, log_fn=fold_log)
        if pretrained is not None:
            load_pretrained(pretrained, trainer.model, trainer.discriminator)
        trainer.fit(train_items(datasets, split.train), config.n_epochs)
        result.histories.append(trainer.history)
        if checkpoint_dir is not None:
            trainer.save(Path(checkpoint_dir) / f"fold{fold + 1}.zseg",
                         {"regime": regime, "fold": fold + 1, "pretrained": pretrained is not None})
        for ds in TEST_DATASETS:
            samples = [s for pid in split.test[ds] for s in by_id[ds][pid].slices]
            predictions = segment_slices(trainer.model, samples, config.preproc)
            cg, pz, bad = evaluate_slices(predictions)
            result.constraint_violations += bad
            result.outputs_checked += len(predictions)
            if predictions:
                result.examples[(fold + 1, ds)] = predictions[len(predictions) // 2]
            for zone, values in (("cg", cg), ("pz", pz)):
                arr = np.asarray(values, dtype=np.float64)
                result.records.append(MetricsRecord(
                    config.architecture, pretrained is not None, regime, ds, zone, fold + 1,
                    float(arr.mean()) if arr.size else 100.0, float(arr.std()) if arr.size else 0.0, int(arr.size),
                ))
            log.info("fold %d %s: CG %.2f PZ %.2f", fold + 1, ds, np.mean(cg), np.mean(pz))
    return result
