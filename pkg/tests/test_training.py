import numpy as np
import pytest

from cases import repeated_runs_identical, resume_matches_uninterrupted, small_items, small_run_config
from zonalseg.crossval import RunConfig, make_trainer, run_cross_validation
from zonalseg.optim import default_optimizers
from zonalseg.preprocess import PreprocConfig
from zonalseg.training import make_batch


def test_make_batch_masks_input():
    items = small_items(1, 2)
    x, y = make_batch([it.sample for it in items])
    assert x.shape == y.shape == (2, 1, 40, 40)
    assert not x[:, 0][~np.stack([it.sample.wg_mask for it in items])].any()
    x_raw, y_wg = make_batch([it.sample for it in items], target="wg", mask_input=False)
    assert x_raw.sum() > x.sum() and y_wg.sum() > y.sum()


def test_loss_decreases():
    config = small_run_config("unet", epochs=8)
    trainer = make_trainer(config)
    history = trainer.fit(small_items(), 8)
    assert history[-1]["loss"] < history[0]["loss"]
    assert [h["epoch"] for h in history] == list(range(8))


@pytest.mark.parametrize("arch", ["segnet", "unet", "pix2pix"])
def test_repeated_runs_are_bit_identical(arch):
    assert repeated_runs_identical(arch)


@pytest.mark.parametrize("arch", ["unet", "pix2pix"])
def test_resume_equals_uninterrupted(arch):
    assert resume_matches_uninterrupted(arch)


def test_cross_validation_records(tiny_datasets):
    opts = {"model": default_optimizers("unet")["model"].with_overrides(batch_size=8)}
    config = RunConfig("unet", base_width=2, levels=2, epochs=1, preproc=PreprocConfig((72, 72), (64, 64)),
                       optimizers=opts)
    result = run_cross_validation("d1", tiny_datasets, config, folds=[0])
    assert len(result.records) == 4
    assert {(r.test_dataset, r.zone) for r in result.records} == {("d1", "cg"), ("d1", "pz"), ("d2", "cg"),
                                                                 ("d2", "pz")}
    assert result.constraint_violations == 0
    d2 = [r for r in result.records if r.test_dataset == "d2"]
    assert all(r.n_slices == 16 for r in d2)
    with pytest.raises(ValueError):
        run_cross_validation("d1", {"d1": tiny_datasets["d1"]}, config)
