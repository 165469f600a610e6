"""Prostate zonal segmentation: SegNet, U-Net and pix2pix trained with a soft Dice loss."""

from .data import PatientRecord, SliceSample, generate_phantom_dataset, load_dataset
from .evaluation import dsc_metric, make_folds
from .losses import dsc_loss
from .models import build_model, build_pix2pix
from .postprocess import ZonalMask, postprocess

__version__ = "0.1.0"

__all__ = [
    "PatientRecord",
    "SliceSample",
    "ZonalMask",
    "build_model",
    "build_pix2pix",
    "dsc_loss",
    "dsc_metric",
    "generate_phantom_dataset",
    "load_dataset",
    "make_folds",
    "postprocess",
]
