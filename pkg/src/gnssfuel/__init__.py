"""Fuel-flow estimation from GNSS speed and IMU acceleration."""

from .estimators import NnParams, PbParams, VtMicroParams, load_model, predict, save_model
from .fitting import FitReport, SplitSpec, fit_nn, fit_pb, fit_vt_micro, split, sweep_hidden
from .metrics import MetricReport, error_over_tank, integral_error, integral_fuel, testing_error
from .signal_pipeline import (
    FilterSpec,
    Quantity,
    SensorSeries,
    SyncedDataset,
    exclude_stopped,
    resample_and_sync,
    zero_phase_lowpass,
)

__version__ = "0.1.0"

__all__ = [
    "FilterSpec",
    "FitReport",
    "MetricReport",
    "NnParams",
    "PbParams",
    "Quantity",
    "SensorSeries",
    "SplitSpec",
    "SyncedDataset",
    "VtMicroParams",
    "error_over_tank",
    "exclude_stopped",
    "fit_nn",
    "fit_pb",
    "fit_vt_micro",
    "integral_error",
    "integral_fuel",
    "load_model",
    "predict",
    "resample_and_sync",
    "save_model",
    "split",
    "sweep_hidden",
    "testing_error",
    "zero_phase_lowpass",
]
