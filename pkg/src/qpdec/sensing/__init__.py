"""Joint decoding and QP-density estimation."""

from .algorithms import (
    SensingResult,
    TraceRow,
    WindowPlan,
    algorithm1,
    algorithm2,
    fixed_prior_decode,
    run_windows,
    window_count,
    write_trace,
)
from .ekf import EkfState, PseudoMeasurement, ekf_predict, ekf_step, ekf_update, pseudo_measurement
from .model import DemWindow, LossTerms, SensingParams, SensingState, loss_and_grads, transition
from .optim import Adam, lr_schedule

__all__ = [
    "Adam",
    "DemWindow",
    "EkfState",
    "LossTerms",
    "PseudoMeasurement",
    "SensingParams",
    "SensingResult",
    "SensingState",
    "TraceRow",
    "WindowPlan",
    "algorithm1",
    "algorithm2",
    "ekf_predict",
    "ekf_step",
    "ekf_update",
    "fixed_prior_decode",
    "loss_and_grads",
    "lr_schedule",
    "pseudo_measurement",
    "run_windows",
    "transition",
    "window_count",
    "write_trace",
]
