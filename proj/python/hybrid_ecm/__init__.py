"""Grey-box battery modeling: FFRLS identification, neural parameter corrections, EKF SOC."""

from ._core import (
    EcmParams,
    InputError,
    NumericalError,
    OcvCurve,
    default_ocv_curve,
    estimate_soc,
    fit_ocv,
    gen_cycle,
    identify,
    improvement_pct,
    mse,
    params_from_theta,
    rmse,
    run_cli,
    simulate_scenario,
    theta_forward,
)

__all__ = [
    "EcmParams",
    "InputError",
    "NumericalError",
    "OcvCurve",
    "default_ocv_curve",
    "estimate_soc",
    "fit_ocv",
    "gen_cycle",
    "identify",
    "improvement_pct",
    "mse",
    "params_from_theta",
    "rmse",
    "run_cli",
    "simulate_scenario",
    "theta_forward",
]
