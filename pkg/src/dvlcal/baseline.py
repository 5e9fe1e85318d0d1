"""Model-based calibration baseline: scalar scale factor from vector norms.

Per epoch k_t = ||v_dvl|| / ||R_b^d v_gnss|| - 1, averaged over the window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DataError,
    ErrorModel,
    VelocitySeries,
    check_rotation,
    identity_rotation,
)

GNSS_SPEED_TOL = 1e-6  # m/s


@dataclass(frozen=True, eq=False)
class ScaleEstimate:
    """Per-epoch scale ratios and their arithmetic mean."""

    k_bar: float
    per_epoch: np.ndarray
    window_seconds: float

    def __post_init__(self):
        arr = np.ascontiguousarray(self.per_epoch, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "per_epoch", arr)


def estimate_scale_direct(series: VelocitySeries, r_bd: np.ndarray | None = None) -> ScaleEstimate:
    """Norm-ratio scale estimate over all samples of the series.

    Raises if any rotated GNSS speed falls below 1e-6 m/s: skipping epochs
    silently would change the averaging count, so degenerate epochs abort.
    """
    r = identity_rotation() if r_bd is None else check_rotation(r_bd, "r_bd")
    dvl_speed = np.linalg.norm(series.v_dvl, axis=1)
    gnss_speed = np.linalg.norm(series.v_gnss @ r.T, axis=1)
    bad = np.flatnonzero(gnss_speed <= GNSS_SPEED_TOL)
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"near-zero GNSS speed {gnss_speed[i]:.3e} m/s at epoch {i} (t={series.t[i]} s)"
        )
    per_epoch = dvl_speed / gnss_speed - 1.0
    if len(series) > 1:
        window = float(series.t[-1] - series.t[0]) * len(series) / (len(series) - 1)
    else:
        window = 1.0
    return ScaleEstimate(k_bar=float(per_epoch.mean()), per_epoch=per_epoch, window_seconds=window)


def baseline_calibrate(cal: VelocitySeries, r_bd: np.ndarray | None = None) -> ErrorModel:
    """Wrap the norm-ratio estimate as a scalar-scale error model."""
    return ErrorModel.scalar_scale(estimate_scale_direct(cal, r_bd).k_bar)
