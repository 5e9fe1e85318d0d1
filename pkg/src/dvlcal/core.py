"""Core types: velocity vectors, rotations, DVL error models and their
forward/inverse application.

All values are immutable; every operation is a pure function, safe to call
concurrently. Velocities are m/s, scale factors are fractional (0.005 = 0.5%),
biases are m/s.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

ROTATION_TOL = 1e-9
SCALE_DEGENERACY_TOL = 1e-6


class CalibrationError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(CalibrationError):
    """Invalid configuration: bad geometry, out-of-range parameter, bad spec."""


class DataError(CalibrationError):
    """Invalid data at runtime: non-finite values, empty/short series, mismatched shapes."""


class DivergenceError(CalibrationError):
    """Numerical divergence (NaN loss) during training."""


def as_vec3(v, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 array of shape (3,)."""
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise DataError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} has non-finite components: {arr}")
    return arr


def identity_rotation() -> np.ndarray:
    return np.eye(3)


def check_rotation(r: np.ndarray, name: str = "rotation") -> np.ndarray:
    """Validate a 3x3 rotation matrix: orthonormal and det = +1 within 1e-9."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise DataError(f"{name} must be 3x3, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise DataError(f"{name} has non-finite entries")
    if not np.allclose(r.T @ r, np.eye(3), atol=ROTATION_TOL, rtol=0.0):
        raise DataError(f"{name} is not orthonormal within {ROTATION_TOL}")
    if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
        raise DataError(f"{name} determinant is not +1 within {ROTATION_TOL}")
    return r


def rotation_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-target rotation from intrinsic z-y-x Euler angles, radians."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


class EmKind(str, Enum):
    """The four DVL error-model variants: scalar/vector scale, scalar/vector bias."""

    EM1 = "EM1"  # scalar scale factor
    EM2 = "EM2"  # per-axis scale factor
    EM3 = "EM3"  # scalar bias
    EM4 = "EM4"  # per-axis bias

    @property
    def is_scale(self) -> bool:
        return self in (EmKind.EM1, EmKind.EM2)

    @property
    def is_vector(self) -> bool:
        return self in (EmKind.EM2, EmKind.EM4)

    @property
    def output_dim(self) -> int:
        return 3 if self.is_vector else 1


@dataclass(frozen=True, eq=False)
class ErrorModel:
    """One of the four DVL error models, holding its scale or bias payload.

    Scalar kinds (EM1/EM3) carry a single float, vector kinds (EM2/EM4) a
    3-vector. Whichever term the kind does not define is an exact zero.
    """

    kind: EmKind
    value: np.ndarray

    def __post_init__(self):
        kind = EmKind(self.kind)
        object.__setattr__(self, "kind", kind)
        arr = np.atleast_1d(np.asarray(self.value, dtype=float))
        expected = (3,) if kind.is_vector else (1,)
        if arr.shape != expected:
            raise DataError(
                f"{kind.value} payload must have shape {expected}, got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{kind.value} payload has non-finite components")
        if kind.is_scale and np.any(1.0 + arr <= 0.0):
            raise DataError(f"{kind.value} scale must satisfy 1 + k > 0, got {arr}")
        arr.setflags(write=False)
        object.__setattr__(self, "value", arr)

    @classmethod
    def scalar_scale(cls, k: float) -> "ErrorModel":
        return cls(EmKind.EM1, np.array([float(k)]))

    @classmethod
    def vector_scale(cls, k) -> "ErrorModel":
        return cls(EmKind.EM2, as_vec3(k, "scale vector"))

    @classmethod
    def scalar_bias(cls, b: float) -> "ErrorModel":
        return cls(EmKind.EM3, np.array([float(b)]))

    @classmethod
    def vector_bias(cls, b) -> "ErrorModel":
        return cls(EmKind.EM4, as_vec3(b, "bias vector"))

    @property
    def scale_vector(self) -> np.ndarray:
        """Effective 3-vector scale; zeros for bias-only kinds."""
        if self.kind is EmKind.EM1:
            return np.full(3, self.value[0])
        if self.kind is EmKind.EM2:
            return np.array(self.value)
        return np.zeros(3)

    @property
    def bias_vector(self) -> np.ndarray:
        """Effective 3-vector bias; zeros for scale-only kinds."""
        if self.kind is EmKind.EM3:
            return np.full(3, self.value[0])
        if self.kind is EmKind.EM4:
            return np.array(self.value)
        return np.zeros(3)


@dataclass(frozen=True, eq=False)
class VelocitySample:
    """Paired DVL/GNSS velocity vectors at one epoch, body frame, m/s."""

    t: float
    v_dvl: np.ndarray
    v_gnss: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.t) or self.t < 0.0:
            raise DataError(f"sample time must be finite and non-negative, got {self.t}")
        object.__setattr__(self, "v_dvl", as_vec3(self.v_dvl, "v_dvl"))
        object.__setattr__(self, "v_gnss", as_vec3(self.v_gnss, "v_gnss"))


@dataclass(frozen=True, eq=False)
class VelocitySeries:
    """Time-ordered series of paired DVL/GNSS velocity measurements.

    Arrays are read-only; `t` is (N,) seconds, strictly increasing and
    non-negative, `v_dvl`/`v_gnss` are (N, 3) body-frame m/s.
    """

    t: np.ndarray
    v_dvl: np.ndarray
    v_gnss: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=float)
        vd = np.ascontiguousarray(self.v_dvl, dtype=float)
        vg = np.ascontiguousarray(self.v_gnss, dtype=float)
        n = t.shape[0]
        if n == 0:
            raise DataError("velocity series must contain at least one sample")
        if t.ndim != 1 or vd.shape != (n, 3) or vg.shape != (n, 3):
            raise DataError(
                f"inconsistent series shapes: t {t.shape}, v_dvl {vd.shape}, v_gnss {vg.shape}"
            )
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(vd)) and np.all(np.isfinite(vg))):
            raise DataError("velocity series has non-finite values")
        if t[0] < 0.0 or (n > 1 and np.any(np.diff(t) <= 0.0)):
            raise DataError("series times must be non-negative and strictly increasing")
        for arr, name in ((t, "t"), (vd, "v_dvl"), (vg, "v_gnss")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.t.shape[0]

    def sample(self, i: int) -> VelocitySample:
        return VelocitySample(float(self.t[i]), self.v_dvl[i], self.v_gnss[i])

    def slice_indices(self, start: int, stop: int) -> "VelocitySeries":
        if not 0 <= start < stop <= len(self):
            raise DataError(f"slice [{start}, {stop}) out of range for {len(self)} samples")
        return VelocitySeries(self.t[start:stop], self.v_dvl[start:stop], self.v_gnss[start:stop])

    def first_seconds(self, seconds: float) -> "VelocitySeries":
        """Samples with t < seconds (times start at zero)."""
        stop = int(np.searchsorted(self.t, seconds, side="left"))
        if stop == 0:
            raise DataError(f"no samples in the first {seconds} s")
        return self.slice_indices(0, stop)

    def from_seconds(self, seconds: float) -> "VelocitySeries":
        """Samples with t >= seconds."""
        start = int(np.searchsorted(self.t, seconds, side="left"))
        if start >= len(self):
            raise DataError(f"no samples at or after {seconds} s")
        return self.slice_indices(start, len(self))


def apply_error_model(v_true, em: ErrorModel, r_bd: np.ndarray | None = None, noise=None) -> np.ndarray:
    """Forward DVL error model: (1 + k) * (R_b^d v_true) + b + noise.

    Scale multiplies componentwise (scalar payloads broadcast); terms the
    model kind does not define are exact zeros. `noise` is a caller-supplied
    realization of the measurement noise (defaults to zero).
    """
    v = as_vec3(v_true, "v_true")
    r = identity_rotation() if r_bd is None else check_rotation(r_bd, "r_bd")
    eta = np.zeros(3) if noise is None else as_vec3(noise, "noise")
    return (1.0 + em.scale_vector) * (r @ v) + em.bias_vector + eta


def correct(v_meas, em: ErrorModel, r_bd: np.ndarray | None = None) -> np.ndarray:
    """Invert the forward error model at zero noise:
    (R_b^d)^T ((v_meas - b) / (1 + k)).

    Round-trips apply_error_model exactly when noise is zero.
    """
    v = as_vec3(v_meas, "v_meas")
    r = identity_rotation() if r_bd is None else check_rotation(r_bd, "r_bd")
    denom = 1.0 + em.scale_vector
    if np.any(denom <= SCALE_DEGENERACY_TOL):
        raise DataError(f"degenerate scale: 1 + k = {denom} has component <= {SCALE_DEGENERACY_TOL}")
    return r.T @ ((v - em.bias_vector) / denom)


def correct_series(v_meas: np.ndarray, em: ErrorModel, r_bd: np.ndarray | None = None) -> np.ndarray:
    """Vectorized `correct` over an (N, 3) array of measurements."""
    v = np.asarray(v_meas, dtype=float)
    if v.ndim != 2 or v.shape[1] != 3:
        raise DataError(f"expected (N, 3) measurements, got {v.shape}")
    r = identity_rotation() if r_bd is None else check_rotation(r_bd, "r_bd")
    denom = 1.0 + em.scale_vector
    if np.any(denom <= SCALE_DEGENERACY_TOL):
        raise DataError(f"degenerate scale: 1 + k = {denom} has component <= {SCALE_DEGENERACY_TOL}")
    return ((v - em.bias_vector) / denom) @ r


def subtract_input(series: VelocitySeries) -> np.ndarray:
    """Element-wise DVL minus GNSS velocities, (N, 3), order preserved."""
    if len(series) == 0:  # unreachable through the constructor; kept for clarity
        raise DataError("cannot subtract an empty series")
    return series.v_dvl - series.v_gnss
