"""Straight-line trajectory simulation: DVL beam-level measurement synthesis
and GNSS-RTK reference velocities.

The DVL pipeline per epoch: rotate the ground-truth body velocity into the
DVL frame, project onto the beam directions, corrupt the beam velocities with
scale/bias/noise, reconstruct the velocity by least squares, rotate back to
the body frame. All randomness flows from integer seeds through
numpy SeedSequence, so identical (trajectory, config, seed) triples produce
bit-identical series.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConfigurationError,
    DataError,
    VelocitySeries,
    as_vec3,
    check_rotation,
    identity_rotation,
)

# Stream tags keeping DVL and GNSS noise independent under a shared seed.
DVL_STREAM = 101
GNSS_STREAM = 202

DEFAULT_BEAM_PITCH = np.deg2rad(20.0)
DEFAULT_BEAM_YAWS = tuple(np.deg2rad([45.0, 135.0, 225.0, 315.0]))

TRAJECTORY_CSV_HEADER = ["t", "vdx", "vdy", "vdz", "vgx", "vgy", "vgz"]


def derive_seed(master: int, *path: int) -> int:
    """Deterministic 64-bit sub-seed for (master, path...) streams."""
    ss = np.random.SeedSequence([int(master), *[int(p) for p in path]])
    return int(ss.generate_state(1, np.uint64)[0])


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


@dataclass(frozen=True, eq=False)
class TrajectorySpec:
    """Constant-velocity straight-line trajectory: body-frame v_gt, duration s, rate Hz."""

    v_gt: np.ndarray
    duration: float
    rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "v_gt", as_vec3(self.v_gt, "v_gt"))
        self.v_gt.setflags(write=False)
        if self.duration <= 0.0 or self.rate <= 0.0:
            raise ConfigurationError("duration and rate must be positive")
        n = self.duration * self.rate
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ConfigurationError(
                f"duration * rate must be a positive integer sample count, got {n}"
            )

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.rate))

    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.rate


@dataclass(frozen=True, eq=False)
class DvlConfig:
    """DVL beam geometry and error parameters.

    beam_pitch is the common tilt from vertical (radians), beam_yaws one
    azimuth per beam; scale is fractional, bias and noise_sigma are beam
    velocities in m/s, r_bd the fixed body-to-DVL mounting rotation.
    """

    beam_pitch: float = DEFAULT_BEAM_PITCH
    beam_yaws: tuple = DEFAULT_BEAM_YAWS
    scale: float = 0.0
    bias: float = 0.0
    noise_sigma: float = 0.0
    r_bd: np.ndarray = field(default_factory=identity_rotation)

    def __post_init__(self):
        if len(self.beam_yaws) < 3:
            raise ConfigurationError("need at least 3 beams")
        if self.noise_sigma < 0.0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if 1.0 + self.scale <= 0.0:
            raise ConfigurationError("scale must satisfy 1 + scale > 0")
        object.__setattr__(self, "beam_yaws", tuple(float(y) for y in self.beam_yaws))
        r = check_rotation(self.r_bd, "r_bd")
        r.setflags(write=False)
        object.__setattr__(self, "r_bd", r)

    @property
    def n_beams(self) -> int:
        return len(self.beam_yaws)


@dataclass(frozen=True)
class GnssConfig:
    """GNSS-RTK velocity noise level, m/s per axis."""

    noise_sigma: float = 0.005

    def __post_init__(self):
        if self.noise_sigma < 0.0:
            raise ConfigurationError("noise_sigma must be >= 0")


def beam_matrix(cfg: DvlConfig) -> np.ndarray:
    """Beam direction matrix A, one unit row per beam:
    [cos(yaw) sin(pitch), sin(yaw) sin(pitch), cos(pitch)].
    """
    th = cfg.beam_pitch
    yaws = np.asarray(cfg.beam_yaws)
    a = np.stack(
        [np.cos(yaws) * np.sin(th), np.sin(yaws) * np.sin(th), np.full(len(yaws), np.cos(th))],
        axis=1,
    )
    if np.linalg.matrix_rank(a, tol=1e-9) < 3:
        raise ConfigurationError("degenerate beam geometry: direction matrix rank < 3")
    return a


def simulate_dvl(traj: TrajectorySpec, cfg: DvlConfig, seed: int) -> np.ndarray:
    """DVL body-frame velocity measurements, (N, 3), deterministic per seed.

    Beams see (1 + scale) * A (R_b^d v_gt) + bias + N(0, noise_sigma^2) and the
    velocity is recovered via the normal equations (A^T A)^-1 A^T.
    """
    a = beam_matrix(cfg)
    v_d = cfg.r_bd @ traj.v_gt
    beams = a @ v_d
    n = traj.n_samples
    rng = _rng(seed, DVL_STREAM)
    noisy = (1.0 + cfg.scale) * beams + cfg.bias + cfg.noise_sigma * rng.standard_normal(
        (n, cfg.n_beams)
    )
    proj = np.linalg.solve(a.T @ a, a.T)  # (3, B)
    v_rec = noisy @ proj.T
    return v_rec @ cfg.r_bd  # row-wise R^T v


def simulate_gnss(traj: TrajectorySpec, cfg: GnssConfig, seed: int) -> np.ndarray:
    """GNSS-RTK body-frame velocities: v_gt + N(0, sigma^2 I), (N, 3)."""
    rng = _rng(seed, GNSS_STREAM)
    return traj.v_gt + cfg.noise_sigma * rng.standard_normal((traj.n_samples, 3))


def simulate_pair(
    traj: TrajectorySpec, dvl_cfg: DvlConfig, gnss_cfg: GnssConfig, seed: int
) -> VelocitySeries:
    """Paired DVL/GNSS measurement series with independent noise streams."""
    return VelocitySeries(
        t=traj.times(),
        v_dvl=simulate_dvl(traj, dvl_cfg, seed),
        v_gnss=simulate_gnss(traj, gnss_cfg, seed),
    )


def effective_velocity_bias(cfg: DvlConfig) -> np.ndarray:
    """Body-frame velocity offset produced by the constant beam-level bias:
    (R_b^d)^T (A^T A)^-1 A^T (bias * 1).
    """
    a = beam_matrix(cfg)
    b_d = np.linalg.solve(a.T @ a, a.T @ np.full(cfg.n_beams, cfg.bias))
    return cfg.r_bd.T @ b_d


def measurement_offset(cfg: DvlConfig, v_gt) -> np.ndarray:
    """Mean systematic DVL measurement error for a trajectory at v_gt:
    E[v_dvl] - v_gt = scale * v_gt + effective beam-bias offset.
    """
    v = as_vec3(v_gt, "v_gt")
    return cfg.scale * v + effective_velocity_bias(cfg)


def write_trajectory_csv(path, series: VelocitySeries) -> None:
    """Write `t,vdx,vdy,vdz,vgx,vgy,vgz` rows, shortest-roundtrip decimal text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_CSV_HEADER)
    for i in range(len(series)):
        writer.writerow(
            [repr(float(x)) for x in (series.t[i], *series.v_dvl[i], *series.v_gnss[i])]
        )
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_trajectory_csv(path) -> VelocitySeries:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    if data.shape[1] != 7:
        raise DataError(f"trajectory CSV must have 7 columns, got {data.shape[1]}")
    return VelocitySeries(t=data[:, 0], v_dvl=data[:, 1:4], v_gnss=data[:, 4:7])
