"""Deterministic dataset construction: the training parameter grid, sliding
window extraction, the four-DVL test suite, and CSV shard materialization
with an integrity manifest.

Regression targets stored per window:
  target_k             the injected (uniform) scale factor, which the beam
                       pipeline maps to an identical velocity-domain scale;
  target_bx/by/bz      the trajectory's systematic measurement offset
                       E[v_dvl] - v_gt = scale * v_gt + the velocity-domain
                       image of the constant beam bias. Under a bias-only
                       error model this offset is the true bias: it is what
                       a measurement-error-minimizing estimator converges to.
"""
from __future__ import annotations

import gzip
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .core import ConfigurationError, DataError, EmKind, VelocitySeries
from .simulate import (
    DEFAULT_BEAM_PITCH,
    DEFAULT_BEAM_YAWS,
    DvlConfig,
    GnssConfig,
    TrajectorySpec,
    derive_seed,
    measurement_offset,
    simulate_pair,
)

MANIFEST_NAME = "manifest.json"
AUGMENT_STREAM = 303


@dataclass(frozen=True)
class AxisRange:
    """Inclusive decimal range lower..upper in uniform steps."""

    lower: float
    upper: float
    step: float

    def __post_init__(self):
        if self.step <= 0 or self.upper < self.lower:
            raise ConfigurationError(f"bad range {self.lower}..{self.upper} step {self.step}")

    @property
    def count(self) -> int:
        return int(round((self.upper - self.lower) / self.step)) + 1

    def values(self) -> np.ndarray:
        # single multiply per value; no accumulated += drift
        return self.lower + np.arange(self.count) * self.step


@dataclass(frozen=True)
class GridSpec:
    """Training grid: X velocity x scale x bias x noise, each combination
    repeated with fresh noise. Scale is fractional here; percent appears only
    at config/report boundaries.
    """

    x_velocity: AxisRange = AxisRange(1.5, 2.1, 0.1)
    scale: AxisRange = AxisRange(0.002, 0.015, 0.001)
    bias: AxisRange = AxisRange(0.001, 0.009, 0.001)
    # the noise axis holds 9 values, keeping the grid at 7*14*9*9 = 7938
    # combinations; a tenth step (0.001) would break that total
    noise: AxisRange = AxisRange(0.0001, 0.0009, 0.0001)
    repeats: int = 4
    trajectory_seconds: float = 100.0
    rate: float = 1.0
    augment_yz: bool = False

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        if self.trajectory_seconds <= 0 or self.rate <= 0:
            raise ConfigurationError("trajectory_seconds and rate must be positive")

    @property
    def n_combinations(self) -> int:
        return self.x_velocity.count * self.scale.count * self.bias.count * self.noise.count

    @property
    def n_trajectories(self) -> int:
        return self.n_combinations * self.repeats


@dataclass(frozen=True)
class WindowingSpec:
    """Sliding-window split: candidates start every stride_seconds, the first
    train+val candidates are kept, the leading ones feed training and the
    trailing ones validation.
    """

    window_seconds: float = 10.0
    stride_seconds: float = 9.0
    train_windows: int = 8
    val_windows: int = 2

    def __post_init__(self):
        if self.window_seconds <= 0 or self.stride_seconds <= 0:
            raise ConfigurationError("window and stride must be positive")
        if self.train_windows < 1 or self.val_windows < 0:
            raise ConfigurationError("window counts must be positive")

    @property
    def windows_per_trajectory(self) -> int:
        return self.train_windows + self.val_windows

    def samples_per_window(self, rate: float) -> int:
        n = self.window_seconds * rate
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ConfigurationError("window_seconds * rate must be a positive integer")
        return int(round(n))


@dataclass(frozen=True)
class GridEntry:
    """One trajectory of the grid: full-grid combination index plus repeat."""

    traj_id: int
    combo_index: int
    repeat: int
    x_velocity: float
    scale: float
    bias: float
    noise_sigma: float


def enumerate_grid(spec: GridSpec) -> list[GridEntry]:
    """All trajectories in lexicographic (x, scale, bias, noise, repeat) order."""
    entries: list[GridEntry] = []
    combo = 0
    for x in spec.x_velocity.values():
        for k in spec.scale.values():
            for b in spec.bias.values():
                for s in spec.noise.values():
                    for r in range(spec.repeats):
                        entries.append(
                            GridEntry(
                                traj_id=combo * spec.repeats + r,
                                combo_index=combo,
                                repeat=r,
                                x_velocity=float(x),
                                scale=float(k),
                                bias=float(b),
                                noise_sigma=float(s),
                            )
                        )
                    combo += 1
    return entries


@dataclass(frozen=True, eq=False)
class WindowSplit:
    """Stacked (windows, 6, n) arrays for one trajectory; rows are DVL x,y,z
    then GNSS x,y,z."""

    train: np.ndarray
    val: np.ndarray
    train_starts: np.ndarray
    val_starts: np.ndarray


def stack_series(series: VelocitySeries) -> np.ndarray:
    """(6, N) array: DVL x,y,z rows then GNSS x,y,z rows."""
    return np.concatenate([series.v_dvl.T, series.v_gnss.T], axis=0)


def window_split(series: VelocitySeries, wspec: WindowingSpec, rate: float) -> WindowSplit:
    """Slice a trajectory into its train and validation windows.

    Candidate windows start at 0, stride, 2*stride, ... samples; the first
    train+val candidates are kept (any further candidate is dropped), so a
    100 s trajectory at 1 Hz yields windows [9k, 9k+10) for k = 0..9.
    """
    n_win = wspec.samples_per_window(rate)
    stride = int(round(wspec.stride_seconds * rate))
    total = wspec.windows_per_trajectory
    starts = np.arange(total) * stride
    if starts[-1] + n_win > len(series):
        raise DataError(
            f"series of {len(series)} samples too short for {total} windows "
            f"of {n_win} samples at stride {stride}"
        )
    stacked = stack_series(series)
    idx = starts[:, None] + np.arange(n_win)[None, :]
    windows = stacked[:, idx].transpose(1, 0, 2)  # (total, 6, n_win)
    k = wspec.train_windows
    return WindowSplit(
        train=windows[:k],
        val=windows[k:],
        train_starts=starts[:k],
        val_starts=starts[k:],
    )


@dataclass(frozen=True)
class DvlTypeSpec:
    """Error parameters of one test DVL type; scale fractional."""

    scale: float
    bias: float
    noise_sigma: float


# Test DVL types and trajectory velocities used in the evaluation protocol.
DEFAULT_DVL_TYPES: dict[int, DvlTypeSpec] = {
    1: DvlTypeSpec(scale=0.005, bias=0.001, noise_sigma=0.008),
    2: DvlTypeSpec(scale=0.005, bias=0.001, noise_sigma=0.0008),
    3: DvlTypeSpec(scale=0.010, bias=0.007, noise_sigma=0.02),
    4: DvlTypeSpec(scale=0.010, bias=0.007, noise_sigma=0.0002),
}
DEFAULT_CALIB_VELOCITY = (2.0, -0.08, -0.01)
DEFAULT_EVAL_VELOCITIES = (
    (1.8, 0.1, 0.1),
    (2.2, 0.5, -0.1),
    (1.55, 0.3, -0.08),
    (1.9, -0.05, -0.0084),
)


@dataclass(frozen=True, eq=False)
class TestSuiteSpec:
    """Per-DVL-type calibration + evaluation trajectories and shared geometry."""

    __test__ = False  # not a pytest class, despite the name

    dvl_types: dict[int, DvlTypeSpec] = field(default_factory=lambda: dict(DEFAULT_DVL_TYPES))
    calib_velocity: tuple = DEFAULT_CALIB_VELOCITY
    eval_velocities: tuple = DEFAULT_EVAL_VELOCITIES
    calib_seconds: float = 200.0
    eval_seconds: float = 1800.0
    rate: float = 1.0
    beam_pitch: float = DEFAULT_BEAM_PITCH
    beam_yaws: tuple = DEFAULT_BEAM_YAWS
    gnss_noise_sigma: float = 0.005

    def dvl_config(self, dvl_type: int) -> DvlConfig:
        ts = self.dvl_types[dvl_type]
        return DvlConfig(
            beam_pitch=self.beam_pitch,
            beam_yaws=self.beam_yaws,
            scale=ts.scale,
            bias=ts.bias,
            noise_sigma=ts.noise_sigma,
        )

    def gnss_config(self) -> GnssConfig:
        return GnssConfig(noise_sigma=self.gnss_noise_sigma)

    def calib_trajectory(self) -> TrajectorySpec:
        return TrajectorySpec(np.array(self.calib_velocity), self.calib_seconds, self.rate)

    def eval_trajectory(self, i: int) -> TrajectorySpec:
        return TrajectorySpec(np.array(self.eval_velocities[i]), self.eval_seconds, self.rate)


@dataclass(frozen=True, eq=False)
class DvlSuite:
    """Simulated series for one DVL type: one calibration run, four evaluation runs."""

    dvl_type: int
    config: DvlConfig
    calibration: VelocitySeries
    evaluations: tuple


def build_test_suite(spec: TestSuiteSpec, seed: int) -> dict[int, DvlSuite]:
    """Simulate the full test suite; per-series seeds derive from
    (seed, dvl_type, trajectory index) with index 0 the calibration run.
    """
    suite: dict[int, DvlSuite] = {}
    gnss = spec.gnss_config()
    for dvl_type in sorted(spec.dvl_types):
        cfg = spec.dvl_config(dvl_type)
        calib = simulate_pair(spec.calib_trajectory(), cfg, gnss, derive_seed(seed, dvl_type, 0))
        evals = tuple(
            simulate_pair(spec.eval_trajectory(i), cfg, gnss, derive_seed(seed, dvl_type, i + 1))
            for i in range(len(spec.eval_velocities))
        )
        suite[dvl_type] = DvlSuite(dvl_type, cfg, calib, evals)
    return suite


def select_combinations(n_combinations: int, scale_fraction: float) -> np.ndarray:
    """Evenly spread combination indices; fraction 1.0 keeps everything."""
    if not 0.0 < scale_fraction <= 1.0:
        raise ConfigurationError(f"scale_fraction must be in (0, 1], got {scale_fraction}")
    if scale_fraction == 1.0:
        return np.arange(n_combinations)
    keep = max(1, int(round(n_combinations * scale_fraction)))
    return np.unique(np.floor(np.arange(keep) / scale_fraction).astype(int).clip(0, n_combinations - 1))


def _entry_dvl_config(entry: GridEntry, spec: "DatasetSpec") -> DvlConfig:
    return DvlConfig(
        beam_pitch=spec.beam_pitch,
        beam_yaws=spec.beam_yaws,
        scale=entry.scale,
        bias=entry.bias,
        noise_sigma=entry.noise_sigma,
    )


@dataclass(frozen=True, eq=False)
class DatasetSpec:
    """Everything needed to materialize the training dataset."""

    grid: GridSpec = GridSpec()
    windowing: WindowingSpec = WindowingSpec()
    beam_pitch: float = DEFAULT_BEAM_PITCH
    beam_yaws: tuple = DEFAULT_BEAM_YAWS
    gnss_noise_sigma: float = 0.005


def _trajectory_velocity(entry: GridEntry, spec: DatasetSpec, traj_seed: int) -> np.ndarray:
    v = np.array([entry.x_velocity, 0.0, 0.0])
    if spec.grid.augment_yz:
        rng = np.random.default_rng(np.random.SeedSequence([traj_seed, AUGMENT_STREAM]))
        v[1:] = rng.uniform(-0.5, 0.5, 2)
    return v


def generate_shards(
    spec: DatasetSpec,
    out_dir,
    master_seed: int,
    scale_fraction: float = 1.0,
) -> dict:
    """Materialize the grid into per-X-velocity CSV shards plus a manifest.

    Trajectory seeds derive from (master_seed, combination index, repeat)
    against the full-grid combination index, so a subsampled run reproduces a
    subset of the full run bit for bit. Returns the manifest dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid, wspec = spec.grid, spec.windowing
    n_win = wspec.samples_per_window(grid.rate)
    selected = set(select_combinations(grid.n_combinations, scale_fraction).tolist())
    entries = [e for e in enumerate_grid(grid) if e.combo_index in selected]
    gnss_cfg = GnssConfig(noise_sigma=spec.gnss_noise_sigma)

    sample_cols = [f"s{i:02d}" for i in range(6 * n_win)]
    shards = []
    totals = {"trajectories": 0, "train_windows": 0, "val_windows": 0}

    x_values = grid.x_velocity.values()
    by_x: dict[int, list[GridEntry]] = {i: [] for i in range(len(x_values))}
    for e in entries:
        xi = int(np.argmin(np.abs(x_values - e.x_velocity)))
        by_x[xi].append(e)

    for xi in sorted(by_x):
        shard_entries = by_x[xi]
        if not shard_entries:
            continue
        rows_per_traj = wspec.windows_per_trajectory
        n_rows = len(shard_entries) * rows_per_traj
        samples = np.empty((n_rows, 6 * n_win))
        targets = np.empty((n_rows, 4))
        traj_ids = np.empty(n_rows, dtype=np.int64)
        window_ids = np.empty(n_rows, dtype=np.int64)
        splits = np.empty(n_rows, dtype=object)

        row = 0
        for e in shard_entries:
            traj_seed = derive_seed(master_seed, e.combo_index, e.repeat)
            v_gt = _trajectory_velocity(e, spec, traj_seed)
            traj = TrajectorySpec(v_gt, grid.trajectory_seconds, grid.rate)
            dvl_cfg = _entry_dvl_config(e, spec)
            series = simulate_pair(traj, dvl_cfg, gnss_cfg, traj_seed)
            split = window_split(series, wspec, grid.rate)
            offset = measurement_offset(dvl_cfg, v_gt)
            for kind, wins in (("train", split.train), ("val", split.val)):
                for w in range(wins.shape[0]):
                    samples[row] = wins[w].reshape(-1)
                    targets[row] = (e.scale, offset[0], offset[1], offset[2])
                    traj_ids[row] = e.traj_id
                    window_ids[row] = w if kind == "train" else wspec.train_windows + w
                    splits[row] = kind
                    row += 1

        float_block = np.concatenate([targets, samples], axis=1)
        float_names = ["target_k", "target_bx", "target_by", "target_bz"] + sample_cols
        df = pd.DataFrame(float_block, columns=float_names, copy=False)
        df.insert(0, "split", splits)
        df.insert(0, "window_id", window_ids)
        df.insert(0, "traj_id", traj_ids)

        shard_name = f"shard_{xi:03d}.csv.gz"
        payload = df.to_csv(index=False).encode()
        blob = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=blob, mtime=0, compresslevel=6) as gz:
            gz.write(payload)
        data = blob.getvalue()
        (out / shard_name).write_bytes(data)

        n_train = int((splits == "train").sum())
        n_val = n_rows - n_train
        shards.append(
            {
                "path": shard_name,
                "rows": n_rows,
                "trajectories": len(shard_entries),
                "train_windows": n_train,
                "val_windows": n_val,
                "sha256": hashlib.sha256(data).hexdigest(),
            }
        )
        totals["trajectories"] += len(shard_entries)
        totals["train_windows"] += n_train
        totals["val_windows"] += n_val

    manifest = {
        "format": "dvlcal-dataset",
        "version": 1,
        "master_seed": int(master_seed),
        "scale_fraction": float(scale_fraction),
        "grid": asdict(grid),
        "windowing": asdict(wspec),
        "geometry": {
            "beam_pitch_rad": float(spec.beam_pitch),
            "beam_yaws_rad": [float(y) for y in spec.beam_yaws],
        },
        "gnss_noise_sigma": float(spec.gnss_noise_sigma),
        "samples_per_window": n_win,
        "grid_total_combinations": grid.n_combinations,
        "counts": {
            "combinations": len(selected),
            "trajectories": totals["trajectories"],
            "train_windows": totals["train_windows"],
            "val_windows": totals["val_windows"],
        },
        "shards": shards,
    }
    manifest_bytes = json.dumps(manifest, indent=2, sort_keys=True).encode()
    (out / MANIFEST_NAME).write_bytes(manifest_bytes)
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def manifest_sha256(dataset_dir) -> str:
    return hashlib.sha256((Path(dataset_dir) / MANIFEST_NAME).read_bytes()).hexdigest()


def targets_for_kind(frame: pd.DataFrame, em_kind: EmKind) -> np.ndarray:
    """Regression target matrix for one error-model kind from shard columns."""
    k = frame["target_k"].to_numpy()
    b = frame[["target_bx", "target_by", "target_bz"]].to_numpy()
    if em_kind is EmKind.EM1:
        return k[:, None]
    if em_kind is EmKind.EM2:
        return np.repeat(k[:, None], 3, axis=1)
    if em_kind is EmKind.EM3:
        return b.mean(axis=1, keepdims=True)
    return b


def load_training_arrays(dataset_dir, em_kind: EmKind, verify_hashes: bool = False):
    """Load (x_train, y_train, x_val, y_val) float32 arrays for one EM kind.

    x arrays have shape (N, 6, n); targets follow `targets_for_kind`.
    """
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    n_win = manifest["samples_per_window"]
    xs_tr, ys_tr, xs_va, ys_va = [], [], [], []
    for shard in manifest["shards"]:
        path = dataset_dir / shard["path"]
        if not path.exists():
            raise DataError(f"missing shard {path}")
        if verify_hashes:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            if digest != shard["sha256"]:
                raise DataError(f"shard {path} hash mismatch")
        df = pd.read_csv(path)
        x = df[[f"s{i:02d}" for i in range(6 * n_win)]].to_numpy(np.float32)
        x = x.reshape(-1, 6, n_win)
        y = targets_for_kind(df, em_kind).astype(np.float32)
        mask = (df["split"] == "train").to_numpy()
        xs_tr.append(x[mask])
        ys_tr.append(y[mask])
        xs_va.append(x[~mask])
        ys_va.append(y[~mask])
    expected = (manifest["counts"]["train_windows"], manifest["counts"]["val_windows"])
    x_train = np.concatenate(xs_tr)
    x_val = np.concatenate(xs_va)
    if (len(x_train), len(x_val)) != expected:
        raise DataError(
            f"shard window counts {(len(x_train), len(x_val))} disagree with manifest {expected}"
        )
    return x_train, np.concatenate(ys_tr), x_val, np.concatenate(ys_va)
