"""Experiment configuration: one YAML document whose defaults reproduce the
published protocol (training grid, windowing, four test DVL types, network
training regime, 200-run Monte Carlo).

Scale factors appear in percent here and in reports; everything internal is
fractional.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import ConfigurationError
from .dataset import (
    AxisRange,
    DatasetSpec,
    DvlTypeSpec,
    GridSpec,
    TestSuiteSpec,
    WindowingSpec,
)
from .network import TrainConfig


@dataclass(frozen=True)
class RangeConfig:
    lower: float
    upper: float
    step: float

    def axis(self, divisor: float = 1.0) -> AxisRange:
        return AxisRange(self.lower / divisor, self.upper / divisor, self.step / divisor)


@dataclass(frozen=True)
class GeometryConfig:
    beam_pitch_deg: float = 20.0
    beam_yaws_deg: tuple = (45.0, 135.0, 225.0, 315.0)

    def __post_init__(self):
        object.__setattr__(self, "beam_yaws_deg", tuple(float(y) for y in self.beam_yaws_deg))

    @property
    def beam_pitch_rad(self) -> float:
        return float(np.deg2rad(self.beam_pitch_deg))

    @property
    def beam_yaws_rad(self) -> tuple:
        return tuple(float(np.deg2rad(y)) for y in self.beam_yaws_deg)


@dataclass(frozen=True)
class GridConfig:
    x_velocity: RangeConfig = RangeConfig(1.5, 2.1, 0.1)
    scale_percent: RangeConfig = RangeConfig(0.2, 1.5, 0.1)
    bias: RangeConfig = RangeConfig(0.001, 0.009, 0.001)
    noise: RangeConfig = RangeConfig(0.0001, 0.0009, 0.0001)
    repeats: int = 4
    trajectory_seconds: float = 100.0
    augment_yz: bool = False


@dataclass(frozen=True)
class WindowingConfig:
    window_seconds: float = 10.0
    stride_seconds: float = 9.0
    train_windows: int = 8
    val_windows: int = 2


@dataclass(frozen=True)
class DvlTypeConfig:
    scale_percent: float
    bias: float
    noise_sigma: float


@dataclass(frozen=True)
class TestSuiteConfig:
    __test__ = False  # not a pytest class, despite the name

    dvl_types: dict = field(
        default_factory=lambda: {
            1: DvlTypeConfig(0.5, 0.001, 0.008),
            2: DvlTypeConfig(0.5, 0.001, 0.0008),
            3: DvlTypeConfig(1.0, 0.007, 0.02),
            4: DvlTypeConfig(1.0, 0.007, 0.0002),
        }
    )
    calib_velocity: tuple = (2.0, -0.08, -0.01)
    eval_velocities: tuple = (
        (1.8, 0.1, 0.1),
        (2.2, 0.5, -0.1),
        (1.55, 0.3, -0.08),
        (1.9, -0.05, -0.0084),
    )
    calib_seconds: float = 200.0
    eval_seconds: float = 1800.0

    def __post_init__(self):
        object.__setattr__(self, "calib_velocity", tuple(float(v) for v in self.calib_velocity))
        object.__setattr__(
            self,
            "eval_velocities",
            tuple(tuple(float(v) for v in row) for row in self.eval_velocities),
        )
        object.__setattr__(
            self,
            "dvl_types",
            {int(k): v for k, v in self.dvl_types.items()},
        )


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    dropout: float = 0.2
    window_n: int = 10
    seed: int = 0


@dataclass(frozen=True)
class EvaluationConfig:
    runs: int = 200
    calibration_windows: tuple = (10.0, 20.0, 50.0, 80.0, 100.0)
    baseline_window: float = 100.0

    def __post_init__(self):
        object.__setattr__(
            self, "calibration_windows", tuple(float(w) for w in self.calibration_windows)
        )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 2024
    rate_hz: float = 1.0
    gnss_noise_sigma: float = 0.005
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    test_suite: TestSuiteConfig = field(default_factory=TestSuiteConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    # -- builders for the working specs ------------------------------------

    def grid_spec(self) -> GridSpec:
        g = self.grid
        return GridSpec(
            x_velocity=g.x_velocity.axis(),
            scale=g.scale_percent.axis(100.0),
            bias=g.bias.axis(),
            noise=g.noise.axis(),
            repeats=g.repeats,
            trajectory_seconds=g.trajectory_seconds,
            rate=self.rate_hz,
            augment_yz=g.augment_yz,
        )

    def windowing_spec(self) -> WindowingSpec:
        w = self.windowing
        return WindowingSpec(
            window_seconds=w.window_seconds,
            stride_seconds=w.stride_seconds,
            train_windows=w.train_windows,
            val_windows=w.val_windows,
        )

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            grid=self.grid_spec(),
            windowing=self.windowing_spec(),
            beam_pitch=self.geometry.beam_pitch_rad,
            beam_yaws=self.geometry.beam_yaws_rad,
            gnss_noise_sigma=self.gnss_noise_sigma,
        )

    def test_suite_spec(self) -> TestSuiteSpec:
        ts = self.test_suite
        return TestSuiteSpec(
            dvl_types={
                k: DvlTypeSpec(scale=v.scale_percent / 100.0, bias=v.bias, noise_sigma=v.noise_sigma)
                for k, v in ts.dvl_types.items()
            },
            calib_velocity=ts.calib_velocity,
            eval_velocities=ts.eval_velocities,
            calib_seconds=ts.calib_seconds,
            eval_seconds=ts.eval_seconds,
            rate=self.rate_hz,
            beam_pitch=self.geometry.beam_pitch_rad,
            beam_yaws=self.geometry.beam_yaws_rad,
            gnss_noise_sigma=self.gnss_noise_sigma,
        )

    def train_config(self, seed: int | None = None) -> TrainConfig:
        t = self.training
        return TrainConfig(
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            max_epochs=t.max_epochs,
            patience=t.patience,
            dropout=t.dropout,
            seed=t.seed if seed is None else seed,
        )


def _range_from(d: dict) -> RangeConfig:
    return RangeConfig(lower=float(d["lower"]), upper=float(d["upper"]), step=float(d["step"]))


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a plain (YAML-loaded) dict; unknown keys rejected."""
    data = dict(data or {})
    known = {
        "seed",
        "rate_hz",
        "gnss_noise_sigma",
        "geometry",
        "grid",
        "windowing",
        "test_suite",
        "training",
        "evaluation",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    try:
        kwargs = {}
        if "seed" in data:
            kwargs["seed"] = int(data["seed"])
        if "rate_hz" in data:
            kwargs["rate_hz"] = float(data["rate_hz"])
        if "gnss_noise_sigma" in data:
            kwargs["gnss_noise_sigma"] = float(data["gnss_noise_sigma"])
        if "geometry" in data:
            g = data["geometry"]
            kwargs["geometry"] = GeometryConfig(
                beam_pitch_deg=float(g["beam_pitch_deg"]),
                beam_yaws_deg=tuple(g["beam_yaws_deg"]),
            )
        if "grid" in data:
            g = data["grid"]
            kwargs["grid"] = GridConfig(
                x_velocity=_range_from(g["x_velocity"]),
                scale_percent=_range_from(g["scale_percent"]),
                bias=_range_from(g["bias"]),
                noise=_range_from(g["noise"]),
                repeats=int(g["repeats"]),
                trajectory_seconds=float(g["trajectory_seconds"]),
                augment_yz=bool(g["augment_yz"]),
            )
        if "windowing" in data:
            w = data["windowing"]
            kwargs["windowing"] = WindowingConfig(
                window_seconds=float(w["window_seconds"]),
                stride_seconds=float(w["stride_seconds"]),
                train_windows=int(w["train_windows"]),
                val_windows=int(w["val_windows"]),
            )
        if "test_suite" in data:
            ts = data["test_suite"]
            kwargs["test_suite"] = TestSuiteConfig(
                dvl_types={
                    int(k): DvlTypeConfig(
                        scale_percent=float(v["scale_percent"]),
                        bias=float(v["bias"]),
                        noise_sigma=float(v["noise_sigma"]),
                    )
                    for k, v in ts["dvl_types"].items()
                },
                calib_velocity=tuple(ts["calib_velocity"]),
                eval_velocities=tuple(tuple(row) for row in ts["eval_velocities"]),
                calib_seconds=float(ts["calib_seconds"]),
                eval_seconds=float(ts["eval_seconds"]),
            )
        if "training" in data:
            t = data["training"]
            kwargs["training"] = TrainingConfig(
                learning_rate=float(t["learning_rate"]),
                batch_size=int(t["batch_size"]),
                max_epochs=int(t["max_epochs"]),
                patience=int(t["patience"]),
                dropout=float(t["dropout"]),
                window_n=int(t["window_n"]),
                seed=int(t["seed"]),
            )
        if "evaluation" in data:
            e = data["evaluation"]
            kwargs["evaluation"] = EvaluationConfig(
                runs=int(e["runs"]),
                calibration_windows=tuple(e["calibration_windows"]),
                baseline_window=float(e["baseline_window"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad config value: {exc}") from exc
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    data = asdict(cfg)
    data["geometry"]["beam_yaws_deg"] = list(cfg.geometry.beam_yaws_deg)
    data["test_suite"]["calib_velocity"] = list(cfg.test_suite.calib_velocity)
    data["test_suite"]["eval_velocities"] = [list(row) for row in cfg.test_suite.eval_velocities]
    data["evaluation"]["calibration_windows"] = list(cfg.evaluation.calibration_windows)
    return data


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"no config file at {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def config_hash(cfg: ExperimentConfig) -> str:
    import hashlib
    import json

    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
