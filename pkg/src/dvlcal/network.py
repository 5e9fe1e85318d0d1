"""Multi-head convolutional regressor for DVL error terms.

Two convolution heads process a 6 x n measurement window: a 2D head over the
stacked DVL+GNSS rows whose first layer uses a row dilation of 3 so each
kernel pairs the same axis of both sensors, and a 1D head over the
DVL-minus-GNSS difference computed inside the network. Their flattened
outputs feed four fully connected layers (TanH + dropout after each except
the last) ending at the error-model arity (1 or 3).
"""
from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import (
    ConfigurationError,
    DataError,
    DivergenceError,
    EmKind,
    ErrorModel,
    VelocitySeries,
)
from .dataset import stack_series

MIN_WINDOW_N = 10
LEAKY_SLOPE = 0.01
DROPOUT_P = 0.2

CONV2D_CHANNELS = (8, 16, 32)
CONV1D_CHANNELS = (8, 16)
FC_WIDTHS = (128, 64, 32)
# small enough that normalized batch variance sits within 1e-5 of unity even
# for low-variance channels
BN_EPS = 1e-8

CHECKPOINT_MAGIC = b"DVLCALC1"


@dataclass(frozen=True)
class WindowTensor:
    """One 6 x n measurement window; rows are DVL x,y,z then GNSS x,y,z."""

    stacked: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.stacked, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != 6:
            raise DataError(f"window must be (6, n), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("window has non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "stacked", arr)

    @property
    def n(self) -> int:
        return self.stacked.shape[1]

    @property
    def sub(self) -> np.ndarray:
        """DVL minus GNSS rows, (3, n)."""
        return self.stacked[0:3] - self.stacked[3:6]

    @classmethod
    def from_series(cls, series: VelocitySeries) -> "WindowTensor":
        return cls(stack_series(series))


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings. Dropout is pinned at 0.2 by the architecture."""

    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    dropout: float = DROPOUT_P
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("learning_rate, batch_size, max_epochs must be positive")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.dropout != DROPOUT_P:
            raise ConfigurationError(f"dropout is fixed at {DROPOUT_P}")


class CalibrationNet(nn.Module):
    """The two-head CNN + FC regressor for one error-model kind."""

    def __init__(self, em_kind: EmKind, window_n: int):
        super().__init__()
        em_kind = EmKind(em_kind)
        if window_n < MIN_WINDOW_N:
            raise ConfigurationError(
                f"window_n must be >= {MIN_WINDOW_N} (receptive field), got {window_n}"
            )
        self.em_kind = em_kind
        self.window_n = int(window_n)
        self.output_dim = em_kind.output_dim

        c2 = CONV2D_CHANNELS
        self.head2d = nn.Sequential(
            # batch norm precedes each convolution; first kernel is dilated by
            # 3 along rows so it pairs DVL axis j with GNSS axis j
            nn.BatchNorm2d(1, eps=BN_EPS),
            nn.Conv2d(1, c2[0], kernel_size=(2, 3), dilation=(3, 1)),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.BatchNorm2d(c2[0], eps=BN_EPS),
            nn.Conv2d(c2[0], c2[1], kernel_size=(2, 3)),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.BatchNorm2d(c2[1], eps=BN_EPS),
            nn.Conv2d(c2[1], c2[2], kernel_size=(2, 3)),
            nn.LeakyReLU(LEAKY_SLOPE),
        )
        c1 = CONV1D_CHANNELS
        self.head1d = nn.Sequential(
            nn.BatchNorm1d(3, eps=BN_EPS),
            nn.Conv1d(3, c1[0], kernel_size=3),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.BatchNorm1d(c1[0], eps=BN_EPS),
            nn.Conv1d(c1[0], c1[1], kernel_size=3),
            nn.LeakyReLU(LEAKY_SLOPE),
        )
        flat = c2[2] * (window_n - 6) + c1[1] * (window_n - 4)
        w = FC_WIDTHS
        self.fc = nn.Sequential(
            nn.Linear(flat, w[0]),
            nn.Tanh(),
            nn.Dropout(DROPOUT_P),
            nn.Linear(w[0], w[1]),
            nn.Tanh(),
            nn.Dropout(DROPOUT_P),
            nn.Linear(w[1], w[2]),
            nn.Tanh(),
            nn.Dropout(DROPOUT_P),
            nn.Linear(w[2], self.output_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[1] != 6 or x.shape[2] != self.window_n:
            raise DataError(f"expected input (batch, 6, {self.window_n}), got {tuple(x.shape)}")
        sub = x[:, 0:3, :] - x[:, 3:6, :]
        h2 = self.head2d(x.unsqueeze(1)).flatten(1)
        h1 = self.head1d(sub).flatten(1)
        return self.fc(torch.cat([h2, h1], dim=1))


def build_model(em_kind: EmKind, window_n: int, seed: int) -> CalibrationNet:
    """Deterministically initialized model for one error-model kind."""
    torch.manual_seed(int(seed))
    model = CalibrationNet(em_kind, window_n)
    model.eval()
    return model


def predict_window(model: CalibrationNet, window: WindowTensor) -> np.ndarray:
    """Eval-mode forward on a single window."""
    if window.n != model.window_n:
        raise DataError(f"window has n={window.n}, model expects {model.window_n}")
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(window.stacked, dtype=np.float32))
        return model(x.unsqueeze(0)).squeeze(0).numpy().astype(float)


def estimate_error_term(
    model: CalibrationNet, series: VelocitySeries, window_n: int | None = None
) -> ErrorModel:
    """Average the model output over consecutive non-overlapping windows.

    The series is cut into floor(N / n) windows from the start; a series
    shorter than one window is an error.
    """
    n = model.window_n if window_n is None else int(window_n)
    if n != model.window_n:
        raise DataError(f"window_n {n} does not match model ({model.window_n})")
    count = len(series) // n
    if count < 1:
        raise DataError(f"series of {len(series)} samples is shorter than one {n}-sample window")
    stacked = stack_series(series)
    windows = np.stack([stacked[:, i * n : (i + 1) * n] for i in range(count)])
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(windows.astype(np.float32))).numpy().astype(float)
    mean = out.mean(axis=0)
    kind = model.em_kind
    if kind is EmKind.EM1:
        return ErrorModel.scalar_scale(mean[0])
    if kind is EmKind.EM2:
        return ErrorModel.vector_scale(mean)
    if kind is EmKind.EM3:
        return ErrorModel.scalar_bias(mean[0])
    return ErrorModel.vector_bias(mean)


@dataclass
class TrainResult:
    """Per-epoch loss history plus best-checkpoint bookkeeping."""

    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    initial_val_loss: float = float("inf")
    epochs_run: int = 0


def _eval_loss(model: CalibrationNet, x: torch.Tensor, y: torch.Tensor, batch: int) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(x), batch):
            xb, yb = x[i : i + batch], y[i : i + batch]
            total += float(nn.functional.mse_loss(model(xb), yb, reduction="sum"))
    return total / (len(x) * y.shape[1])


def train_model(
    model: CalibrationNet,
    train_xy: tuple[np.ndarray, np.ndarray],
    val_xy: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    epoch_offset: int = 0,
    log=None,
) -> TrainResult:
    """Minimize MSE against the error-term targets; keep the best-validation
    parameters. Deterministic for a fixed config seed.
    """
    x_tr = torch.from_numpy(np.ascontiguousarray(train_xy[0], dtype=np.float32))
    y_tr = torch.from_numpy(np.ascontiguousarray(train_xy[1], dtype=np.float32))
    x_va = torch.from_numpy(np.ascontiguousarray(val_xy[0], dtype=np.float32))
    y_va = torch.from_numpy(np.ascontiguousarray(val_xy[1], dtype=np.float32))
    if y_tr.shape[1] != model.output_dim:
        raise DataError(f"target dim {y_tr.shape[1]} != model output {model.output_dim}")

    torch.manual_seed(cfg.seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD1CE]))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    result = TrainResult()
    result.initial_val_loss = _eval_loss(model, x_va, y_va, 4096)
    result.best_val_loss = result.initial_val_loss
    best_state = copy.deepcopy(model.state_dict())
    since_best = 0

    for epoch in range(1 + epoch_offset, cfg.max_epochs + 1 + epoch_offset):
        model.train()
        perm = shuffle_rng.permutation(len(x_tr))
        total = 0.0
        for bi, start in enumerate(range(0, len(perm), cfg.batch_size)):
            idx = torch.from_numpy(perm[start : start + cfg.batch_size])
            opt.zero_grad()
            loss = nn.functional.mse_loss(model(x_tr[idx]), y_tr[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {bi}")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        train_loss = total / len(x_tr)
        val_loss = _eval_loss(model, x_va, y_va, 4096)
        result.history.append((epoch, train_loss, val_loss))
        result.epochs_run += 1
        if log is not None:
            log(f"epoch {epoch}: train {train_loss:.3e} val {val_loss:.3e}")
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    return result


def save_checkpoint(
    path,
    model: CalibrationNet,
    train_config: TrainConfig,
    dataset_fingerprint: dict | None = None,
    epochs_completed: int = 0,
    best_val_loss: float | None = None,
) -> None:
    """Self-describing binary container; save -> load -> save is bit-identical."""
    state = model.state_dict()
    names = sorted(state.keys())
    tensors = []
    blobs = []
    for name in names:
        arr = state[name].detach().cpu().numpy()
        blob = np.ascontiguousarray(arr).tobytes()
        tensors.append(
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "nbytes": len(blob)}
        )
        blobs.append(blob)
    header = {
        "format": "dvlcal-checkpoint",
        "version": 1,
        "em": model.em_kind.value,
        "window_n": model.window_n,
        "output_dim": model.output_dim,
        "train_config": asdict(train_config),
        "dataset_fingerprint": dataset_fingerprint or {},
        "epochs_completed": int(epochs_completed),
        "best_val_loss": None if best_val_loss is None else float(best_val_loss),
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


@dataclass
class CheckpointBundle:
    model: CalibrationNet
    header: dict


def load_checkpoint(path) -> CheckpointBundle:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no checkpoint at {path}")
    raw = path.read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a dvlcal checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off : off + hlen].decode())
    off += hlen
    state = {}
    for spec in header["tensors"]:
        blob = raw[off : off + spec["nbytes"]]
        off += spec["nbytes"]
        arr = np.frombuffer(blob, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"]).copy()
        state[spec["name"]] = torch.from_numpy(arr)
    model = CalibrationNet(EmKind(header["em"]), header["window_n"])
    model.load_state_dict(state)
    model.eval()
    return CheckpointBundle(model=model, header=header)


@dataclass
class GradCheckReport:
    checked: int
    worst_abs_diff: float
    worst_rel_err: float
    failures: list


def finite_difference_gradcheck(
    model: CalibrationNet,
    x: np.ndarray,
    y: np.ndarray,
    eps: float = 1e-4,
    rtol: float = 1e-3,
    atol: float = 1e-7,
    max_entries_per_tensor: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare autograd gradients of the MSE loss against central finite
    differences, entry by entry, in double precision.

    Batch normalization runs in train mode (batch statistics on the gradient
    path); dropout layers are forced to eval so the loss is deterministic.
    An entry fails when |analytic - numeric| > atol + rtol * max(|a|, |n|).
    """
    net = copy.deepcopy(model).double()
    net.train()
    for mod in net.modules():
        if isinstance(mod, nn.Dropout):
            mod.eval()
    xt = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64))
    yt = torch.from_numpy(np.ascontiguousarray(y, dtype=np.float64))

    def loss_value() -> float:
        with torch.no_grad():
            return float(nn.functional.mse_loss(net(xt), yt))

    net.zero_grad()
    nn.functional.mse_loss(net(xt), yt).backward()
    grads = {name: p.grad.detach().clone() for name, p in net.named_parameters()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(checked=0, worst_abs_diff=0.0, worst_rel_err=0.0, failures=[])
    with torch.no_grad():
        for name, p in net.named_parameters():
            flat = p.view(-1)
            g = grads[name].view(-1)
            count = flat.numel()
            if max_entries_per_tensor is not None and count > max_entries_per_tensor:
                entries = rng.choice(count, size=max_entries_per_tensor, replace=False)
            else:
                entries = range(count)
            for i in entries:
                orig = float(flat[i])
                flat[i] = orig + eps
                up = loss_value()
                flat[i] = orig - eps
                down = loss_value()
                flat[i] = orig
                numeric = (up - down) / (2.0 * eps)
                analytic = float(g[i])
                diff = abs(analytic - numeric)
                scale = max(abs(analytic), abs(numeric))
                rel = diff / scale if scale > 0 else 0.0
                report.checked += 1
                report.worst_abs_diff = max(report.worst_abs_diff, diff)
                if diff > atol + rtol * scale:
                    report.failures.append((name, int(i), analytic, numeric))
                if scale > atol:
                    report.worst_rel_err = max(report.worst_rel_err, rel)
    return report
