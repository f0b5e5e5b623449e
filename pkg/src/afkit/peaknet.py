"""Trainable temporal peak estimator: a small 1D conv net with a softmax head.

The encoder collapses a multichannel pulse clip into a single logit series of
the same length; the softmax head turns that into a probability series over
time, supervised only by normalized binary peak labels through one of the
distribution losses. Forward, backward, and the SGD loop are hand-rolled for
the fixed op set (conv1d, ReLU, softmax + loss), which keeps every gradient
auditable against finite differences.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AfkitError, DomainError, ShapeError
from .losses import LOSS_KINDS, loss_on_logits, softmax_head
from .series import (
    IBISeries,
    PeakTrain,
    ProbSeries,
    SampledSeries,
    detect_peaks,
    ibi_from_peaks,
    ibi_metrics,
)

# (in_ch, out_ch, kernel_len, activation). Four same-padded layers put a full
# beat cycle (~1.6 s at 30 Hz) inside the receptive field.
DEFAULT_ARCH = ((3, 24, 13, "relu"), (24, 24, 13, "relu"),
                (24, 24, 13, "relu"), (24, 1, 13, "linear"))

ACTIVATIONS = ("relu", "linear")
PADDINGS = ("zero", "circular")
OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class ConvLayer:
    weight: np.ndarray  # (out_ch, in_ch, k)
    bias: np.ndarray  # (out_ch,)
    activation: str

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 3 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ShapeError("conv layer weight must be (out, in, k) with matching bias")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ShapeError("layer parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class EncoderParams:
    layers: tuple[ConvLayer, ...]

    def arch(self) -> tuple[tuple[int, int, int, str], ...]:
        return tuple((l.weight.shape[1], l.weight.shape[0], l.weight.shape[2],
                      l.activation) for l in self.layers)

    @property
    def in_channels(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def receptive_field(self) -> int:
        return 1 + sum(l.weight.shape[2] - 1 for l in self.layers)

    @property
    def param_count(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def flatten(self) -> np.ndarray:
        parts = []
        for l in self.layers:
            parts.append(l.weight.ravel())
            parts.append(l.bias.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, arch, flat: np.ndarray) -> "EncoderParams":
        flat = np.asarray(flat, dtype=float)
        layers = []
        pos = 0
        for in_ch, out_ch, k, act in arch:
            wn = out_ch * in_ch * k
            w = flat[pos:pos + wn].reshape(out_ch, in_ch, k)
            pos += wn
            b = flat[pos:pos + out_ch]
            pos += out_ch
            layers.append(ConvLayer(w.copy(), b.copy(), act))
        if pos != flat.size:
            raise ShapeError("flat parameter vector does not match architecture")
        return cls(tuple(layers))

    @classmethod
    def init(cls, arch=DEFAULT_ARCH, seed: int = 0) -> "EncoderParams":
        """Symmetric uniform init with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
        rng = np.random.default_rng(seed)
        layers = []
        for in_ch, out_ch, k, act in arch:
            a = np.sqrt(6.0 / (in_ch * k + out_ch * k))
            w = rng.uniform(-a, a, size=(out_ch, in_ch, k))
            layers.append(ConvLayer(w, np.zeros(out_ch), act))
        return cls(tuple(layers))


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs. The step-decay epochs scale with ``epochs`` so the
    default schedule (drops at 2/3 and 7/8 of the run) survives resizing."""

    epochs: int = 60
    learning_rate: float = 1e-3
    batch_size: int = 4
    loss_kind: str = "ws"
    seed: int = 0
    clip_len_samples: int = 512
    optimizer: str = "adam"
    momentum: float = 0.9
    lr_drop_fracs: tuple[float, ...] = (2 / 3, 7 / 8)
    lr_drop_factor: float = 0.3

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise DomainError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise DomainError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"optimizer must be one of {OPTIMIZERS}")

    def drop_epochs(self) -> tuple[int, ...]:
        return tuple(int(self.epochs * f) for f in self.lr_drop_fracs)


# Published-scale settings the toy defaults were scaled down from, kept as a
# named reference configuration.
REFERENCE_TRAIN_CONFIG = TrainConfig(epochs=45, learning_rate=1e-4, batch_size=4,
                                     loss_kind="ws", clip_len_samples=512,
                                     optimizer="sgd", lr_drop_fracs=())


@dataclass(frozen=True)
class TrainRecord:
    epoch_losses: tuple[float, ...]
    val_ibi_mae_ms: float
    wall_clock_s: float


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _pad(x: np.ndarray, pad_l: int, pad_r: int, padding: str) -> np.ndarray:
    if padding == "zero":
        return np.pad(x, ((0, 0), (pad_l, pad_r)))
    return np.concatenate([x[:, x.shape[1] - pad_l:], x, x[:, :pad_r]], axis=1)


def _conv_windows(xp: np.ndarray, k: int) -> np.ndarray:
    """(C, T_pad) -> (C * k, T) row-major over (channel, tap)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # (C, T, k)
    c, t, _ = win.shape
    return win.transpose(0, 2, 1).reshape(c * k, t)


def _clip_array(clip: SampledSeries) -> np.ndarray:
    x = np.asarray(clip.values, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def _forward_cached(params: EncoderParams, x: np.ndarray, padding: str):
    """Returns (logits (T,), cache of per-layer inputs and pre-activations)."""
    cache = []
    h = x
    for layer in params.layers:
        k = layer.weight.shape[2]
        pad_l = (k - 1) // 2
        pad_r = k - 1 - pad_l
        windows = _conv_windows(_pad(h, pad_l, pad_r, padding), k)
        z = layer.weight.reshape(layer.weight.shape[0], -1) @ windows + layer.bias[:, None]
        cache.append((h, windows, z))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h[0], cache


def forward(params: EncoderParams, clip: SampledSeries,
            padding: str = "zero") -> SampledSeries:
    """Map a (channels, time) clip to a same-length logit series."""
    if padding not in PADDINGS:
        raise DomainError(f"padding must be one of {PADDINGS}")
    x = _clip_array(clip)
    if x.shape[0] != params.in_channels:
        raise ShapeError(f"clip has {x.shape[0]} channels, model expects {params.in_channels}")
    if x.shape[1] < params.receptive_field:
        raise ShapeError("clip shorter than the model's receptive field")
    logits, _ = _forward_cached(params, x, padding)
    return SampledSeries(logits, clip.rate_hz, clip.t0_s)


def backward(params: EncoderParams, clip: SampledSeries, target: ProbSeries,
             loss_kind: str, padding: str = "zero"):
    """Loss for (softmax(forward(clip)), target) and gradients for every parameter.

    Returns ``(loss, grads)`` with ``grads`` a list of (dW, db) matching
    ``params.layers``.
    """
    if padding not in PADDINGS:
        raise DomainError(f"padding must be one of {PADDINGS}")
    x = _clip_array(clip)
    if x.shape[0] != params.in_channels:
        raise ShapeError(f"clip has {x.shape[0]} channels, model expects {params.in_channels}")
    if x.shape[1] != len(target):
        raise ShapeError("target length must match clip length")
    logits, cache = _forward_cached(params, x, padding)
    loss, grad_logits = loss_on_logits(logits, target, loss_kind, rate_hz=clip.rate_hz)

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    d_out = grad_logits[None, :]
    for li in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[li]
        h_in, windows, z = cache[li]
        dz = d_out * (z > 0) if layer.activation == "relu" else d_out
        db = dz.sum(axis=1)
        dw = (dz @ windows.T).reshape(layer.weight.shape)
        grads[li] = (dw, db)
        if li == 0:
            break
        k = layer.weight.shape[2]
        pad_l = (k - 1) // 2
        pad_r = k - 1 - pad_l
        t = h_in.shape[1]
        dxp = np.zeros((h_in.shape[0], t + k - 1))
        for dk in range(k):
            dxp[:, dk:dk + t] += layer.weight[:, :, dk].T @ dz
        dx = dxp[:, pad_l:pad_l + t].copy()
        if padding == "circular":
            if pad_l:
                dx[:, t - pad_l:] += dxp[:, :pad_l]
            if pad_r:
                dx[:, :pad_r] += dxp[:, pad_l + t:]
        d_out = dx
    return loss, grads


# ---------------------------------------------------------------------------
# training loop and peak read-out
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainExample:
    clip: SampledSeries
    target: ProbSeries
    subject_id: int = -1


class _Sgd:
    def __init__(self, params: EncoderParams, momentum: float):
        self.momentum = momentum
        self.vel = [[np.zeros_like(l.weight), np.zeros_like(l.bias)]
                    for l in params.layers]

    def step(self, params: EncoderParams, grads, lr: float) -> EncoderParams:
        layers = []
        for layer, v, (gw, gb) in zip(params.layers, self.vel, grads):
            v[0] = self.momentum * v[0] - lr * gw
            v[1] = self.momentum * v[1] - lr * gb
            layers.append(ConvLayer(layer.weight + v[0], layer.bias + v[1],
                                    layer.activation))
        return EncoderParams(tuple(layers))


class _Adam:
    def __init__(self, params: EncoderParams,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [[np.zeros_like(l.weight), np.zeros_like(l.bias)]
                  for l in params.layers]
        self.v = [[np.zeros_like(l.weight), np.zeros_like(l.bias)]
                  for l in params.layers]

    def step(self, params: EncoderParams, grads, lr: float) -> EncoderParams:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        layers = []
        for layer, m, v, g in zip(params.layers, self.m, self.v, grads):
            new = []
            for j, (p, gj) in enumerate(((layer.weight, g[0]), (layer.bias, g[1]))):
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj
                new.append(p - lr * (m[j] / bc1) / (np.sqrt(v[j] / bc2) + self.eps))
            layers.append(ConvLayer(new[0], new[1], layer.activation))
        return EncoderParams(tuple(layers))


def train(dataset: list[TrainExample], cfg: TrainConfig,
          val: list[tuple[SampledSeries, PeakTrain]] | None = None,
          arch=DEFAULT_ARCH) -> tuple[EncoderParams, TrainRecord]:
    """Minibatch training over per-clip losses with a step-decayed learning rate.

    Deterministic for a fixed config: shuffling comes from the config seed and
    batch gradients are averaged in a fixed order.
    """
    if not dataset:
        raise DomainError("dataset is empty")
    for ex in dataset:
        x = _clip_array(ex.clip)
        if x.shape[1] != cfg.clip_len_samples or len(ex.target) != cfg.clip_len_samples:
            raise ShapeError("all clips and targets must match cfg.clip_len_samples")
        if x.shape[0] != arch[0][0]:
            raise ShapeError("clip channel count must match the architecture")

    t_start = time.perf_counter()
    params = EncoderParams.init(arch, seed=cfg.seed)
    opt = _Adam(params) if cfg.optimizer == "adam" else _Sgd(params, cfg.momentum)
    rng = np.random.default_rng(cfg.seed + 1)
    drops = cfg.drop_epochs()

    lr = cfg.learning_rate
    epoch_losses = []
    for epoch in range(cfg.epochs):
        if epoch in drops:
            lr *= cfg.lr_drop_factor
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = [[np.zeros_like(l.weight), np.zeros_like(l.bias)] for l in params.layers]
            for idx in batch:
                ex = dataset[idx]
                loss, grads = backward(params, ex.clip, ex.target, cfg.loss_kind)
                total += loss
                for a, g in zip(acc, grads):
                    a[0] += g[0]
                    a[1] += g[1]
            scale = 1.0 / len(batch)
            mean_grads = [(a[0] * scale, a[1] * scale) for a in acc]
            params = opt.step(params, mean_grads, lr)
        epoch_losses.append(total / len(dataset))

    val_mae = validation_ibi_mae(params, val) if val else float("nan")
    record = TrainRecord(tuple(epoch_losses), val_mae,
                         time.perf_counter() - t_start)
    return params, record


# The probability series is a spike train, so the read-out asks for a stiffer
# prominence than raw pulse signals need.
READOUT_PROMINENCE = 1.0


def infer_peaks(params: EncoderParams, clip: SampledSeries, padding: str = "zero",
                prominence_factor: float = READOUT_PROMINENCE) -> PeakTrain:
    """Softmax the encoder output and read peaks off the probability series."""
    prob = softmax_head(forward(params, clip, padding))
    return detect_peaks(prob.as_series(clip.t0_s), prominence_factor=prominence_factor)


def validation_ibi_mae(params: EncoderParams,
                       val: list[tuple[SampledSeries, PeakTrain]]) -> float:
    """Mean absolute IBI error (ms) over held-out clips.

    Clips whose prediction yields fewer than two valid intervals contribute the
    clip's mean reference interval, i.e. the error at which the per-clip IBI
    accuracy bottoms out.
    """
    errors = []
    for clip, true_peaks in val:
        true_ibi = ibi_from_peaks(true_peaks)
        if len(true_ibi) < 2:
            continue
        fallback = float(np.mean(true_ibi.intervals_ms))
        try:
            pred = infer_peaks(params, clip)
            pred_ibi = ibi_from_peaks(pred)
            m = ibi_metrics(pred_ibi, true_ibi, clip.duration_s)
            errors.append(min(m["ae_ms"], fallback))
        except AfkitError:
            errors.append(fallback)
    if not errors:
        raise DomainError("no validation clip produced a reference IBI series")
    return float(np.mean(errors))


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------


def save_model(path, params: EncoderParams, seed: int, loss_kind: str) -> None:
    doc = {
        "arch": [list(spec) for spec in params.arch()],
        "params": params.flatten().tolist(),
        "seed": seed,
        "loss_kind": loss_kind,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path) -> tuple[EncoderParams, dict]:
    doc = json.loads(Path(path).read_text())
    arch = [tuple(spec) for spec in doc["arch"]]
    params = EncoderParams.from_flat(arch, np.asarray(doc["params"], dtype=float))
    return params, {"seed": doc["seed"], "loss_kind": doc["loss_kind"]}
