"""Loss, optimisers, the poly learning-rate schedule and the training loop."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .model import LETNet
from .nn import Parameter
from .tensor import Tensor, make_result

log = logging.getLogger(__name__)

IGNORE_INDEX = 255


def poly_lr(initial: float, iteration: int, max_iteration: int, power: float = 0.9) -> float:
    """``initial * (1 - iteration / max_iteration) ** power``."""
    if max_iteration <= 0:
        raise ConfigError(f"max_iteration must be positive, got {max_iteration}")
    if not 0 <= iteration <= max_iteration:
        raise ConfigError(f"iteration {iteration} outside [0, {max_iteration}]")
    return initial * (1.0 - iteration / max_iteration) ** power


def cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    weights: Sequence[float] | None = None,
    ignore_index: int = IGNORE_INDEX,
) -> Tensor:
    """Mean over non-ignored pixels of ``-w[y] * log softmax(logits)[y]``.

    ``logits`` is N x K x H x W, ``labels`` N x H x W integers.  If every
    pixel is ignored the loss is 0 (with zero gradient) and a warning is
    emitted.
    """
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0], *logits.shape[2:]):
        raise DataError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    k = logits.shape[1]
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"label {int(labels[pos])} at pixel (n, y, x)={pos} outside [0, {k}) and not ignore_index")
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ConfigError(f"class weights must have {k} entries, got {w.shape}")
    count = int(valid.sum())
    dt = logits.dtype
    if count == 0:
        warnings.warn("cross_entropy: every pixel is ignored; returning 0", RuntimeWarning, stacklevel=2)
        return make_result(np.zeros((), dtype=dt), (logits,), lambda g: (np.zeros_like(logits.data),))

    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(shifted, safe[:, None], axis=1)[:, 0] - np.log(total[:, 0])
    pix_w = np.where(valid, w.astype(dt)[safe], 0).astype(dt)
    loss = -(pix_w * picked).sum() / dt.type(count)

    def backward(g):
        probs = exp / total
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, safe[:, None], 1, axis=1)
        scale = (pix_w / dt.type(count))[:, None] * g
        return ((probs - onehot) * scale,)

    return make_result(np.asarray(loss, dtype=dt), (logits,), backward)


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise ConfigError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape}")


def sgd_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: dict,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> list[np.ndarray]:
    """In-place SGD with momentum and coupled weight decay.

    ``v <- momentum * v + (grad + wd * param)``; ``param <- param - lr * v``.
    """
    _check_shapes(params, grads)
    velocity = state.setdefault("velocity", [np.zeros_like(p) for p in params])
    for p, g, v in zip(params, grads, velocity):
        d = g + weight_decay * p if weight_decay else g
        v *= momentum
        v += d
        p -= (lr * v).astype(p.dtype, copy=False)
    return params


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> list[np.ndarray]:
    """In-place bias-corrected Adam; weight decay is added to the gradient."""
    _check_shapes(params, grads)
    m1 = state.setdefault("m", [np.zeros_like(p) for p in params])
    m2 = state.setdefault("v", [np.zeros_like(p) for p in params])
    state["t"] = t = state.get("t", 0) + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, m1, m2):
        d = g + weight_decay * p if weight_decay else g
        m *= beta1
        m += (1 - beta1) * d
        v *= beta2
        v += (1 - beta2) * d * d
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params


@dataclass
class TrainConfig:
    batch_size: int = 8
    max_iterations: int = 2000
    optimizer: str = "sgd"
    momentum: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    lr: float = 4.5e-2
    power: float = 0.9
    class_weights: tuple[float, ...] | None = None
    ignore_index: int = IGNORE_INDEX
    seed: int = 0
    log_every: int = 10
    flip: bool = False
    crop: tuple[int, int] | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be > 0, got {self.lr}")
        if self.power <= 0:
            raise ConfigError(f"train.power must be > 0, got {self.power}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.max_iterations < 0:
            raise ConfigError(f"train.max_iterations must be >= 0, got {self.max_iterations}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"train.optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.log_every < 1:
            raise ConfigError("train.log_every must be >= 1")


@dataclass
class TrainState:
    iteration: int = 0
    slots: dict = field(default_factory=dict)
    rng_state: dict | None = None
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)


class MetricsCSV:
    """Append-only ``iteration,lr,loss`` sink, flushed every ``flush_every`` records."""

    def __init__(self, path: str | Path, flush_every: int = 1):
        self.path = Path(path)
        self.flush_every = flush_every
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._pending = 0
        if new:
            self._writer.writerow(["iteration", "lr", "loss"])
            self._fh.flush()

    def __call__(self, iteration: int, lr: float, loss: float) -> None:
        self._writer.writerow([iteration, repr(lr), repr(loss)])
        self._pending += 1
        if self._pending >= self.flush_every:
            self._fh.flush()
            self._pending = 0

    def close(self) -> None:
        self._fh.close()


Sample = tuple[np.ndarray, np.ndarray]
Sink = Callable[[int, float, float], None]


def _augment(images: np.ndarray, labels: np.ndarray, cfg: TrainConfig, rng: np.random.Generator):
    if cfg.crop is not None:
        ch, cw = cfg.crop
        h, w = labels.shape[-2:]
        if ch > h or cw > w:
            raise ConfigError(f"train.crop {ch}x{cw} larger than sample {h}x{w}")
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        images = images[..., top:top + ch, left:left + cw]
        labels = labels[..., top:top + ch, left:left + cw]
    if cfg.flip and rng.random() < 0.5:
        images = images[..., ::-1]
        labels = labels[..., ::-1]
    return np.ascontiguousarray(images), np.ascontiguousarray(labels)


def train(
    model: LETNet,
    dataset: Sequence[Sample],
    cfg: TrainConfig,
    sinks: Iterable[Sink] = (),
) -> TrainState:
    """Run ``cfg.max_iterations`` SGD/Adam iterations with the poly schedule.

    Batches are drawn from a seeded permutation of ``dataset`` that is
    reshuffled each epoch, so the sample order depends only on ``cfg.seed``.
    """
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    sinks = list(sinks)
    rng = np.random.default_rng(cfg.seed)
    state = TrainState()
    params: list[Parameter] = model.parameters()
    model.train()
    order = rng.permutation(len(dataset))
    cursor = 0
    for it in range(cfg.max_iterations):
        idx = []
        for _ in range(cfg.batch_size):
            if cursor == len(order):
                order = rng.permutation(len(dataset))
                cursor = 0
            idx.append(int(order[cursor]))
            cursor += 1
        images = np.stack([dataset[i][0] for i in idx]).astype(np.float32)
        labels = np.stack([dataset[i][1] for i in idx])
        images, labels = _augment(images, labels, cfg, rng)

        lr = poly_lr(cfg.lr, it, cfg.max_iterations, cfg.power)
        # divergence surfaces as a NumericError, not as numpy overflow warnings
        with np.errstate(over="ignore", invalid="ignore"):
            model.zero_grad()
            loss = cross_entropy(model(Tensor(images)), labels, cfg.class_weights, cfg.ignore_index)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at iteration {it}: loss={value}, lr={lr}")
            loss.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            datas = [p.data for p in params]
            if cfg.optimizer == "sgd":
                sgd_step(datas, grads, state.slots, lr, cfg.momentum, cfg.weight_decay)
            else:
                adam_step(datas, grads, state.slots, lr, cfg.momentum, cfg.beta2, cfg.eps, cfg.weight_decay)
        state.iteration = it + 1
        state.losses.append(value)
        state.lrs.append(lr)
        if it % cfg.log_every == 0 or it == cfg.max_iterations - 1:
            log.info("iter %d lr %.6g loss %.6f", it, lr, value)
            for sink in sinks:
                sink(it, lr, value)
    state.rng_state = rng.bit_generator.state
    model.eval()
    return state
