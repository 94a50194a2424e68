"""Quantization-aware training with full-precision shadow weights.

The forward pass sees quantized weights and feature maps; gradients flow
back through the quantized weights and through each quantizer as a clipped
straight-through estimator, and SGD with momentum updates the shadow copy.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, TrainingDiverged
from .quantcore import BINARY, FLOAT, PrecisionConfig, ste_backward
from .quantnet import layers as K
from .quantnet.network import (Network, bias_view, data_view, forward, output_shift,
                               weight_format, weight_view)
from .quantnet.specs import AVGPOOL, CONV, INNERPRODUCT, MAXPOOL, RELU

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs: int = 10
    lr_step: int = 4          # epochs between decays
    lr_gamma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InputError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_step < 1:
            raise InputError("batch_size and lr_step must be >= 1, epochs >= 0")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_gamma ** (epoch // self.lr_step)


@dataclass
class QatState:
    """Shadow network + the precision it is trained for.

    The radix map frozen at warm start lives in ``network.radix_map``.
    """

    network: Network
    precision: PrecisionConfig
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    step: int = 0

    @property
    def shadow(self) -> Network:
        return self.network

    @property
    def radix_map(self):
        return self.network.radix_map


QAT_LEARNING_RATE = 1e-3
BINARY_QAT_LEARNING_RATE = 3e-2


def qat_config(precision: PrecisionConfig, base: TrainConfig | None = None,
               epochs: int | None = None, learning_rate: float | None = None) -> TrainConfig:
    """Fine-tuning hyperparameters after warm start.

    Fine-tuning starts from a converged network, so the rate is 10x below
    the float default. Binary layers are coarse enough that they need a
    larger rate and no weight decay (decay only drags shadow weights across 0).
    """
    base = base or TrainConfig()
    binary = precision.scheme == BINARY
    lr = learning_rate if learning_rate is not None else (
        BINARY_QAT_LEARNING_RATE if binary else QAT_LEARNING_RATE)
    return replace(base, learning_rate=lr, epochs=base.epochs if epochs is None else epochs,
                   weight_decay=0.0 if binary else base.weight_decay)


def float_state(net: Network) -> QatState:
    return QatState(net, PrecisionConfig.float32())


def quantized_forward(state: QatState, batch, *, accumulate: str = "auto",
                      width: int = K.ADDER_WIDTH) -> np.ndarray:
    """Logits of the quantized network (see :func:`qnnlab.quantnet.network.forward`)."""
    return forward(state.network, batch, state.precision, accumulate=accumulate, width=width)


def warm_start(float_net: Network, cfg: PrecisionConfig, calib) -> QatState:
    """Copy the float parameters as shadow weights and freeze every radix point.

    Radix points come from one pass over ``calib`` in which each layer sees
    the already-quantized output of the previous one.
    """
    calib = np.asarray(calib, dtype=np.float64)
    if calib.size == 0 or calib.shape[0] == 0:
        raise InputError("warm_start needs a non-empty calibration batch")
    net = float_net.copy()
    net.radix_map = {}
    if cfg.quantizes:
        forward(net, calib, cfg, calibrate=True, accumulate="blas")
    return QatState(net, cfg)


def _forward_train(state: QatState, x):
    net, p = state.network, state.precision
    quant = p.scheme != FLOAT
    caches = []
    h = data_view(net, "in", x, p)
    for i, layer in enumerate(net.spec.layers):
        c = {"in": h}
        if layer.kind in (CONV, INNERPRODUCT):
            c["w"] = weight_view(net, i, p)
            c["shift"] = shift = output_shift(net, i, p)
            b = bias_view(net, i, p)
            zero = np.zeros_like(b)
            if layer.kind == CONV:
                out = K.conv2d_forward(h, c["w"], zero, layer.stride, layer.pad, name=f"layer {i}")
            else:
                out = K.fc_forward(h, c["w"], zero, name=f"layer {i}", batched=True)
            out = np.ldexp(out, shift) + b
        elif layer.kind == RELU:
            out = K.relu_forward(h)
        elif layer.kind == MAXPOOL:
            out, c["argmax"] = K.maxpool_forward(h, layer.kernel, layer.stride, layer.pad)
        elif layer.kind == AVGPOOL:
            out = K.avgpool_forward(h, layer.kernel, layer.stride, layer.pad)
        else:
            out = h
        if quant:
            c["pre"] = out
        h = data_view(net, f"a{i}", out, p)
        caches.append(c)
    return h, caches


def _backward(state: QatState, grad, caches) -> dict[str, np.ndarray]:
    net, p = state.network, state.precision
    quant = p.scheme != FLOAT
    grads = {}
    for i in reversed(range(len(net.spec.layers))):
        layer, c = net.spec.layers[i], caches[i]
        if quant:
            grad = ste_backward(grad, c["pre"], net.radix_map[f"a{i}"])
        if layer.kind in (CONV, INNERPRODUCT):
            gb = grad.reshape(-1, grad.shape[-1]).sum(axis=0)
            grad = np.ldexp(grad, c["shift"])
            if layer.kind == CONV:
                grad, gw, _ = K.conv2d_backward(grad, c["in"], c["w"], layer.stride, layer.pad)
            else:
                grad, gw, _ = K.fc_backward(grad, c["in"], c["w"])
            prm = net.params[i]
            if quant:
                gw = ste_backward(gw, prm["W"], weight_format(net, i, p))
                gb = ste_backward(gb, prm["b"], net.radix_map[f"b{i}"])
            grads[f"W{i}"], grads[f"b{i}"] = gw, gb
        elif layer.kind == RELU:
            grad = K.relu_backward(grad, c["in"])
        elif layer.kind == MAXPOOL:
            grad = K.maxpool_backward(grad, c["argmax"], c["in"].shape, layer.kernel,
                                      layer.stride, layer.pad)
        elif layer.kind == AVGPOOL:
            grad = K.avgpool_backward(grad, c["in"].shape, layer.kernel, layer.stride, layer.pad)
    return grads


def loss_and_grads(state: QatState, batch, labels):
    logits, caches = _forward_train(state, np.asarray(batch, dtype=np.float64))
    loss, g = K.softmax_cross_entropy(logits, np.asarray(labels))
    return loss, _backward(state, g, caches), logits


def train_step(state: QatState, batch, labels, train_cfg: TrainConfig):
    """One SGD-with-momentum step on the shadow weights. Returns ``(loss, state)``.

    Raises :class:`TrainingDiverged` (state untouched) if the loss or any
    updated parameter would be non-finite.
    """
    loss, grads, _ = loss_and_grads(state, batch, labels)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss at step {state.step}", state=state, step=state.step)
    lr = train_cfg.lr_at(state.epoch)
    mu, wd = train_cfg.momentum, train_cfg.weight_decay
    updates = []
    with np.errstate(over="ignore", invalid="ignore"):
        for name, arr in state.network.tensors():
            g = grads[name]
            if name.startswith("W") and wd:
                g = g + wd * arr
            v = state.velocity.get(name)
            v = -lr * g if v is None else mu * v - lr * g
            new = arr + v
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(new))):
                raise TrainingDiverged(f"non-finite {name} update at step {state.step}",
                                       state=state, step=state.step)
            updates.append((name, arr, v, new))
    for name, arr, v, new in updates:
        state.velocity[name] = v
        arr[...] = new
    state.step += 1
    return loss, state


def predict(state: QatState, images, batch_size: int = 500, **kw) -> np.ndarray:
    """Argmax classes. Sums use BLAS order unless ``accumulate`` says otherwise:
    identical to the adder tree for every quantized config up to 16 bits, and
    within double rounding of it for float and 32-bit fixed point."""
    kw.setdefault("accumulate", "blas")
    images = np.asarray(images)
    out = [quantized_forward(state, images[s: s + batch_size], **kw).argmax(axis=1)
           for s in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def evaluate(state: QatState, dataset, batch_size: int = 500, **kw) -> float:
    """Top-1 accuracy in [0, 1] of the quantized network on ``dataset`` (``.images``/``.labels``)."""
    images, labels = _unpack(dataset)
    if len(labels) == 0:
        raise InputError("evaluate needs a non-empty dataset")
    return float(np.mean(predict(state, images, batch_size, **kw) == labels))


def _unpack(dataset):
    if hasattr(dataset, "images"):
        return np.asarray(dataset.images), np.asarray(dataset.labels)
    images, labels = dataset
    return np.asarray(images), np.asarray(labels)


def fit(state: QatState, train, train_cfg: TrainConfig, val=None, epochs: int | None = None,
        on_epoch=None, max_steps: int | None = None) -> list[dict]:
    """Run ``epochs`` epochs of shuffled mini-batch training; returns one record per epoch.

    ``on_epoch(record, state)`` is called after each epoch.
    """
    images, labels = _unpack(train)
    epochs = train_cfg.epochs if epochs is None else epochs
    history = []
    for _ in range(epochs):
        rng = np.random.default_rng((train_cfg.seed, state.epoch))
        order = rng.permutation(len(labels))
        total, count = 0.0, 0
        for s in range(0, len(order), train_cfg.batch_size):
            idx = np.sort(order[s: s + train_cfg.batch_size])
            loss, _ = train_step(state, images[idx], labels[idx], train_cfg)
            total += loss * len(idx)
            count += len(idx)
            if max_steps is not None and state.step >= max_steps:
                break
        record = {"epoch": state.epoch + 1, "lr": train_cfg.lr_at(state.epoch),
                  "train_loss": total / max(count, 1)}
        state.epoch += 1
        if val is not None:
            record["val_acc"] = evaluate(state, val)
        log.debug("epoch %d %s", state.epoch, record)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record, state)
    return history
