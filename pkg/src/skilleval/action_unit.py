"""Action-unit network: stacked LSTM over per-frame FVs with a softmax head.

The last top-layer hidden state of a segment is its action-unit feature; the
classification head exists only to train that feature.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import lstm_core
from .checkpoint import read_tensors, write_tensors
from .lstm_core import AdamConfig, AdamState, ForwardResult, StackedLstm

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class AuConfig:
    hidden_dim: int = 128
    n_layers: int = 2
    n_classes: int = 48
    epochs: int = 30
    batch_size: int = 1
    lr: float = 1e-3
    clip_norm: float = 5.0
    stride: int = 1
    seed: int = 0

    def validate(self) -> "AuConfig":
        for name in ("hidden_dim", "n_layers", "n_classes", "batch_size", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        AdamConfig(lr=self.lr, clip_norm=self.clip_norm)
        return self


@dataclass
class AuNetwork:
    backbone: StackedLstm
    head_W: np.ndarray  # (n_classes, H)
    head_b: np.ndarray  # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.head_W.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.backbone.hidden_dim

    def parameters(self) -> dict[str, np.ndarray]:
        p = self.backbone.parameters("lstm")
        p["head.W"] = self.head_W
        p["head.b"] = self.head_b
        return p

    def copy(self) -> "AuNetwork":
        return AuNetwork(self.backbone.copy(), self.head_W.copy(), self.head_b.copy())


def init_au_network(input_dim: int, cfg: AuConfig) -> AuNetwork:
    backbone = lstm_core.init_params(input_dim, [cfg.hidden_dim] * cfg.n_layers, cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA0]))
    r = 1.0 / np.sqrt(cfg.hidden_dim)
    return AuNetwork(backbone, rng.uniform(-r, r, size=(cfg.n_classes, cfg.hidden_dim)), np.zeros(cfg.n_classes))


@dataclass
class ActionUnitFeature:
    values: np.ndarray
    source_unit_class: int | None = None
    source_position: int = 0


@dataclass
class AuOutput:
    probs: np.ndarray
    logits: np.ndarray
    feature: np.ndarray
    fwd: ForwardResult = field(repr=False)


def au_forward(net: AuNetwork, encoded: np.ndarray) -> AuOutput:
    fwd = lstm_core.forward(net.backbone, encoded)
    feature = fwd.last
    logits = net.head_W @ feature + net.head_b
    probs = np.exp(logits - logsumexp(logits))
    return AuOutput(probs=probs, logits=logits, feature=feature.copy(), fwd=fwd)


def au_loss(net: AuNetwork, batch: Sequence[tuple[np.ndarray, int]]) -> tuple[float, dict[str, np.ndarray]]:
    """Summed negative log-probability of the true class, and its gradients."""
    grads = {k: np.zeros_like(v) for k, v in net.parameters().items()}
    total = 0.0
    for encoded, cls in batch:
        if not 0 <= cls < net.n_classes:
            raise ValueError(f"class {cls} outside [0, {net.n_classes})")
        out = au_forward(net, encoded)
        total += float(logsumexp(out.logits) - out.logits[cls])
        d_logits = out.probs.copy()
        d_logits[cls] -= 1.0
        grads["head.W"] += np.outer(d_logits, out.feature)
        grads["head.b"] += d_logits
        d_top = np.zeros_like(out.fwd.top)
        d_top[-1] = net.head_W.T @ d_logits
        g, _ = lstm_core.backward(net.backbone, out.fwd, d_top, prefix="lstm")
        for k, v in g.items():
            grads[k] += v
    return total, grads


def predict(net: AuNetwork, encoded: np.ndarray) -> int:
    # argmax returns the lowest index on ties
    return int(np.argmax(au_forward(net, encoded).logits))


def classify_accuracy(net: AuNetwork, samples: Sequence[tuple[np.ndarray, int]]) -> float:
    if not samples:
        raise ValueError("cannot compute accuracy on an empty fold")
    hits = sum(predict(net, x) == y for x, y in samples)
    return hits / len(samples)


@dataclass
class TrainLog:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    heldout_metric: list[float] = field(default_factory=list)

    def write_csv(self, path, metric_name: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", metric_name])
            for e, l, m in zip(self.epoch, self.train_loss, self.heldout_metric):
                w.writerow([e, repr(l), repr(m)])


def train_au(
    net: AuNetwork,
    train: Sequence[tuple[np.ndarray, int]],
    cfg: AuConfig,
    heldout: Sequence[tuple[np.ndarray, int]] | None = None,
) -> tuple[AuNetwork, TrainLog]:
    """Shuffled mini-batch Adam on the summed cross-entropy; returns a trained copy."""
    cfg.validate()
    net = net.copy()
    hyper = AdamConfig(lr=cfg.lr, clip_norm=cfg.clip_norm)
    state = AdamState()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA1]))
    tlog = TrainLog()
    params = net.parameters()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[j] for j in order[start : start + cfg.batch_size]]
            loss, grads = au_loss(net, batch)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite action-unit loss at epoch {epoch}, batch starting {start}")
            lstm_core.adam_step(params, grads, state, hyper)
            running += loss
        acc = classify_accuracy(net, heldout) if heldout else float("nan")
        tlog.epoch.append(epoch)
        tlog.train_loss.append(running / max(len(train), 1))
        tlog.heldout_metric.append(acc)
        log.info("au epoch %d loss %.4f heldout acc %.4f", epoch, tlog.train_loss[-1], acc)
    return net, tlog


def extract_video_features(net: AuNetwork, encoded_segments: Sequence[tuple[int, np.ndarray, int | None]]) -> list[ActionUnitFeature]:
    """Action-unit features for one video.

    ``encoded_segments`` holds ``(position, encoded frames, unit class or None)``
    and must cover positions 0..N-1 exactly once.
    """
    ordered = sorted(encoded_segments, key=lambda s: s[0])
    positions = [p for p, _, _ in ordered]
    if positions != list(range(len(ordered))):
        raise ValueError(f"segment positions are not contiguous from 0: {positions}")
    return [ActionUnitFeature(au_forward(net, x).feature, cls, p) for p, x, cls in ordered]


def dump_hidden_states(net: AuNetwork, encoded: np.ndarray, cells: Sequence[int]) -> np.ndarray:
    """(T, len(cells)) trace of selected top-layer hidden units."""
    H = net.feature_dim
    bad = [c for c in cells if not 0 <= c < H]
    if bad:
        raise ValueError(f"cell indices {bad} out of range [0, {H})")
    top = lstm_core.forward(net.backbone, encoded).top
    return top[:, list(cells)].copy()


def write_hidden_csv(path, trace: np.ndarray, cells: Sequence[int]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"cell_{c}" for c in cells])
        for t, row in enumerate(trace, start=1):
            w.writerow([t] + [repr(float(v)) for v in row])


def save_au(path, net: AuNetwork, meta: dict | None = None) -> None:
    write_tensors(path, "au", net.parameters(), meta)


def load_au(path) -> tuple[AuNetwork, dict]:
    _, meta, tensors = read_tensors(path, role="au")
    net = AuNetwork(lstm_core.stacked_from_tensors(tensors, "lstm"), tensors["head.W"], tensors["head.b"])
    return net, meta
