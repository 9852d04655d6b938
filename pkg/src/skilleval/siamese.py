"""Weight-shared Siamese LSTM over action-unit feature lists, trained with a contrastive loss."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lstm_core
from .action_unit import TrainingError, TrainLog
from .checkpoint import read_tensors, write_tensors
from .lstm_core import AdamConfig, AdamState, StackedLstm

log = logging.getLogger(__name__)

POSITIVE_FORMS = ("paper_linear", "squared")


@dataclass
class SiameseConfig:
    margin: float = 1.0
    positive_term_form: str = "paper_linear"
    hidden_dim: int = 128
    n_layers: int = 2
    epochs: int = 40
    lr: float = 1e-3
    clip_norm: float = 5.0
    batch_videos: int = 12
    seed: int = 0

    def validate(self) -> "SiameseConfig":
        if not self.margin > 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.positive_term_form not in POSITIVE_FORMS:
            raise ValueError(f"positive_term_form must be one of {POSITIVE_FORMS}, got {self.positive_term_form!r}")
        for name in ("hidden_dim", "n_layers", "batch_videos"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        AdamConfig(lr=self.lr, clip_norm=self.clip_norm)
        return self


@dataclass
class SiameseNetwork:
    """Both branches run ``backbone``; there is no second parameter set to drift."""

    backbone: StackedLstm

    @property
    def branch_instructional(self) -> StackedLstm:
        return self.backbone

    @property
    def branch_user(self) -> StackedLstm:
        return self.backbone

    def parameters(self) -> dict[str, np.ndarray]:
        return self.backbone.parameters("lstm")

    def copy(self) -> "SiameseNetwork":
        return SiameseNetwork(self.backbone.copy())


def init_siamese(input_dim: int, cfg: SiameseConfig) -> SiameseNetwork:
    return SiameseNetwork(lstm_core.init_params(input_dim, [cfg.hidden_dim] * cfg.n_layers, cfg.seed))


@dataclass
class VideoPair:
    inst_id: str
    user_id: str
    instructional: np.ndarray  # (N_I, feature_dim)
    user: np.ndarray  # (N_U, feature_dim)
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if len(self.instructional) == 0 or len(self.user) == 0:
            raise ValueError("both videos of a pair need at least one action-unit feature")

    def swapped(self) -> "VideoPair":
        return VideoPair(self.user_id, self.inst_id, self.user, self.instructional, self.label)


def _as_sequence(features) -> np.ndarray:
    x = np.asarray([np.asarray(getattr(f, "values", f), dtype=np.float64) for f in features])
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("embedding needs a non-empty list of equal-length feature vectors")
    return x


def embed(net: SiameseNetwork, features, branch: str = "instructional") -> np.ndarray:
    """Final top-layer hidden state after reading the feature list in order."""
    backbone = net.branch_user if branch == "user" else net.branch_instructional
    return lstm_core.forward(backbone, _as_sequence(features)).last.copy()


def distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.sum((a - b) ** 2)))


def pair_distance(net: SiameseNetwork, pair: VideoPair) -> float:
    return distance(embed(net, pair.instructional, "instructional"), embed(net, pair.user, "user"))


def contrastive_loss(D: float, y: int, cfg: SiameseConfig) -> tuple[float, float]:
    """Loss and dLoss/dD for one pair.

    Negative pairs pay ``max(0, m - D)^2``.  Positive pairs pay ``D`` under
    ``paper_linear`` and ``D^2`` under ``squared``.
    """
    if D < 0:
        raise ValueError(f"distance must be non-negative, got {D}")
    if y == 1:
        if cfg.positive_term_form == "squared":
            return D * D, 2.0 * D
        return D, 1.0
    gap = max(0.0, cfg.margin - D)
    return gap * gap, -2.0 * gap


def pair_loss_and_grad(
    net: SiameseNetwork, pairs: Sequence[VideoPair], cfg: SiameseConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed contrastive loss over ``pairs`` and its gradient w.r.t. the shared weights.

    Each distinct video is embedded once; its embedding gradient collects the
    contributions of every pair it takes part in (from either branch) before a
    single backward pass.
    """
    fwds: dict[str, lstm_core.ForwardResult] = {}
    d_emb: dict[str, np.ndarray] = {}

    def run(vid: str, feats) -> np.ndarray:
        if vid not in fwds:
            fwds[vid] = lstm_core.forward(net.backbone, _as_sequence(feats))
            d_emb[vid] = np.zeros(net.backbone.hidden_dim)
        return fwds[vid].last

    total = 0.0
    for p in pairs:
        si = run(p.inst_id, p.instructional)
        su = run(p.user_id, p.user)
        diff = si - su
        D = float(np.sqrt(diff @ diff))
        loss, dL_dD = contrastive_loss(D, p.label, cfg)
        total += loss
        if D > 0.0 and dL_dD != 0.0:
            g = (dL_dD / D) * diff
            d_emb[p.inst_id] += g
            d_emb[p.user_id] -= g
    grads = {k: np.zeros_like(v) for k, v in net.parameters().items()}
    for vid, fwd in fwds.items():
        if not np.any(d_emb[vid]):
            continue
        d_top = np.zeros_like(fwd.top)
        d_top[-1] = d_emb[vid]
        g, _ = lstm_core.backward(net.backbone, fwd, d_top, prefix="lstm")
        for k, v in g.items():
            grads[k] += v
    return total, grads


def make_pairs(videos: Sequence[tuple[str, int, np.ndarray]]) -> list[VideoPair]:
    """All ordered (instructional, user) pairs of distinct videos; label 1 iff same activity.

    ``videos`` holds ``(video_id, activity_id, features)``.
    """
    if len(videos) < 2:
        raise ValueError(f"need at least 2 videos to form pairs, got {len(videos)}")
    pairs = [
        VideoPair(vi, vu, fi, fu, int(ai == au))
        for i, (vi, ai, fi) in enumerate(videos)
        for u, (vu, au, fu) in enumerate(videos)
        if i != u
    ]
    stats = pair_stats(pairs)
    log.info("pairs: %(n)d total, %(positives)d positive, %(negatives)d negative", stats)
    return pairs


def pair_stats(pairs: Sequence[VideoPair]) -> dict[str, float]:
    pos = sum(p.label for p in pairs)
    return {"n": len(pairs), "positives": pos, "negatives": len(pairs) - pos,
            "positive_fraction": pos / len(pairs) if pairs else 0.0}


def _video_batches(pairs: Sequence[VideoPair], batch_videos: int, rng: np.random.Generator) -> list[list[int]]:
    """Pair indices grouped by a random partition of the videos; only within-group pairs are kept."""
    vids = sorted({p.inst_id for p in pairs} | {p.user_id for p in pairs})
    perm = rng.permutation(len(vids))
    group = {}
    for g, start in enumerate(range(0, len(vids), batch_videos)):
        for j in perm[start : start + batch_videos]:
            group[vids[j]] = g
    batches: dict[int, list[int]] = {}
    for idx, p in enumerate(pairs):
        if group[p.inst_id] == group[p.user_id]:
            batches.setdefault(group[p.inst_id], []).append(idx)
    return [batches[g] for g in sorted(batches)]


def train_siamese(
    net: SiameseNetwork,
    pairs: Sequence[VideoPair],
    cfg: SiameseConfig,
    heldout: Sequence[VideoPair] | None = None,
) -> tuple[SiameseNetwork, TrainLog]:
    """Adam on the summed contrastive loss; returns a trained copy and a per-epoch log.

    Every epoch the training videos are shuffled into groups of
    ``cfg.batch_videos`` and each update uses the training pairs that fall
    inside one group.
    """
    from .evaluation import auc_score

    cfg.validate()
    if not pairs:
        raise ValueError("no training pairs")
    labels = {p.label for p in pairs}
    if labels != {0, 1}:
        raise ValueError(f"training pairs need both labels, found only {sorted(labels)}")
    net = net.copy()
    hyper = AdamConfig(lr=cfg.lr, clip_norm=cfg.clip_norm)
    state = AdamState()
    params = net.parameters()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x51]))
    tlog = TrainLog()
    for epoch in range(1, cfg.epochs + 1):
        running = 0.0
        seen = 0
        for batch in _video_batches(pairs, cfg.batch_videos, rng):
            loss, grads = pair_loss_and_grad(net, [pairs[j] for j in batch], cfg)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite contrastive loss at epoch {epoch}")
            lstm_core.adam_step(params, grads, state, hyper)
            running += loss
            seen += len(batch)
        auc = float("nan")
        if heldout:
            auc = auc_score([-d for d in distances(net, heldout)], [p.label for p in heldout])
        tlog.epoch.append(epoch)
        tlog.train_loss.append(running / max(seen, 1))
        tlog.heldout_metric.append(auc)
        log.info("siamese epoch %d loss %.4f heldout auc %.4f", epoch, tlog.train_loss[-1], auc)
    return net, tlog


def distances(net: SiameseNetwork, pairs: Sequence[VideoPair]) -> list[float]:
    """Pair distances, embedding each distinct video id once."""
    cache: dict[str, np.ndarray] = {}

    def emb(vid, feats, branch):
        if vid not in cache:
            cache[vid] = embed(net, feats, branch)
        return cache[vid]

    return [distance(emb(p.inst_id, p.instructional, "instructional"), emb(p.user_id, p.user, "user")) for p in pairs]


def write_pairs_csv(path, pairs: Sequence[VideoPair], dists: Sequence[float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["inst_video_id", "user_video_id", "label", "distance"])
        for p, d in zip(pairs, dists):
            w.writerow([p.inst_id, p.user_id, p.label, repr(float(d))])


def save_siamese(path, net: SiameseNetwork, meta: dict | None = None) -> None:
    write_tensors(path, "siamese", net.parameters(), meta)


def load_siamese(path) -> tuple[SiameseNetwork, dict]:
    _, meta, tensors = read_tensors(path, role="siamese")
    return SiameseNetwork(lstm_core.stacked_from_tensors(tensors, "lstm")), meta
