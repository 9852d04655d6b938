"""End-to-end fold runs: encoder -> action-unit LSTM -> Siamese LSTM -> scoring.

Seed derivation from the master seed ``S`` (all via ``numpy.random.SeedSequence``):

    encoder for held-out fold f   derive_seed(S, f, 1)
    action-unit net for fold f    derive_seed(S, f, 2)
    Siamese net for fold f        derive_seed(S, f, 3)

The dataset itself is generated from ``S`` directly.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import synth_data
from .action_unit import (AuConfig, AuNetwork, TrainLog, classify_accuracy, extract_video_features,
                          init_au_network, save_au, train_au)
from .encoding import Encoder, fit_encoder, save_encoder
from .evaluation import (EvalReport, RocCurve, ScoredPair, baseline_cosine, dumps_report, roc_auc,
                         write_roc_csv, write_scores_csv)
from .siamese import (POSITIVE_FORMS, SiameseConfig, SiameseNetwork, VideoPair, distances, init_siamese,
                      make_pairs, save_siamese, train_siamese)
from .synth_data import ConfigError, Dataset, GenConfig, N_FOLDS

log = logging.getLogger(__name__)

METHODS = ("siamese", "cosine")


def derive_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([master, *keys]).generate_state(1)[0])


@dataclass
class RunConfig:
    seed: int = 0
    # data
    n_subjects: int = 8
    frames_min: int = 20
    frames_max: int = 60
    d_raw: int = 16
    noise_level: float = 0.0
    subject_scale: float = 0.1
    # encoder
    d_pca: int = 8
    K: int = 8
    em_iters: int = 25
    variance_floor: float = 1e-6
    # action-unit network
    au_hidden: int = 128
    au_layers: int = 2
    au_epochs: int = 12
    au_lr: float = 3e-3
    au_batch: int = 1
    stride: int = 2
    # Siamese network
    siam_hidden: int = 128
    siam_layers: int = 2
    siam_epochs: int = 40
    siam_lr: float = 1e-3
    siam_batch_videos: int = 12
    margin: float = 1.0
    positive_term_form: str = "paper_linear"
    # shared / evaluation
    clip_norm: float = 5.0
    alpha: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = {}
        for k, v in d.items():
            typ = type(getattr(cls(), k))
            try:
                kw[k] = typ(v) if typ is not bool else bool(v)
            except (TypeError, ValueError):
                raise ConfigError(f"config field {k}: cannot interpret {v!r} as {typ.__name__}") from None
        return cls(**kw).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"config {path} must hold a key-value object")
        return cls.from_dict(d)

    def dumps(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def validate(self) -> "RunConfig":
        self.gen_config().validate()
        checks = {
            "d_pca": self.d_pca >= 1 and self.d_pca <= self.d_raw,
            "K": self.K >= 1,
            "em_iters": self.em_iters >= 0,
            "variance_floor": self.variance_floor > 0,
            "stride": self.stride >= 1,
            "alpha": 0 < self.alpha <= 1,
            "positive_term_form": self.positive_term_form in POSITIVE_FORMS,
        }
        for name, ok in checks.items():
            if not ok:
                raise ConfigError(f"config field {name} out of range: {getattr(self, name)!r}")
        for name, build in (("au", lambda: self.au_config(0)), ("siamese", lambda: self.siamese_config(0))):
            try:
                build().validate()
            except ValueError as exc:
                raise ConfigError(f"{name} settings: {exc}") from None
        return self

    def gen_config(self) -> GenConfig:
        return GenConfig(self.n_subjects, self.frames_min, self.frames_max, self.d_raw, self.noise_level,
                         self.seed, self.subject_scale)

    def au_config(self, seed: int) -> AuConfig:
        return AuConfig(hidden_dim=self.au_hidden, n_layers=self.au_layers, n_classes=synth_data.N_CLASSES,
                        epochs=self.au_epochs, batch_size=self.au_batch, lr=self.au_lr,
                        clip_norm=self.clip_norm, stride=self.stride, seed=seed)

    def siamese_config(self, seed: int) -> SiameseConfig:
        return SiameseConfig(margin=self.margin, positive_term_form=self.positive_term_form,
                             hidden_dim=self.siam_hidden, n_layers=self.siam_layers, epochs=self.siam_epochs,
                             lr=self.siam_lr, clip_norm=self.clip_norm, batch_videos=self.siam_batch_videos,
                             seed=seed)


def train_folds_for(heldout: int) -> list[int]:
    if not 0 <= heldout < N_FOLDS:
        raise ValueError(f"fold must be in [0, {N_FOLDS}), got {heldout}")
    return [f for f in range(N_FOLDS) if f != heldout]


def _check_disjoint(ds: Dataset, train: Sequence[int], heldout: int) -> None:
    if heldout in train or not train:
        raise ValueError(f"training folds {list(train)} must be non-empty and exclude held-out fold {heldout}")
    tr = {s for f in train for s in ds.folds[f]}
    if tr & set(ds.folds[heldout]):
        raise ValueError("a subject appears in both training and held-out folds")


def train_encoder_stage(ds: Dataset, cfg: RunConfig, heldout: int) -> Encoder:
    train = train_folds_for(heldout)
    _check_disjoint(ds, train, heldout)
    frames = np.concatenate([s.frames for s in ds.segments_in_folds(train)])
    return fit_encoder(frames, cfg.d_pca, cfg.K, cfg.em_iters, derive_seed(cfg.seed, heldout, 1), cfg.variance_floor)


def encode_samples(enc: Encoder, segments, stride: int) -> list[tuple[np.ndarray, int]]:
    return [(enc.encode(s.frames, stride), s.unit_class) for s in segments]


def train_au_stage(ds: Dataset, cfg: RunConfig, heldout: int, enc: Encoder) -> tuple[AuNetwork, TrainLog, float]:
    train = train_folds_for(heldout)
    _check_disjoint(ds, train, heldout)
    au_cfg = cfg.au_config(derive_seed(cfg.seed, heldout, 2))
    tr = encode_samples(enc, ds.segments_in_folds(train), cfg.stride)
    te = encode_samples(enc, ds.segments_in_folds([heldout]), cfg.stride)
    net = init_au_network(enc.fv_dim, au_cfg)
    net, tlog = train_au(net, tr, au_cfg, heldout=te)
    return net, tlog, classify_accuracy(net, te)


def video_features(ds: Dataset, enc: Encoder, au: AuNetwork, folds: Sequence[int], stride: int):
    """``(video_id, activity_id, (N, feature_dim) array)`` per video in ``folds``."""
    subs = {s for f in folds for s in ds.folds[f]}
    out = []
    for vid, segs in sorted(ds.videos().items()):
        if segs[0].subject_id not in subs:
            continue
        feats = extract_video_features(au, [(s.position, enc.encode(s.frames, stride), s.unit_class) for s in segs])
        out.append((vid, segs[0].activity_id, np.array([f.values for f in feats])))
    return out


def train_siamese_stage(
    cfg: RunConfig, heldout: int, train_videos, test_videos=None
) -> tuple[SiameseNetwork, TrainLog]:
    s_cfg = cfg.siamese_config(derive_seed(cfg.seed, heldout, 3))
    net = init_siamese(train_videos[0][2].shape[1], s_cfg)
    test_pairs = make_pairs(test_videos) if test_videos else None
    return train_siamese(net, make_pairs(train_videos), s_cfg, heldout=test_pairs)


@dataclass
class FoldModels:
    heldout: int
    encoder: Encoder
    au: AuNetwork
    siamese: SiameseNetwork | None = None


def evaluate_method(
    method: str, heldout: int, pairs: Sequence[VideoPair], models: FoldModels, alpha: float = 0.5
) -> tuple[list[ScoredPair], RocCurve]:
    """Score every held-out pair once; Siamese score is minus the embedding distance."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    if models.heldout != heldout:
        raise ValueError(f"models were trained with fold {models.heldout} held out, not fold {heldout}")
    if method == "siamese":
        if models.siamese is None:
            raise ValueError("siamese scoring needs a trained Siamese network")
        scores = [-d for d in distances(models.siamese, pairs)]
    else:
        scores = [baseline_cosine(p.instructional, p.user, alpha) for p in pairs]
    scored = [ScoredPair(p.inst_id, p.user_id, p.label, float(s)) for p, s in zip(pairs, scores)]
    return scored, roc_auc(scored)


def run_fold(ds: Dataset, cfg: RunConfig, heldout: int, out_dir=None, methods=METHODS) -> dict:
    enc = train_encoder_stage(ds, cfg, heldout)
    au, au_log, acc = train_au_stage(ds, cfg, heldout, enc)
    train_vids = video_features(ds, enc, au, train_folds_for(heldout), cfg.stride)
    test_vids = video_features(ds, enc, au, [heldout], cfg.stride)
    models = FoldModels(heldout, enc, au)
    siam_log = None
    if "siamese" in methods:
        models.siamese, siam_log = train_siamese_stage(cfg, heldout, train_vids, test_vids)
    pairs = make_pairs(test_vids)
    results = {m: evaluate_method(m, heldout, pairs, models, cfg.alpha) for m in methods}
    if out_dir is not None:
        d = Path(out_dir) / f"fold{heldout}"
        d.mkdir(parents=True, exist_ok=True)
        save_encoder(d / "encoder", enc)
        save_au(d / "au.ckpt", au, {"heldout": heldout})
        au_log.write_csv(d / "au_log.csv", "heldout_accuracy")
        if models.siamese is not None:
            save_siamese(d / "siamese.ckpt", models.siamese, {"heldout": heldout})
            siam_log.write_csv(d / "siamese_log.csv", "heldout_auc")
        for m, (scored, curve) in results.items():
            write_scores_csv(d / f"scores_{m}.csv", scored)
            write_roc_csv(d / f"roc_{m}.csv", curve)
    log.info("fold %d: au accuracy %.4f, %s", heldout, acc,
             ", ".join(f"{m} auc {c.auc:.4f}" for m, (_, c) in results.items()))
    return {"accuracy": acc, "results": results, "models": models}


def cross_validate(ds: Dataset, cfg: RunConfig, out_dir=None, methods=METHODS) -> dict[str, EvalReport]:
    """Hold out each fold in turn; report per-fold, mean and pooled AUC for each method."""
    if sorted(ds.folds) != list(range(N_FOLDS)):
        raise ValueError(f"cross-validation needs folds 0..{N_FOLDS - 1}, found {sorted(ds.folds)}")
    reports = {m: EvalReport(method=m) for m in methods}
    pooled: dict[str, list[ScoredPair]] = {m: [] for m in methods}
    for f in range(N_FOLDS):
        try:
            res = run_fold(ds, cfg, f, out_dir, methods)
        except Exception as exc:
            raise RuntimeError(f"cross-validation failed on fold {f}: {exc}") from exc
        for m, (scored, curve) in res["results"].items():
            reports[m].fold_auc[f] = curve.auc
            reports[m].fold_accuracy[f] = res["accuracy"]
            pooled[m].extend(scored)
    for m in methods:
        reports[m].pooled_auc = roc_auc(pooled[m]).auc
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "report.json").write_text(report_text(reports, cfg), encoding="utf-8")
    return reports


def report_text(reports: dict[str, EvalReport], cfg: RunConfig) -> str:
    return dumps_report({"config": asdict(cfg), "methods": {m: r.to_dict() for m, r in reports.items()}})
