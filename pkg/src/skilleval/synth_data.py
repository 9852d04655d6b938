"""Synthetic segmented-activity corpus with Breakfast-like structure.

Ten activities are ordered lists of action units; 48 unit classes exist.
Every subject records one video per activity, each video being one segment
per unit in its grammar.  Frames are drawn from a class-specific smooth
trajectory over normalised time, shifted by a per-subject offset and
perturbed by i.i.d. Gaussian noise.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

N_FOLDS = 4
MANIFEST_NAME = "manifest.json"
FSEQ_MAGIC = "SKILLEVAL-FSEQ v1"

# Activity grammars, in recipe order.
ACTIVITY_UNITS: list[tuple[str, list[str]]] = [
    ("Coffee", ["take cup", "pour coffee", "pour milk", "pour sugar", "spoon sugar", "stir coffee"]),
    ("Milk", ["take cup", "spoon powder", "pour milk", "stir milk"]),
    ("Juice", ["take squeezer", "take glass", "take plate", "take knife", "cut orange",
               "squeeze orange", "pour juice"]),
    ("Tea", ["take cup", "add teabag", "pour water", "spoon sugar", "pour sugar", "stir tea"]),
    ("Cereals", ["take bowl", "pour cereals", "pour milk", "stir cereals"]),
    ("Fried Egg", ["pour oil", "butter pan", "take egg", "crack egg", "fry egg", "take plate",
                   "add salt and pepper", "put egg onto plate"]),
    ("Pancakes", ["take bowl", "crack egg", "spoon flour", "pour flour", "pour milk", "stir dough",
                  "pour oil", "butter pan", "pour dough into pan", "fry pancake", "take plate",
                  "put pancake onto plate"]),
    ("Salad", ["take plate", "take knife", "peel fruit", "cut fruit", "take bowl", "put fruit to bowl",
               "stir fruit"]),
    ("Sandwich", ["take plate", "take knife", "cut bun", "take butter", "smear butter", "take topping",
                  "add topping", "put bun together"]),
    ("Scrambled Egg", ["pour oil", "butter pan", "take bowl", "crack egg", "stir egg", "pour egg into pan",
                       "stir fry egg", "add salt and pepper", "take plate", "put egg onto plate"]),
]
# The recipes name 47 distinct units; the 48th class is the background label
# that annotated corpora of this kind reserve for frames outside any unit.
BACKGROUND_UNIT = "background"
N_CLASSES = 48


class ConfigError(ValueError):
    """A generator or pipeline setting is out of its valid range."""


class DatasetFormatError(ValueError):
    """An on-disk dataset file is missing or malformed."""

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


@dataclass(frozen=True)
class ActionUnitClass:
    id: int
    name: str


@dataclass(frozen=True)
class ActivityGrammar:
    id: int
    name: str
    unit_sequence: tuple[int, ...]


def default_catalog() -> tuple[list[ActionUnitClass], list[ActivityGrammar]]:
    """The 48 unit classes and 10 activity grammars.

    Unit ids follow first appearance across the recipes; a unit shared by
    several activities ("take cup", "pour milk", ...) has one id.
    """
    ids: dict[str, int] = {}
    for _, units in ACTIVITY_UNITS:
        for u in units:
            ids.setdefault(u, len(ids))
    ids[BACKGROUND_UNIT] = len(ids)
    assert len(ids) == N_CLASSES
    classes = [ActionUnitClass(i, name) for name, i in ids.items()]
    grammars = [
        ActivityGrammar(a, name, tuple(ids[u] for u in units))
        for a, (name, units) in enumerate(ACTIVITY_UNITS)
    ]
    return classes, grammars


@dataclass
class GenConfig:
    n_subjects: int = 8
    frames_min: int = 20
    frames_max: int = 60
    d_raw: int = 16
    noise_level: float = 0.0
    seed: int = 0
    subject_scale: float = 0.1  # std of the per-subject additive offset

    def validate(self) -> "GenConfig":
        if self.n_subjects < N_FOLDS:
            raise ConfigError(f"n_subjects must be >= {N_FOLDS}, got {self.n_subjects}")
        if not 2 <= self.frames_min <= self.frames_max:
            raise ConfigError(
                f"frames_min/frames_max must satisfy 2 <= frames_min <= frames_max, "
                f"got {self.frames_min}/{self.frames_max}"
            )
        if self.d_raw < 2:
            raise ConfigError(f"d_raw must be >= 2, got {self.d_raw}")
        if not self.noise_level >= 0 or not math.isfinite(self.noise_level):
            raise ConfigError(f"noise_level must be a finite value >= 0, got {self.noise_level}")
        if not self.subject_scale >= 0 or not math.isfinite(self.subject_scale):
            raise ConfigError(f"subject_scale must be a finite value >= 0, got {self.subject_scale}")
        return self


@dataclass(eq=False)
class SegmentRecord:
    subject_id: int
    activity_id: int
    unit_class: int
    position: int
    frames: np.ndarray  # (T, d_raw)

    @property
    def video_id(self) -> str:
        return video_id(self.subject_id, self.activity_id)

    @property
    def path(self) -> str:
        return f"features/{self.video_id}_{self.position:02d}.fseq"

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SegmentRecord):
            return NotImplemented
        return (
            (self.subject_id, self.activity_id, self.unit_class, self.position)
            == (other.subject_id, other.activity_id, other.unit_class, other.position)
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )


def video_id(subject_id: int, activity_id: int) -> str:
    return f"s{subject_id:02d}_a{activity_id:02d}"


@dataclass
class Dataset:
    """Manifest plus the segment records it references."""

    seed: int
    d_raw: int
    classes: list[ActionUnitClass]
    activities: list[ActivityGrammar]
    folds: dict[int, list[int]]
    segments: list[SegmentRecord]
    config: GenConfig = field(default_factory=GenConfig)

    @property
    def subjects(self) -> list[int]:
        return sorted(s for f in self.folds.values() for s in f)

    def fold_of(self, subject_id: int) -> int:
        for f, subs in self.folds.items():
            if subject_id in subs:
                return f
        raise KeyError(subject_id)

    def videos(self) -> dict[str, list[SegmentRecord]]:
        """Video id -> its segments ordered by position."""
        out: dict[str, list[SegmentRecord]] = {}
        for seg in self.segments:
            out.setdefault(seg.video_id, []).append(seg)
        for segs in out.values():
            segs.sort(key=lambda s: s.position)
        return out

    def segments_in_folds(self, folds) -> list[SegmentRecord]:
        subs = {s for f in folds for s in self.folds[f]}
        return [seg for seg in self.segments if seg.subject_id in subs]


def class_templates(seed: int, d_raw: int, n_classes: int = N_CLASSES):
    """Per-class smooth trajectories ``tau -> R^d_raw`` as (centre, amp, freq, phase)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E3]))
    centre = rng.normal(0.0, 1.0, size=(n_classes, d_raw))
    amp = rng.uniform(0.3, 0.8, size=(n_classes, d_raw))
    freq = rng.choice([0.5, 1.0, 1.5], size=(n_classes, d_raw))
    phase = rng.uniform(0.0, 2 * np.pi, size=(n_classes, d_raw))
    return centre, amp, freq, phase


def template_frames(templates, unit_class: int, n_frames: int) -> np.ndarray:
    centre, amp, freq, phase = templates
    tau = np.linspace(0.0, 1.0, n_frames)[:, None]
    return centre[unit_class] + amp[unit_class] * np.sin(2 * np.pi * freq[unit_class] * tau + phase[unit_class])


def _subject_videos(cfg: GenConfig, subject: int, templates, grammars) -> list[SegmentRecord]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, subject]))
    offset = rng.normal(0.0, cfg.subject_scale, size=cfg.d_raw)
    out = []
    for g in grammars:
        for pos, cls in enumerate(g.unit_sequence):
            T = int(rng.integers(cfg.frames_min, cfg.frames_max + 1))
            noise = rng.normal(0.0, 1.0, size=(T, cfg.d_raw)) * cfg.noise_level
            frames = template_frames(templates, cls, T) + offset + noise
            out.append(SegmentRecord(subject, g.id, cls, pos, frames))
    return out


def generate_dataset(cfg: GenConfig | None = None) -> Dataset:
    """One video per (subject, activity); subjects dealt round-robin into 4 folds.

    Each subject draws from its own sub-seed, so output does not depend on the
    order subjects are generated in.
    """
    cfg = (cfg or GenConfig()).validate()
    classes, grammars = default_catalog()
    templates = class_templates(cfg.seed, cfg.d_raw)
    segments = []
    for s in range(cfg.n_subjects):
        segments.extend(_subject_videos(cfg, s, templates, grammars))
    folds = {f: [s for s in range(cfg.n_subjects) if s % N_FOLDS == f] for f in range(N_FOLDS)}
    return Dataset(cfg.seed, cfg.d_raw, classes, grammars, folds, segments, cfg)


def nearest_template_accuracy(ds: Dataset) -> float:
    """Fraction of frames whose closest class template (at the same normalised time) is their own."""
    templates = class_templates(ds.seed, ds.d_raw)
    hits = total = 0
    for seg in ds.segments:
        T = seg.n_frames
        cand = np.stack([template_frames(templates, c, T) for c in range(N_CLASSES)])  # (C, T, D)
        d2 = ((seg.frames[None] - cand) ** 2).sum(axis=2)
        hits += int((d2.argmin(axis=0) == seg.unit_class).sum())
        total += T
    return hits / total


def calibrate_noise(cfg: GenConfig, target: float = 0.7, tol: float = 0.01, max_iter: int = 30) -> float:
    """Bisect noise_level so frame-level nearest-template accuracy is about ``target``."""
    lo, hi = 0.0, 4.0
    mid = hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        acc = nearest_template_accuracy(generate_dataset(_replace(cfg, noise_level=mid)))
        if abs(acc - target) <= tol:
            break
        if acc > target:
            lo = mid
        else:
            hi = mid
    return round(mid, 6)


def _replace(cfg: GenConfig, **kw) -> GenConfig:
    d = asdict(cfg)
    d.update(kw)
    return GenConfig(**d)


# -- persistence -------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_fseq(path, frames: np.ndarray) -> None:
    T, D = frames.shape
    lines = [f"{FSEQ_MAGIC} T={T} D={D}"]
    lines += [" ".join(_fmt(v) for v in row) for row in frames]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_fseq(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(path, "feature file missing")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetFormatError(path, "empty feature file")
    head = lines[0].split()
    try:
        if " ".join(head[:2]) != FSEQ_MAGIC or len(head) != 4:
            raise ValueError
        T = int(head[2].removeprefix("T="))
        D = int(head[3].removeprefix("D="))
        if not head[2].startswith("T=") or not head[3].startswith("D=") or T < 1 or D < 1:
            raise ValueError
    except ValueError:
        raise DatasetFormatError(path, f"malformed header {lines[0]!r}") from None
    rows = lines[1:]
    if len(rows) != T:
        raise DatasetFormatError(path, f"header says T={T} but file has {len(rows)} rows")
    out = np.empty((T, D))
    for t, row in enumerate(rows):
        vals = row.split(" ")
        if len(vals) != D:
            raise DatasetFormatError(path, f"row {t} has {len(vals)} values, expected D={D}")
        try:
            out[t] = [float(v) for v in vals]
        except ValueError:
            raise DatasetFormatError(path, f"row {t} has a non-numeric value") from None
    if not np.all(np.isfinite(out)):
        raise DatasetFormatError(path, "non-finite value")
    return out


def manifest_dict(ds: Dataset) -> dict:
    return {
        "format": "SKILLEVAL-MANIFEST v1",
        "seed": ds.seed,
        "d_raw": ds.d_raw,
        "config": asdict(ds.config),
        "classes": [{"id": c.id, "name": c.name} for c in ds.classes],
        "activities": [
            {"id": a.id, "name": a.name, "unit_sequence": list(a.unit_sequence)} for a in ds.activities
        ],
        "folds": {str(f): list(s) for f, s in sorted(ds.folds.items())},
        "segments": [
            {
                "subject": s.subject_id,
                "activity": s.activity_id,
                "unit_class": s.unit_class,
                "position": s.position,
                "path": s.path,
                "frames": s.n_frames,
            }
            for s in ds.segments
        ],
    }


def write_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    for seg in ds.segments:
        write_fseq(out / seg.path, seg.frames)
    text = json.dumps(manifest_dict(ds), indent=1)
    (out / MANIFEST_NAME).write_text(text + "\n", encoding="utf-8")
    return out


def read_dataset(in_dir) -> Dataset:
    root = Path(in_dir)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise DatasetFormatError(mpath, "manifest missing")
    try:
        m = json.loads(mpath.read_text(encoding="utf-8"))
        d_raw = int(m["d_raw"])
        cfg = GenConfig(**m["config"])
        classes = [ActionUnitClass(int(c["id"]), str(c["name"])) for c in m["classes"]]
        acts = [
            ActivityGrammar(int(a["id"]), str(a["name"]), tuple(int(u) for u in a["unit_sequence"]))
            for a in m["activities"]
        ]
        folds = {int(f): [int(s) for s in subs] for f, subs in m["folds"].items()}
        entries = m["segments"]
        seed = int(m["seed"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(mpath, f"malformed manifest ({exc!r})") from None

    missing = [e["path"] for e in entries if not (root / e["path"]).is_file()]
    if missing:
        raise DatasetFormatError(mpath, "missing segment files: " + ", ".join(missing))
    segments = []
    for e in entries:
        fpath = root / e["path"]
        frames = read_fseq(fpath)
        if frames.shape != (int(e["frames"]), d_raw):
            raise DatasetFormatError(
                fpath, f"shape {frames.shape} does not match manifest ({e['frames']}, {d_raw})"
            )
        segments.append(
            SegmentRecord(int(e["subject"]), int(e["activity"]), int(e["unit_class"]), int(e["position"]), frames)
        )
    ds = Dataset(seed, d_raw, classes, acts, folds, segments, cfg)
    validate_dataset(ds, where=mpath)
    return ds


def validate_dataset(ds: Dataset, where="dataset") -> None:
    """Fold partition and per-video contiguity checks."""
    all_subjects = [s for f in ds.folds.values() for s in f]
    if len(all_subjects) != len(set(all_subjects)):
        raise DatasetFormatError(where, "a subject appears in more than one fold")
    seg_subjects = {s.subject_id for s in ds.segments}
    if not seg_subjects <= set(all_subjects):
        raise DatasetFormatError(where, f"subjects without a fold: {sorted(seg_subjects - set(all_subjects))}")
    for vid, segs in ds.videos().items():
        if [s.position for s in segs] != list(range(len(segs))):
            raise DatasetFormatError(where, f"video {vid} has non-contiguous positions")


def dataset_digest(in_dir) -> str:
    """SHA-256 over the manifest and every feature file, in sorted path order."""
    root = Path(in_dir)
    h = hashlib.sha256()
    files = [root / MANIFEST_NAME] + sorted((root / "features").glob("*.fseq"))
    for p in files:
        h.update(os.fsencode(p.relative_to(root)))
        h.update(p.read_bytes())
    return h.hexdigest()
