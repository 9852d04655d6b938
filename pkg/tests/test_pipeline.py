import json

import numpy as np
import pytest

from skilleval.pipeline import (
    FoldModels,
    RunConfig,
    cross_validate,
    derive_seed,
    evaluate_method,
    train_encoder_stage,
    train_folds_for,
)
from skilleval.synth_data import ConfigError, generate_dataset

TINY = dict(frames_min=6, frames_max=10, d_pca=4, K=2, em_iters=3, au_hidden=8, au_epochs=1,
            siam_hidden=8, siam_epochs=1, stride=2)


@pytest.fixture(scope="module")
def tiny():
    cfg = RunConfig(**TINY)
    return cfg, generate_dataset(cfg.gen_config())


def test_train_folds():
    assert train_folds_for(2) == [0, 1, 3]
    with pytest.raises(ValueError):
        train_folds_for(4)


def test_seeds_differ_by_stage_and_fold():
    seeds = {derive_seed(0, f, s) for f in range(4) for s in (1, 2, 3)}
    assert len(seeds) == 12
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"au_hiden": 3})


def test_config_round_trip(tmp_path):
    cfg = RunConfig(seed=4, margin=2.5)
    (tmp_path / "c.json").write_text(cfg.dumps())
    assert RunConfig.load(tmp_path / "c.json") == cfg


def test_cross_validate_tiny(tiny, tmp_path):
    cfg, ds = tiny
    reports = cross_validate(ds, cfg, out_dir=tmp_path)
    for r in reports.values():
        assert sorted(r.fold_auc) == [0, 1, 2, 3]
        assert r.mean_auc == pytest.approx(sum(r.fold_auc.values()) / 4, abs=1e-15)
        assert all(0 <= v <= 1 for v in r.fold_auc.values())
    doc = json.loads((tmp_path / "report.json").read_text())
    assert set(doc["methods"]) == {"siamese", "cosine"}
    for f in range(4):
        header = (tmp_path / f"fold{f}" / "scores_siamese.csv").read_text().splitlines()[0]
        assert header == "inst_id,user_id,label,score"
        # 2 held-out subjects x 10 activities -> 20*19 ordered pairs
        assert len((tmp_path / f"fold{f}" / "scores_cosine.csv").read_text().splitlines()) == 381


def test_fold_mismatch(tiny):
    cfg, ds = tiny
    enc = train_encoder_stage(ds, cfg, 0)
    with pytest.raises(ValueError, match="fold 0 held out"):
        evaluate_method("cosine", 1, [], FoldModels(0, enc, None))
    with pytest.raises(ValueError, match="unknown method"):
        evaluate_method("dtw", 0, [], FoldModels(0, enc, None))


def test_encoder_ignores_heldout_fold(tiny):
    cfg, ds = tiny
    a = train_encoder_stage(ds, cfg, 0)
    changed = generate_dataset(cfg.gen_config())
    for s in changed.segments_in_folds([0]):
        s.frames[:] = 1e3 * np.sin(s.frames)
    b = train_encoder_stage(changed, cfg, 0)
    assert np.array_equal(a.pca.basis, b.pca.basis)
    assert np.array_equal(a.gmm.means, b.gmm.means)
