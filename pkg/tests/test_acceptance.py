"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(see conftest.py), so ``pytest tests/test_acceptance.py`` ends with a
nine-line verdict table.  The end-to-end runs take several minutes.
"""
import math
import time

import numpy as np
import pytest

from skilleval import selftest
from skilleval.encoding import encode_fv, fit_encoder, fit_gmm, normalize_fv
from skilleval.evaluation import auc_score
from skilleval.pipeline import RunConfig, cross_validate, report_text
from skilleval.siamese import SiameseConfig, VideoPair, contrastive_loss, distance, distances, embed, init_siamese
from skilleval.synth_data import calibrate_noise, default_catalog, generate_dataset, nearest_template_accuracy

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def test_1_gradient_fidelity():
    t = time.time()
    reports = {
        "lstm": selftest.lstm_gradient_check(),
        "au_loss": selftest.au_gradient_check(),
        "pair_loss": selftest.siamese_gradient_check(),
        "pair_loss_squared": selftest.siamese_gradient_check("squared"),
    }
    elapsed = time.time() - t
    worst = max(r.max_rel_err for r in reports.values())
    ok = all(r.passed for r in reports.values()) and worst <= 1e-4 and elapsed < 10
    record(1, ok, f"gradient fidelity: max rel err {worst:.2e} (tol 1e-4), {elapsed:.1f}s (< 10s)")


def test_2_fisher_vector():
    gmm = selftest.HAND_GMM
    err = 0.0
    for x in (-1.3, 0.0, 0.4, 2.5):
        raw = np.array(selftest.hand_fisher_vector(x))
        p = np.sign(raw) * np.sqrt(np.abs(raw))
        hand = p / math.sqrt(sum(v * v for v in p))
        err = max(err, float(np.max(np.abs(encode_fv(gmm, np.array([x])) - hand))))
    r = np.random.default_rng(0)
    dims_ok, norm_err = True, 0.0
    for K, d in [(1, 1), (2, 3), (4, 2), (8, 8)]:
        X = r.normal(size=(300, 10))
        enc = fit_encoder(X, d_pca=d, K=K, em_iters=5, seed=1)
        V = enc.encode(X[:50])
        dims_ok &= enc.fv_dim == 2 * K * d and V.shape == (50, 2 * K * d)
        norm_err = max(norm_err, float(np.max(np.abs(np.linalg.norm(V, axis=1) - 1))))
    ok = err <= 1e-9 and dims_ok and norm_err <= 1e-9
    record(2, ok, f"fisher vector: hand-case err {err:.1e} (<= 1e-9), dims 2KD {dims_ok}, norm err {norm_err:.1e}")


def test_3_em_monotone():
    worst = 0.0
    for seed in range(3):
        r = np.random.default_rng(100 + seed)
        X = np.concatenate([r.normal(loc=c, size=(150, 3)) for c in (-3, 0, 3)])
        g = fit_gmm(X, K=4, em_iters=25, seed=seed)
        steps = np.diff(g.history)
        worst = min(worst, float(steps.min()))
    record(3, worst >= -1e-9, f"EM monotone: largest log-likelihood drop {max(0.0, -worst):.1e} (slack 1e-9), 3 datasets x 25 iters")


def test_4_auc_oracle():
    bad = selftest.auc_oracle_check(n_sets=50, seed=0)
    record(4, bad == 0, f"AUC oracle: {bad} of 50 random score sets disagree with the pairwise count")


def test_5_contrastive_cases():
    cfg = SiameseConfig(margin=1.0, positive_term_form="paper_linear")
    checks = [
        contrastive_loss(1.0, 0, cfg)[0] == 0.0 and contrastive_loss(3.5, 0, cfg)[0] == 0.0,
        abs(contrastive_loss(0.4, 0, cfg)[0] - 0.36) <= 1e-12,
        abs(contrastive_loss(0.4, 0, cfg)[1] + 1.2) <= 1e-12,
        abs(contrastive_loss(0.7, 1, cfg)[0] - 0.7) <= 1e-12,
    ]
    record(5, all(checks), f"contrastive cases: {sum(checks)}/4 within 1e-12")


def test_6_distance_symmetry_identity():
    r = np.random.default_rng(6)
    net = init_siamese(6, SiameseConfig(hidden_dim=16, n_layers=2))
    sym, ident = True, 0.0
    for k in range(100):
        a = r.normal(size=(int(r.integers(1, 8)), 6))
        b = r.normal(size=(int(r.integers(1, 8)), 6))
        ea, eb = embed(net, a, "instructional"), embed(net, b, "user")
        sym &= distance(ea, eb) == distance(eb, ea)
        ident = max(ident, distance(ea, embed(net, a, "user")))
    record(6, sym and ident <= 1e-12, f"distance: symmetric {sym}, max D(a,a) {ident:.1e} over 100 pairs")


@pytest.fixture(scope="module")
def e2e():
    t = time.time()
    clean_cfg = RunConfig(seed=0, noise_level=0.0)
    clean = cross_validate(generate_dataset(clean_cfg.gen_config()), clean_cfg)
    noisy_cfg = RunConfig(seed=0)
    noisy_cfg.noise_level = calibrate_noise(noisy_cfg.gen_config(), target=0.7)
    noisy_ds = generate_dataset(noisy_cfg.gen_config())
    noisy = cross_validate(noisy_ds, noisy_cfg)
    return {
        "clean_cfg": clean_cfg, "clean": clean, "noisy_cfg": noisy_cfg, "noisy": noisy,
        "frame_acc": nearest_template_accuracy(noisy_ds), "elapsed": time.time() - t,
    }


@pytest.mark.slow
def test_7_end_to_end_learnability(e2e):
    clean, noisy = e2e["clean"], e2e["noisy"]
    acc = clean["siamese"].mean_accuracy
    s_auc = clean["siamese"].mean_auc
    ns, nc = noisy["siamese"].mean_auc, noisy["cosine"].mean_auc
    ok = acc >= 0.95 and s_auc >= 0.95 and ns > nc and e2e["elapsed"] <= 900
    record(7, ok, (
        f"learnability: noiseless AU acc {acc:.4f} (>= .95), Siamese AUC {s_auc:.4f} (>= .95); "
        f"noise {e2e['noisy_cfg'].noise_level:.3f} (frame acc {e2e['frame_acc']:.3f}): "
        f"Siamese {ns:.4f} > cosine {nc:.4f}; {e2e['elapsed']:.0f}s (<= 900s)"
    ))


@pytest.mark.slow
def test_8_determinism(e2e):
    cfg = e2e["clean_cfg"]
    again = cross_validate(generate_dataset(cfg.gen_config()), cfg)
    a, b = report_text(e2e["clean"], cfg), report_text(again, cfg)
    record(8, a.encode() == b.encode(), f"determinism: two cross-validation reports byte-identical ({len(a)} bytes)")


def test_9_variable_length():
    _, grammars = default_catalog()
    by_name = {g.name: g for g in grammars}
    n_c, n_p = len(by_name["Cereals"].unit_sequence), len(by_name["Pancakes"].unit_sequence)
    r = np.random.default_rng(9)
    net = init_siamese(128, SiameseConfig())
    cereals, pancakes = r.normal(size=(n_c, 128)), r.normal(size=(n_p, 128))
    others = [r.normal(size=(n, 128)) for n in (1, 7, 30)]
    alone = [embed(net, cereals), embed(net, pancakes)]
    pairs = [VideoPair("c", "p", cereals, pancakes, 0)] + [
        VideoPair(f"o{k}", "p" if k % 2 else "c", o, pancakes if k % 2 else cereals, 0) for k, o in enumerate(others)
    ]
    d = distances(net, pairs)
    unchanged = d[0] == distance(*alone)
    # lists embedded next to differently shaped neighbours keep their embedding
    mixed = distances(net, list(reversed(pairs)))[::-1]
    unchanged &= mixed == d
    scored = auc_score([-x for x in d] + [-0.0], [0] * len(d) + [1])
    ok = (n_c, n_p) == (4, 12) and unchanged and all(math.isfinite(x) for x in d) and 0 <= scored <= 1
    record(9, ok, f"variable length: Cereals {n_c} vs Pancakes {n_p} units, embeddings independent of batch shape {unchanged}")
