"""Fast numerical self-checks run by ``skilleval selftest``."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import lstm_core
from .action_unit import AuConfig, au_loss, init_au_network
from .encoding import GmmModel, fisher_vector_raw
from .evaluation import roc_curve
from .siamese import SiameseConfig, VideoPair, init_siamese, pair_loss_and_grad

EPS = 1e-5
TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def lstm_gradient_check(corrupt: bool = False, seed: int = 0) -> lstm_core.GradCheckReport:
    """Toy stack (in=6, hidden=5, L=2, T=7) under a random linear readout of every top state."""
    rng = np.random.default_rng(seed)
    net = lstm_core.init_params(6, [5, 5], seed)
    x = rng.normal(size=(7, 6))
    R = rng.normal(size=(7, 5))

    def loss_and_grad():
        fwd = lstm_core.forward(net, x)
        grads, _ = lstm_core.backward(net, fwd, R)
        if corrupt:
            H = net.layers[0].hidden_dim
            grads["lstm.0.W"] = grads["lstm.0.W"].copy()
            grads["lstm.0.W"][H : 2 * H] *= 1.05  # forget-gate rows
        return float(np.sum(fwd.top * R)), grads

    return lstm_core.grad_check(net.parameters(), loss_and_grad, EPS, TOL)


def au_gradient_check(seed: int = 0) -> lstm_core.GradCheckReport:
    """Summed cross-entropy on FV dim 6, hidden 5, two layers, three classes."""
    rng = np.random.default_rng(seed)
    net = init_au_network(6, AuConfig(hidden_dim=5, n_layers=2, n_classes=3, seed=seed))
    net.head_b[:] = rng.normal(size=3) * 0.1
    batch = [(rng.normal(size=(7, 6)), 0), (rng.normal(size=(4, 6)), 2), (rng.normal(size=(7, 6)), 1)]
    return lstm_core.grad_check(net.parameters(), lambda: au_loss(net, batch), EPS, TOL)


def siamese_pairs(rng: np.random.Generator, n_videos: int = 5, dim: int = 6) -> list[VideoPair]:
    lengths = [1, 3, 7, 4, 6][:n_videos]
    vids = [(f"v{k}", k % 2, rng.normal(size=(n, dim))) for k, n in enumerate(lengths)]
    return [VideoPair(a[0], b[0], a[2], b[2], int(a[1] == b[1])) for a, b in itertools.permutations(vids, 2)]


def siamese_gradient_check(positive_term_form: str = "paper_linear", seed: int = 0) -> lstm_core.GradCheckReport:
    """Full pair loss through both branches and the hinge, on toy dimensions.

    The margin is placed between observed distances so some negative pairs
    are inside the hinge and some are not, and none sit within 1e-6 of it.
    """
    rng = np.random.default_rng(seed)
    cfg = SiameseConfig(hidden_dim=5, n_layers=2, seed=seed, positive_term_form=positive_term_form)
    net = init_siamese(6, cfg)
    pairs = siamese_pairs(rng)
    from .siamese import distances

    d = sorted(distances(net, pairs))
    cfg.margin = float(np.median(d))
    if min(abs(x - cfg.margin) for x in d) < 1e-6:
        cfg.margin = 0.5 * (d[len(d) // 2] + d[len(d) // 2 + 1])
    return lstm_core.grad_check(net.parameters(), lambda: pair_loss_and_grad(net, pairs, cfg), EPS, TOL)


HAND_GMM = GmmModel(
    weights=np.array([0.3, 0.7]),
    means=np.array([[-0.5], [1.2]]),
    variances=np.array([[0.4], [1.5]]),
)


def hand_fisher_vector(x: float) -> list[float]:
    """Scalar re-derivation of the raw FV for HAND_GMM (K=2, D=1)."""
    w, mu, var = [0.3, 0.7], [-0.5, 1.2], [0.4, 1.5]
    dens = [w[k] / math.sqrt(2 * math.pi * var[k]) * math.exp(-((x - mu[k]) ** 2) / (2 * var[k])) for k in range(2)]
    gam = [d / sum(dens) for d in dens]
    z = [(x - mu[k]) / math.sqrt(var[k]) for k in range(2)]
    mean_block = [gam[k] * z[k] / math.sqrt(w[k]) for k in range(2)]
    var_block = [gam[k] * (z[k] ** 2 - 1) / math.sqrt(2 * w[k]) for k in range(2)]
    return mean_block + var_block


def fv_hand_check(points=(-1.3, 0.0, 0.4, 2.5)) -> float:
    err = 0.0
    for x in points:
        got = fisher_vector_raw(HAND_GMM, np.array([[x]]))[0]
        err = max(err, float(np.max(np.abs(got - np.array(hand_fisher_vector(x))))))
    return err


def brute_force_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def auc_oracle_check(n_sets: int = 50, seed: int = 0) -> int:
    """Number of random score sets where the sweep disagrees with the pairwise count."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_sets):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = np.round(rng.normal(size=n), int(rng.integers(0, 3)))  # rounding creates ties
        if roc_curve(scores, labels).auc != brute_force_auc(scores.tolist(), labels.tolist()):
            bad += 1
    return bad


def _grad_result(name: str, fn: Callable[[], lstm_core.GradCheckReport]) -> CheckResult:
    r = fn()
    return CheckResult(name, r.passed, f"max_rel_err={r.max_rel_err:.3e} over {r.n_checked} coords")


def run_selftest(corrupt_gradient: bool = False) -> list[CheckResult]:
    results = [
        _grad_result("lstm_gradient", lambda: lstm_gradient_check(corrupt=corrupt_gradient)),
        _grad_result("au_loss_gradient", au_gradient_check),
        _grad_result("siamese_pair_gradient", siamese_gradient_check),
        _grad_result("siamese_pair_gradient_squared", lambda: siamese_gradient_check("squared")),
    ]
    err = fv_hand_check()
    results.append(CheckResult("fisher_vector_hand_case", err <= 1e-9, f"max_abs_err={err:.3e}"))
    bad = auc_oracle_check()
    results.append(CheckResult("auc_pairwise_oracle", bad == 0, f"{bad} of 50 score sets disagree"))
    return results


if __name__ == "__main__":
    t = time.time()
    for r in run_selftest():
        print(("PASS" if r.passed else "FAIL"), r.name, r.detail)
    print(f"{time.time() - t:.1f}s")
