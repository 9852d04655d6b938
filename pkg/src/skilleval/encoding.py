"""Frame encoding: PCA projection, diagonal GMM, per-frame Fisher Vectors."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

ENC_MAGIC = "SKILLEVAL-ENC v1"


class EncodingError(ValueError):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray  # (D_raw,)
    basis: np.ndarray  # (D_raw, D_pca), orthonormal columns
    eigenvalues: np.ndarray  # (D_pca,), descending

    @property
    def d_pca(self) -> int:
        return self.basis.shape[1]

    @property
    def d_raw(self) -> int:
        return self.basis.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.d_raw:
            raise EncodingError(f"frame dimension {X.shape[-1]} != PCA input dimension {self.d_raw}")
        # einsum keeps per-row arithmetic identical whether one frame or many are projected
        return np.einsum("...j,jk->...k", X - self.mean, self.basis)

    def inverse_transform(self, Y: np.ndarray) -> np.ndarray:
        return Y @ self.basis.T + self.mean


def fit_pca(X: np.ndarray, d_pca: int, rank_tol: float = 1e-10) -> PcaModel:
    """Top-``d_pca`` eigenvectors of the sample covariance, eigenvalue-descending.

    Each basis column is sign-fixed so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise EncodingError(f"expected an (N, D) matrix, got shape {X.shape}")
    N, D = X.shape
    if not 1 <= d_pca <= D or N <= d_pca:
        raise EncodingError(f"need N > d_pca >= 1 and d_pca <= D; got N={N}, D={D}, d_pca={d_pca}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (N - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    rank = int(np.sum(evals > rank_tol * max(evals[0], np.finfo(float).tiny)))
    if d_pca > rank:
        raise EncodingError(f"d_pca={d_pca} exceeds the effective rank {rank} of the data")
    basis = evecs[:, :d_pca]
    flip = np.sign(basis[np.abs(basis).argmax(axis=0), np.arange(d_pca)])
    basis = basis * flip
    return PcaModel(mean=mean, basis=np.ascontiguousarray(basis), eigenvalues=evals[:d_pca].copy())


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)
    variance_floor: float = 1e-6
    history: list[float] = field(default_factory=list, compare=False)  # mean train log-likelihood per EM step

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        """(N, K) matrix of log w_k + log N(x | mu_k, diag var_k)."""
        X = np.atleast_2d(X)
        diff2 = (X[:, None, :] - self.means[None]) ** 2 / self.variances[None]
        log_norm = -0.5 * (self.dim * np.log(2 * np.pi) + np.log(self.variances).sum(axis=1))
        return np.log(self.weights) + log_norm - 0.5 * diff2.sum(axis=2)

    def responsibilities(self, X: np.ndarray) -> np.ndarray:
        lj = self.log_joint(X)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def mean_log_likelihood(self, X: np.ndarray) -> float:
        return float(logsumexp(self.log_joint(X), axis=1).mean())


def _farthest_point_init(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centres = [X[rng.integers(len(X))]]
    d2 = ((X - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        centres.append(X[int(d2.argmax())])
        d2 = np.minimum(d2, ((X - centres[-1]) ** 2).sum(axis=1))
    return np.array(centres)


def fit_gmm(
    X: np.ndarray,
    K: int,
    em_iters: int = 25,
    seed: int = 0,
    variance_floor: float = 1e-6,
) -> GmmModel:
    """Diagonal-covariance GMM by EM from a farthest-point hard-assignment start.

    ``history`` holds the mean log-likelihood before every EM step and after
    the last one.  Components that lose all their mass are re-seeded on a
    random datum.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise EncodingError(f"expected an (N, D) matrix, got shape {X.shape}")
    N, D = X.shape
    if not 1 <= K <= N:
        raise EncodingError(f"need N >= K >= 1, got N={N}, K={K}")
    if variance_floor <= 0:
        raise EncodingError("variance_floor must be positive")
    rng = np.random.default_rng(seed)
    global_var = np.maximum(X.var(axis=0), variance_floor)

    centres = _farthest_point_init(X, K, rng)
    assign = ((X[:, None, :] - centres[None]) ** 2).sum(axis=2).argmin(axis=1)
    weights = np.empty(K)
    means = np.empty((K, D))
    variances = np.empty((K, D))
    for k in range(K):
        members = X[assign == k]
        if len(members) == 0:
            log.info("GMM init: component %d empty, re-seeding from a random datum", k)
            members = X[rng.integers(N)][None]
        weights[k] = max(len(members), 1) / N
        means[k] = members.mean(axis=0)
        variances[k] = members.var(axis=0) if len(members) > 1 else global_var
    weights /= weights.sum()
    gmm = GmmModel(weights, means, np.maximum(variances, variance_floor), variance_floor)

    for _ in range(em_iters):
        lj = gmm.log_joint(X)
        lse = logsumexp(lj, axis=1, keepdims=True)
        gmm.history.append(float(lse.mean()))
        resp = np.exp(lj - lse)
        Nk = resp.sum(axis=0)
        new_w = np.empty(K)
        new_mu = np.empty((K, D))
        new_var = np.empty((K, D))
        for k in range(K):
            if Nk[k] < 1e-10 * N:
                log.info("GMM EM: component %d collapsed, re-seeding from a random datum", k)
                new_w[k] = 1.0 / N
                new_mu[k] = X[rng.integers(N)]
                new_var[k] = global_var
                continue
            r = resp[:, k]
            new_w[k] = Nk[k] / N
            new_mu[k] = r @ X / Nk[k]
            new_var[k] = r @ (X - new_mu[k]) ** 2 / Nk[k]
        gmm = GmmModel(
            new_w / new_w.sum(),
            new_mu,
            np.maximum(new_var, variance_floor),
            variance_floor,
            gmm.history,
        )
    gmm.history.append(gmm.mean_log_likelihood(X))
    return gmm


# -- Fisher vectors ------------------------------------------------------------


def fisher_vector_raw(gmm: GmmModel, X: np.ndarray) -> np.ndarray:
    """Unnormalised FVs for each row of X: (N, 2*K*D), mean block then variance block."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != gmm.dim:
        raise EncodingError(f"frame dimension {X.shape[1]} != GMM dimension {gmm.dim}")
    if not np.all(np.isfinite(X)):
        raise EncodingError("non-finite value in frame")
    gamma = gmm.responsibilities(X)[:, :, None]  # (N, K, 1)
    z = (X[:, None, :] - gmm.means[None]) / np.sqrt(gmm.variances)[None]
    w = gmm.weights[None, :, None]
    d_mean = gamma * z / np.sqrt(w)
    d_var = gamma * (z * z - 1.0) / np.sqrt(2.0 * w)
    N = X.shape[0]
    return np.concatenate([d_mean.reshape(N, -1), d_var.reshape(N, -1)], axis=1)


def normalize_fv(V: np.ndarray, power: float = 0.5) -> np.ndarray:
    """Signed power then row-wise L2 normalisation; all-zero rows stay zero."""
    V = np.sign(V) * np.abs(V) ** power
    norms = np.linalg.norm(V, axis=-1, keepdims=True)
    return np.divide(V, norms, out=np.zeros_like(V), where=norms > 0)


def encode_fv(gmm: GmmModel, frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise EncodingError(f"expected a single frame vector, got shape {frame.shape}")
    return normalize_fv(fisher_vector_raw(gmm, frame[None]))[0]


def encode_sequence(pca: PcaModel, gmm: GmmModel, seq: np.ndarray) -> np.ndarray:
    """Per-frame normalised FVs, (T, 2*K*D_pca)."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != pca.d_raw:
        raise EncodingError(f"sequence shape {seq.shape} does not match PCA input dimension {pca.d_raw}")
    return normalize_fv(fisher_vector_raw(gmm, pca.transform(seq)))


def encode_segment_pooled(pca: PcaModel, gmm: GmmModel, seq: np.ndarray) -> np.ndarray:
    """One FV for a whole segment: mean of raw per-frame FVs, then normalised."""
    raw = fisher_vector_raw(gmm, pca.transform(np.asarray(seq, dtype=np.float64)))
    return normalize_fv(raw.mean(axis=0))


@dataclass
class Encoder:
    pca: PcaModel
    gmm: GmmModel

    @property
    def fv_dim(self) -> int:
        return 2 * self.gmm.K * self.pca.d_pca

    def encode(self, seq: np.ndarray, stride: int = 1) -> np.ndarray:
        return encode_sequence(self.pca, self.gmm, np.asarray(seq)[::stride])


def fit_encoder(
    frames: np.ndarray, d_pca: int = 8, K: int = 8, em_iters: int = 25, seed: int = 0, variance_floor: float = 1e-6
) -> Encoder:
    pca = fit_pca(frames, d_pca)
    gmm = fit_gmm(pca.transform(frames), K, em_iters, seed, variance_floor)
    return Encoder(pca, gmm)


# -- persistence ---------------------------------------------------------------


def _model_payload(model) -> tuple[str, dict]:
    if isinstance(model, PcaModel):
        return "pca", {"mean": model.mean.tolist(), "basis": model.basis.tolist(),
                       "eigenvalues": model.eigenvalues.tolist()}
    if isinstance(model, GmmModel):
        return "gmm", {"weights": model.weights.tolist(), "means": model.means.tolist(),
                       "variances": model.variances.tolist(), "variance_floor": model.variance_floor,
                       "history": list(model.history)}
    raise TypeError(f"cannot serialise {type(model).__name__}")


def save_model(path, model) -> None:
    kind, payload = _model_payload(model)
    # json writes floats with repr(), which round-trips exactly
    text = f"{ENC_MAGIC} kind={kind}\n" + json.dumps(payload) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_model(path):
    path = Path(path)
    if not path.is_file():
        raise EncodingError(f"{path}: encoder model file missing")
    head, _, body = path.read_text(encoding="utf-8").partition("\n")
    if not head.startswith(ENC_MAGIC + " kind="):
        raise EncodingError(f"{path}: bad header {head!r}")
    kind = head.split("kind=", 1)[1].strip()
    try:
        d = json.loads(body)
        if kind == "pca":
            return PcaModel(np.array(d["mean"]), np.array(d["basis"]), np.array(d["eigenvalues"]))
        if kind == "gmm":
            return GmmModel(np.array(d["weights"]), np.array(d["means"]), np.array(d["variances"]),
                            float(d["variance_floor"]), list(d.get("history", [])))
    except (ValueError, KeyError) as exc:
        raise EncodingError(f"{path}: malformed model body ({exc!r})") from None
    raise EncodingError(f"{path}: unknown model kind {kind!r}")


def save_encoder(directory, enc: Encoder) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_model(d / "pca.enc", enc.pca)
    save_model(d / "gmm.enc", enc.gmm)


def load_encoder(directory) -> Encoder:
    d = Path(directory)
    pca, gmm = load_model(d / "pca.enc"), load_model(d / "gmm.enc")
    if not isinstance(pca, PcaModel) or not isinstance(gmm, GmmModel) or gmm.dim != pca.d_pca:
        raise EncodingError(f"{d}: inconsistent encoder files")
    return Encoder(pca, gmm)
