"""Two-covariance PLDA: closed-form moment fit and pairwise LLR scoring.

Scoring uses the bilinear form

    s(x1, x2) = 2 x1' Lambda x2 + x1' Gamma x1 + x2' Gamma x2
                + (x1 + x2)' c + k

whose coefficients are derived from the generative model
y ~ N(m, B), x | y ~ N(y, W) so that s equals the exact log-likelihood
ratio of the same-speaker vs different-speaker hypotheses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError

_SYM_TOL = 1e-10
_RIDGE_EPS = 1e-6


@dataclass(frozen=True)
class PldaScorer:
    Lambda: np.ndarray
    Gamma: np.ndarray
    c: np.ndarray
    k: float

    def __post_init__(self):
        L = np.asarray(self.Lambda, dtype=np.float64)
        G = np.asarray(self.Gamma, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        d = L.shape[0]
        if L.shape != (d, d) or G.shape != (d, d) or c.shape != (d,):
            raise ValueError("PldaScorer: inconsistent coefficient shapes")
        for M, name in ((L, "Lambda"), (G, "Gamma")):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"PldaScorer: non-finite {name}")
            if np.max(np.abs(M - M.T)) > _SYM_TOL:
                raise ValueError(f"PldaScorer: {name} not symmetric")
        if not (np.all(np.isfinite(c)) and np.isfinite(self.k)):
            raise ValueError("PldaScorer: non-finite c or k")
        object.__setattr__(self, "Lambda", L)
        object.__setattr__(self, "Gamma", G)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "k", float(self.k))

    @property
    def dim(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class TwoCovModel:
    B: np.ndarray
    W: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=np.float64)
        W = np.asarray(self.W, dtype=np.float64)
        m = np.asarray(self.m, dtype=np.float64)
        d = m.shape[0]
        if B.shape != (d, d) or W.shape != (d, d):
            raise ValueError("TwoCovModel: inconsistent shapes")
        w_min = np.linalg.eigvalsh(W)[0]
        if w_min <= 0:
            raise DegenerateDataError("within-speaker covariance not positive definite")
        b_min = np.linalg.eigvalsh(B)[0]
        if b_min < -_SYM_TOL * max(1.0, np.trace(B)):
            raise ValueError("between-speaker covariance not PSD")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "m", m)

    @property
    def dim(self) -> int:
        return self.m.shape[0]


def fit_two_cov(labelled_vectors) -> TwoCovModel:
    """Moment estimation from (speaker_id, vector) pairs.

    W pools within-speaker covariance over all samples; B is the equally
    weighted covariance of speaker means minus the W/n correction (n the
    harmonic mean of per-speaker counts), eigenvalue-clipped to PSD.
    """
    by_spk: dict[str, list[np.ndarray]] = {}
    for spk, vec in labelled_vectors:
        by_spk.setdefault(spk, []).append(np.asarray(vec, dtype=np.float64))
    by_spk = {s: np.array(v) for s, v in by_spk.items() if len(v) >= 2}
    if len(by_spk) < 2:
        raise DegenerateDataError("two-covariance fit needs >= 2 speakers with >= 2 samples")

    all_x = np.concatenate(list(by_spk.values()), axis=0)
    n, d = all_x.shape
    m = all_x.mean(axis=0)

    Sw = np.zeros((d, d))
    means = np.zeros((len(by_spk), d))
    inv_counts = np.zeros(len(by_spk))
    for i, vecs in enumerate(by_spk.values()):
        mu = vecs.mean(axis=0)
        means[i] = mu
        inv_counts[i] = 1.0 / len(vecs)
        R = vecs - mu
        Sw += R.T @ R
    W = Sw / n

    ridge = _RIDGE_EPS * np.trace(W) / d
    W = W + ridge * np.eye(d)
    if np.linalg.eigvalsh(W)[0] <= 0:
        raise DegenerateDataError("within-speaker covariance singular after ridge")

    mbar = means.mean(axis=0)
    Md = means - mbar
    B_raw = Md.T @ Md / len(by_spk) - W * inv_counts.mean()
    evals, evecs = np.linalg.eigh((B_raw + B_raw.T) / 2.0)
    B = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
    B = (B + B.T) / 2.0
    return TwoCovModel(B, W, m)


def two_cov_to_scorer(model: TwoCovModel) -> PldaScorer:
    """Closed-form LLR coefficients for the two-covariance model.

    With T = B + W the joint same-speaker covariance [[T, B], [B, T]]
    block-diagonalizes into T + B and T - B, giving

        Lambda = (inv(W) - inv(W + 2B)) / 4
        Gamma  = inv(B + W) / 2 - (inv(W + 2B) + inv(W)) / 4
        k0     = logdet(B + W) - logdet(W + 2B)/2 - logdet(W)/2

    and the mean shift folds into c and k.
    """
    B, W, m = model.B, model.W, model.m
    d = model.dim
    eye = np.eye(d)
    F = np.linalg.solve(W, eye)
    E = np.linalg.solve(W + 2.0 * B, eye)
    G = np.linalg.solve(B + W, eye)
    F = (F + F.T) / 2.0
    E = (E + E.T) / 2.0
    G = (G + G.T) / 2.0

    Lam = (F - E) / 4.0
    Gam = G / 2.0 - (E + F) / 4.0

    sign_t, logdet_t = np.linalg.slogdet(B + W)
    sign_s, logdet_s = np.linalg.slogdet(W + 2.0 * B)
    sign_w, logdet_w = np.linalg.slogdet(W)
    if min(sign_t, sign_s, sign_w) <= 0:
        raise DegenerateDataError("covariance with non-positive determinant")
    k0 = logdet_t - logdet_s / 2.0 - logdet_w / 2.0

    c = -2.0 * (Lam + Gam) @ m
    k = 2.0 * m @ (Lam + Gam) @ m + k0
    return PldaScorer(Lam, Gam, c, float(k))


def plda_score(x1, x2, scorer: PldaScorer) -> float:
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != (scorer.dim,) or x2.shape != (scorer.dim,):
        raise ValueError("plda_score: dimension mismatch")
    return float(plda_score_pairs(x1[None, :], x2[None, :], scorer)[0])


def plda_score_pairs(X1, X2, scorer: PldaScorer) -> np.ndarray:
    """Vectorized plda_score over parallel rows of X1 and X2.

    The cross term is evaluated once per argument order and summed, so
    swapping the sides reproduces the value bit-exactly.
    """
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    L, G = scorer.Lambda, scorer.Gamma
    cross = (X1 * (X2 @ L)).sum(axis=1) + (X2 * (X1 @ L)).sum(axis=1)
    quad = (X1 * (X1 @ G)).sum(axis=1) + (X2 * (X2 @ G)).sum(axis=1)
    return cross + quad + (X1 + X2) @ scorer.c + scorer.k
