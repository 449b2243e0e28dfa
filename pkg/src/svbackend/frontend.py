"""Linear front-end: scaled LDA projection, mean removal, length norm.

The transform applied to an embedding x is ``Norm(P x + mu)`` where Norm
divides by the L2 norm.  ``P`` holds discriminant directions scaled so
each output coordinate has unit variance over the fitting data, and
``mu = -P @ global_mean`` so the affine output is zero-mean there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateDataError

_RIDGE_EPS = 1e-6
_NORM_FLOOR = 1e-30


@dataclass(frozen=True)
class FrontEnd:
    P: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        if P.ndim != 2 or mu.shape != (P.shape[0],):
            raise ValueError("FrontEnd: P must be (out_dim, in_dim), mu (out_dim,)")
        if P.shape[0] > P.shape[1]:
            raise ValueError("FrontEnd: out_dim must not exceed in_dim")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(mu))):
            raise ValueError("FrontEnd: non-finite entries")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "mu", mu)

    @property
    def out_dim(self) -> int:
        return self.P.shape[0]

    @property
    def in_dim(self) -> int:
        return self.P.shape[1]

    def rows(self, start: int, stop: int) -> "FrontEnd":
        """Sub-front-end using a contiguous slice of projection rows."""
        return FrontEnd(self.P[start:stop], self.mu[start:stop])


def _scatter_matrices(X, speakers):
    """Per-sample within/between scatter and the total covariance.

    Speakers with fewer than two samples are dropped before estimation.
    Returns (Sw, Sb, C, global_mean, n_speakers_kept).
    """
    speakers = np.asarray(speakers)
    uniq, inv, counts = np.unique(speakers, return_inverse=True, return_counts=True)
    keep_cls = counts >= 2
    keep = keep_cls[inv]
    X = X[keep]
    inv = inv[keep]
    uniq_kept = np.flatnonzero(keep_cls)
    if uniq_kept.size < 2:
        raise DegenerateDataError("LDA needs at least 2 speakers with >= 2 samples")
    n, d = X.shape
    gmean = X.mean(axis=0)
    Xc = X - gmean
    C = Xc.T @ Xc / n

    means = np.zeros((uniq.size, d))
    np.add.at(means, inv, X)
    cnt = np.zeros(uniq.size)
    np.add.at(cnt, inv, 1.0)
    means[uniq_kept] /= cnt[uniq_kept, None]

    R = X - means[inv]
    Sw = R.T @ R / n
    Md = means[uniq_kept] - gmean
    Sb = (Md * cnt[uniq_kept, None]).T @ Md / n
    return Sw, Sb, C, gmean, uniq_kept.size


def fit_lda(emb_set, speaker_labels, out_dim: int):
    """Fit the front-end on labelled embeddings.

    Solves the generalized eigenproblem (between-scatter, within-scatter)
    with a relative ridge on the within-scatter.  All in_dim directions are
    kept, ordered by descending discriminability, each scaled to unit
    variance of the projected fitting data; directions beyond the
    informative rank are the within-whitened complement in residual
    variance order.

    Returns (front_end, full_basis) where full_basis is the complete
    in_dim-row FrontEnd; callers slice rows off either end.
    """
    X = emb_set.vectors if hasattr(emb_set, "vectors") else np.asarray(emb_set, dtype=np.float64)
    if not 1 <= out_dim <= X.shape[1]:
        raise ValueError(f"out_dim must be in [1, {X.shape[1]}], got {out_dim}")
    Sw, Sb, C, gmean, _ = _scatter_matrices(X, speaker_labels)

    ridge = _RIDGE_EPS * np.trace(Sw) / Sw.shape[0]
    Sw_reg = Sw + ridge * np.eye(Sw.shape[0])
    min_eig = scipy.linalg.eigvalsh(Sw_reg, subset_by_index=[0, 0])[0]
    if min_eig <= 0 or not np.isfinite(min_eig):
        raise DegenerateDataError("within-speaker scatter singular after ridge")

    evals, evecs = scipy.linalg.eigh(Sb, Sw_reg)
    order = np.argsort(evals)[::-1]
    V = evecs[:, order]

    # canonical sign: largest-magnitude coefficient positive
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    V = V * signs

    var = np.einsum("ij,jk,ki->i", V.T, C, V)
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise DegenerateDataError("projected variance non-positive; degenerate data")
    V = V / np.sqrt(var)

    P_full = V.T
    mu_full = -P_full @ gmean
    full = FrontEnd(P_full, mu_full)
    return full.rows(0, out_dim), full


def apply_front(x, fe: FrontEnd) -> np.ndarray:
    """Norm(P x + mu) for a single vector; output has unit L2 norm."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (fe.in_dim,):
        raise ValueError(f"expected vector of dim {fe.in_dim}, got shape {x.shape}")
    a = fe.P @ x + fe.mu
    n = np.linalg.norm(a)
    if n < _NORM_FLOOR:
        raise DegenerateDataError("zero vector after affine step; cannot length-normalize")
    return a / n


def apply_front_matrix(X, fe: FrontEnd) -> np.ndarray:
    """Row-wise apply_front for an (n, in_dim) matrix."""
    X = np.asarray(X, dtype=np.float64)
    A = X @ fe.P.T + fe.mu
    norms = np.linalg.norm(A, axis=1)
    if np.any(norms < _NORM_FLOOR):
        raise DegenerateDataError("zero vector after affine step; cannot length-normalize")
    return A / norms[:, None]
