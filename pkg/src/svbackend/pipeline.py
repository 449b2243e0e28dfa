"""End-to-end fitting helpers shared by the CLI, scripts and tests."""

from __future__ import annotations

import numpy as np

from .calibration import GlobalCal, fit_global
from .data import EmbeddingSet, ScoreSet
from .dplda import DpldaModel, warm_start
from .errors import DegenerateDataError
from .frontend import apply_front_matrix, fit_lda
from .plda import fit_two_cov, plda_score_pairs, two_cov_to_scorer
from .synth import sample_trials


def speaker_labels(emb: EmbeddingSet) -> list[str]:
    missing = [sid for sid in emb.ids if sid not in emb.meta]
    if missing:
        raise DegenerateDataError(f"{len(missing)} samples lack metadata")
    return [emb.meta[sid].speaker_id for sid in emb.ids]


def fit_backend(train_set: EmbeddingSet, lda_dim: int):
    """LDA front end plus two-covariance scorer fitted on a labelled set.

    Returns (front_end, full_basis, scorer).
    """
    labels = speaker_labels(train_set)
    fe, full = fit_lda(train_set, labels, lda_dim)
    T = apply_front_matrix(train_set.vectors, fe)
    scorer = two_cov_to_scorer(fit_two_cov(zip(labels, T)))
    return fe, full, scorer


def raw_score_set(fe, scorer, emb: EmbeddingSet, trials) -> ScoreSet:
    row_of = {sid: i for i, sid in enumerate(emb.ids)}
    X = apply_front_matrix(emb.vectors, fe)
    ii = np.array([row_of[t.enroll_id] for t in trials], dtype=np.intp)
    jj = np.array([row_of[t.test_id] for t in trials], dtype=np.intp)
    return ScoreSet(list(trials), plda_score_pairs(X[ii], X[jj], scorer), kind="raw")


def fit_calibration(fe, scorer, emb: EmbeddingSet, trials, pi=0.5) -> GlobalCal:
    return fit_global(raw_score_set(fe, scorer, emb, trials), pi)


def init_model(train_set: EmbeddingSet, lda_dim: int, m_dim: int, z_dim: int,
               seed: int = 0, pi: float = 0.5, cal_condition: str | None = None,
               n_cal_target: int = 2000, n_cal_impostor: int = 10000,
               cal_seed: int = 9, init_mode: str = "warm",
               use_gamma: bool = False) -> DpldaModel:
    """Fit the baseline backend and wrap it in a warm-started joint model.

    Calibration trials are sampled from the training pool, optionally
    restricted to one condition (the single-condition baselines).
    """
    fe, full, scorer = fit_backend(train_set, lda_dim)
    trials = sample_trials(train_set, n_cal_target, n_cal_impostor, cal_seed,
                           condition=cal_condition)
    if not trials:
        raise DegenerateDataError("no calibration trials could be sampled")
    cal = fit_calibration(fe, scorer, train_set, trials, pi)
    return warm_start(full, scorer, cal, lda_dim, m_dim, z_dim, seed,
                      pi=pi, init_mode=init_mode, use_gamma=use_gamma)
