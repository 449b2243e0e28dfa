"""Trial-based calibration: a per-trial affine calibration fitted on
condition-similar data.

For each verification trial, enrollment-side and test-side calibration
samples are selected independently from a labelled pool, ranked by a
condition-similarity score from a PLDA model trained on condition (not
speaker) labels.  Each side keeps the smallest ranked prefix whose
same-speaker pair count reaches the configured goal.  The calibration
parameters are fitted on all cross pairs of the two selections
(same-session target pairs excluded), regularized toward the global
calibration; an empty or one-class selection falls back to the global
calibration exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import FIT_RIDGE, GlobalCal, apply_cal, fit_affine
from .data import EmbeddingSet, ScoreSet
from .errors import DegenerateDataError
from .frontend import FrontEnd, apply_front, apply_front_matrix, fit_lda
from .plda import PldaScorer, fit_two_cov, plda_score_pairs, two_cov_to_scorer


@dataclass(frozen=True)
class CondPlda:
    fe_c: FrontEnd
    scorer_c: PldaScorer


@dataclass(frozen=True)
class TbcConfig:
    global_cal: GlobalCal
    target_trial_goal: int = 100
    reg_weight: float = 0.02
    pi: float = 0.5

    def __post_init__(self):
        if self.target_trial_goal < 1:
            raise ValueError("target_trial_goal must be at least 1")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be non-negative")


def fit_cond_plda(cal_pool: EmbeddingSet, lda_dim: int | None = None) -> CondPlda:
    """Condition-similarity PLDA: the two-covariance fit with the
    condition string as the class label."""
    labels = [cal_pool.meta[sid].condition if sid in cal_pool.meta else None
              for sid in cal_pool.ids]
    if any(lab is None for lab in labels):
        raise DegenerateDataError("condition PLDA needs metadata for every pool sample")
    if len(set(labels)) < 2:
        raise DegenerateDataError("condition PLDA needs at least 2 distinct conditions")
    out_dim = cal_pool.dim if lda_dim is None else lda_dim
    fe_c, _ = fit_lda(cal_pool, labels, out_dim)
    T = apply_front_matrix(cal_pool.vectors, fe_c)
    model = fit_two_cov(zip(labels, T))
    return CondPlda(fe_c, two_cov_to_scorer(model))


class TbcScorer:
    """Bundles the speaker backend, the condition model and the pool."""

    def __init__(self, speaker_fe: FrontEnd, speaker_scorer: PldaScorer,
                 cond: CondPlda, pool: EmbeddingSet, cfg: TbcConfig):
        missing = [sid for sid in pool.ids if sid not in pool.meta]
        if missing:
            raise DegenerateDataError("TBC pool needs metadata for every sample")
        self.fe = speaker_fe
        self.scorer = speaker_scorer
        self.cond = cond
        self.pool = pool
        self.cfg = cfg
        self.pool_spk = apply_front_matrix(pool.vectors, speaker_fe)
        self.pool_cond = apply_front_matrix(pool.vectors, cond.fe_c)
        self._speakers = np.array([pool.meta[sid].speaker_id for sid in pool.ids])
        self._sessions = np.array([pool.meta[sid].session_id for sid in pool.ids])

    def similarity(self, side_vec) -> np.ndarray:
        """Condition-similarity of one raw embedding to every pool sample."""
        q = apply_front(np.asarray(side_vec, dtype=np.float64), self.cond.fe_c)
        Q = np.broadcast_to(q, self.pool_cond.shape)
        return plda_score_pairs(Q, self.pool_cond, self.cond.scorer_c)

    def select_subset(self, side_vec):
        """Ranked-prefix selection for one trial side.

        Returns (row indices into the pool, goal_reached).  Ranking is by
        descending similarity with sample_id as the tie-break; the prefix
        stops once its unordered same-speaker pair count reaches the goal.
        """
        sim = self.similarity(side_vec)
        order = sorted(range(len(self.pool)),
                       key=lambda i: (-sim[i], self.pool.ids[i]))
        goal = self.cfg.target_trial_goal
        pairs = 0
        counts: dict[str, int] = {}
        prefix: list[int] = []
        for i in order:
            spk = self._speakers[i]
            pairs += counts.get(spk, 0)
            counts[spk] = counts.get(spk, 0) + 1
            prefix.append(i)
            if pairs >= goal:
                return prefix, True
        return prefix, False

    def score_trial(self, x1, x2) -> float:
        """Per-trial calibrated LLR for a pair of raw embeddings."""
        xt1 = apply_front(np.asarray(x1, dtype=np.float64), self.fe)
        xt2 = apply_front(np.asarray(x2, dtype=np.float64), self.fe)
        s = plda_score_pairs(xt1[None, :], xt2[None, :], self.scorer)[0]

        enroll, _ = self.select_subset(x1)
        test, _ = self.select_subset(x2)
        raw, labels = self._calibration_trials(enroll, test)
        gc = self.cfg.global_cal
        if raw.size == 0 or labels.all() or not labels.any():
            return float(apply_cal(s, gc))
        cal = fit_affine(raw, labels, self.cfg.pi,
                         penalties=((FIT_RIDGE, (0.0, 0.0)),
                                    (self.cfg.reg_weight, (gc.alpha, gc.beta))),
                         start=(gc.alpha, gc.beta))
        return float(apply_cal(s, cal))

    def _calibration_trials(self, enroll_rows, test_rows):
        """Cross pairs of the two selections, minus self pairs and
        same-session target pairs."""
        E = np.asarray(enroll_rows, dtype=np.intp)
        T = np.asarray(test_rows, dtype=np.intp)
        ii = np.repeat(E, T.size)
        jj = np.tile(T, E.size)
        keep = ii != jj
        same_spk = self._speakers[ii] == self._speakers[jj]
        same_sess = self._sessions[ii] == self._sessions[jj]
        keep &= ~(same_spk & same_sess)
        ii, jj = ii[keep], jj[keep]
        labels = self._speakers[ii] == self._speakers[jj]
        raw = plda_score_pairs(self.pool_spk[ii], self.pool_spk[jj], self.scorer)
        return raw, labels

    def score_trials(self, emb: EmbeddingSet, trials) -> ScoreSet:
        out = np.zeros(len(trials))
        for k, t in enumerate(trials):
            out[k] = self.score_trial(emb.vector(t.enroll_id), emb.vector(t.test_id))
        return ScoreSet(list(trials), out, kind="llr")


def tbc_score(x1, x2, speaker_fe, speaker_scorer, cal_pool, cond, cfg) -> float:
    """One-shot wrapper around TbcScorer for a single trial."""
    return TbcScorer(speaker_fe, speaker_scorer, cond, cal_pool, cfg).score_trial(x1, x2)
