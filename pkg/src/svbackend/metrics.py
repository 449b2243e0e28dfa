"""Score-quality metrics: Cllr, min-Cllr via PAV, and EER.

Cllr is the weighted binary cross-entropy of the scores read as LLRs at a
0.5 prior, in bits.  min-Cllr applies the optimal monotone recalibration
found by pool-adjacent-violators before measuring, isolating pure
discrimination.  EER is the diagonal crossing of the convex frontier of
the achievable (false-alarm, miss) operating points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calibration import LN2, ce_nats
from .data import ScoreSet
from .errors import DegenerateDataError

PAV_EPS = 1e-6


@dataclass(frozen=True)
class EvalReport:
    actual_cllr: float
    min_cllr: float
    eer: float
    n_target: int
    n_impostor: int

    def __post_init__(self):
        if self.min_cllr > self.actual_cllr + 1e-12:
            raise ValueError("min_cllr above actual_cllr")
        if not (0.0 <= self.eer <= 0.5 + 1e-12):
            raise ValueError("eer out of range")


def cllr(scores: ScoreSet) -> float:
    """Cross-entropy of llr scores at prior 0.5, in bits."""
    return ce_nats(scores.scores, scores.labels(), 0.5) / LN2


class PavCalibrator:
    """Monotone step function from raw score to LLR, fitted with PAV."""

    def __init__(self, boundaries, llrs):
        self.boundaries = np.asarray(boundaries, dtype=np.float64)
        self.llrs = np.asarray(llrs, dtype=np.float64)
        if self.llrs.size != self.boundaries.size + 1:
            raise ValueError("need one LLR level per segment")

    def __call__(self, scores):
        scores = np.asarray(scores, dtype=np.float64)
        idx = np.searchsorted(self.boundaries, scores, side="left")
        return self.llrs[idx]


def _pav_blocks(y, w):
    """Stack-based pool-adjacent-violators on pre-sorted responses.

    Returns (values, target weight, total weight, points per block);
    values come out strictly increasing.
    """
    vals: list[float] = []
    tgt: list[float] = []
    cnt: list[float] = []
    npts: list[int] = []
    for yi, wi in zip(y, w):
        vals.append(yi)
        tgt.append(yi * wi)
        cnt.append(wi)
        npts.append(1)
        while len(vals) > 1 and vals[-2] >= vals[-1]:
            t = tgt[-2] + tgt[-1]
            n = cnt[-2] + cnt[-1]
            k = npts[-2] + npts[-1]
            del vals[-1], tgt[-1], cnt[-1], npts[-1]
            vals[-1] = t / n
            tgt[-1] = t
            cnt[-1] = n
            npts[-1] = k
    return np.array(vals), np.array(tgt), np.array(cnt), np.array(npts)


def pav_calibrate(scores, labels) -> PavCalibrator:
    """Fit the optimal monotone score-to-LLR map.

    Tied scores are merged before pooling.  Block posteriors of exactly 0
    or 1 (only the endpoints can be) receive PAV_EPS pseudo-counts before
    the logit so separable data maps to finite LLRs; subtracting the
    empirical prior log odds makes the output proper LLRs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_t = int(labels.sum())
    n_i = int((~labels).sum())
    if n_t == 0 or n_i == 0:
        raise DegenerateDataError("PAV needs both trial classes")

    uniq, inv = np.unique(scores, return_inverse=True)
    t_at = np.zeros(uniq.size)
    n_at = np.zeros(uniq.size)
    np.add.at(t_at, inv, labels.astype(np.float64))
    np.add.at(n_at, inv, 1.0)

    vals, tgt, cnt, npts = _pav_blocks(t_at / n_at, n_at)
    smooth = (vals <= 0.0) | (vals >= 1.0)
    p = np.where(smooth, (tgt + PAV_EPS) / (cnt + 2.0 * PAV_EPS), vals)
    block_llr = np.log(p) - np.log1p(-p) - math.log(n_t / n_i)

    last_of_block = np.cumsum(npts) - 1
    return PavCalibrator(uniq[last_of_block[:-1]], block_llr)


def min_cllr(scores: ScoreSet) -> float:
    """Cllr after optimal monotone recalibration, in bits."""
    labels = scores.labels()
    cal = pav_calibrate(scores.scores, labels)
    return ce_nats(cal(scores.scores), labels, 0.5) / LN2


def _operating_points(scores, labels):
    """(fa, miss) at thresholds 'accept if score > u' for u in
    {-inf} + unique scores; fa comes out non-increasing."""
    tgt = np.sort(scores[labels])
    imp = np.sort(scores[~labels])
    uniq = np.unique(scores)
    miss = np.searchsorted(tgt, uniq, side="right") / tgt.size
    fa = 1.0 - np.searchsorted(imp, uniq, side="right") / imp.size
    return np.concatenate(([1.0], fa)), np.concatenate(([0.0], miss))


def eer(scores: ScoreSet) -> float:
    """Equal error rate: crossing of the convex (fa, miss) frontier with
    the diagonal, linearly interpolated between operating points."""
    labels = scores.labels()
    if labels.all() or not labels.any():
        raise DegenerateDataError("EER needs both trial classes")
    fa, miss = _operating_points(scores.scores, labels)

    # lower convex frontier over points ordered by decreasing fa: drop a
    # middle point on or above the chord of its neighbours
    hull: list[tuple[float, float]] = [(fa[0], miss[0])]
    for point in zip(fa[1:], miss[1:]):
        hull.append(point)
        while len(hull) >= 3:
            (x1, y1), (x2, y2), (x3, y3) = hull[-3:]
            if (y2 - y1) * (x3 - x1) <= (y3 - y1) * (x2 - x1):
                del hull[-2]
            else:
                break
    for (x1, y1), (x2, y2) in zip(hull[:-1], hull[1:]):
        d1 = y1 - x1
        d2 = y2 - x2
        if d1 <= 0.0 <= d2:
            if d2 == d1:
                return float(x1)
            lam = -d1 / (d2 - d1)
            return float(x1 + lam * (x2 - x1))
    # frontier starts at (1, 0) and ends at (0, 1), so this is unreachable
    raise RuntimeError("operating-point frontier never crossed the diagonal")


def evaluate_scores(scores: ScoreSet) -> EvalReport:
    labels = scores.labels()
    return EvalReport(
        actual_cllr=cllr(scores),
        min_cllr=min_cllr(scores),
        eer=eer(scores),
        n_target=int(labels.sum()),
        n_impostor=int((~labels).sum()),
    )
