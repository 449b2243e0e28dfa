"""Weighted binary cross-entropy of LLR scores and affine calibration.

The objective, for an effective target prior pi, is

    C = -(pi/T) sum_targets log q_k - ((1-pi)/N) sum_impostors log(1-q_k)
    q_k = sigmoid(l_k + logit(pi)),   l_k = alpha * s_k + beta

reported in bits.  Affine calibration (alpha, beta) is fitted by a
deterministic full-batch Newton solver with optional quadratic penalties;
a small L2 ridge keeps the optimum finite on separable score sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import ScoreSet
from .errors import ConvergenceError, DegenerateDataError

LN2 = math.log(2.0)
FIT_RIDGE = 1e-6
_GRAD_TOL = 1e-8
_MAX_ITER = 200


@dataclass(frozen=True)
class EffectivePrior:
    pi: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.pi < 1.0):
            raise ValueError(f"effective prior must lie in (0, 1), got {self.pi}")

    @property
    def log_odds(self) -> float:
        return math.log(self.pi / (1.0 - self.pi))


@dataclass(frozen=True)
class GlobalCal:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("calibration parameters must be finite")


def _prior_value(pi) -> float:
    return pi.pi if isinstance(pi, EffectivePrior) else float(pi)


def _softplus(t):
    # log(1 + exp(t)), stable for large |t|
    return np.logaddexp(0.0, t)


def ce_nats(scores: np.ndarray, labels: np.ndarray, pi: float) -> float:
    """Weighted-mean cross-entropy in nats for llr scores and boolean labels.

    Sums run over sorted per-class scores so the value is exactly
    invariant to trial order.
    """
    tau = math.log(pi / (1.0 - pi))
    t = np.asarray(scores, dtype=np.float64) + tau
    labels = np.asarray(labels, dtype=bool)
    n_t = int(labels.sum())
    n_i = int((~labels).sum())
    if n_t == 0 or n_i == 0:
        raise DegenerateDataError("cross-entropy needs both target and impostor trials")
    # -log sigmoid(t) = softplus(-t);  -log(1 - sigmoid(t)) = softplus(t)
    loss_t = _softplus(-np.sort(t[labels])).sum() / n_t
    loss_i = _softplus(np.sort(t[~labels])).sum() / n_i
    return pi * loss_t + (1.0 - pi) * loss_i


def cross_entropy(scores: ScoreSet, pi=0.5) -> float:
    """Weighted cross-entropy of an llr ScoreSet, in bits."""
    p = _prior_value(pi)
    return ce_nats(scores.scores, scores.labels(), p) / LN2


def affine_objective(raw, labels, pi, alpha, beta, penalties=()):
    """Value (nats) and gradient of the calibration objective at (alpha, beta).

    penalties: iterable of (weight, (alpha0, beta0)) quadratic pulls
    weight * ||(alpha, beta) - (alpha0, beta0)||^2.
    """
    raw = np.asarray(raw, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    p = _prior_value(pi)
    tau = math.log(p / (1.0 - p))
    tgt = labels
    imp = ~labels
    n_t = int(tgt.sum())
    n_i = int(imp.sum())
    if n_t == 0 or n_i == 0:
        raise DegenerateDataError("calibration fit needs both trial classes")

    t = alpha * raw + beta + tau
    q = _sigmoid(t)
    w = np.where(labels, p / n_t, (1.0 - p) / n_i)
    y = labels.astype(np.float64)

    value = p * _softplus(-t[tgt]).sum() / n_t + (1.0 - p) * _softplus(t[imp]).sum() / n_i
    g = w * (q - y)
    grad = np.array([g @ raw, g.sum()])
    theta = np.array([alpha, beta])
    for weight, center in penalties:
        dv = theta - np.asarray(center, dtype=np.float64)
        value += weight * (dv @ dv)
        grad += 2.0 * weight * dv
    return value, grad


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def fit_affine(raw, labels, pi=0.5, penalties=((FIT_RIDGE, (0.0, 0.0)),),
               start=(1.0, 0.0)) -> GlobalCal:
    """Newton-with-line-search minimizer of the penalized objective.

    Deterministic: fixed start, fixed iteration rule, convergence at
    gradient infinity-norm below 1e-8.
    """
    raw = np.asarray(raw, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    # canonical trial order (label, score) makes the fit exactly
    # order-invariant
    order = np.lexsort((raw, labels))
    raw, labels = raw[order], labels[order]
    p = _prior_value(pi)
    tau = math.log(p / (1.0 - p))
    n_t = int(labels.sum())
    n_i = int((~labels).sum())
    if n_t == 0 or n_i == 0:
        raise DegenerateDataError("calibration fit needs both trial classes")
    w = np.where(labels, p / n_t, (1.0 - p) / n_i)
    pen_weight = 2.0 * sum(wt for wt, _ in penalties)

    theta = np.array(start, dtype=np.float64)
    value, grad = affine_objective(raw, labels, p, theta[0], theta[1], penalties)
    for _ in range(_MAX_ITER):
        if np.max(np.abs(grad)) < _GRAD_TOL:
            break
        t = theta[0] * raw + theta[1] + tau
        q = _sigmoid(t)
        h = w * q * (1.0 - q)
        H = np.array([
            [h @ (raw * raw) + pen_weight, h @ raw],
            [h @ raw, h.sum() + pen_weight],
        ])
        step = np.linalg.solve(H, -grad)
        slope = grad @ step
        scale = 1.0
        stepped = False
        while scale > 2.0 ** -40:
            cand = theta + scale * step
            v_new, g_new = affine_objective(raw, labels, p, cand[0], cand[1], penalties)
            if v_new <= value + 1e-4 * scale * slope:
                theta, value, grad = cand, v_new, g_new
                stepped = True
                break
            scale /= 2.0
        if not stepped:
            # no descent possible at float precision; treat as stationary
            break
    if np.max(np.abs(grad)) >= 1e-5:
        raise ConvergenceError("affine calibration fit did not converge")
    return GlobalCal(float(theta[0]), float(theta[1]))


def fit_global(scores: ScoreSet, pi=0.5) -> GlobalCal:
    """Fit the global affine calibration on a raw ScoreSet."""
    cal = fit_affine(scores.scores, scores.labels(), _prior_value(pi))
    if cal.alpha <= 0:
        import warnings

        warnings.warn("fitted calibration scale is non-positive; "
                      "targets may not outscore impostors", stacklevel=2)
    return cal


def apply_cal(score, cal: GlobalCal):
    """alpha * score + beta; accepts scalars or arrays."""
    return cal.alpha * np.asarray(score, dtype=np.float64) + cal.beta


def calibrate_scores(scores: ScoreSet, cal: GlobalCal) -> ScoreSet:
    return ScoreSet(scores.trials, apply_cal(scores.scores, cal), kind="llr")
