"""Synthetic multi-condition embedding generator with exact-LLR oracles.

Samples follow a two-covariance generative model per condition: a speaker
vector y ~ N(0, B0) shared across all of that speaker's samples, and

    x = y + mean_shift_c + within_scale_c * e,   e ~ N(0, W0)

so condition c has generative parameters (B0, within_scale_c^2 * W0,
mean_shift_c).  Sessions group samples and rotate through the condition
list, so every speaker appears in every condition when it has enough
sessions.  All randomness comes from numpy's PCG64 generator seeded from
the config, making output bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import IMPOSTOR, TARGET, EmbeddingSet, SampleMeta, Trial
from .plda import TwoCovModel


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    domain: str
    mean_shift: np.ndarray
    within_scale: float = 1.0
    score_shift_bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean_shift",
                           np.asarray(self.mean_shift, dtype=np.float64))
        if self.within_scale <= 0:
            raise ValueError("within_scale must be positive")


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 20
    n_speakers: int = 100
    sessions_per_speaker: int = 4
    samples_per_session: int = 2
    conditions: tuple = ()
    seed: int = 0
    speaker_prefix: str = "spk"

    def __post_init__(self):
        if not self.conditions:
            object.__setattr__(self, "conditions",
                               default_conditions(self.dim, self.seed))
        for c in self.conditions:
            if c.mean_shift.shape != (self.dim,):
                raise ValueError(f"condition {c.name}: mean_shift dim mismatch")


def default_conditions(dim: int, seed: int) -> tuple:
    """Four conditions, two domains x two degradation levels, with
    deterministic mean-shift directions derived from the seed."""
    specs = [
        ("clnA", "domA", 0.5, 0.0),
        ("degA", "domA", 2.0, 1.2),
        ("clnB", "domB", 0.8, 0.8),
        ("degB", "domB", 1.5, 1.5),
    ]
    out = []
    for i, (name, domain, scale, shift_mag) in enumerate(specs):
        out.append(ConditionSpec(name, domain,
                                 condition_shift(dim, seed, i, shift_mag), scale))
    return tuple(out)


def condition_shift(dim: int, seed: int, index: int, magnitude: float) -> np.ndarray:
    """Deterministic unit direction times magnitude for condition `index`."""
    if magnitude == 0.0:
        return np.zeros(dim)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 7, index])))
    v = rng.standard_normal(dim)
    return magnitude * v / np.linalg.norm(v)


def generate(cfg: SynthConfig):
    """Draw the embedding set and return it with per-condition oracles.

    Returns (EmbeddingSet with complete metadata, dict name -> TwoCovModel).
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    d = cfg.dim
    n_cond = len(cfg.conditions)
    base_within = 0.5 * np.eye(d)
    chol_w = np.sqrt(0.5)  # isotropic W0 = 0.5 I

    ids, rows = [], []
    meta = {}
    for s in range(cfg.n_speakers):
        spk = f"{cfg.speaker_prefix}{s:05d}"
        y = rng.standard_normal(d)  # B0 = I
        for j in range(cfg.sessions_per_speaker):
            cond = cfg.conditions[(s + j) % n_cond]
            sess = f"{spk}-s{j:02d}"
            for t in range(cfg.samples_per_session):
                e = rng.standard_normal(d) * chol_w
                x = y + cond.mean_shift + cond.within_scale * e
                sid = f"{sess}-u{t}"
                ids.append(sid)
                rows.append(x)
                meta[sid] = SampleMeta(sid, spk, sess, cond.domain, cond.name)

    emb = EmbeddingSet(ids, np.array(rows), meta)
    oracles = {
        c.name: TwoCovModel(np.eye(d), (c.within_scale ** 2) * base_within, c.mean_shift)
        for c in cfg.conditions
    }
    return emb, oracles


def oracle_llr(x1, x2, cond_model: TwoCovModel) -> float:
    """Exact same-vs-different-speaker LLR under the generating model.

    Independently of the bilinear scorer, builds the 2d x 2d joint
    covariance for each hypothesis and takes the Gaussian log-density
    difference.
    """
    return oracle_llr_pairs(np.atleast_2d(x1), np.atleast_2d(x2), cond_model)[0]


def oracle_llr_pairs(X1, X2, cond_model: TwoCovModel) -> np.ndarray:
    B, W, m = cond_model.B, cond_model.W, cond_model.m
    d = cond_model.dim
    T = B + W
    same = np.block([[T, B], [B, T]])
    diff = np.block([[T, np.zeros((d, d))], [np.zeros((d, d)), T]])
    U = np.hstack([np.asarray(X1) - m, np.asarray(X2) - m])
    return _gauss_logpdf(U, same) - _gauss_logpdf(U, diff)


def _gauss_logpdf(U, cov):
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ValueError("joint covariance not positive definite")
    sol = np.linalg.solve(cov, U.T)
    quad = np.einsum("ij,ji->i", U, sol)
    k = cov.shape[0]
    return -0.5 * (quad + logdet + k * np.log(2.0 * np.pi))


def sample_trials(emb: EmbeddingSet, n_target: int, n_impostor: int, seed: int,
                  condition: str | None = None) -> list[Trial]:
    """Seeded trial list over a metadata-complete set.

    Targets pair same speaker across distinct sessions; impostors pair
    distinct speakers within the same domain.  Restricting to `condition`
    keeps only samples of that condition.  Sampling is with replacement
    over the candidate pair space, deduplicated, deterministic per seed.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    sids = [sid for sid in emb.ids
            if condition is None or emb.meta[sid].condition == condition]
    by_spk: dict[str, list[str]] = {}
    for sid in sids:
        by_spk.setdefault(emb.meta[sid].speaker_id, []).append(sid)
    speakers = sorted(by_spk)

    trials: list[Trial] = []
    seen = set()

    def add(a: str, b: str, label: str) -> bool:
        key = (a, b) if a <= b else (b, a)
        if a == b or key in seen:
            return False
        seen.add(key)
        trials.append(Trial(a, b, label))
        return True

    got = 0
    guard = 0
    while got < n_target and guard < 200 * (n_target + 1):
        guard += 1
        spk = speakers[rng.integers(len(speakers))]
        pool = by_spk[spk]
        if len(pool) < 2:
            continue
        a, b = (pool[i] for i in rng.choice(len(pool), size=2, replace=False))
        if emb.meta[a].session_id == emb.meta[b].session_id:
            continue
        got += add(a, b, TARGET)

    got = 0
    guard = 0
    while got < n_impostor and guard < 200 * (n_impostor + 1):
        guard += 1
        i, j = rng.choice(len(speakers), size=2, replace=False)
        a = by_spk[speakers[i]][rng.integers(len(by_spk[speakers[i]]))]
        b = by_spk[speakers[j]][rng.integers(len(by_spk[speakers[j]]))]
        if emb.meta[a].domain != emb.meta[b].domain:
            continue
        got += add(a, b, IMPOSTOR)

    return trials


def oracle_scores(emb: EmbeddingSet, trials, oracles: dict,
                  biases: dict | None = None) -> np.ndarray:
    """Oracle LLR per trial; both sides must share a condition.

    `biases` maps condition name to an additive offset on that condition's
    emitted scores, a knob for building deliberately miscalibrated score
    sets; omitted or zero keeps scores exactly calibrated.
    """
    out = np.zeros(len(trials))
    by_cond: dict[str, list[int]] = {}
    for k, t in enumerate(trials):
        c1 = emb.meta[t.enroll_id].condition
        c2 = emb.meta[t.test_id].condition
        if c1 != c2:
            raise ValueError(f"oracle scoring needs same-condition trials, got {c1}/{c2}")
        by_cond.setdefault(c1, []).append(k)
    for cond, idx in by_cond.items():
        X1 = np.array([emb.vector(trials[k].enroll_id) for k in idx])
        X2 = np.array([emb.vector(trials[k].test_id) for k in idx])
        llr = oracle_llr_pairs(X1, X2, oracles[cond])
        if biases:
            llr = llr + biases.get(cond, 0.0)
        out[idx] = llr
    return out
