"""Post-hoc analyses of the side-information vectors.

``analyze_z`` projects z vectors to 2-D with a PCA fitted on the
domain-balanced training subset and reports per-dataset centroids next to
a sample of training points.  ``probe_z`` measures how much speaker
information the z vectors carry by running a full PLDA system on them
(no dimensionality reduction) and comparing EER against embedding-based
systems at the model's LDA dimension and at the z dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingSet, ScoreSet
from .dplda import DpldaModel, forward_samples
from .errors import DegenerateDataError
from .frontend import apply_front_matrix, fit_lda
from .metrics import eer
from .plda import fit_two_cov, plda_score_pairs, two_cov_to_scorer
from .training import TrainingPool


@dataclass(frozen=True)
class ZPoint:
    dataset: str
    kind: str  # "point" or "centroid"
    x: float
    y: float


def z_vectors(model: DpldaModel, emb: EmbeddingSet) -> np.ndarray:
    return forward_samples(model, emb.vectors).Z


def fit_z_pca(model: DpldaModel, train_set: EmbeddingSet, balance_seed: int = 0):
    """Two leading principal directions of z over the balanced train subset."""
    pool = TrainingPool(train_set).balanced_by_domain(balance_seed)
    Z = z_vectors(model, train_set.subset([train_set.ids[r] for r in pool.rows]))
    center = Z.mean(axis=0)
    Zc = Z - center
    cov = Zc.T @ Zc / max(1, Zc.shape[0])
    evals, evecs = np.linalg.eigh(cov)
    comps = evecs[:, ::-1][:, :2]
    # canonical sign for reproducibility
    idx = np.argmax(np.abs(comps), axis=0)
    comps = comps * np.sign(comps[idx, np.arange(2)] + (comps[idx, np.arange(2)] == 0))
    return center, comps


def analyze_z(model: DpldaModel, train_set: EmbeddingSet, datasets,
              n_points: int = 500, balance_seed: int = 0, sample_seed: int = 0):
    """2-D projected z points and per-dataset centroids.

    datasets: list of (name, EmbeddingSet).  Emits one row per sampled
    training point plus one centroid row per dataset.
    """
    center, comps = fit_z_pca(model, train_set, balance_seed)
    rng = np.random.Generator(np.random.PCG64(sample_seed))
    Ztrain = (z_vectors(model, train_set) - center) @ comps
    take = min(n_points, Ztrain.shape[0])
    pick = np.sort(rng.choice(Ztrain.shape[0], size=take, replace=False))

    rows = [ZPoint("train", "point", float(p[0]), float(p[1])) for p in Ztrain[pick]]
    for name, emb in datasets:
        proj = (z_vectors(model, emb) - center) @ comps
        c = proj.mean(axis=0)
        rows.append(ZPoint(name, "centroid", float(c[0]), float(c[1])))
    return rows


def condition_centroid_separation(model: DpldaModel, train_set: EmbeddingSet,
                                  eval_set: EmbeddingSet, balance_seed: int = 0):
    """Largest centroid distance between conditions of eval_set in z-PCA
    space, as a multiple of the mean within-condition RMS spread."""
    center, comps = fit_z_pca(model, train_set, balance_seed)
    proj = (z_vectors(model, eval_set) - center) @ comps
    conds = np.array([eval_set.meta[sid].condition for sid in eval_set.ids])
    names = sorted(set(conds))
    cents, spreads = [], []
    for name in names:
        pts = proj[conds == name]
        c = pts.mean(axis=0)
        cents.append(c)
        spreads.append(np.sqrt(((pts - c) ** 2).sum(axis=1).mean()))
    spread = float(np.mean(spreads))
    best = max(np.linalg.norm(a - b) for i, a in enumerate(cents)
               for b in cents[i + 1:])
    return float(best), spread


@dataclass(frozen=True)
class ProbeRow:
    system: str
    dataset: str
    eer: float


def _plda_eer(features_train, speakers, features_eval_of, eval_sets, out_dim):
    """Fit LDA+PLDA on feature vectors and report EER per eval set.

    Degenerate features (for example an untrained z extractor that maps
    every sample to the same point) score zero everywhere, which reads as
    chance EER.
    """
    try:
        train_emb = EmbeddingSet([f"r{i}" for i in range(len(features_train))],
                                 features_train)
        fe, _ = fit_lda(train_emb, speakers, out_dim)
        T = apply_front_matrix(features_train, fe)
        scorer = two_cov_to_scorer(fit_two_cov(zip(speakers, T)))
    except DegenerateDataError:
        fe = scorer = None

    rows = []
    for name, emb, trials in eval_sets:
        if scorer is None:
            scores = np.zeros(len(trials))
        else:
            F = apply_front_matrix(features_eval_of(emb), fe)
            row_of = {sid: i for i, sid in enumerate(emb.ids)}
            ii = np.array([row_of[t.enroll_id] for t in trials], dtype=np.intp)
            jj = np.array([row_of[t.test_id] for t in trials], dtype=np.intp)
            scores = plda_score_pairs(F[ii], F[jj], scorer)
        rows.append((name, eer(ScoreSet(list(trials), scores, kind="raw"))))
    return rows


def probe_z(model: DpldaModel, train_set: EmbeddingSet, eval_sets) -> list[ProbeRow]:
    """Speaker-information probe: EER of PLDA systems built on z vectors
    versus the raw embeddings at two LDA dimensions.

    eval_sets: list of (name, EmbeddingSet, trials).  Returns one row per
    (system, eval set).
    """
    speakers = [train_set.meta[sid].speaker_id for sid in train_set.ids]
    z_dim = model.side.z_dim
    lda_dim = model.fe.out_dim

    out: list[ProbeRow] = []
    systems = [
        (f"z-plda-d{z_dim}", z_vectors(model, train_set),
         lambda emb: z_vectors(model, emb), z_dim),
        (f"emb-plda-d{lda_dim}", train_set.vectors,
         lambda emb: emb.vectors, lda_dim),
        (f"emb-plda-d{z_dim}", train_set.vectors,
         lambda emb: emb.vectors, z_dim),
    ]
    for name, feats, feat_of, dim in systems:
        for ds, value in _plda_eer(feats, speakers, feat_of, eval_sets, dim):
            out.append(ProbeRow(name, ds, float(value)))
    return out
