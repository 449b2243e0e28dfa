"""Mini-batch sampling, analytic gradients, Adam, and two-stage training.

Mini-batches draw N speakers without replacement and two samples per
speaker, preferring distinct sessions.  All pairs among the 2N samples
become trials except same-session target pairs and cross-domain impostor
pairs, which are dropped.

Stage 1 trains every parameter on the full pool; stage 2 freezes the
speaker branch (front end and scorer), rebalances the pool to equal
per-domain sample counts, and keeps training the side-info extractor and
calibration maps.  Given identical seeds, config and data the whole run
is bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import IMPOSTOR, TARGET, EmbeddingSet, Trial
from .dplda import (DpldaModel, _sym, build_model, extract_params,
                    forward_pairs, forward_samples, score_trials, trainable_names)
from .errors import DegenerateDataError
from .metrics import cllr


@dataclass(frozen=True)
class BatchSpec:
    n_speakers: int
    samples_per_speaker: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValueError("a batch needs at least 2 speakers")
        if self.samples_per_speaker != 2:
            raise ValueError("the sampler draws exactly 2 samples per speaker")


class TrainingPool:
    """Metadata-complete embedding set indexed for speaker/session sampling."""

    def __init__(self, emb: EmbeddingSet, rows=None):
        missing = [sid for sid in emb.ids if sid not in emb.meta]
        if missing:
            raise DegenerateDataError(
                f"training pool needs metadata for every sample ({len(missing)} missing)")
        rows = range(len(emb.ids)) if rows is None else rows
        self.emb = emb
        self.rows = np.array(sorted(rows), dtype=np.intp)
        by_spk: dict[str, dict[str, list[int]]] = {}
        for r in self.rows:
            m = emb.meta[emb.ids[r]]
            by_spk.setdefault(m.speaker_id, {}).setdefault(m.session_id, []).append(int(r))
        self.speakers = sorted(s for s, sess in by_spk.items()
                               if sum(len(v) for v in sess.values()) >= 2)
        self.sessions_of = [
            [by_spk[s][k] for k in sorted(by_spk[s])] for s in self.speakers
        ]
        self.speaker_of = {int(r): emb.meta[emb.ids[r]].speaker_id for r in self.rows}

    def __len__(self) -> int:
        return self.rows.size

    def meta_of_row(self, r: int):
        return self.emb.meta[self.emb.ids[r]]

    def balanced_by_domain(self, seed: int) -> "TrainingPool":
        """Downsample each domain to the smallest domain's sample count."""
        by_dom: dict[str, list[int]] = {}
        for r in self.rows:
            by_dom.setdefault(self.meta_of_row(int(r)).domain, []).append(int(r))
        smallest = min(len(v) for v in by_dom.values())
        rng = np.random.Generator(np.random.PCG64(seed))
        kept: list[int] = []
        for dom in sorted(by_dom):
            rows = np.array(by_dom[dom], dtype=np.intp)
            pick = rng.choice(rows.size, size=smallest, replace=False)
            kept.extend(rows[np.sort(pick)])
        return TrainingPool(self.emb, kept)


def sample_batch_indices(pool: TrainingPool, n_speakers: int, rng):
    """Row indices (I, J) and target flags for one mini-batch."""
    if len(pool.speakers) < n_speakers:
        raise DegenerateDataError(
            f"pool has {len(pool.speakers)} usable speakers, batch wants {n_speakers}")
    spk_pick = rng.choice(len(pool.speakers), size=n_speakers, replace=False)
    chosen: list[int] = []
    for si in spk_pick:
        sessions = pool.sessions_of[si]
        if len(sessions) >= 2:
            a, b = rng.choice(len(sessions), size=2, replace=False)
            sa, sb = sessions[a], sessions[b]
            chosen.append(sa[rng.integers(len(sa))])
            chosen.append(sb[rng.integers(len(sb))])
        else:
            only = sessions[0]
            ii = rng.choice(len(only), size=2, replace=False)
            chosen.extend([only[ii[0]], only[ii[1]]])

    metas = [pool.meta_of_row(r) for r in chosen]
    I, J, y = [], [], []
    for i in range(len(chosen)):
        for j in range(i + 1, len(chosen)):
            mi, mj = metas[i], metas[j]
            if mi.speaker_id == mj.speaker_id:
                if mi.session_id == mj.session_id:
                    continue
                I.append(chosen[i]); J.append(chosen[j]); y.append(True)
            else:
                if mi.domain != mj.domain:
                    continue
                I.append(chosen[i]); J.append(chosen[j]); y.append(False)
    return (np.array(I, dtype=np.intp), np.array(J, dtype=np.intp),
            np.array(y, dtype=bool))


def sample_minibatch(pool: TrainingPool, spec: BatchSpec, rng) -> list[Trial]:
    """Trial-list view of one sampled mini-batch."""
    I, J, y = sample_batch_indices(pool, spec.n_speakers, rng)
    ids = pool.emb.ids
    return [Trial(ids[i], ids[j], TARGET if t else IMPOSTOR)
            for i, j, t in zip(I, J, y)]


# ---------------------------------------------------------------------------
# loss and analytic gradients


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def loss_and_grads(model: DpldaModel, X, I, J, y, external_m=None):
    """Cross-entropy (nats) of a trial batch and its parameter gradients.

    X is the raw embedding matrix; I, J index its rows per trial and y
    flags targets.  Returns (loss, grads dict) with one gradient per
    parameter tensor; bilinear-matrix gradients come out symmetric.
    """
    y = np.asarray(y, dtype=bool)
    n_t = int(y.sum())
    n_i = int((~y).sum())
    if n_t == 0 or n_i == 0:
        raise DegenerateDataError("batch lost one trial class after exclusions")
    pi = model.pi.pi
    tau = model.pi.log_odds

    cache = forward_samples(model, X, external_m)
    llr, s, alpha, beta = forward_pairs(model, cache, I, J)

    t = llr + tau
    q = _sigmoid(t)
    w = np.where(y, pi / n_t, (1.0 - pi) / n_i)
    loss = (pi * np.logaddexp(0.0, -t[y]).sum() / n_t
            + (1.0 - pi) * np.logaddexp(0.0, t[~y]).sum() / n_i)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite batch loss")

    g = w * (q - y.astype(np.float64))
    dalpha = g * s
    dbeta = g
    ds = g * alpha

    cal, sc = model.cal, model.scorer
    Z, Xt = cache.Z, cache.Xt
    ZI, ZJ = Z[I], Z[J]
    XtI, XtJ = Xt[I], Xt[J]

    grads: dict[str, np.ndarray] = {}

    A = (dalpha[:, None] * ZI).T @ ZJ
    grads["Lambda_a"] = A + A.T
    grads["Gamma_a"] = (dalpha[:, None] * ZI).T @ ZI + (dalpha[:, None] * ZJ).T @ ZJ
    grads["c_a"] = dalpha @ (ZI + ZJ)
    grads["k_a"] = np.float64(dalpha.sum())
    Bm = (dbeta[:, None] * ZI).T @ ZJ
    grads["Lambda_b"] = Bm + Bm.T
    grads["Gamma_b"] = (dbeta[:, None] * ZI).T @ ZI + (dbeta[:, None] * ZJ).T @ ZJ
    grads["c_b"] = dbeta @ (ZI + ZJ)
    grads["k_b"] = np.float64(dbeta.sum())

    Las, Gas = _sym(cal.Lambda_a), _sym(cal.Gamma_a)
    Lbs, Gbs = _sym(cal.Lambda_b), _sym(cal.Gamma_b)
    dZ = np.zeros_like(Z)
    GI = (dalpha[:, None] * (2.0 * ZJ @ Las + 2.0 * ZI @ Gas + cal.c_a)
          + dbeta[:, None] * (2.0 * ZJ @ Lbs + 2.0 * ZI @ Gbs + cal.c_b))
    GJ = (dalpha[:, None] * (2.0 * ZI @ Las + 2.0 * ZJ @ Gas + cal.c_a)
          + dbeta[:, None] * (2.0 * ZI @ Lbs + 2.0 * ZJ @ Gbs + cal.c_b))
    np.add.at(dZ, I, GI)
    np.add.at(dZ, J, GJ)

    # log softmax: dU = dZ - softmax * rowsum(dZ)
    dU = dZ - cache.Psm * dZ.sum(axis=1, keepdims=True)
    grads["W"] = dU.T @ cache.Mt
    if not cache.external_m:
        dMt = dU @ model.side.W
        dAm = (dMt - (dMt * cache.Mt).sum(axis=1, keepdims=True) * cache.Mt) \
            / cache.rm[:, None]
        grads["Pm"] = dAm.T @ cache.X
        grads["mum"] = dAm.sum(axis=0)
    else:
        grads["Pm"] = np.zeros_like(model.side.Pm)
        grads["mum"] = np.zeros_like(model.side.mum)

    S = (ds[:, None] * XtI).T @ XtJ
    grads["Lambda"] = S + S.T
    grads["Gamma"] = (ds[:, None] * XtI).T @ XtI + (ds[:, None] * XtJ).T @ XtJ
    grads["c"] = ds @ (XtI + XtJ)
    grads["k"] = np.float64(ds.sum())

    Ls, Gs = _sym(sc.Lambda), _sym(sc.Gamma)
    dXt = np.zeros_like(Xt)
    HI = ds[:, None] * (2.0 * XtJ @ Ls + 2.0 * XtI @ Gs + sc.c)
    HJ = ds[:, None] * (2.0 * XtI @ Ls + 2.0 * XtJ @ Gs + sc.c)
    np.add.at(dXt, I, HI)
    np.add.at(dXt, J, HJ)
    dA = (dXt - (dXt * Xt).sum(axis=1, keepdims=True) * Xt) / cache.r[:, None]
    grads["P"] = dA.T @ cache.X
    grads["mu"] = dA.sum(axis=0)

    return float(loss), grads


class Adam:
    """Standard Adam with bias correction, deterministic update order."""

    def __init__(self, shapes: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros(s) for n, s in shapes.items()}
        self.v = {n: np.zeros(s) for n, s in shapes.items()}

    def step(self, params: dict, grads: dict, names) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for n in sorted(names):
            g = grads[n]
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            params[n] = params[n] - self.lr * (self.m[n] / c1) \
                / (np.sqrt(self.v[n] / c2) + self.eps)


@dataclass(frozen=True)
class TrainStageConfig:
    epochs: int
    lr: float = 1e-3
    n_speakers: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def batches_per_epoch(pool_size: int, n_speakers: int) -> int:
    return max(1, math.ceil(pool_size / (2 * n_speakers)))


def train(model: DpldaModel, train_set: EmbeddingSet,
          stage1: TrainStageConfig, stage2: TrainStageConfig,
          snapshot_epochs=(), seed: int = 0, external_m=None):
    """Two-stage Adam training; returns [(epoch, model snapshot), ...].

    Snapshots are taken at the requested global epoch numbers (stage 2
    continues the count); with none requested, only the final epoch is
    returned.
    """
    ss = np.random.SeedSequence([seed, 0x5eed])
    kids = ss.spawn(3)
    rng1 = np.random.Generator(np.random.PCG64(kids[0]))
    rng2 = np.random.Generator(np.random.PCG64(kids[1]))
    balance_seed = int(kids[2].generate_state(1)[0])

    total_epochs = stage1.epochs + stage2.epochs
    wanted = sorted(set(snapshot_epochs)) if snapshot_epochs else [total_epochs]
    if wanted and (wanted[0] < 1 or wanted[-1] > total_epochs):
        raise ValueError("snapshot epochs outside the training schedule")

    ext_matrix = None
    if external_m is not None:
        ext_matrix = np.array([external_m[sid] for sid in train_set.ids],
                              dtype=np.float64)

    params = extract_params(model)
    snapshots: list[tuple[int, DpldaModel]] = []
    epoch = 0

    def run_stage(cfg: TrainStageConfig, pool: TrainingPool, stage: int, rng):
        nonlocal epoch
        names = trainable_names(model, stage, external_m=external_m is not None)
        opt = Adam({n: params[n].shape for n in names}, lr=cfg.lr,
                   beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        X = train_set.vectors
        nb = batches_per_epoch(len(pool), cfg.n_speakers)
        for _ in range(cfg.epochs):
            epoch += 1
            for _ in range(nb):
                I, J, y = sample_batch_indices(pool, cfg.n_speakers, rng)
                rows, inv = np.unique(np.concatenate([I, J]), return_inverse=True)
                loss, grads = loss_and_grads(
                    build_model(model, params, epoch=epoch), X[rows],
                    inv[:I.size], inv[I.size:], y,
                    external_m=None if ext_matrix is None else ext_matrix[rows])
                if not np.isfinite(loss):
                    raise FloatingPointError(f"training diverged at epoch {epoch}")
                opt.step(params, grads, names)
            if epoch in wanted:
                snapshots.append((epoch, build_model(model, params, epoch=epoch)))

    pool1 = TrainingPool(train_set)
    run_stage(stage1, pool1, stage=1, rng=rng1)
    if stage2.epochs > 0:
        pool2 = pool1.balanced_by_domain(balance_seed)
        run_stage(stage2, pool2, stage=2, rng=rng2)
    return snapshots


def default_stage_split(total_epochs: int) -> tuple[int, int]:
    """First third of the schedule is stage 1, remainder stage 2."""
    s1 = max(1, math.ceil(total_epochs / 3))
    return s1, max(0, total_epochs - s1)


def mean_dev_cllr(model: DpldaModel, dev_sets) -> float:
    """Mean actual Cllr of as-dplda scores over (name, emb, trials) sets."""
    vals = [cllr(score_trials(model, emb, trials)) for _, emb, trials in dev_sets]
    return float(np.mean(vals))


def sweep_and_select(make_model, train_set: EmbeddingSet, dev_sets,
                     seeds, snapshot_epochs, stage1: TrainStageConfig,
                     stage2: TrainStageConfig, external_m=None):
    """Train one model per seed and pick the best (seed, epoch) snapshot.

    make_model(seed) must return a freshly initialized model.  Snapshots
    are ranked by mean actual Cllr over the dev sets; ties break toward
    the lower seed, then the lower epoch.  Returns (best model, rows)
    where rows carry every (seed, epoch, mean_cllr) for reporting.
    """
    if not seeds or not snapshot_epochs or not dev_sets:
        raise ValueError("sweep needs at least one seed, epoch and dev set")
    rows = []
    best = None
    best_key = None
    for seed in sorted(seeds):
        model0 = make_model(seed)
        snaps = train(model0, train_set, stage1, stage2,
                      snapshot_epochs=snapshot_epochs, seed=seed,
                      external_m=external_m)
        for epoch, snap in snaps:
            score = mean_dev_cllr(snap, dev_sets)
            rows.append({"seed": seed, "epoch": epoch, "dev_cllr": score})
            key = (score, seed, epoch)
            if best_key is None or key < best_key:
                best_key = key
                best = snap
    return best, rows
