"""Jointly trainable verification backend with side-info calibration.

The model composes four stages, all sharing the raw embedding as input:

  speaker branch   xt = Norm(P x + mu);  s = bilinear(xt1, xt2; scorer)
  side-info branch m  = Norm(Pm x + mum);  z = log softmax(W m)
  calibration maps alpha = bilinear(z1, z2; a-params)
                   beta  = bilinear(z1, z2; b-params)
  output           llr = alpha * s + beta

where bilinear(v1, v2; Lam, Gam, c, k) is the symmetric quadratic form
2 v1' Lam v2 + v1' Gam v1 + v2' Gam v2 + (v1 + v2)' c + k.

Warm start builds the model so that, before any training, it reproduces
the standard PLDA pipeline with global affine calibration exactly: the
front end takes the leading rows of the scaled LDA basis, the side-info
affine takes the trailing rows, the calibration maps are zero except the
constants (set to the fitted global alpha/beta), and only the z-space
projection W is drawn at random, N(0, 0.5^2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .calibration import EffectivePrior, GlobalCal
from .data import EmbeddingSet, ScoreSet
from .errors import DegenerateDataError
from .frontend import FrontEnd, apply_front_matrix
from .plda import PldaScorer

SCHEMA_VERSION = 1
INIT_MODES = ("warm", "warm-partial", "random")
_NORM_FLOOR = 1e-30

# default dimensions for full-scale runs; desk-scale configs override
DEFAULT_LDA_DIM = 300
DEFAULT_BASELINE_LDA_DIM = 200
DEFAULT_M_DIM = 200
DEFAULT_Z_DIM = 5


@dataclass(frozen=True)
class SideInfoExtractor:
    Pm: np.ndarray
    mum: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        Pm = np.asarray(self.Pm, dtype=np.float64)
        mum = np.asarray(self.mum, dtype=np.float64)
        W = np.asarray(self.W, dtype=np.float64)
        if Pm.ndim != 2 or mum.shape != (Pm.shape[0],) or W.shape[1] != Pm.shape[0]:
            raise ValueError("SideInfoExtractor: inconsistent shapes")
        if W.shape[0] < 2:
            raise ValueError("SideInfoExtractor: z_dim must be at least 2")
        if not all(np.all(np.isfinite(a)) for a in (Pm, mum, W)):
            raise ValueError("SideInfoExtractor: non-finite entries")
        object.__setattr__(self, "Pm", Pm)
        object.__setattr__(self, "mum", mum)
        object.__setattr__(self, "W", W)

    @property
    def in_dim(self) -> int:
        return self.Pm.shape[1]

    @property
    def m_dim(self) -> int:
        return self.Pm.shape[0]

    @property
    def z_dim(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class CalParamMap:
    Lambda_a: np.ndarray
    Gamma_a: np.ndarray
    c_a: np.ndarray
    k_a: float
    Lambda_b: np.ndarray
    Gamma_b: np.ndarray
    c_b: np.ndarray
    k_b: float
    use_gamma: bool = False

    def __post_init__(self):
        z = np.asarray(self.c_a).shape[0]
        for name in ("Lambda_a", "Gamma_a", "c_a", "Lambda_b", "Gamma_b", "c_b"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            want = (z,) if name.startswith("c") else (z, z)
            if arr.shape != want or not np.all(np.isfinite(arr)):
                raise ValueError(f"CalParamMap.{name}: bad shape or non-finite")
            object.__setattr__(self, name, arr)
        if not self.use_gamma and (np.any(self.Gamma_a) or np.any(self.Gamma_b)):
            raise ValueError("CalParamMap: Gamma terms must be zero when use_gamma is off")
        object.__setattr__(self, "k_a", float(self.k_a))
        object.__setattr__(self, "k_b", float(self.k_b))

    @property
    def z_dim(self) -> int:
        return self.c_a.shape[0]


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int
    lda_dim: int
    m_dim: int
    z_dim: int
    pi: float = 0.5
    seed: int = 0
    epoch: int = 0
    init_mode: str = "warm"
    use_gamma: bool = False


@dataclass(frozen=True)
class DpldaModel:
    fe: FrontEnd
    scorer: PldaScorer
    side: SideInfoExtractor
    cal: CalParamMap
    pi: EffectivePrior
    config: ModelConfig
    global_cal: GlobalCal | None = None
    full_basis: FrontEnd | None = None

    def __post_init__(self):
        if self.fe.out_dim != self.scorer.dim:
            raise ValueError("front-end and scorer dimensions disagree")
        if self.side.in_dim != self.fe.in_dim:
            raise ValueError("side-info extractor input dim disagrees with front end")
        if self.cal.z_dim != self.side.z_dim:
            raise ValueError("calibration map and side-info z dims disagree")


def _sym(M):
    return (M + M.T) / 2.0


def quad_form_pairs(V1, V2, Lam, Gam, c, k) -> np.ndarray:
    """Symmetric quadratic form over parallel rows of V1, V2.

    The bilinear matrices act through their symmetric parts, and the
    cross term is evaluated once per argument order and summed, so the
    value is invariant bit-exactly to swapping V1 and V2 for any stored
    parameters.
    """
    Ls = _sym(np.asarray(Lam, dtype=np.float64))
    Gs = _sym(np.asarray(Gam, dtype=np.float64))
    cross = (V1 * (V2 @ Ls)).sum(axis=1) + (V2 * (V1 @ Ls)).sum(axis=1)
    quad = (V1 * (V1 @ Gs)).sum(axis=1) + (V2 * (V2 @ Gs)).sum(axis=1)
    return cross + quad + (V1 + V2) @ np.asarray(c) + float(k)


def _norm_rows(A):
    r = np.linalg.norm(A, axis=1)
    if np.any(r < _NORM_FLOOR):
        raise DegenerateDataError("zero vector before length normalization")
    return A / r[:, None], r


def _log_softmax_rows(U):
    Umax = U.max(axis=1, keepdims=True)
    eU = np.exp(U - Umax)
    S = eU.sum(axis=1, keepdims=True)
    Z = U - (Umax + np.log(S))
    return Z, eU / S


@dataclass
class ForwardCache:
    """Per-sample intermediates reused by the backward pass."""
    X: np.ndarray
    A: np.ndarray
    r: np.ndarray
    Xt: np.ndarray
    Am: np.ndarray | None
    rm: np.ndarray | None
    Mt: np.ndarray
    U: np.ndarray
    Psm: np.ndarray
    Z: np.ndarray
    external_m: bool


def forward_samples(model: DpldaModel, X, external_m=None) -> ForwardCache:
    """Per-sample halves of the forward pass for a raw embedding matrix."""
    X = np.asarray(X, dtype=np.float64)
    A = X @ model.fe.P.T + model.fe.mu
    Xt, r = _norm_rows(A)
    if external_m is None:
        Am = X @ model.side.Pm.T + model.side.mum
        Mt, rm = _norm_rows(Am)
    else:
        Mt = np.asarray(external_m, dtype=np.float64)
        if Mt.shape != (X.shape[0], model.side.W.shape[1]):
            raise ValueError("external m matrix shape mismatch")
        Am = rm = None
    U = Mt @ model.side.W.T
    Z, Psm = _log_softmax_rows(U)
    return ForwardCache(X, A, r, Xt, Am, rm, Mt, U, Psm, Z,
                        external_m=external_m is not None)


def forward_pairs(model: DpldaModel, cache: ForwardCache, I, J):
    """Scores for pairs of cached samples; returns (llr, s, alpha, beta)."""
    sc = model.scorer
    s = quad_form_pairs(cache.Xt[I], cache.Xt[J], sc.Lambda, sc.Gamma, sc.c, sc.k)
    cal = model.cal
    ZI, ZJ = cache.Z[I], cache.Z[J]
    alpha = quad_form_pairs(ZI, ZJ, cal.Lambda_a, cal.Gamma_a, cal.c_a, cal.k_a)
    beta = quad_form_pairs(ZI, ZJ, cal.Lambda_b, cal.Gamma_b, cal.c_b, cal.k_b)
    return alpha * s + beta, s, alpha, beta


def side_info(x, side: SideInfoExtractor) -> np.ndarray:
    """z = log softmax(W Norm(Pm x + mum)) for a single embedding."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (side.in_dim,):
        raise ValueError(f"expected vector of dim {side.in_dim}")
    Mt, _ = _norm_rows((side.Pm @ x + side.mum)[None, :])
    Z, _ = _log_softmax_rows(Mt @ side.W.T)
    return Z[0]


def calib_params(z1, z2, cal: CalParamMap) -> tuple[float, float]:
    z1 = np.asarray(z1, dtype=np.float64)[None, :]
    z2 = np.asarray(z2, dtype=np.float64)[None, :]
    alpha = quad_form_pairs(z1, z2, cal.Lambda_a, cal.Gamma_a, cal.c_a, cal.k_a)
    beta = quad_form_pairs(z1, z2, cal.Lambda_b, cal.Gamma_b, cal.c_b, cal.k_b)
    return float(alpha[0]), float(beta[0])


def forward_trial(x1, x2, model: DpldaModel, external_m=None) -> float:
    """Calibrated LLR for one trial of raw embeddings."""
    X = np.vstack([np.asarray(x1, dtype=np.float64),
                   np.asarray(x2, dtype=np.float64)])
    cache = forward_samples(model, X, external_m)
    llr, _, _, _ = forward_pairs(model, cache, np.array([0]), np.array([1]))
    return float(llr[0])


# ---------------------------------------------------------------------------
# initialization


def warm_start(full_basis: FrontEnd, scorer: PldaScorer, global_cal: GlobalCal,
               lda_dim: int, m_dim: int, z_dim: int, seed: int,
               pi=0.5, init_mode: str = "warm", use_gamma: bool = False) -> DpldaModel:
    """Build the joint model from fitted baseline components.

    init_mode:
      warm          side-info affine from the trailing m_dim basis rows
      warm-partial  side-info affine drawn N(0, 0.5^2) instead
      random        every parameter drawn N(0, 0.5^2) (bilinears symmetrized)

    The z-space projection W is always random.  Draw order is fixed
    (W, then Pm, then remaining tensors) so modes sharing a seed share W.
    """
    if init_mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {init_mode!r}")
    in_dim = full_basis.in_dim
    if full_basis.out_dim != in_dim:
        raise ValueError("warm start needs the complete square basis")
    if m_dim > in_dim:
        raise DegenerateDataError(f"basis has {in_dim} rows, cannot take last {m_dim}")
    if lda_dim != scorer.dim:
        raise ValueError("scorer dimension disagrees with lda_dim")

    rng = np.random.Generator(np.random.PCG64(seed))
    W = rng.normal(0.0, 0.5, size=(z_dim, m_dim))

    fe = full_basis.rows(0, lda_dim)
    side_fe = full_basis.rows(in_dim - m_dim, in_dim)
    Pm, mum = side_fe.P, side_fe.mu
    if init_mode in ("warm-partial", "random"):
        Pm = rng.normal(0.0, 0.5, size=(m_dim, in_dim))
        mum = np.zeros(m_dim)

    z0 = np.zeros((z_dim, z_dim))
    cal = CalParamMap(z0, z0, np.zeros(z_dim), global_cal.alpha,
                      z0, z0, np.zeros(z_dim), global_cal.beta,
                      use_gamma=use_gamma)
    if init_mode == "random":
        fe = FrontEnd(rng.normal(0.0, 0.5, size=(lda_dim, in_dim)),
                      rng.normal(0.0, 0.5, size=lda_dim))
        scorer = PldaScorer(_sym(rng.normal(0.0, 0.5, size=(lda_dim, lda_dim))),
                            _sym(rng.normal(0.0, 0.5, size=(lda_dim, lda_dim))),
                            rng.normal(0.0, 0.5, size=lda_dim),
                            rng.normal(0.0, 0.5))
        ga = _sym(rng.normal(0.0, 0.5, size=(z_dim, z_dim))) if use_gamma else z0
        gb = _sym(rng.normal(0.0, 0.5, size=(z_dim, z_dim))) if use_gamma else z0
        cal = CalParamMap(_sym(rng.normal(0.0, 0.5, size=(z_dim, z_dim))), ga,
                          rng.normal(0.0, 0.5, size=z_dim), rng.normal(0.0, 0.5),
                          _sym(rng.normal(0.0, 0.5, size=(z_dim, z_dim))), gb,
                          rng.normal(0.0, 0.5, size=z_dim), rng.normal(0.0, 0.5),
                          use_gamma=use_gamma)

    prior = pi if isinstance(pi, EffectivePrior) else EffectivePrior(float(pi))
    cfg = ModelConfig(in_dim=in_dim, lda_dim=lda_dim, m_dim=m_dim, z_dim=z_dim,
                      pi=prior.pi, seed=seed, epoch=0, init_mode=init_mode,
                      use_gamma=use_gamma)
    return DpldaModel(fe, scorer, SideInfoExtractor(Pm, mum, W), cal, prior, cfg,
                      global_cal=global_cal, full_basis=full_basis)


# ---------------------------------------------------------------------------
# trainable-parameter plumbing

SYMMETRIC_PARAMS = frozenset({"Lambda", "Gamma", "Lambda_a", "Gamma_a",
                              "Lambda_b", "Gamma_b"})
SPEAKER_BRANCH_PARAMS = ("P", "mu", "Lambda", "Gamma", "c", "k")
SIDE_CAL_PARAMS = ("Pm", "mum", "W",
                   "Lambda_a", "Gamma_a", "c_a", "k_a",
                   "Lambda_b", "Gamma_b", "c_b", "k_b")


def extract_params(model: DpldaModel) -> dict[str, np.ndarray]:
    """Fresh float64 copies of every parameter tensor (scalars as 0-d)."""
    sc, sd, cl = model.scorer, model.side, model.cal
    vals = {
        "P": model.fe.P, "mu": model.fe.mu,
        "Lambda": sc.Lambda, "Gamma": sc.Gamma, "c": sc.c, "k": sc.k,
        "Pm": sd.Pm, "mum": sd.mum, "W": sd.W,
        "Lambda_a": cl.Lambda_a, "Gamma_a": cl.Gamma_a, "c_a": cl.c_a, "k_a": cl.k_a,
        "Lambda_b": cl.Lambda_b, "Gamma_b": cl.Gamma_b, "c_b": cl.c_b, "k_b": cl.k_b,
    }
    return {n: np.array(v, dtype=np.float64) for n, v in vals.items()}


def build_model(template: DpldaModel, params: dict[str, np.ndarray],
                epoch: int | None = None) -> DpldaModel:
    """New model from a parameter dict, copying non-parameter state."""
    fe = FrontEnd(params["P"].copy(), params["mu"].copy())
    scorer = PldaScorer(params["Lambda"].copy(), params["Gamma"].copy(),
                        params["c"].copy(), float(params["k"]))
    side = SideInfoExtractor(params["Pm"].copy(), params["mum"].copy(),
                             params["W"].copy())
    cal = CalParamMap(params["Lambda_a"].copy(), params["Gamma_a"].copy(),
                      params["c_a"].copy(), float(params["k_a"]),
                      params["Lambda_b"].copy(), params["Gamma_b"].copy(),
                      params["c_b"].copy(), float(params["k_b"]),
                      use_gamma=template.cal.use_gamma)
    cfg = template.config if epoch is None else replace(template.config, epoch=epoch)
    return DpldaModel(fe, scorer, side, cal, template.pi, cfg,
                      global_cal=template.global_cal, full_basis=template.full_basis)


def trainable_names(model: DpldaModel, stage: int, external_m: bool = False):
    """Parameter names updated in a training stage (1 or 2)."""
    names = list(SPEAKER_BRANCH_PARAMS) + list(SIDE_CAL_PARAMS) if stage == 1 \
        else list(SIDE_CAL_PARAMS)
    if not model.cal.use_gamma:
        names = [n for n in names if n not in ("Gamma_a", "Gamma_b")]
    if external_m:
        names = [n for n in names if n not in ("Pm", "mum")]
    return tuple(names)


# ---------------------------------------------------------------------------
# batch scoring

SCORE_MODES = ("plda", "as-dplda", "ca-dplda", "raw")


def score_trials(model: DpldaModel, emb: EmbeddingSet, trials,
                 mode: str = "as-dplda", external_m: dict | None = None) -> ScoreSet:
    """Score a trial list against an embedding set.

    Modes: ``as-dplda`` full forward; ``plda`` raw score through the
    stored global calibration; ``ca-dplda`` like as-dplda with externally
    supplied m vectors (dict sample_id -> vector); ``raw`` uncalibrated.
    """
    if mode not in SCORE_MODES:
        raise ValueError(f"unknown scoring mode {mode!r}")
    used = sorted({t.enroll_id for t in trials} | {t.test_id for t in trials})
    row_of = {sid: i for i, sid in enumerate(used)}
    X = np.array([emb.vector(sid) for sid in used])
    I = np.fromiter((row_of[t.enroll_id] for t in trials), dtype=np.intp, count=len(trials))
    J = np.fromiter((row_of[t.test_id] for t in trials), dtype=np.intp, count=len(trials))

    ext = None
    if mode == "ca-dplda":
        if external_m is None:
            raise ValueError("ca-dplda scoring needs external m vectors")
        try:
            ext = np.array([external_m[sid] for sid in used], dtype=np.float64)
        except KeyError as e:
            raise DegenerateDataError(f"missing external m vector for sample {e}") from None

    cache = forward_samples(model, X, ext)
    llr, s, _, _ = forward_pairs(model, cache, I, J)
    if mode == "raw":
        return ScoreSet(list(trials), s, kind="raw")
    if mode == "plda":
        if model.global_cal is None:
            raise DegenerateDataError("model carries no global calibration")
        return ScoreSet(list(trials),
                        model.global_cal.alpha * s + model.global_cal.beta, kind="llr")
    return ScoreSet(list(trials), llr, kind="llr")


# ---------------------------------------------------------------------------
# serialization


def _arr(x):
    return np.asarray(x).tolist()


def model_to_dict(model: DpldaModel) -> dict:
    cfg = model.config
    d = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "in_dim": cfg.in_dim, "lda_dim": cfg.lda_dim, "m_dim": cfg.m_dim,
            "z_dim": cfg.z_dim, "pi": cfg.pi, "seed": cfg.seed, "epoch": cfg.epoch,
            "init_mode": cfg.init_mode, "use_gamma": cfg.use_gamma,
        },
        "front_end": {"P": _arr(model.fe.P), "mu": _arr(model.fe.mu)},
        "scorer": {"Lambda": _arr(model.scorer.Lambda), "Gamma": _arr(model.scorer.Gamma),
                   "c": _arr(model.scorer.c), "k": model.scorer.k},
        "side_info": {"Pm": _arr(model.side.Pm), "mum": _arr(model.side.mum),
                      "W": _arr(model.side.W)},
        "cal_map": {"Lambda_a": _arr(model.cal.Lambda_a), "Gamma_a": _arr(model.cal.Gamma_a),
                    "c_a": _arr(model.cal.c_a), "k_a": model.cal.k_a,
                    "Lambda_b": _arr(model.cal.Lambda_b), "Gamma_b": _arr(model.cal.Gamma_b),
                    "c_b": _arr(model.cal.c_b), "k_b": model.cal.k_b,
                    "use_gamma": model.cal.use_gamma},
    }
    if model.global_cal is not None:
        d["global_cal"] = {"alpha": model.global_cal.alpha, "beta": model.global_cal.beta}
    if model.full_basis is not None:
        d["warm_kit"] = {"full_P": _arr(model.full_basis.P),
                         "full_mu": _arr(model.full_basis.mu)}
    return d


def model_from_dict(d: dict) -> DpldaModel:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema {d.get('schema_version')!r}")
    c = d["config"]
    cfg = ModelConfig(in_dim=c["in_dim"], lda_dim=c["lda_dim"], m_dim=c["m_dim"],
                      z_dim=c["z_dim"], pi=c["pi"], seed=c["seed"], epoch=c["epoch"],
                      init_mode=c["init_mode"], use_gamma=c["use_gamma"])
    fe = FrontEnd(np.array(d["front_end"]["P"]), np.array(d["front_end"]["mu"]))
    s = d["scorer"]
    scorer = PldaScorer(np.array(s["Lambda"]), np.array(s["Gamma"]),
                        np.array(s["c"]), s["k"])
    si = d["side_info"]
    side = SideInfoExtractor(np.array(si["Pm"]), np.array(si["mum"]), np.array(si["W"]))
    cm = d["cal_map"]
    cal = CalParamMap(np.array(cm["Lambda_a"]), np.array(cm["Gamma_a"]),
                      np.array(cm["c_a"]), cm["k_a"],
                      np.array(cm["Lambda_b"]), np.array(cm["Gamma_b"]),
                      np.array(cm["c_b"]), cm["k_b"], use_gamma=cm["use_gamma"])
    gc = d.get("global_cal")
    global_cal = GlobalCal(gc["alpha"], gc["beta"]) if gc else None
    wk = d.get("warm_kit")
    full = FrontEnd(np.array(wk["full_P"]), np.array(wk["full_mu"])) if wk else None
    return DpldaModel(fe, scorer, side, cal, EffectivePrior(cfg.pi), cfg,
                      global_cal=global_cal, full_basis=full)


def save_model(model: DpldaModel, path) -> None:
    text = json.dumps(model_to_dict(model), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> DpldaModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
