"""Command-line interface.

Subcommands: generate, init, train, sweep, score, tbc-score, evaluate,
analyze-z, probe-z.  Every subcommand reads an optional flat config file
(--config) and applies flag overrides on top.  Exit codes: 0 success,
1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, pipeline, synth, tbc, training
from .config import RunConfig
from .data import (EmbeddingSet, ScoreSet, read_embeddings, read_metadata,
                   read_scores, read_trials, write_embeddings, write_metadata,
                   write_scores, write_trials)
from .dplda import load_model, save_model, score_trials, warm_start
from .errors import ConvergenceError, DataFormatError, DegenerateDataError
from .metrics import evaluate_scores
from .training import TrainStageConfig, default_stage_split


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    p = _Parser(prog="svbackend", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--pi", type=float, default=None)
        sp.add_argument("--out", required=True)

    g = sub.add_parser("generate", help="write synthetic embeddings, metadata, "
                                        "trials and oracle scores")
    common(g)

    i = sub.add_parser("init", help="fit LDA+PLDA+global calibration and save "
                                    "the warm-started model")
    common(i)
    i.add_argument("--data", required=True)
    i.add_argument("--lda-dim", type=int, default=None)
    i.add_argument("--m-dim", type=int, default=None)
    i.add_argument("--z-dim", type=int, default=None)
    i.add_argument("--use-gamma", action="store_true", default=None)
    i.add_argument("--init-mode", choices=("warm", "warm-partial", "random"),
                   default=None)
    i.add_argument("--cal-condition", default=None)

    t = sub.add_parser("train", help="two-stage training of a saved model")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--model", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--stage1-epochs", type=int, default=None)
    t.add_argument("--snapshot-epochs", default=None)
    t.add_argument("--m-vectors", default=None)

    w = sub.add_parser("sweep", help="train over seeds, rank every (seed, epoch) "
                                     "snapshot by mean dev Cllr")
    common(w)
    w.add_argument("--data", required=True)
    w.add_argument("--model", required=True)
    w.add_argument("--seeds", default=None)
    w.add_argument("--epochs", type=int, default=None)
    w.add_argument("--stage1-epochs", type=int, default=None)
    w.add_argument("--snapshot-epochs", default=None)

    s = sub.add_parser("score", help="score a trial list with a saved model")
    common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--metadata", default=None)
    s.add_argument("--trials", required=True)
    s.add_argument("--mode", choices=("plda", "as-dplda", "ca-dplda", "raw"),
                   default="as-dplda")
    s.add_argument("--m-vectors", default=None)

    b = sub.add_parser("tbc-score", help="trial-based calibration scoring")
    common(b)
    b.add_argument("--model", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--embeddings", required=True)
    b.add_argument("--trials", required=True)
    b.add_argument("--tbc-goal", type=int, default=None)
    b.add_argument("--tbc-reg", type=float, default=None)

    e = sub.add_parser("evaluate", help="Cllr / min-Cllr / EER table from "
                                        "score files")
    common(e)
    e.add_argument("--scores", nargs="+", required=True,
                   metavar="SYSTEM:DATASET=PATH")

    az = sub.add_parser("analyze-z", help="2-D PCA projection of z vectors "
                                          "with per-dataset centroids")
    common(az)
    az.add_argument("--model", required=True)
    az.add_argument("--data", required=True)

    pz = sub.add_parser("probe-z", help="EER of PLDA systems built on z "
                                        "vectors vs embeddings")
    common(pz)
    pz.add_argument("--model", required=True)
    pz.add_argument("--data", required=True)

    return p


def _overrides(args) -> dict:
    mapping = {
        "seed": "seed", "pi": "pi", "lda_dim": "lda_dim", "m_dim": "m_dim",
        "z_dim": "z_dim", "use_gamma": "use_gamma", "init_mode": "init_mode",
        "cal_condition": "cal_condition", "epochs": "epochs",
        "stage1_epochs": "stage1_epochs", "snapshot_epochs": "snapshot_epochs",
        "seeds": "seeds", "tbc_goal": "tbc_goal", "tbc_reg": "tbc_reg",
    }
    out = {}
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    return out


def _read_embeddings_auto(path) -> EmbeddingSet:
    with open(path, "rb") as f:
        magic = f.read(4)
    return read_embeddings(path, "binary" if magic == b"EMB1" else "tsv")


def _load_split(data_dir: Path, split: str, with_meta=True) -> EmbeddingSet:
    emb = read_embeddings(data_dir / f"{split}.emb", "binary")
    if with_meta:
        emb = emb.with_metadata(read_metadata(data_dir / f"{split}.meta.tsv"))
    return emb


def _eval_sets(data_dir: Path, cfg: RunConfig, split: str):
    """Per-condition (name, EmbeddingSet, trials) triples for a split."""
    emb = _load_split(data_dir, split)
    conds = sorted({m.condition for m in emb.meta.values()})
    out = []
    for cond in conds:
        trials = read_trials(data_dir / "trials" / f"{split}.{cond}.tsv")
        out.append((f"{split}.{cond}", emb, trials))
    return out


def _cmd_generate(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    out = Path(args.out)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    (out / "oracle").mkdir(parents=True, exist_ok=True)
    n_tgt = cfg.get_int("eval_targets")
    n_imp = cfg.get_int("eval_impostors")
    for role in ("train", "dev", "eval"):
        emb, oracles = synth.generate(cfg.synth_config(role))
        write_embeddings(emb, out / f"{role}.emb", "binary")
        write_metadata(emb.meta, out / f"{role}.meta.tsv")
        if role == "train":
            continue
        biases = {c.name: c.score_shift_bias for c in cfg.synth_config(role).conditions}
        for cond in sorted(oracles):
            trials = synth.sample_trials(emb, n_tgt, n_imp,
                                         cfg.get_int("trial_seed"), condition=cond)
            write_trials(trials, out / "trials" / f"{role}.{cond}.tsv")
            llr = synth.oracle_scores(emb, trials, oracles, biases)
            write_scores(ScoreSet(trials, llr, kind="llr"),
                         out / "oracle" / f"{role}.{cond}.scores.tsv")
    print(f"wrote synthetic data to {out}")
    return 0


def _cmd_init(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    train_set = _load_split(Path(args.data), "train")
    cal_condition = cfg.get_str("cal_condition") or None
    model = pipeline.init_model(
        train_set,
        lda_dim=cfg.get_int("lda_dim"), m_dim=cfg.get_int("m_dim"),
        z_dim=cfg.get_int("z_dim"), seed=cfg.get_int("seed"),
        pi=cfg.get_float("pi"), cal_condition=cal_condition,
        n_cal_target=cfg.get_int("cal_targets"),
        n_cal_impostor=cfg.get_int("cal_impostors"),
        cal_seed=cfg.get_int("cal_seed"),
        init_mode=cfg.get_str("init_mode"), use_gamma=cfg.get_bool("use_gamma"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    print(f"wrote {out}")
    return 0


def _stage_configs(cfg: RunConfig):
    total = cfg.get_int("epochs")
    s1 = cfg.get_int("stage1_epochs")
    if s1 <= 0:
        s1, s2 = default_stage_split(total)
    else:
        s2 = max(0, total - s1)
    stage1 = TrainStageConfig(epochs=s1, lr=cfg.get_float("lr"),
                              n_speakers=cfg.get_int("n_speakers"))
    stage2 = TrainStageConfig(epochs=s2, lr=cfg.get_float("stage2_lr"),
                              n_speakers=cfg.get_int("n_speakers"))
    return stage1, stage2


def _read_m_vectors(path) -> dict:
    emb = _read_embeddings_auto(path)
    return {sid: emb.vector(sid) for sid in emb.ids}


def _cmd_train(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    model = load_model(args.model)
    train_set = _load_split(Path(args.data), "train")
    stage1, stage2 = _stage_configs(cfg)
    snaps_cfg = cfg.get_int_list("snapshot_epochs")
    external = _read_m_vectors(args.m_vectors) if args.m_vectors else None
    seed = cfg.get_int("seed")
    snaps = training.train(model, train_set, stage1, stage2,
                           snapshot_epochs=snaps_cfg, seed=seed,
                           external_m=external)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for epoch, snap in snaps:
        save_model(snap, out / f"model.seed{seed}.epoch{epoch}.json")
    save_model(snaps[-1][1], out / "model.json")
    print(f"wrote {len(snaps)} snapshots to {out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    base = load_model(args.model)
    if base.full_basis is None or base.global_cal is None:
        raise DegenerateDataError("sweep needs an init model carrying its warm kit")
    train_set = _load_split(Path(args.data), "train")
    dev_sets = _eval_sets(Path(args.data), cfg, "dev")
    stage1, stage2 = _stage_configs(cfg)
    seeds = cfg.get_int_list("seeds")
    snaps_cfg = cfg.get_int_list("snapshot_epochs")
    c = base.config

    def make_model(seed):
        return warm_start(base.full_basis, base.scorer, base.global_cal,
                          c.lda_dim, c.m_dim, c.z_dim, seed, pi=c.pi,
                          init_mode=c.init_mode, use_gamma=c.use_gamma)

    best, rows = training.sweep_and_select(make_model, train_set, dev_sets,
                                           seeds, snaps_cfg, stage1, stage2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.tsv", "w", encoding="utf-8") as f:
        f.write("seed\tepoch\tdev_cllr\n")
        for r in rows:
            f.write(f"{r['seed']}\t{r['epoch']}\t{r['dev_cllr']:.6f}\n")
    save_model(best, out / "best.json")
    print(f"wrote sweep table ({len(rows)} rows) and best model to {out}")
    return 0


def _cmd_score(args) -> int:
    model = load_model(args.model)
    emb = _read_embeddings_auto(args.embeddings)
    if args.metadata:
        emb = emb.with_metadata(read_metadata(args.metadata), require_complete=False)
    trials = read_trials(args.trials)
    external = _read_m_vectors(args.m_vectors) if args.m_vectors else None
    if args.mode == "ca-dplda" and external is None:
        raise UsageError("ca-dplda mode needs --m-vectors")
    scores = score_trials(model, emb, trials, mode=args.mode, external_m=external)
    write_scores(scores, args.out)
    print(f"wrote {len(scores)} scores to {args.out}")
    return 0


def _cmd_tbc_score(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    model = load_model(args.model)
    if model.global_cal is None:
        raise DegenerateDataError("tbc-score needs a model carrying global calibration")
    pool = _load_split(Path(args.data), "train")
    pool_size = cfg.get_int("tbc_pool_size")
    if 0 < pool_size < len(pool):
        rng = np.random.Generator(np.random.PCG64(cfg.get_int("seed")))
        pick = np.sort(rng.choice(len(pool), size=pool_size, replace=False))
        pool = pool.subset([pool.ids[i] for i in pick])
    cond_dim = cfg.get_int("tbc_cond_lda_dim") or None
    cond = tbc.fit_cond_plda(pool, cond_dim)
    tcfg = tbc.TbcConfig(global_cal=model.global_cal,
                         target_trial_goal=cfg.get_int("tbc_goal"),
                         reg_weight=cfg.get_float("tbc_reg"),
                         pi=cfg.get_float("pi"))
    scorer = tbc.TbcScorer(model.fe, model.scorer, cond, pool, tcfg)
    emb = _read_embeddings_auto(args.embeddings)
    trials = read_trials(args.trials)
    scores = scorer.score_trials(emb, trials)
    write_scores(scores, args.out)
    print(f"wrote {len(scores)} TBC scores to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    rows = []
    for spec in args.scores:
        if "=" not in spec:
            raise UsageError(f"--scores entry {spec!r} must be SYSTEM:DATASET=PATH")
        label, path = spec.split("=", 1)
        system, _, dataset = label.partition(":")
        report = evaluate_scores(read_scores(path))
        rows.append((system, dataset or "-", report))
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("system\tdataset\tactual_cllr\tmin_cllr\teer\tn_target\tn_impostor\n")
        for system, dataset, r in rows:
            f.write(f"{system}\t{dataset}\t{r.actual_cllr:.6f}\t{r.min_cllr:.6f}"
                    f"\t{r.eer:.6f}\t{r.n_target}\t{r.n_impostor}\n")
    print(f"wrote evaluation report to {args.out}")
    return 0


def _cmd_analyze_z(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    model = load_model(args.model)
    data_dir = Path(args.data)
    train_set = _load_split(data_dir, "train")
    eval_emb = _load_split(data_dir, "eval")
    datasets = []
    for cond in sorted({m.condition for m in eval_emb.meta.values()}):
        ids = [sid for sid in eval_emb.ids if eval_emb.meta[sid].condition == cond]
        datasets.append((f"eval.{cond}", eval_emb.subset(ids)))
    rows = analysis.analyze_z(model, train_set, datasets,
                              balance_seed=cfg.get_int("seed"),
                              sample_seed=cfg.get_int("seed"))
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("dataset\tkind\tx\ty\n")
        for r in rows:
            f.write(f"{r.dataset}\t{r.kind}\t{r.x:.6f}\t{r.y:.6f}\n")
    print(f"wrote {len(rows)} projection rows to {args.out}")
    return 0


def _cmd_probe_z(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    model = load_model(args.model)
    data_dir = Path(args.data)
    train_set = _load_split(data_dir, "train")
    eval_sets = _eval_sets(data_dir, cfg, "eval")
    rows = analysis.probe_z(model, train_set, eval_sets)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("system\tdataset\teer\n")
        for r in rows:
            f.write(f"{r.system}\t{r.dataset}\t{r.eer:.6f}\n")
    print(f"wrote probe table ({len(rows)} rows) to {args.out}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "init": _cmd_init,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "score": _cmd_score,
    "tbc-score": _cmd_tbc_score,
    "evaluate": _cmd_evaluate,
    "analyze-z": _cmd_analyze_z,
    "probe-z": _cmd_probe_z,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (DataFormatError, DegenerateDataError, ConvergenceError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
