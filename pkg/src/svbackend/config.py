"""Flat key-value run configuration.

A config file holds ``key = value`` lines; ``#`` starts a comment.  Lists
are comma-separated.  Conditions use the compact form

    conditions = name:domain:within_scale:mean_shift_magnitude:score_bias, ...

with mean-shift directions derived deterministically from the data seed.
Command-line flags override file values.
"""

from __future__ import annotations

from pathlib import Path

from .dplda import (DEFAULT_LDA_DIM, DEFAULT_M_DIM, DEFAULT_Z_DIM)
from .errors import DataFormatError
from .synth import ConditionSpec, SynthConfig, condition_shift

DEFAULTS = {
    # synthetic data
    "dim": 20,
    "train_speakers": 500,
    "dev_speakers": 60,
    "eval_speakers": 80,
    "sessions_per_speaker": 8,
    "samples_per_session": 2,
    "conditions": "clnA:domA:0.5:0.0:0.0,degA:domA:2.0:1.2:0.0,"
                  "clnB:domB:0.8:0.8:0.0,degB:domB:1.5:1.5:0.0",
    "data_seed": 101,
    # model dimensions (full-scale defaults; desk configs override)
    "lda_dim": DEFAULT_LDA_DIM,
    "m_dim": DEFAULT_M_DIM,
    "z_dim": DEFAULT_Z_DIM,
    "pi": 0.5,
    "use_gamma": False,
    "init_mode": "warm",
    # calibration sampling
    "cal_targets": 2000,
    "cal_impostors": 10000,
    "cal_seed": 9,
    "cal_condition": "",
    # training
    "epochs": 40,
    "stage1_epochs": 0,  # 0 -> first third of the schedule
    "lr": 1e-3,
    "stage2_lr": 1e-3,
    "n_speakers": 64,
    "snapshot_epochs": "20,25,30,35,40",
    "seed": 0,
    # sweep
    "seeds": "0,1,2,3,4,5,6,7,8,9",
    # trial sampling for evaluation sets
    "eval_targets": 300,
    "eval_impostors": 3000,
    "trial_seed": 7,
    # TBC
    "tbc_goal": 100,
    "tbc_reg": 0.02,
    "tbc_pool_size": 2000,
    "tbc_cond_lda_dim": 0,  # 0 -> no reduction
}


class RunConfig:
    """Defaults, overlaid with a config file, overlaid with CLI flags."""

    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        if values:
            self.values.update(values)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        cfg = cls()
        if path:
            cfg.values.update(parse_config_file(path))
        if overrides:
            cfg.values.update({k: v for k, v in overrides.items() if v is not None})
        return cfg

    def get_int(self, key: str) -> int:
        return int(self.values[key])

    def get_float(self, key: str) -> float:
        return float(self.values[key])

    def get_bool(self, key: str) -> bool:
        v = self.values[key]
        if isinstance(v, bool):
            return v
        return str(v).strip().lower() in ("1", "true", "yes", "on")

    def get_str(self, key: str) -> str:
        return str(self.values[key])

    def get_int_list(self, key: str) -> list[int]:
        v = self.values[key]
        if isinstance(v, (list, tuple)):
            return [int(x) for x in v]
        return [int(x) for x in str(v).split(",") if x.strip()]

    def synth_config(self, role: str = "train") -> SynthConfig:
        """SynthConfig for one data split; splits differ by speaker count,
        id prefix and a role-specific seed offset."""
        offsets = {"train": 0, "dev": 1, "eval": 2}
        if role not in offsets:
            raise ValueError(f"unknown data role {role!r}")
        seed = self.get_int("data_seed") + offsets[role]
        dim = self.get_int("dim")
        conditions = parse_conditions(self.get_str("conditions"), dim,
                                      self.get_int("data_seed"))
        return SynthConfig(
            dim=dim,
            n_speakers=self.get_int(f"{role}_speakers"),
            sessions_per_speaker=self.get_int("sessions_per_speaker"),
            samples_per_session=self.get_int("samples_per_session"),
            conditions=conditions,
            seed=seed,
            speaker_prefix={"train": "trn", "dev": "dev", "eval": "evl"}[role],
        )


def parse_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def parse_conditions(spec: str, dim: int, data_seed: int) -> tuple:
    """Compact condition list to ConditionSpec tuple.

    Mean-shift directions come from ``condition_shift`` keyed by the data
    seed and the condition's position, so a config fully determines them.
    """
    out = []
    for i, chunk in enumerate(s.strip() for s in spec.split(",") if s.strip()):
        parts = chunk.split(":")
        if len(parts) != 5:
            raise DataFormatError(
                f"condition {chunk!r}: expected name:domain:scale:shift:bias")
        name, domain, scale, shift, bias = parts
        out.append(ConditionSpec(
            name, domain,
            condition_shift(dim, data_seed, i, float(shift)),
            within_scale=float(scale),
            score_shift_bias=float(bias),
        ))
    if not out:
        raise DataFormatError("empty condition list")
    return tuple(out)
