import numpy as np
import pytest

from svbackend.data import ScoreSet
from svbackend.metrics import cllr, min_cllr
from svbackend.plda import TwoCovModel, plda_score, two_cov_to_scorer
from svbackend.synth import (ConditionSpec, SynthConfig, generate, oracle_llr,
                             oracle_scores, sample_trials)


def one_condition_cfg(dim=6, n_speakers=40, seed=0, scale=1.0):
    return SynthConfig(
        dim=dim, n_speakers=n_speakers, sessions_per_speaker=4,
        samples_per_session=2,
        conditions=(ConditionSpec("c", "d", np.zeros(dim), scale),),
        seed=seed)


class TestGenerate:
    def test_same_seed_bit_identical(self):
        cfg = SynthConfig(dim=5, n_speakers=10, seed=77)
        a, _ = generate(cfg)
        b, _ = generate(cfg)
        assert a.ids == b.ids
        assert np.array_equal(a.vectors, b.vectors)

    def test_distinct_seeds_differ(self):
        a, _ = generate(SynthConfig(dim=5, n_speakers=10, seed=1))
        b, _ = generate(SynthConfig(dim=5, n_speakers=10, seed=2))
        assert not np.array_equal(a.vectors, b.vectors)

    def test_metadata_structure(self):
        emb, oracles = generate(SynthConfig(dim=4, n_speakers=6, seed=3))
        assert len(emb) == 6 * 4 * 2
        conds = {m.condition for m in emb.meta.values()}
        assert conds == set(oracles)
        # sessions rotate conditions: a speaker with 4 sessions sees all 4
        spk0 = [m for m in emb.meta.values() if m.speaker_id.endswith("00000")]
        assert {m.condition for m in spk0} == conds

    def test_speaker_mean_covariance_converges(self):
        cfg = one_condition_cfg(dim=5, n_speakers=500, seed=11)
        emb, _ = generate(cfg)
        by_spk = {}
        for sid in emb.ids:
            by_spk.setdefault(emb.meta[sid].speaker_id, []).append(emb.vector(sid))
        means = np.array([np.mean(v, axis=0) for v in by_spk.values()])
        means -= means.mean(axis=0)
        cov = means.T @ means / len(means)
        # E[cov] = B0 + W_c / n with n = 8 samples per speaker
        expect = np.eye(5) + 0.5 / 8 * np.eye(5)
        rel = np.linalg.norm(cov - expect) / np.linalg.norm(np.eye(5))
        assert rel < 0.2


class TestOracleLlr:
    def test_zero_between_gives_zero(self):
        d = 3
        model = TwoCovModel(np.zeros((d, d)), np.eye(d), np.zeros(d))
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(5):
            assert abs(oracle_llr(rng.standard_normal(d),
                                  rng.standard_normal(d), model)) < 1e-12

    def test_agrees_with_bilinear_scorer(self):
        rng = np.random.Generator(np.random.PCG64(1))
        a = rng.standard_normal((4, 4))
        model = TwoCovModel(a @ a.T / 4, np.eye(4) * 0.7, rng.standard_normal(4))
        scorer = two_cov_to_scorer(model)
        for _ in range(50):
            x1, x2 = rng.standard_normal(4), rng.standard_normal(4)
            assert abs(oracle_llr(x1, x2, model)
                       - plda_score(x1, x2, scorer)) < 1e-8

    def test_symmetric(self):
        rng = np.random.Generator(np.random.PCG64(2))
        model = TwoCovModel(np.eye(3), 0.5 * np.eye(3), rng.standard_normal(3))
        x1, x2 = rng.standard_normal(3), rng.standard_normal(3)
        assert oracle_llr(x1, x2, model) == pytest.approx(
            oracle_llr(x2, x1, model), abs=1e-12)


class TestSampleTrials:
    def test_rules_respected(self):
        emb, _ = generate(SynthConfig(dim=4, n_speakers=30, seed=5))
        trials = sample_trials(emb, 50, 100, seed=6)
        for t in trials:
            me, mt = emb.meta[t.enroll_id], emb.meta[t.test_id]
            if t.label == "target":
                assert me.speaker_id == mt.speaker_id
                assert me.session_id != mt.session_id
            else:
                assert me.speaker_id != mt.speaker_id
                assert me.domain == mt.domain

    def test_condition_filter(self):
        emb, _ = generate(SynthConfig(dim=4, n_speakers=30, seed=5))
        trials = sample_trials(emb, 20, 20, seed=7, condition="clnA")
        for t in trials:
            assert emb.meta[t.enroll_id].condition == "clnA"
            assert emb.meta[t.test_id].condition == "clnA"

    def test_deterministic(self):
        emb, _ = generate(SynthConfig(dim=4, n_speakers=20, seed=8))
        assert sample_trials(emb, 30, 30, seed=9) == sample_trials(emb, 30, 30, seed=9)


class TestOracleCalibration:
    def test_oracle_llrs_are_calibrated(self):
        # scored on their own generating model the oracle LLRs carry no
        # calibration loss beyond sampling noise
        cfg = one_condition_cfg(dim=8, n_speakers=300, seed=13)
        emb, oracles = generate(cfg)
        trials = sample_trials(emb, 4000, 6000, seed=14)
        llr = oracle_scores(emb, trials, oracles)
        ss = ScoreSet(trials, llr, kind="llr")
        assert cllr(ss) - min_cllr(ss) < 0.02

    def test_bias_knob_breaks_calibration(self):
        cfg = one_condition_cfg(dim=8, n_speakers=120, seed=15)
        emb, oracles = generate(cfg)
        trials = sample_trials(emb, 800, 1500, seed=16)
        clean = ScoreSet(trials, oracle_scores(emb, trials, oracles), kind="llr")
        biased = ScoreSet(trials,
                          oracle_scores(emb, trials, oracles, {"c": 4.0}),
                          kind="llr")
        assert min_cllr(biased) == pytest.approx(min_cllr(clean), abs=1e-12)
        assert cllr(biased) - min_cllr(biased) > 0.1
