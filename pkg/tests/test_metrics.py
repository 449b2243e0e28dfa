import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svbackend.data import ScoreSet, Trial
from svbackend.errors import DegenerateDataError
from svbackend.metrics import (EvalReport, cllr, eer, evaluate_scores,
                               min_cllr, pav_calibrate)


def score_set(tgt, imp):
    trials = [Trial(f"t{i}", f"x{i}", "target") for i in range(len(tgt))]
    trials += [Trial(f"i{i}", f"y{i}", "impostor") for i in range(len(imp))]
    return ScoreSet(np.asarray(trials).tolist(), np.concatenate([tgt, imp]),
                    kind="llr")


def random_set(seed, n=60, sep=2.0):
    rng = np.random.Generator(np.random.PCG64(seed))
    return score_set(rng.normal(sep / 2, 1.5, n), rng.normal(-sep / 2, 1.5, n))


class TestCllr:
    def test_all_zero_llrs_exactly_one_bit(self):
        assert cllr(score_set(np.zeros(7), np.zeros(13))) == 1.0

    def test_perfectly_separated_near_zero(self):
        assert cllr(score_set(np.full(20, 50.0), np.full(20, -50.0))) < 1e-10

    def test_sign_flip_penalized(self):
        flipped = score_set(np.full(20, -50.0), np.full(20, 50.0))
        assert cllr(flipped) > 1.0


class TestPav:
    def test_monotone_separated_data_preserved(self):
        tgt = np.array([3.0, 4.0, 5.0])
        imp = np.array([0.0, 1.0, 2.0])
        cal = pav_calibrate(np.concatenate([tgt, imp]),
                            np.array([True] * 3 + [False] * 3))
        out_t = cal(tgt)
        out_i = cal(imp)
        assert out_i.max() < out_t.min()

    def test_hand_run_pools_violator_pair(self):
        # scores 1(imp) 2(tgt) 3(imp) 4(tgt): the middle pair {2, 3}
        # violates monotonicity and pools to posterior 1/2, which maps to
        # llr 0 after removing the (even) prior odds
        scores = np.array([1.0, 2.0, 3.0, 4.0])
        labels = np.array([False, True, False, True])
        cal = pav_calibrate(scores, labels)
        out = cal(scores)
        assert out[1] == out[2] == pytest.approx(0.0, abs=1e-12)
        assert out[0] < out[1] < out[3]

    def test_order_invariant(self):
        rng = np.random.Generator(np.random.PCG64(5))
        scores = rng.normal(0, 2, 80)
        labels = rng.random(80) < 0.5
        if not labels.any() or labels.all():
            labels[0] = True
            labels[1] = False
        cal1 = pav_calibrate(scores, labels)
        perm = rng.permutation(80)
        cal2 = pav_calibrate(scores[perm], labels[perm])
        assert np.array_equal(cal1(scores), cal2(scores))


class TestMinCllr:
    def test_perfectly_separated_near_zero(self):
        ss = score_set(np.linspace(1, 2, 3000), np.linspace(-2, -1, 3000))
        assert min_cllr(ss) < 1e-9

    def test_coin_flip_labels_near_one_bit(self):
        rng = np.random.Generator(np.random.PCG64(31))
        scores = rng.normal(0, 1, 10_000)
        labels = rng.random(10_000) < 0.5
        trials = [Trial(f"e{i}", f"t{i}", "target" if l else "impostor")
                  for i, l in enumerate(labels)]
        value = min_cllr(ScoreSet(trials, scores, kind="llr"))
        assert abs(value - 1.0) < 0.03

    def test_invariant_under_monotone_transform(self):
        ss = random_set(7)
        warped = ScoreSet(ss.trials, np.sinh(ss.scores / 3.0) * 5 + 1, kind="llr")
        assert abs(min_cllr(ss) - min_cllr(warped)) < 1e-10

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_never_above_cllr(self, seed):
        ss = random_set(seed, n=40)
        assert min_cllr(ss) <= cllr(ss) + 1e-12

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_below_any_affine_recalibration(self, seed):
        ss = random_set(seed, n=50)
        base = min_cllr(ss)
        rng = np.random.Generator(np.random.PCG64(seed + 1))
        for _ in range(4):
            a = rng.uniform(0.1, 3.0)
            b = rng.uniform(-2.0, 2.0)
            mapped = ScoreSet(ss.trials, a * ss.scores + b, kind="llr")
            assert base <= cllr(mapped) + 1e-9


class TestEer:
    def test_perfectly_separated(self):
        assert eer(score_set(np.array([1.0, 2.0]), np.array([-2.0, -1.0]))) == 0.0

    def test_all_scores_identical(self):
        assert eer(score_set(np.zeros(5), np.zeros(9))) == pytest.approx(0.5)

    def test_single_inversion_interpolates_quarter(self):
        # thresholds enumerated by hand: the frontier runs through
        # (fa, miss) = (0.5, 0) and (0, 0.5); the diagonal crossing of the
        # connecting segment is 0.25
        ss = score_set(np.array([2.0, 4.0]), np.array([1.0, 3.0]))
        assert eer(ss) == pytest.approx(0.25)

    def test_order_invariance(self):
        ss = random_set(9, n=30)
        perm = np.random.Generator(np.random.PCG64(10)).permutation(len(ss))
        shuffled = ScoreSet([ss.trials[i] for i in perm], ss.scores[perm],
                            kind="llr")
        assert eer(ss) == eer(shuffled)

    def test_range(self):
        for seed in range(20):
            assert 0.0 <= eer(random_set(seed, n=25, sep=0.5)) <= 0.5 + 1e-12

    def test_one_class_error(self):
        trials = [Trial("a", "b", "target")]
        with pytest.raises(DegenerateDataError):
            eer(ScoreSet(trials, np.array([1.0])))


class TestEvalReport:
    def test_fields_consistent(self):
        ss = random_set(12, n=100)
        r = evaluate_scores(ss)
        assert r.min_cllr <= r.actual_cllr + 1e-12
        assert r.n_target == 100 and r.n_impostor == 100

    def test_invariant_enforced(self):
        with pytest.raises(ValueError):
            EvalReport(actual_cllr=0.1, min_cllr=0.2, eer=0.1,
                       n_target=1, n_impostor=1)


def test_metrics_trial_order_invariant():
    ss = random_set(14, n=50)
    perm = np.random.Generator(np.random.PCG64(15)).permutation(len(ss))
    shuffled = ScoreSet([ss.trials[i] for i in perm], ss.scores[perm], kind="llr")
    assert cllr(ss) == cllr(shuffled)
    assert min_cllr(ss) == pytest.approx(min_cllr(shuffled), abs=1e-14)
    assert eer(ss) == eer(shuffled)
