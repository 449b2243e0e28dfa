import numpy as np
import pytest

from svbackend.calibration import GlobalCal, apply_cal
from svbackend.data import Trial
from svbackend.dplda import (CalParamMap, SideInfoExtractor, calib_params,
                             forward_samples, forward_trial, load_model,
                             model_from_dict, model_to_dict, save_model,
                             score_trials, side_info, warm_start)
from svbackend.errors import DegenerateDataError
from svbackend.pipeline import fit_backend, init_model, raw_score_set
from svbackend.plda import plda_score
from svbackend.synth import SynthConfig, generate, sample_trials


@pytest.fixture(scope="module")
def fitted():
    """Small fitted baseline shared by the forward-pass tests."""
    emb, _ = generate(SynthConfig(dim=12, n_speakers=50, seed=21))
    fe, full, scorer = fit_backend(emb, lda_dim=6)
    cal = GlobalCal(0.85, -0.4)
    model = warm_start(full, scorer, cal, lda_dim=6, m_dim=5, z_dim=4, seed=3)
    return emb, model


class TestSideInfo:
    def test_log_softmax_normalized(self, fitted):
        emb, model = fitted
        for sid in emb.ids[:10]:
            z = side_info(emb.vector(sid), model.side)
            assert abs(np.exp(z).sum() - 1.0) < 1e-12

    def test_zero_projection_uniform(self):
        side = SideInfoExtractor(np.eye(3), np.zeros(3), np.zeros((4, 3)))
        z = side_info(np.array([1.0, 2.0, 3.0]), side)
        assert np.allclose(z, -np.log(4.0))

    def test_logit_shift_invariance(self, fitted):
        # adding a constant to every component of W m leaves z unchanged
        emb, model = fitted
        x = emb.vector(emb.ids[0])
        m = model.side.Pm @ x + model.side.mum
        m = m / np.linalg.norm(m)
        shift = 5.0
        W2 = model.side.W + np.outer(np.ones(model.side.z_dim), shift * m)
        shifted = SideInfoExtractor(model.side.Pm, model.side.mum, W2)
        z1 = side_info(x, model.side)
        z2 = side_info(x, shifted)
        assert np.allclose(z1, z2, atol=1e-10)

    def test_z_dim_floor(self):
        with pytest.raises(ValueError):
            SideInfoExtractor(np.eye(3), np.zeros(3), np.zeros((1, 3)))


class TestCalibParams:
    def make_map(self, z=3, **kw):
        Z = np.zeros((z, z))
        base = dict(Lambda_a=Z, Gamma_a=Z, c_a=np.zeros(z), k_a=0.0,
                    Lambda_b=Z, Gamma_b=Z, c_b=np.zeros(z), k_b=0.0)
        base.update(kw)
        return CalParamMap(**base)

    def test_constants_only(self):
        cal = self.make_map(k_a=1.2, k_b=-0.3)
        rng = np.random.Generator(np.random.PCG64(0))
        a, b = calib_params(rng.standard_normal(3), rng.standard_normal(3), cal)
        assert (a, b) == (1.2, -0.3)

    def test_swap_symmetry(self):
        rng = np.random.Generator(np.random.PCG64(1))
        L = rng.standard_normal((3, 3))
        cal = self.make_map(Lambda_a=(L + L.T) / 2, c_a=rng.standard_normal(3),
                            k_a=0.5)
        z1, z2 = rng.standard_normal(3), rng.standard_normal(3)
        assert calib_params(z1, z2, cal) == calib_params(z2, z1, cal)

    def test_identity_lambda_hand_value(self):
        cal = self.make_map(Lambda_a=np.eye(3))
        z = np.array([0.5, -1.0, 2.0])
        a, b = calib_params(z, z, cal)
        assert a == pytest.approx(2.0 * z @ z, abs=1e-12)
        assert b == 0.0

    def test_gamma_must_be_zero_when_off(self):
        with pytest.raises(ValueError):
            self.make_map(Gamma_a=np.eye(3))


class TestWarmStart:
    def test_same_seed_bit_identical(self, fitted):
        emb, model = fitted
        again = warm_start(model.full_basis, model.scorer, model.global_cal,
                           lda_dim=6, m_dim=5, z_dim=4, seed=3)
        assert np.array_equal(again.side.W, model.side.W)
        assert np.array_equal(again.fe.P, model.fe.P)
        assert model_to_dict(again) == model_to_dict(model)

    def test_constants_equal_global_cal(self, fitted):
        _, model = fitted
        assert model.cal.k_a == model.global_cal.alpha
        assert model.cal.k_b == model.global_cal.beta

    def test_side_affine_is_trailing_basis_rows(self, fitted):
        _, model = fitted
        full = model.full_basis
        assert np.array_equal(model.side.Pm, full.P[-5:])
        assert np.array_equal(model.side.mum, full.mu[-5:])

    def test_partial_mode_randomizes_side_affine_only(self, fitted):
        _, model = fitted
        part = warm_start(model.full_basis, model.scorer, model.global_cal,
                          lda_dim=6, m_dim=5, z_dim=4, seed=3,
                          init_mode="warm-partial")
        assert np.array_equal(part.side.W, model.side.W)  # same seed, same W
        assert not np.array_equal(part.side.Pm, model.side.Pm)
        assert np.array_equal(part.fe.P, model.fe.P)
        assert part.cal.k_a == model.cal.k_a

    def test_random_mode_randomizes_everything(self, fitted):
        _, model = fitted
        rnd = warm_start(model.full_basis, model.scorer, model.global_cal,
                         lda_dim=6, m_dim=5, z_dim=4, seed=3, init_mode="random")
        assert not np.array_equal(rnd.fe.P, model.fe.P)
        assert rnd.cal.k_a != model.cal.k_a
        assert np.max(np.abs(rnd.scorer.Lambda - rnd.scorer.Lambda.T)) == 0.0

    def test_insufficient_basis_rows(self, fitted):
        _, model = fitted
        with pytest.raises(DegenerateDataError):
            warm_start(model.full_basis, model.scorer, model.global_cal,
                       lda_dim=6, m_dim=40, z_dim=4, seed=0)


class TestForwardTrial:
    def test_matches_plda_plus_global_cal_at_init(self, fitted):
        emb, model = fitted
        rng = np.random.Generator(np.random.PCG64(4))
        from svbackend.frontend import apply_front
        worst = 0.0
        for _ in range(1000):
            i, j = rng.integers(len(emb.ids), size=2)
            x1, x2 = emb.vectors[i], emb.vectors[j]
            want = apply_cal(plda_score(apply_front(x1, model.fe),
                                        apply_front(x2, model.fe), model.scorer),
                             model.global_cal)
            got = forward_trial(x1, x2, model)
            worst = max(worst, abs(got - want))
        assert worst < 1e-10

    def test_swap_symmetry_exact(self, fitted):
        emb, model = fitted
        rng = np.random.Generator(np.random.PCG64(5))
        for _ in range(50):
            i, j = rng.integers(len(emb.ids), size=2)
            x1, x2 = emb.vectors[i], emb.vectors[j]
            assert forward_trial(x1, x2, model) == forward_trial(x2, x1, model)

    def test_side_params_change_llr_not_raw_score(self, fitted):
        emb, model = fitted
        x1, x2 = emb.vectors[0], emb.vectors[11]
        cache = forward_samples(model, np.vstack([x1, x2]))
        from svbackend.dplda import forward_pairs
        llr0, s0, _, _ = forward_pairs(model, cache, np.array([0]), np.array([1]))

        bumped_cal = CalParamMap(
            model.cal.Lambda_a + np.eye(model.cal.z_dim) * 0.2, model.cal.Gamma_a,
            model.cal.c_a, model.cal.k_a, model.cal.Lambda_b, model.cal.Gamma_b,
            model.cal.c_b, model.cal.k_b, use_gamma=model.cal.use_gamma)
        import dataclasses
        bumped = dataclasses.replace(model, cal=bumped_cal)
        cache2 = forward_samples(bumped, np.vstack([x1, x2]))
        llr1, s1, _, _ = forward_pairs(bumped, cache2, np.array([0]), np.array([1]))
        assert s1[0] == s0[0]
        assert llr1[0] != llr0[0]


class TestScoreTrials:
    def test_modes(self, fitted):
        emb, model = fitted
        trials = sample_trials(emb, 40, 60, seed=6)
        as_d = score_trials(model, emb, trials, mode="as-dplda")
        pl = score_trials(model, emb, trials, mode="plda")
        raw = score_trials(model, emb, trials, mode="raw")
        assert np.allclose(as_d.scores, pl.scores, atol=1e-10)  # warm start
        assert np.allclose(pl.scores,
                           model.global_cal.alpha * raw.scores + model.global_cal.beta)
        assert raw.kind == "raw" and pl.kind == "llr"

    def test_ca_mode_uses_external_m(self, fitted):
        emb, model = fitted
        trials = [Trial(emb.ids[0], emb.ids[1], "impostor")]
        rng = np.random.Generator(np.random.PCG64(7))
        ext = {sid: rng.standard_normal(5) for sid in emb.ids}
        got = score_trials(model, emb, trials, mode="ca-dplda", external_m=ext)
        # at warm start the calibration constants dominate regardless of z
        want = score_trials(model, emb, trials, mode="plda")
        assert np.allclose(got.scores, want.scores, atol=1e-10)
        with pytest.raises(ValueError):
            score_trials(model, emb, trials, mode="ca-dplda")

    def test_raw_matches_pipeline_scores(self, fitted):
        emb, model = fitted
        trials = sample_trials(emb, 20, 30, seed=8)
        raw = score_trials(model, emb, trials, mode="raw")
        want = raw_score_set(model.fe, model.scorer, emb, trials)
        assert np.allclose(raw.scores, want.scores, atol=1e-12)


class TestSerialization:
    def test_round_trip_bit_exact(self, fitted, tmp_path):
        _, model = fitted
        p = tmp_path / "m.json"
        save_model(model, p)
        back = load_model(p)
        assert model_to_dict(back) == model_to_dict(model)
        save_model(back, tmp_path / "m2.json")
        assert (tmp_path / "m2.json").read_bytes() == p.read_bytes()

    def test_schema_version_checked(self, fitted):
        _, model = fitted
        d = model_to_dict(model)
        d["schema_version"] = 99
        with pytest.raises(ValueError, match="schema"):
            model_from_dict(d)


def test_init_model_pipeline_end_to_end():
    emb, _ = generate(SynthConfig(dim=10, n_speakers=40, seed=31))
    model = init_model(emb, lda_dim=5, m_dim=5, z_dim=3, seed=1,
                       n_cal_target=200, n_cal_impostor=400)
    assert model.fe.out_dim == 5
    assert model.global_cal is not None and model.global_cal.alpha > 0
    trials = sample_trials(emb, 30, 50, seed=2)
    ss = score_trials(model, emb, trials)
    assert len(ss) == len(trials)
