import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigg.errors import InputError, NumericalError, ValidationError
from sigg.metrics import (EntropyReport, GaussianStats, InceptionModel,
                          InceptionTrainConfig, conditional_entropy,
                          entropy_report, fit_gaussian, frechet_distance,
                          inception_train, marginal_entropy,
                          predict_proportions, sequence_features, sfid)
from sigg.synthdata import SynthConfig, simulate


class TestEntropies:
    def test_uniform_fourteen_actions(self):
        seqs = [np.arange(14), np.arange(14)]
        assert marginal_entropy(seqs) == pytest.approx(np.log(14), abs=1e-12)

    def test_marginal_from_frequency_oracle(self):
        # "aabb", "abbb" -> f(a)=3/8, f(b)=5/8
        seqs = [np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1])]
        expected = -(3 / 8) * np.log(3 / 8) - (5 / 8) * np.log(5 / 8)
        assert expected == pytest.approx(0.6616, abs=5e-5)
        assert marginal_entropy(seqs) == pytest.approx(expected, abs=1e-12)

    def test_conditional_constant_sequences(self):
        seqs = [np.full(40, 3), np.full(40, 7)]
        assert conditional_entropy(seqs) == 0.0

    def test_conditional_hand_computed(self):
        # "ab", "aa" -> (ln 2 + 0)/2
        seqs = [np.array([0, 1]), np.array([0, 0])]
        assert conditional_entropy(seqs) == pytest.approx(np.log(2) / 2, abs=1e-12)
        assert np.log(2) / 2 == pytest.approx(0.3466, abs=5e-5)

    def test_empty_inputs_rejected(self):
        with pytest.raises(InputError):
            marginal_entropy([])
        with pytest.raises(InputError):
            conditional_entropy([])
        with pytest.raises(InputError):
            conditional_entropy([np.array([], dtype=int)])

    def test_is_identity(self):
        rep = entropy_report([np.array([0, 1, 2, 1]), np.array([2, 2, 0, 1])])
        assert rep.is_ == pytest.approx(np.exp(rep.h_m - rep.h_c), abs=1e-12)

    def test_reported_real_data_is(self):
        # published real-data entropies 2.18 / 0.30 imply IS exp(1.88)
        rep = EntropyReport(h_m=2.18, h_c=0.30)
        assert rep.is_ == pytest.approx(6.5535, abs=1e-3)

    @given(st.lists(st.lists(st.integers(0, 13), min_size=1, max_size=50),
                    min_size=1, max_size=20))
    @settings(max_examples=60, deadline=None)
    def test_entropy_bounds(self, seqs):
        arrs = [np.asarray(s) for s in seqs]
        h_m = marginal_entropy(arrs)
        h_c = conditional_entropy(arrs)
        assert 0.0 <= h_m <= np.log(14) + 1e-12
        assert 0.0 <= h_c <= np.log(14) + 1e-12


class TestFrechet:
    def test_identical_stats_zero(self):
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((200, 64))
        stats = fit_gaussian(feats)
        assert abs(frechet_distance(stats, stats)) < 1e-6

    def test_scalar_closed_form(self):
        a = GaussianStats(mean=np.array([0.0]), cov=np.array([[1.0]]))
        b = GaussianStats(mean=np.array([1.0]), cov=np.array([[4.0]]))
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        s1 = fit_gaussian(rng.standard_normal((100, 8)))
        s2 = fit_gaussian(rng.standard_normal((100, 8)) * 2 + 0.3)
        d12 = frechet_distance(s1, s2)
        d21 = frechet_distance(s2, s1)
        assert abs(d12 - d21) < 1e-8
        assert d12 > 0

    def test_equal_covariance_reduces_to_mean_term(self):
        rng = np.random.default_rng(2)
        cov = rng.standard_normal((6, 6))
        cov = cov @ cov.T + 0.5 * np.eye(6)
        mu1 = rng.standard_normal(6)
        mu2 = rng.standard_normal(6)
        d = frechet_distance(GaussianStats(mu1, cov), GaussianStats(mu2, cov))
        assert d == pytest.approx(float((mu1 - mu2) @ (mu1 - mu2)), abs=1e-8)

    def test_asymmetric_covariance_rejected(self):
        cov = np.array([[1.0, 0.2], [0.1, 1.0]])
        with pytest.raises(ValidationError):
            GaussianStats(np.zeros(2), cov)

    def test_negative_eigenvalue_aborts(self):
        cov = np.array([[1.0, 0.0], [0.0, -0.5]])
        with pytest.raises(NumericalError):
            frechet_distance(GaussianStats(np.zeros(2), cov),
                             GaussianStats(np.zeros(2), np.eye(2)))

    def test_fit_requires_two_rows(self):
        with pytest.raises(InputError):
            fit_gaussian(np.ones((1, 4)))


def train_small_inception(n_actions=6, n_seqs=200, length=24, seed=0,
                          dwell=0.85, max_epochs=150):
    synth = SynthConfig(n_actions=n_actions, n_persons=2, coupling=0.1,
                        dwell=dwell, seed=seed)
    samples = simulate(synth, n_seqs // 2, t_obs=length // 2, horizon=length // 2)
    seqs = [row for s in samples for row in s.tokens]
    cfg = InceptionTrainConfig(patience=25, max_epochs=max_epochs, seed=seed)
    model, history = inception_train(seqs, n_actions, cfg)
    return model, history, seqs


class TestInception:
    @pytest.fixture(scope="class")
    def trained(self):
        return train_small_inception()

    def test_untrained_output_sums_to_one(self):
        from sigg.nnet.params import ParamStore
        model = InceptionModel(ParamStore(), 5, np.random.default_rng(0), d_h=8,
                               d_feat=8)
        probs = predict_proportions(model, [np.array([0, 1, 2, 3, 4])])
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_training_plateaus_and_predicts_proportions(self, trained):
        model, history, seqs = trained
        assert len(history) >= 10
        # held-out style check: mean L1 between predicted and exact
        # proportions below 0.05
        preds = predict_proportions(model, seqs)
        truth = np.stack([np.bincount(s, minlength=6) / s.size for s in seqs])
        l1 = np.abs(preds - truth).sum(axis=1).mean()
        assert l1 < 0.05

    def test_constant_sequence_concentrates(self, trained):
        model, _, _ = trained
        for a in range(3):
            probs = predict_proportions(model, [np.full(24, a)])
            assert probs[0, a] >= 0.9

    def test_feature_dim(self, trained):
        model, _, seqs = trained
        feats = sequence_features(model, seqs[:10])
        assert feats.shape == (10, 64)

    def test_save_load_round_trip(self, trained, tmp_path):
        model, _, seqs = trained
        path = tmp_path / "inc.sigg"
        model.save(path)
        loaded = InceptionModel.load(path)
        a = sequence_features(model, seqs[:5])
        b = sequence_features(loaded, seqs[:5])
        np.testing.assert_array_equal(a, b)

    def test_too_few_sequences_rejected(self):
        with pytest.raises(InputError):
            inception_train([np.array([0, 1])] * 10, 3)

    def test_sfid_properties(self, trained):
        model, _, seqs = trained
        half_a, half_b = seqs[::2], seqs[1::2]
        self_dist = sfid(half_a, half_a, model)
        assert self_dist < 1e-6
        near = sfid(half_a, half_b, model)
        # disjoint constant-action populations sit far apart in feature
        # space: distance must exceed the within-population distance
        far_set = [np.full(24, i % 2) for i in range(100)]
        far = sfid(half_a, far_set, model)
        assert far > near
        assert abs(sfid(half_a, half_b, model) - sfid(half_b, half_a, model)) < 1e-8

    def test_sfid_minimum_set_size(self, trained):
        model, _, seqs = trained
        with pytest.raises(InputError):
            sfid(seqs[:10], seqs, model)
