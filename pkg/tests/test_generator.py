import numpy as np
import pytest

from sigg.errors import InputError, ValidationError
from sigg.generator import Generator, GeneratorConfig, max_pool, one_hot
from sigg.nnet import autodiff as ad
from sigg.nnet.autodiff import backward, constant, no_grad
from sigg.nnet.gradcheck import grad_check
from sigg.nnet.params import ParamStore


def small_generator(n_actions=5, seed=1, **kw):
    cfg = GeneratorConfig(d_h=8, d_embed=8, noise_dim=8, d_deep=12, **kw)
    store = ParamStore()
    gen = Generator(store, n_actions, cfg, np.random.default_rng(seed))
    return gen, store


class TestConfig:
    def test_noise_dim_must_match_d_h(self):
        with pytest.raises(ValidationError):
            GeneratorConfig(d_h=64, noise_dim=32)

    def test_temperature_positive(self):
        with pytest.raises(ValidationError):
            GeneratorConfig(temperature=0.0)


class TestMaxPool:
    def test_example(self):
        out = max_pool(constant(np.array([[1.0, -2.0], [0.0, 3.0]])))
        np.testing.assert_array_equal(out.data, [1.0, 3.0])

    def test_single_person_identity(self):
        v = np.array([[0.3, -1.2, 9.0]])
        np.testing.assert_array_equal(max_pool(constant(v)).data, v[0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((5, 7))
        base = max_pool(constant(v)).data
        for _ in range(10):
            perm = rng.permutation(5)
            np.testing.assert_array_equal(max_pool(constant(v[perm])).data, base)


class TestEncode:
    def test_code_shape_and_dim(self):
        gen, _ = small_generator()
        obs = np.random.default_rng(0).integers(5, size=(3, 2, 6))
        codes = gen.encode(obs)
        assert codes.data.shape == (3, 2, 8)

    def test_identical_rows_identical_codes(self):
        gen, _ = small_generator()
        row = np.random.default_rng(0).integers(5, size=6)
        obs = np.stack([np.stack([row, row])])
        codes = gen.encode(obs).data
        np.testing.assert_array_equal(codes[0, 0], codes[0, 1])

    def test_per_person_independence_under_permutation(self):
        gen, _ = small_generator()
        obs = np.random.default_rng(0).integers(5, size=(2, 3, 6))
        codes = gen.encode(obs).data
        perm = np.array([2, 0, 1])
        codes_p = gen.encode(obs[:, perm]).data
        np.testing.assert_array_equal(codes_p, codes[:, perm])

    def test_empty_observation_rejected(self):
        gen, _ = small_generator()
        with pytest.raises(InputError):
            gen.encode(np.zeros((1, 2, 0), dtype=int))


class TestGenerate:
    def rollout(self, gen, obs, horizon=7, seed=3, **kw):
        rng = np.random.default_rng(seed)
        noise = gen.draw_noise(rng, obs.shape[0], obs.shape[1])
        return gen.generate(obs, horizon, noise, **kw), noise

    def test_shapes_and_distribution_rows(self):
        gen, _ = small_generator()
        obs = np.random.default_rng(0).integers(5, size=(2, 3, 6))
        out, _ = self.rollout(gen, obs, training=True, update_stats=False)
        assert out.relaxed.data.shape == (2, 3, 7, 5)
        assert out.tokens.shape == (2, 3, 7)
        sums = out.relaxed.data.sum(axis=-1)
        assert np.abs(sums - 1.0).max() < 1e-12
        assert (out.relaxed.data > 0).all()

    def test_sharp_temperature_near_one_hot(self):
        # softmax((0, -2)/0.1) = (1, 2.061e-9): margin >= 2 collapses the
        # relaxed row onto the argmax within 1e-8
        margin_tail = float(np.exp(-2.0 / 0.1))
        assert margin_tail < 1e-8
        gen, _ = small_generator(temperature=0.1)
        obs = np.random.default_rng(1).integers(5, size=(2, 2, 6))
        out, _ = self.rollout(gen, obs, training=False)
        relaxed = out.relaxed.data.reshape(-1, 5)
        sorted_logits_gap = np.sort(relaxed, axis=-1)
        for row, tok in zip(relaxed, out.tokens.reshape(-1)):
            top2 = np.sort(row)[-2:]
            if top2[0] > 0 and np.log(top2[1] / top2[0]) * 0.1 >= 2.0:
                hot = one_hot(np.array(tok), 5)
                assert np.abs(row - hot).max() < 1e-8

    def test_determinism(self):
        gen, _ = small_generator()
        obs = np.random.default_rng(2).integers(5, size=(2, 2, 6))
        out1, _ = self.rollout(gen, obs, training=True, update_stats=False)
        out2, _ = self.rollout(gen, obs, training=True, update_stats=False)
        assert (out1.relaxed.data == out2.relaxed.data).all()
        assert (out1.tokens == out2.tokens).all()

    def test_single_person_pool_is_own_state(self):
        gen, _ = small_generator()
        obs = np.random.default_rng(3).integers(5, size=(2, 1, 6))
        out, _ = self.rollout(gen, obs, training=False)
        assert out.relaxed.data.shape == (2, 1, 7, 5)

    def test_permutation_equivariance_bit_exact(self):
        gen, _ = small_generator()
        for trial in range(20):
            rng = np.random.default_rng(trial)
            obs = rng.integers(5, size=(2, 4, 6))
            noise = gen.draw_noise(rng, 2, 4)
            perm = rng.permutation(4)
            with no_grad():
                a = gen.generate(obs, 5, noise, training=True, update_stats=False)
                b = gen.generate(obs[:, perm], 5, noise[:, perm],
                                 training=True, update_stats=False)
            assert (a.relaxed.data[:, perm] == b.relaxed.data).all()
            assert (a.tokens[:, perm] == b.tokens).all()

    def test_sampling_flag(self):
        gen, _ = small_generator(temperature=1.0)
        obs = np.random.default_rng(4).integers(5, size=(2, 2, 6))
        noise = gen.draw_noise(np.random.default_rng(5), 2, 2)
        with no_grad():
            a = gen.generate(obs, 30, noise, training=False,
                             sample_rng=np.random.default_rng(7))
            b = gen.generate(obs, 30, noise, training=False,
                             sample_rng=np.random.default_rng(7))
            c = gen.generate(obs, 30, noise, training=False,
                             sample_rng=np.random.default_rng(8))
        assert (a.tokens == b.tokens).all()
        assert (a.tokens != c.tokens).any()

    def test_bad_noise_shape(self):
        gen, _ = small_generator()
        obs = np.zeros((1, 2, 4), dtype=int)
        with pytest.raises(InputError):
            gen.generate(obs, 3, np.zeros((1, 2, 4)), training=False)

    def test_gradient_reaches_encoder(self):
        gen, store = small_generator()
        obs = np.random.default_rng(6).integers(5, size=(2, 2, 6))
        noise = gen.draw_noise(np.random.default_rng(7), 2, 2)
        out = gen.generate(obs, 8, noise, training=True, update_stats=False)
        final_step = ad.narrow(out.relaxed, 2, 7, 1)
        backward(ad.sum_(ad.square(final_step)))
        g = store.params["gen.enc.W"].grad
        assert g is not None and np.abs(g).max() > 0

    def test_end_to_end_gradient_matches_fd(self):
        gen, store = small_generator()
        obs = np.random.default_rng(8).integers(5, size=(1, 2, 5))
        noise = gen.draw_noise(np.random.default_rng(9), 1, 2)
        probe = constant(np.random.default_rng(10).standard_normal((1, 2, 4, 5)))

        def f():
            out = gen.generate(obs, 4, noise, training=True, update_stats=False)
            return ad.sum_(ad.square(ad.mul(out.relaxed, probe)))

        err = grad_check(f, store, max_coords=10, rng=np.random.default_rng(11))
        assert err < 1e-5
