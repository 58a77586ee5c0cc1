import numpy as np
import pytest

from sigg.actionspace import write_dataset
from sigg.errors import ConfigError
from sigg.metrics import conditional_entropy, marginal_entropy
from sigg.synthdata import (SynthConfig, simulate, stationary_distribution,
                            synthetic_dictionary)


class TestConfig:
    def test_row_stochastic_validation(self):
        bad = np.ones((1, 3, 3))
        with pytest.raises(ConfigError):
            SynthConfig(n_actions=3, n_persons=2, transitions=bad)

    def test_coupling_range(self):
        with pytest.raises(ConfigError):
            SynthConfig(coupling=1.5)

    def test_default_transitions_have_dwell_floor(self):
        cfg = SynthConfig(n_actions=6, n_persons=3, dwell=0.8, seed=1)
        diag = np.diagonal(cfg.transitions, axis1=1, axis2=2)
        assert (diag >= 0.8 - 1e-9).all()


class TestSimulate:
    def test_seeded_determinism_bytes(self, tmp_path):
        cfg = SynthConfig(n_actions=6, n_persons=3, coupling=0.2, seed=42)
        a = simulate(cfg, 20, t_obs=10, horizon=8)
        b = simulate(SynthConfig(n_actions=6, n_persons=3, coupling=0.2, seed=42),
                     20, t_obs=10, horizon=8)
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_dataset(pa, a)
        write_dataset(pb, b)
        assert pa.read_bytes() == pb.read_bytes()
        c = simulate(SynthConfig(n_actions=6, n_persons=3, coupling=0.2, seed=43),
                     20, t_obs=10, horizon=8)
        assert any((x.tokens != y.tokens).any() for x, y in zip(a, c))

    def test_uniform_iid_marginal_entropy(self):
        # coupling 0, uniform rows: H_M approaches ln|A| by the law of
        # large numbers (checked at 1e5 tokens)
        n_actions = 8
        uniform = np.full((2, n_actions, n_actions), 1.0 / n_actions)
        cfg = SynthConfig(n_actions=n_actions, n_persons=2, transitions=uniform,
                          coupling=0.0, seed=7)
        samples = simulate(cfg, 250, t_obs=100, horizon=100)
        rows = [row for s in samples for row in s.tokens]
        assert sum(r.size for r in rows) == 100_000
        assert abs(marginal_entropy(rows) - np.log(n_actions)) < 0.02

    def test_full_dwell_constant_sequences(self):
        cfg = SynthConfig(n_actions=5, n_persons=2, dwell=1.0, coupling=0.0, seed=3)
        samples = simulate(cfg, 10, t_obs=10, horizon=10)
        rows = [row for s in samples for row in s.tokens]
        assert conditional_entropy(rows) == 0.0
        for r in rows:
            assert (r == r[0]).all()

    def test_full_coupling_two_persons_agree(self):
        cfg = SynthConfig(n_actions=6, n_persons=2, coupling=1.0, seed=11)
        samples = simulate(cfg, 20, t_obs=30, horizon=30)
        agree = np.mean([
            (s.tokens[0, 5:] == s.tokens[1, 5:]).mean() for s in samples])
        assert agree > 0.95

    def test_stationary_distribution_oracle(self):
        cfg = SynthConfig(n_actions=5, n_persons=2, dwell=0.5, coupling=0.0, seed=9)
        matrix = cfg.transitions[0]
        target = stationary_distribution(matrix)
        np.testing.assert_allclose(target @ matrix, target, atol=1e-12)
        long_cfg = SynthConfig(n_actions=5, n_persons=2,
                               transitions=cfg.transitions, coupling=0.0, seed=9)
        samples = simulate(long_cfg, 50, t_obs=1000, horizon=1000)
        tokens = np.concatenate([s.tokens[0] for s in samples])
        counts = np.bincount(tokens, minlength=5) / tokens.size
        assert 0.5 * np.abs(counts - target).sum() < 0.02

    def test_dataset_format_round_trip(self, tmp_path):
        from sigg.actionspace import read_dataset, save_dictionary, load_dictionary
        cfg = SynthConfig(n_actions=14, n_persons=3, seed=0)
        samples = simulate(cfg, 5, t_obs=6, horizon=4)
        write_dataset(tmp_path / "d.jsonl", samples)
        d = synthetic_dictionary(14)
        save_dictionary(tmp_path / "dict.json", d)
        loaded_d = load_dictionary(tmp_path / "dict.json")
        assert loaded_d.n_actions == 14
        loaded = read_dataset(tmp_path / "d.jsonl", n_actions=loaded_d.n_actions)
        assert len(loaded) == 5
        assert all((a.tokens == b.tokens).all() for a, b in zip(samples, loaded))
