import json
import os
from pathlib import Path

import numpy as np
import pytest

from sigg import cli
from sigg.config import format_config, load_config
from sigg.errors import ConfigError

TINY = [
    "--set", "synth.actions=5", "--set", "synth.persons=2",
    "--set", "synth.samples=12", "--set", "synth.t_obs=6",
    "--set", "synth.horizon=8",
]
TINY_MODEL = [
    "--set", "gen.d_h=8", "--set", "gen.d_embed=8", "--set", "gen.noise_dim=8",
    "--set", "gen.d_deep=12", "--set", "disc.d_h=8", "--set", "disc.d_phi=12",
    "--set", "disc.d_psi=12",
]


class TestConfig:
    def test_defaults_and_overrides(self, tmp_path):
        cfg_file = tmp_path / "run.config"
        cfg_file.write_text("# comment\ntrain.epochs = 7\ndisc.kind = simple\n")
        cfg = load_config(cfg_file, ["train.epochs=9"])
        assert cfg["train.epochs"] == 9  # flag wins over file
        assert cfg["disc.kind"] == "simple"
        assert cfg["train.batch_size"] == 32

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.config"
        cfg_file.write_text("train.epoch = 7\n")
        with pytest.raises(ConfigError, match="train.epoch"):
            load_config(cfg_file)
        with pytest.raises(ConfigError):
            load_config(None, ["nope=1"])

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            load_config(None, ["train.epochs=many"])
        with pytest.raises(ConfigError):
            load_config(None, ["disc.kind=conv"])

    def test_format_round_trips(self, tmp_path):
        cfg = load_config(None, ["disc.chunks=8,4", "train.adversarial=false"])
        text = format_config(cfg)
        cfg_file = tmp_path / "resolved.config"
        cfg_file.write_text(text)
        again = load_config(cfg_file)
        assert again == cfg

    def test_sig_seed_fallback(self, monkeypatch):
        monkeypatch.setenv("SIG_SEED", "77")
        cfg = load_config(None)
        assert cfg["train.seed"] == 77
        assert cfg["synth.seed"] == 77
        cfg = load_config(None, ["train.seed=5"])
        assert cfg["train.seed"] == 5


class TestPipeline:
    @pytest.fixture(scope="class")
    def workdir(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("pipeline")
        data = root / "data.jsonl"
        dictionary = root / "dict.json"
        rc = cli.main(["synth", "--out", str(data), "--dict", str(dictionary)] + TINY)
        assert rc == 0
        return root

    def test_synth_writes_artifacts(self, workdir):
        data = workdir / "data.jsonl"
        assert sum(1 for _ in data.open()) == 12
        assert (workdir / "data.config").exists()
        rec = json.loads(data.open().readline())
        assert set(rec) == {"id", "t_obs", "horizon", "actions"}

    def test_train_generate_eval_smoke(self, workdir):
        data, dictionary = str(workdir / "data.jsonl"), str(workdir / "dict.json")
        out_dir = workdir / "run"
        rc = cli.main(["train", "--data", data, "--dict", dictionary,
                       "--out-dir", str(out_dir),
                       "--set", "train.epochs=2", "--set", "train.batch_size=6",
                       "--set", "train.eval_interval=1",
                       "--set", "train.save_interval=1"] + TINY_MODEL)
        assert rc == 0
        assert (out_dir / "checkpoint.sigg").exists()
        assert (out_dir / "metrics.csv").exists()
        assert (out_dir / "resolved.config").exists()

        gen_path = workdir / "gen.jsonl"
        rc = cli.main(["generate", "--checkpoint", str(out_dir / "checkpoint.sigg"),
                       "--data", data, "--dict", dictionary, "--out", str(gen_path)])
        assert rc == 0
        assert sum(1 for _ in gen_path.open()) == 12

        rc = cli.main(["eval", "--data", data, "--gen", str(gen_path),
                       "--dict", dictionary, "--csv", str(workdir / "eval.csv")])
        assert rc == 0
        lines = (workdir / "eval.csv").read_text().splitlines()
        assert lines[0].startswith("#")
        assert lines[1].startswith("generated,")
        assert len(lines) == 3

    def test_generate_with_wrong_dictionary(self, workdir, tmp_path):
        from sigg.actionspace import save_dictionary
        from sigg.synthdata import synthetic_dictionary
        other = tmp_path / "other.json"
        save_dictionary(other, synthetic_dictionary(9))
        rc = cli.main(["generate",
                       "--checkpoint", str(workdir / "run" / "checkpoint.sigg"),
                       "--data", str(workdir / "data.jsonl"),
                       "--dict", str(other), "--out", str(tmp_path / "g.jsonl")])
        assert rc == 1

    def test_missing_config_file(self, workdir):
        rc = cli.main(["synth", "--out", str(workdir / "x.jsonl"),
                       "--dict", str(workdir / "x.json"),
                       "--config", str(workdir / "missing.config")])
        assert rc == 1


class TestPreprocess:
    def test_preprocess_round_trip(self, tmp_path):
        ann = tmp_path / "raw.jsonl"
        rng = np.random.default_rng(0)
        with ann.open("w") as fh:
            for t in range(30):
                persons = [{"id": f"p{i}", "actions": [int(b) for b in rng.integers(0, 2, 8) * 0],
                            "occlusion": "none"} for i in range(2)]
                persons[0]["actions"][6] = int(t % 2)
                fh.write(json.dumps({"group": "g", "frame": t, "persons": persons}) + "\n")
        out = tmp_path / "ds.jsonl"
        dictionary = tmp_path / "dict.json"
        rc = cli.main(["preprocess", "--annotations", str(ann), "--out", str(out),
                       "--dict", str(dictionary),
                       "--set", "data.fps=2", "--set", "data.seg_seconds=3",
                       "--set", "data.horizon=4", "--set", "data.coverage=0.9"])
        assert rc == 0
        assert sum(1 for _ in out.open()) == 3  # 30 // (6 + 4)
        rec = json.loads(dictionary.read_text())
        assert "entries" in rec and "coverage" in rec


class TestGradcheckCommand:
    def test_exit_zero_and_reports(self, capsys):
        rc = cli.main(["gradcheck"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "loss_d" in out and "loss_g" in out and "ok" in out
