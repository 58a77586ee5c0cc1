"""Command-line entry point.

Subcommands cover the whole pipeline: ``preprocess`` raw annotations,
``synth`` a dataset, ``train`` a model, ``generate`` continuations,
``eval`` metrics, ``inception-train`` the metric model, and
``gradcheck`` the differentiation layer. Exit codes: 0 ok, 1 validation
error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import actionspace, config as cfgmod
from .checks import TOLERANCE, full_suite
from .errors import NUMERICAL_ERRORS, CheckpointError, SiggError
from .generator import Generator
from .metrics import (InceptionModel, entropy_report, fit_gaussian,
                      frechet_distance, inception_train, sequence_features)
from .nnet.autodiff import no_grad
from .nnet.checkpoint import KIND_TRAIN, read_checkpoint
from .nnet.params import ParamStore, tune_allocator
from .synthdata import simulate, synthetic_dictionary
from .training import Trainer, read_metrics


def _log_config(cfg: dict, out_path: Path | None = None) -> None:
    text = cfgmod.format_config(cfg)
    sys.stdout.write("# resolved configuration\n" + text)
    if out_path is not None:
        out_path.write_text(text, encoding="utf-8")


def _load_dataset(data_path: str, dict_path: str):
    dictionary = actionspace.load_dictionary(dict_path)
    dataset = actionspace.read_dataset(data_path, n_actions=dictionary.n_actions)
    return dataset, dictionary


def cmd_synth(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _log_config(cfg, out.with_suffix(".config"))
    synth_cfg = cfgmod.synth_config(cfg)
    samples = simulate(synth_cfg, cfg["synth.samples"], cfg["synth.t_obs"],
                       cfg["synth.horizon"])
    actionspace.write_dataset(out, samples)
    actionspace.save_dictionary(args.dict, synthetic_dictionary(synth_cfg.n_actions))
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _log_config(cfg, out.with_suffix(".config"))
    groups = actionspace.read_annotations(args.annotations)
    masks = [int(m) for g in groups for m in g.actions.reshape(-1)]
    dictionary = actionspace.build_dictionary(masks, cfg["data.coverage"])
    samples = actionspace.segment_annotations(
        groups, dictionary, fps=cfg["data.fps"], seg_seconds=cfg["data.seg_seconds"],
        horizon=cfg["data.horizon"], occlusion_max=cfg["data.occlusion_max"])
    actionspace.write_dataset(out, samples)
    actionspace.save_dictionary(args.dict, dictionary)
    print(f"dictionary: {dictionary.n_actions} actions (incl. catch-all); "
          f"{len(samples)} samples -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _log_config(cfg, out_dir / "resolved.config")
    dataset, dictionary = _load_dataset(args.data, args.dict)
    horizon = dataset[0].horizon
    trainer = Trainer(dataset, dictionary.n_actions,
                      cfgmod.generator_config(cfg),
                      cfgmod.discriminator_config(cfg, horizon),
                      cfgmod.train_config(cfg))
    inception = InceptionModel.load(args.inception) if args.inception else None

    def log(row):
        print("epoch {epoch:>5}  h_m {h_m:.4f}  h_c {h_c:.4f}  is {is:.3f}  "
              "sfid {sfid:.4f}  d {d_loss:.4f}  g_adv {g_adv:.4f}  "
              "g_sup {g_sup:.6f}".format(**row))

    trainer.train(out_dir, inception=inception, log=log)
    trainer.save_checkpoint(out_dir / "checkpoint.sigg")
    if args.plot:
        _plot_metrics(out_dir / "metrics.csv", out_dir / "metrics.png")
    print(f"checkpoint and metrics written to {out_dir}")
    return 0


def _plot_metrics(csv_path: Path, png_path: Path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; skipping plot", file=sys.stderr)
        return
    rows = read_metrics(csv_path)
    if not rows:
        return
    epochs = [r["epoch"] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(epochs, [r["h_m"] for r in rows])
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("marginal entropy (nats)")
    axes[1].plot(epochs, [r["sfid"] for r in rows])
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("SFID")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def load_generator(checkpoint_path: str) -> tuple[Generator, int, int]:
    """Rebuild the generator of a training checkpoint.

    Returns (generator, n_actions, horizon)."""
    from .generator import GeneratorConfig

    tensors, kind = read_checkpoint(checkpoint_path)
    if kind != KIND_TRAIN:
        raise CheckpointError(f"{checkpoint_path}: not a training checkpoint")
    gen_cfg = GeneratorConfig(
        d_h=int(tensors["meta.gen.d_h"]), d_embed=int(tensors["meta.gen.d_embed"]),
        noise_dim=int(tensors["meta.gen.noise_dim"]),
        d_deep=int(tensors["meta.gen.d_deep"]),
        temperature=float(tensors["meta.gen.temperature"]),
        spectral_out=bool(int(tensors["meta.gen.spectral_out"])))
    n_actions = int(tensors["meta.n_actions"])
    store = ParamStore()
    gen = Generator(store, n_actions, gen_cfg, np.random.default_rng(0))
    store.load_state_tensors({k[2:]: v for k, v in tensors.items()
                              if k.startswith("g.")})
    return gen, n_actions, int(tensors["meta.disc.horizon"])


def cmd_generate(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    _log_config(cfg)
    dataset, dictionary = _load_dataset(args.data, args.dict)
    gen, n_actions, _ = load_generator(args.checkpoint)
    if n_actions != dictionary.n_actions:
        raise CheckpointError(
            f"checkpoint has {n_actions} actions, dictionary {dictionary.n_actions}")
    rng = np.random.default_rng(np.random.SeedSequence(cfg["train.seed"]))
    out_samples = []
    for s in dataset:
        obs = s.observed[None]
        noise = gen.draw_noise(rng, 1, s.persons)
        with no_grad():
            rolled = gen.generate(obs, s.horizon, noise, training=False,
                                  sample_rng=rng if args.sample else None)
        tokens = np.concatenate([s.observed, rolled.tokens[0]], axis=1)
        out_samples.append(actionspace.Interaction(
            persons=s.persons, t_obs=s.t_obs, horizon=s.horizon, tokens=tokens,
            sample_id=s.sample_id))
    actionspace.write_dataset(args.out, out_samples)
    print(f"wrote {len(out_samples)} continuations to {args.out}")
    return 0


EVAL_HEADER = ["generated", "h_m", "h_c", "is", "sfid"]
EVAL_VERSION_LINE = "# sigg-eval-v1"


def cmd_eval(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    _log_config(cfg)
    real, dictionary = _load_dataset(args.data, args.dict)
    gen = actionspace.read_dataset(args.gen, n_actions=dictionary.n_actions)
    rep_gen = entropy_report([row for s in gen for row in s.target])
    rep_real = entropy_report([row for s in real for row in s.target])
    sfid_value = float("nan")
    if args.inception:
        model = InceptionModel.load(args.inception)
        feats_real = sequence_features(model, [row for s in real for row in s.tokens])
        feats_gen = sequence_features(model, [row for s in gen for row in s.tokens])
        sfid_value = frechet_distance(fit_gaussian(feats_real), fit_gaussian(feats_gen))
    print(f"real data : h_m {rep_real.h_m:.4f}  h_c {rep_real.h_c:.4f}  "
          f"is {rep_real.is_:.4f}")
    print(f"generated : h_m {rep_gen.h_m:.4f}  h_c {rep_gen.h_c:.4f}  "
          f"is {rep_gen.is_:.4f}  sfid {sfid_value:.6f}")
    if args.csv:
        path = Path(args.csv)
        fresh = not path.exists() or path.stat().st_size == 0
        with path.open("a", encoding="utf-8", newline="") as fh:
            if fresh:
                fh.write(EVAL_VERSION_LINE + "\n")
                csv.writer(fh).writerow(EVAL_HEADER)
            csv.writer(fh).writerow([args.gen, rep_gen.h_m, rep_gen.h_c,
                                     rep_gen.is_, sfid_value])
    return 0


def cmd_inception_train(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    _log_config(cfg)
    dataset, dictionary = _load_dataset(args.data, args.dict)
    sequences = [row for s in dataset for row in s.tokens]
    model, history = inception_train(sequences, dictionary.n_actions,
                                     cfgmod.inception_config(cfg))
    model.save(args.out)
    last = history[-1]
    print(f"trained {last['epoch']} epochs, val loss {last['val']:.6f} -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = full_suite(seed=args.seed)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_rel_err:.3e}  {status}")
        failed += 0 if r.ok else 1
    print(f"{len(results) - failed}/{len(results)} checks below {TOLERANCE:.0e}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigg",
        description="Adversarial generation of synchronized discrete action "
                    "sequences for interacting agents.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")

    p = sub.add_parser("synth", help="write a synthetic interaction dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset (JSON-lines)")
    p.add_argument("--dict", required=True, help="output dictionary (JSON)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="segment raw annotations into a dataset")
    common(p)
    p.add_argument("--annotations", required=True, help="raw annotation JSON-lines")
    p.add_argument("--out", required=True, help="output dataset (JSON-lines)")
    p.add_argument("--dict", required=True, help="output dictionary (JSON)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="adversarial training run")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--inception", help="frozen metric model for SFID logging")
    p.add_argument("--plot", action="store_true", help="write metrics.png")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="continue observed prefixes")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample", action="store_true",
                   help="categorical sampling instead of argmax decoding")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="entropy metrics and SFID of a generated set")
    common(p)
    p.add_argument("--data", required=True, help="reference dataset")
    p.add_argument("--gen", required=True, help="generated dataset")
    p.add_argument("--dict", required=True)
    p.add_argument("--inception", help="frozen metric model (enables SFID)")
    p.add_argument("--csv", help="append results to this CSV file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inception-train", help="fit the frozen metric model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inception_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    tune_allocator()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except SiggError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
