import ctypes, json, time
ctypes.CDLL("libc.so.6").mallopt(-3, 1 << 29)
import numpy as np
from sigg.discriminator import DiscriminatorConfig
from sigg.generator import GeneratorConfig
from sigg.metrics import (InceptionTrainConfig, fit_gaussian, frechet_distance,
                          inception_train, marginal_entropy, sequence_features)
from sigg.synthdata import SynthConfig, simulate
from sigg.training import TrainConfig, Trainer

t0 = time.time()
synth = SynthConfig(n_actions=14, n_persons=3, coupling=0.15, dwell=0.9, seed=0)
data = simulate(synth, 600, t_obs=60, horizon=40)
real_rows = [r for s in data for r in s.tokens]
real_tgt = [r for s in data for r in s.target]
print(f"data H_M {marginal_entropy(real_tgt):.4f}", flush=True)

inc, hist = inception_train(real_rows, 14, InceptionTrainConfig(
    patience=30, max_epochs=200, seed=0))
print(f"inception: {len(hist)} epochs, best val {min(h['val'] for h in hist):.4f} "
      f"[{time.time()-t0:.0f}s]", flush=True)
real_stats = fit_gaussian(sequence_features(inc, real_rows))

def sfid_of(trainer, seed=0):
    gen = trainer.generate_corpus(eval_seed=seed)
    rows = [r for s in gen for r in s.tokens]
    tgts = [r for s in gen for r in s.target]
    stats = fit_gaussian(sequence_features(inc, rows))
    return frechet_distance(real_stats, stats), marginal_entropy(tgts)

trainer = Trainer(data, 14, GeneratorConfig(), DiscriminatorConfig(horizon=40),
                  TrainConfig(lambda_sup=0.0, batch_size=64, seed=0))
s0, h0 = sfid_of(trainer)
print(f"untrained: sfid {s0:.4f} h_m {h0:.4f} [{time.time()-t0:.0f}s]", flush=True)
for epoch in range(1, 41):
    losses = trainer.run_epoch()
    if epoch % 4 == 0 or epoch == 1:
        sf, hm = sfid_of(trainer)
        print(f"epoch {epoch:3d}: d {losses['d_loss']:.3f} g {losses['g_adv']:.3f} "
              f"h_m {hm:.4f} sfid {sf:.4f} ratio {sf/s0:.3f} "
              f"[{time.time()-t0:.0f}s]", flush=True)
trainer.save_checkpoint("/root/pkg/exp/conv1.sigg")
