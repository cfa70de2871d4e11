"""Train a channel angle-delay map and inspect what it learned.

Uses a reduced budget (2 000 samples, 300 epochs, ~1 minute) so the script
stays interactive; the benchmark-scale recipe is the library default
(10 000 samples, 1 200 epochs). The trained map is saved next to the other
outputs and reused by the localization demo.
"""

import os
import time

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ckmsense import (ScenarioConfig, TrainingConfig, build_training_set,
                      cadm_forward, cadm_load, cadm_save, cadm_train,
                      generate_scene, prediction_errors, save_scene)

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

config = ScenarioConfig(master_seed=7)
env, target = generate_scene(
    config, np.random.default_rng(np.random.SeedSequence([7, 1])))
save_scene(env, os.path.join(OUT, "scene.txt"))

train_rng = np.random.default_rng(np.random.SeedSequence([7, 2]))
data = build_training_set(env, 2000, train_rng, l_prime=5)
holdout = build_training_set(env, 500,
                             np.random.default_rng(np.random.SeedSequence([7, 99])),
                             l_prime=5)
print(f"training set: {data.n_samples} locations x {data.l_prime} paths")

train_cfg = TrainingConfig(epochs=300, bounds=env.bounds)
t0 = time.perf_counter()
model, losses = cadm_train(data, train_cfg, rng_seed=3)
print(f"trained in {time.perf_counter() - t0:.0f} s, "
      f"final loss {losses[-1]:.4f}")

ang, dly = prediction_errors(model, holdout)
print(f"holdout mean |angle error|: {ang.mean():.4f} rad")
print(f"holdout mean |delay error|: {dly.mean() * 1e9:.3f} ns")

print(f"\npredicted path distributions at the target "
      f"({target.x:.1f}, {target.y:.1f}):")
for k, dist in enumerate(cadm_forward(model, target)):
    print(f"  slot {k}: angle N({dist.mu_theta:+.3f}, {np.sqrt(dist.var_theta):.3f}^2) rad, "
          f"delay N({dist.mu_tau * 1e9:.2f}, {np.sqrt(dist.var_tau) * 1e9:.2f}^2) ns")

model_path = os.path.join(OUT, "demo_map.cadm")
cadm_save(model, model_path)
assert cadm_load(model_path).l_prime == model.l_prime
print(f"\nmodel saved to {model_path}")

fig, axes = plt.subplots(1, 2, figsize=(10, 4))
axes[0].plot(losses)
axes[0].set_xlabel("epoch")
axes[0].set_ylabel("training loss (per-path NLL)")
axes[0].set_title("loss trajectory")
axes[0].grid(alpha=0.3)
axes[1].hist(ang.ravel(), bins=60)
axes[1].set_yscale("log")
axes[1].set_xlabel("|angle error| [rad]")
axes[1].set_title("holdout angle errors")
fig.tight_layout()
fig_path = os.path.join(OUT, "02_training.png")
fig.savefig(fig_path, dpi=120)
print(f"wrote {fig_path}")
