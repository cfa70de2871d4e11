"""Reduced-scale RMSE benchmark sweep.

Runs the full harness — scene generation, map training, Monte-Carlo trials
over noise levels for all five methods — at a budget of a few minutes
(smaller training run, 20 trials per point), then renders the curves. The
full-scale protocol just means larger ``n_train``/``epochs``/``n_trials``;
see the acceptance suite.
"""

import os
import time

import numpy as np

from ckmsense import (LocalizerConfig, ScenarioConfig, TrainingConfig,
                      emit_plots, run_sweep)

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

config = ScenarioConfig(
    master_seed=7,
    n_train=3000,
    n_trials=20,
    sigma_theta_list=(0.1, 0.3, 0.5),
    fixed_sigma_tau=20e-9,
    sigma_tau_list=(2e-9, 20e-9, 60e-9),
    fixed_sigma_theta=0.1,
    training=TrainingConfig(epochs=400),
    localizer=LocalizerConfig(),
)

csv_path = os.path.join(OUT, "rmse_sweep.csv")
log_path = os.path.join(OUT, "rmse_trials.csv")
t0 = time.perf_counter()
rows = run_sweep(config, out_csv=csv_path, trial_log_csv=log_path)
print(f"sweep finished in {time.perf_counter() - t0:.0f} s "
      f"({len(rows)} rows) -> {csv_path}")

print(f"\n{'method':14s} {'sigma_theta':>11s} {'sigma_tau':>10s} "
      f"{'rmse [m]':>9s} {'fails':>5s}")
for r in rows:
    print(f"{r.method:14s} {r.sigma_theta:11.2f} {r.sigma_tau * 1e9:8.0f}ns "
          f"{r.rmse:9.3f} {r.failure_count:5d}")

means = {}
for r in rows:
    means.setdefault(r.method, []).append(r.rmse)
print("\nmean RMSE over all sweep points:")
for method, vals in means.items():
    print(f"  {method:14s} {np.nanmean(vals):8.3f} m")

for path in emit_plots(csv_path, OUT):
    print(f"wrote {path}")
