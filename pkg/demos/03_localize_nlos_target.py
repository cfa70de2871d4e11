"""Single-shot NLoS localization, all five methods side by side.

Reuses the map trained by ``02_train_channel_map.py`` (run that first, or
this script trains one quickly). A target is sensed through heavy angle
noise (0.5 rad) and mild delay noise (2 ns); the geometric baselines fall
apart while the map-based maximum-likelihood search stays near the truth.
The likelihood surface is rendered to show why.
"""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ckmsense import (ErrorSpec, LocalizerConfig, Point2, ScenarioConfig,
                      TrainingConfig, build_training_set, cadm_load,
                      cadm_save, cadm_train, generate_scene, localize_ckm,
                      localize_geometry_los, localize_geometry_nlos,
                      los_angle_delay, nll_batch, synthesize_observation,
                      wrap_angle)

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

config = ScenarioConfig(master_seed=7)
env, target = generate_scene(
    config, np.random.default_rng(np.random.SeedSequence([7, 1])))

model_path = os.path.join(OUT, "demo_map.cadm")
if os.path.exists(model_path):
    model = cadm_load(model_path)
    print(f"loaded map from {model_path}")
else:
    print("no saved map found, training a quick one...")
    data = build_training_set(env, 2000,
                              np.random.default_rng(np.random.SeedSequence([7, 2])),
                              l_prime=5)
    model, _ = cadm_train(data, TrainingConfig(epochs=300, bounds=env.bounds),
                          rng_seed=3)
    cadm_save(model, model_path)

sigma_angle = 0.5
sigma_delay = 2e-9
err = ErrorSpec.from_std(sigma_angle, sigma_angle, sigma_delay)
rng = np.random.default_rng(2024)
print(f"\ntarget at ({target.x:.2f}, {target.y:.2f}); "
      f"noise: {sigma_angle} rad angles, {sigma_delay * 1e9:.0f} ns delays")

# observations for each scenario
obs_nlos = synthesize_observation(env, target, err, 5, False, rng)
obs_conv = synthesize_observation(env, target, err, 5, True, rng)
env_los = env.with_los_blocked(False)
obs_los = synthesize_observation(env_los, target, err, 5, False, rng)
angle, delay = los_angle_delay(env.bs, target)
los_pair = (float(wrap_angle(angle + rng.normal(0, sigma_angle))),
            delay + rng.normal(0, sigma_delay))

loc_cfg = LocalizerConfig(nlos_start_bs=env.bs)
estimates = {
    "geo-los": localize_geometry_los(los_pair, env.bs),
    "geo-nlos": localize_geometry_nlos(obs_nlos, env.bs),
    "ckm-los": localize_ckm(model, obs_los, loc_cfg, err=err).estimate,
    "ckm-nlos": localize_ckm(model, obs_nlos, loc_cfg, err=err).estimate,
    "ckm-nlos-conv": localize_ckm(model, obs_conv, loc_cfg, err=err).estimate,
}
print()
for name, est in estimates.items():
    print(f"  {name:14s} -> ({est.x:7.2f}, {est.y:7.2f})   "
          f"error {est.distance_to(target):7.2f} m")

# likelihood surface of the full NLoS observation
grid = np.linspace(0.5, 99.5, 160)
xx, yy = np.meshgrid(grid, grid, indexing="ij")
locs = np.stack([xx.ravel(), yy.ravel()], axis=-1)
nll = nll_batch(model, obs_nlos, locs, err).reshape(xx.shape)

fig, ax = plt.subplots(figsize=(7, 6))
im = ax.imshow(nll.T, origin="lower", extent=(0.5, 99.5, 0.5, 99.5),
               cmap="viridis", vmax=np.quantile(nll, 0.35))
fig.colorbar(im, ax=ax, label="negative log-likelihood")
pos = env.scatterer_positions()
ax.scatter(pos[:, 0], pos[:, 1], s=12, c="w", alpha=0.6, label="scatterers")
ax.scatter([env.bs.x], [env.bs.y], marker="^", s=120, c="tab:red", label="BS")
ax.scatter([target.x], [target.y], s=120, marker="o", facecolors="none",
           edgecolors="w", linewidths=2, label="truth")
markers = {"geo-los": "v", "geo-nlos": "s", "ckm-los": "P",
           "ckm-nlos": "D", "ckm-nlos-conv": "X"}
for name, est in estimates.items():
    ax.scatter([est.x], [est.y], marker=markers[name], s=70, label=name)
ax.set_xlabel("x [m]")
ax.set_ylabel("y [m]")
ax.set_title("NLoS sensing likelihood and the five estimates")
ax.legend(loc="upper right", fontsize=8)
fig.tight_layout()
fig_path = os.path.join(OUT, "03_localization.png")
fig.savefig(fig_path, dpi=120)
print(f"\nwrote {fig_path}")
