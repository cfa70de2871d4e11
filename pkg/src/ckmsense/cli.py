"""Command-line front end.

Subcommands::

    scene generate   random scene -> scene file
    scene inspect    summarize a scene file
    train            build a channel map from a scene
    localize         run one localization case end to end
    sweep            RMSE curves over noise levels -> CSV
    crlb             bound curves over noise levels -> CSV
    plot             render charts from a sweep/CRLB CSV

``sweep`` and ``crlb`` demand an explicit ``--seed``; a config file (JSON
with ScenarioConfig fields) supplies everything else, and individual flags
override it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import bench
from .bench import ScenarioConfig, scenario_config_from_dict, scenario_config_to_dict
from .cadm import TrainingConfig, cadm_load, cadm_save, cadm_train
from .geometry import Point2, load_scene, save_scene
from .sensing import (ErrorSpec, LocalizerConfig, localize_ckm,
                      localize_geometry_los, localize_geometry_nlos,
                      synthesize_los_observation, synthesize_observation)


def _load_config(args, require_seed: bool) -> ScenarioConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = json.load(fh)
    overrides = {}
    for flag, key in (("area", "area"), ("n_scatterers", "n_scatterers"),
                      ("l_prime", "l_prime"), ("n_train", "n_train"),
                      ("n_trials", "n_trials"), ("methods", "methods")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "bs", None) is not None:
        overrides["bs"] = list(args.bs)
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    elif require_seed and "master_seed" not in base:
        raise SystemExit("--seed is required")
    if getattr(args, "epochs", None) is not None:
        training = dict(base.get("training", {}))
        training["epochs"] = args.epochs
        overrides["training"] = training
    base.update(overrides)
    return scenario_config_from_dict(base)


def _cmd_scene_generate(args) -> int:
    config = _load_config(args, require_seed=True)
    env, target = bench.generate_scene(
        config, np.random.default_rng(np.random.SeedSequence([config.master_seed, 1])))
    if not args.los_blocked:
        env = env.with_los_blocked(False)
    save_scene(env, args.out)
    print(f"wrote {args.out}: {len(env.scatterers)} scatterers in "
          f"{env.bounds[0]:g} x {env.bounds[1]:g} m, los_blocked={env.los_blocked}")
    print(f"suggested target: ({target.x:.3f}, {target.y:.3f})")
    return 0


def _cmd_scene_inspect(args) -> int:
    env = load_scene(args.scene)
    print(f"scene: {args.scene}")
    print(f"  bs: ({env.bs.x:g}, {env.bs.y:g})")
    print(f"  bounds: {env.bounds[0]:g} x {env.bounds[1]:g} m")
    print(f"  los_blocked: {env.los_blocked}")
    print(f"  scatterers: {len(env.scatterers)}")
    refl = env.reflectivities()
    if len(refl):
        print(f"  reflectivity: min {refl.min():.3f}, max {refl.max():.3f}, "
              f"mean {refl.mean():.3f}")
    return 0


def _cmd_train(args) -> int:
    env = load_scene(args.scene)
    config = _load_config(args, require_seed=True)
    data = bench.build_training_set(
        env, args.n_train or config.n_train,
        np.random.default_rng(np.random.SeedSequence([config.master_seed, 2])),
        l_prime=config.l_prime, min_separation=config.min_separation)
    if args.training_set:
        data.save_text(args.training_set)
    train_cfg = dataclasses.replace(config.training, bounds=env.bounds)
    if args.loss:
        train_cfg = dataclasses.replace(train_cfg, loss=args.loss)
    model, losses = cadm_train(data, train_cfg, rng_seed=config.master_seed)
    cadm_save(model, args.out)
    print(f"trained on {data.n_samples} samples for {train_cfg.epochs} epochs; "
          f"final loss {losses[-1]:.6f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_localize(args) -> int:
    env = load_scene(args.scene)
    config = _load_config(args, require_seed=True)
    rng = np.random.default_rng(np.random.SeedSequence([config.master_seed, 3]))
    if args.target is not None:
        target = Point2(*args.target)
    else:
        env_tmp, target = bench.generate_scene(
            config, np.random.default_rng(np.random.SeedSequence([config.master_seed, 1])))
        del env_tmp
    err = ErrorSpec.from_std(args.sigma_theta, args.sigma_theta, args.sigma_tau)
    print(f"target: ({target.x:.3f}, {target.y:.3f})")
    if args.method in ("ckm", "ckm-reciprocal"):
        model = cadm_load(args.model)
        obs = synthesize_observation(env, target, err, model.l_prime,
                                     args.method == "ckm-reciprocal", rng)
        loc_cfg = dataclasses.replace(config.localizer, nlos_start_bs=env.bs)
        res = localize_ckm(model, obs, loc_cfg)
        est = res.estimate
        print(f"estimate: ({est.x:.3f}, {est.y:.3f})  nll={res.neg_log_likelihood:.3f} "
              f"iters={res.iterations_used} converged={res.converged}")
    elif args.method == "geo-los":
        obs = synthesize_los_observation(env.bs, target, err, rng)
        est = localize_geometry_los(obs, env.bs)
        print(f"estimate: ({est.x:.3f}, {est.y:.3f})")
    else:  # geo-nlos
        obs = synthesize_observation(env.with_los_blocked(True), target, err,
                                     config.l_prime, False, rng)
        est = localize_geometry_nlos(obs, env.bs)
        print(f"estimate: ({est.x:.3f}, {est.y:.3f})")
    print(f"position error: {est.distance_to(target):.4f} m")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args, require_seed=True)
    rows = bench.run_sweep(config, out_csv=args.out, trial_log_csv=args.trial_log)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_crlb(args) -> int:
    config = _load_config(args, require_seed=True)
    rows = bench.run_crlb_sweep(config, out_csv=args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_plot(args) -> int:
    written = bench.emit_plots(args.csv, args.out_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_config_dump(args) -> int:
    print(json.dumps(scenario_config_to_dict(ScenarioConfig()), indent=2))
    return 0


def _add_common(parser, config=True, seed=True):
    if config:
        parser.add_argument("--config", help="JSON scenario config file")
    if seed:
        parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--area", type=float, nargs=2, metavar=("W", "H"))
    parser.add_argument("--bs", type=float, nargs=2, metavar=("X", "Y"))
    parser.add_argument("--n-scatterers", dest="n_scatterers", type=int)
    parser.add_argument("--l-prime", dest="l_prime", type=int)
    parser.add_argument("--n-train", dest="n_train", type=int)
    parser.add_argument("--n-trials", dest="n_trials", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--methods", nargs="+", choices=bench.METHODS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ckmsense",
        description="Channel-knowledge-map enabled NLoS localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_scene = sub.add_parser("scene", help="generate or inspect scene files")
    scene_sub = p_scene.add_subparsers(dest="scene_command", required=True)
    p_gen = scene_sub.add_parser("generate", help="random scene -> file")
    _add_common(p_gen)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--los-blocked", action="store_true", default=True)
    p_gen.add_argument("--los", dest="los_blocked", action="store_false",
                       help="keep the direct path usable")
    p_gen.set_defaults(func=_cmd_scene_generate)
    p_ins = scene_sub.add_parser("inspect", help="summarize a scene file")
    p_ins.add_argument("scene")
    p_ins.set_defaults(func=_cmd_scene_inspect)

    p_train = sub.add_parser("train", help="build a channel map from a scene")
    _add_common(p_train)
    p_train.add_argument("--scene", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--loss", choices=("nll", "mse"))
    p_train.add_argument("--training-set", help="also dump the training set "
                                                "as columnar text")
    p_train.set_defaults(func=_cmd_train)

    p_loc = sub.add_parser("localize", help="one localization case")
    _add_common(p_loc)
    p_loc.add_argument("--scene", required=True)
    p_loc.add_argument("--model", help="trained map (required for ckm methods)")
    p_loc.add_argument("--method", default="ckm",
                       choices=("ckm", "ckm-reciprocal", "geo-los", "geo-nlos"))
    p_loc.add_argument("--target", type=float, nargs=2, metavar=("X", "Y"))
    p_loc.add_argument("--sigma-theta", type=float, default=0.1,
                       help="angle noise std [rad]")
    p_loc.add_argument("--sigma-tau", type=float, default=20e-9,
                       help="delay noise std [s]")
    p_loc.set_defaults(func=_cmd_localize)

    p_sweep = sub.add_parser("sweep", help="RMSE curves -> CSV")
    _add_common(p_sweep, seed=False)
    p_sweep.add_argument("--seed", type=int, required=True,
                         help="master seed (mandatory: sweeps must be reproducible)")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--trial-log", help="per-trial log CSV")
    p_sweep.set_defaults(func=_cmd_sweep, require_seed=True)

    p_crlb = sub.add_parser("crlb", help="CRLB curves -> CSV")
    _add_common(p_crlb, seed=False)
    p_crlb.add_argument("--seed", type=int, required=True,
                        help="master seed (mandatory: sweeps must be reproducible)")
    p_crlb.add_argument("--out", required=True)
    p_crlb.set_defaults(func=_cmd_crlb, require_seed=True)

    p_plot = sub.add_parser("plot", help="charts from a harness CSV")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--out-dir", required=True)
    p_plot.set_defaults(func=_cmd_plot)

    p_cfg = sub.add_parser("config", help="print the default config as JSON")
    p_cfg.set_defaults(func=_cmd_config_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
