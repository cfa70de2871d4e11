"""Monte-Carlo benchmark harness.

Generates random scenes, trains the channel maps they need, sweeps the five
localization methods over angle/delay noise levels, aggregates per-trial
position errors to RMSE, evaluates the corresponding Cramér-Rao bounds, and
renders the resulting curves. Every run is a pure function of its
``master_seed``: scene, training, targets, and noise draw from separate
seed-sequence branches, so identical configs produce byte-identical CSVs.

Methods
-------
``geo-los``        invert the (angle, delay) of the direct path
``geo-nlos``       treat the shortest-delay composite path as direct
``ckm-los``        learned-map ML localization, LoS present, all L'^2 paths
``ckm-nlos``       learned-map ML localization, LoS blocked, all L'^2 paths
``ckm-nlos-conv``  as ckm-nlos but only the L' reciprocal paths
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .cadm import CadmModel, NumericError, TrainingConfig, TrainingSet, cadm_train
from .crlb import composite_mean_jacobian, fim_constant_variance, fim_los_geometry
from .geometry import (Environment, GeometryError, InvalidObservationError,
                       Point2, Scatterer)
from .pathmap import top_paths_batch
from .sensing import (ErrorSpec, LocalizationFailureError, LocalizerConfig,
                      localize_ckm, localize_geometry_los, localize_geometry_nlos,
                      synthesize_los_observation, synthesize_observation)

METHODS = ("geo-los", "geo-nlos", "ckm-los", "ckm-nlos", "ckm-nlos-conv")

_TRIAL_FAILURES = (GeometryError, InvalidObservationError,
                   LocalizationFailureError, NumericError)


class CsvFormatError(ValueError):
    """Malformed harness CSV; message carries the offending line number."""


class NoDataError(ValueError):
    """CSV parsed fine but holds no data rows."""


@dataclass
class ScenarioConfig:
    """Full description of one benchmark campaign."""

    area: tuple[float, float] = (100.0, 100.0)
    bs: Point2 = field(default_factory=lambda: Point2(50.0, 0.0))
    n_scatterers: int = 40
    l_prime: int = 5
    n_train: int = 10_000
    n_trials: int = 200
    sigma_theta_list: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    fixed_sigma_tau: float = 20e-9
    sigma_tau_list: tuple[float, ...] = (2e-9, 10e-9, 20e-9, 40e-9, 60e-9)
    fixed_sigma_theta: float = 0.1
    methods: tuple[str, ...] = METHODS
    master_seed: int = 0
    min_separation: float = 1.0
    resample_scene_per_trial: bool = False
    training: TrainingConfig = field(default_factory=TrainingConfig)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)

    def __post_init__(self):
        self.sigma_theta_list = tuple(self.sigma_theta_list)
        self.sigma_tau_list = tuple(self.sigma_tau_list)
        self.methods = tuple(self.methods)
        if not self.methods:
            raise ValueError("methods must be non-empty")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        if self.n_scatterers < 1 or self.l_prime < 1 or self.n_train < 1 \
                or self.n_trials < 1:
            raise ValueError("counts must be positive")
        if not self.sigma_theta_list or not self.sigma_tau_list:
            raise ValueError("sweep lists must be non-empty")
        if self.n_scatterers < self.l_prime:
            raise ValueError(f"need at least l_prime={self.l_prime} scatterers "
                             f"for the LoS-blocked scene, got {self.n_scatterers}")


@dataclass
class SweepRow:
    method: str
    sigma_theta: float
    sigma_tau: float
    rmse: float
    n_trials: int
    mean_iters: float
    failure_count: int


@dataclass
class TrialRecord:
    method: str
    sigma_theta: float
    sigma_tau: float
    trial: int
    error_m: float
    nll: float
    iterations: int
    converged: bool


@dataclass
class CrlbRow:
    method: str
    sigma_theta: float
    sigma_tau: float
    trace_crlb: float
    fim_xx: float
    fim_xy: float
    fim_yy: float
    n_samples: int


def _seeded_rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def _derived_int_seed(*entropy) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _draw_point(rng: np.random.Generator, bounds, keepout: np.ndarray,
                min_sep: float, max_tries: int = 10_000) -> Point2:
    w, h = bounds
    for _ in range(max_tries):
        p = np.array([rng.uniform(0.0, w), rng.uniform(0.0, h)])
        if keepout.size == 0:
            return Point2(*p)
        if np.min(np.hypot(*(keepout - p).T)) >= min_sep:
            return Point2(*p)
    raise RuntimeError(f"could not place a point with {min_sep} m separation "
                       f"after {max_tries} tries")


def generate_scene(config: ScenarioConfig,
                   rng: np.random.Generator) -> tuple[Environment, Point2]:
    """Random scene plus one random target, both respecting the configured
    minimum separation. The environment comes back LoS-blocked; use
    ``env.with_los_blocked(False)`` for the mixed scenario."""
    keepout = config.bs.as_array()[None, :]
    scatterers = []
    for _ in range(config.n_scatterers):
        pos = _draw_point(rng, config.area, keepout, config.min_separation)
        # 1 - U[0,1) lands reflectivity in (0, 1]
        scatterers.append(Scatterer(position=pos, reflectivity=1.0 - rng.uniform()))
        keepout = np.vstack([keepout, pos.as_array()])
    env = Environment(bs=config.bs, scatterers=tuple(scatterers),
                      bounds=config.area, los_blocked=True)
    target = _draw_point(rng, config.area, keepout, config.min_separation)
    return env, target


def build_training_set(env: Environment, n_train: int, rng: np.random.Generator,
                       l_prime: int = 5, min_separation: float = 1.0) -> TrainingSet:
    """Uniform training locations (respecting separation) with their true
    strongest-path channels."""
    keepout = np.vstack([env.bs.as_array()[None, :], env.scatterer_positions()])
    w, h = env.bounds
    chunks = []
    collected = 0
    for _ in range(1000):
        want = n_train - collected
        if want <= 0:
            break
        cand = rng.uniform([0, 0], [w, h], size=(max(want + 16, 32), 2))
        dmin = np.min(np.hypot(cand[:, None, 0] - keepout[None, :, 0],
                               cand[:, None, 1] - keepout[None, :, 1]), axis=1)
        good = cand[dmin >= min_separation][:want]
        chunks.append(good)
        collected += len(good)
    if collected < n_train:
        raise RuntimeError("could not sample enough training locations")
    locs = np.vstack(chunks)
    aod, delay, gain = top_paths_batch(env, locs, l_prime)
    return TrainingSet(locations=locs, aod=aod, delay=delay, gain=gain)


def models_needed(methods) -> set[str]:
    need = set()
    if "ckm-los" in methods:
        need.add("los")
    if "ckm-nlos" in methods or "ckm-nlos-conv" in methods:
        need.add("nlos")
    return need


def scene_training_data(env: Environment, config: ScenarioConfig,
                        blocked: bool) -> TrainingSet:
    """The training set :func:`train_scene_models` would use for the blocked
    or mixed channel."""
    tag = 20 if blocked else 21
    return build_training_set(env.with_los_blocked(blocked), config.n_train,
                              _seeded_rng(config.master_seed, tag),
                              l_prime=config.l_prime,
                              min_separation=config.min_separation)


def scene_model_seed(config: ScenarioConfig, blocked: bool) -> int:
    """The training seed :func:`train_scene_models` would use."""
    return _derived_int_seed(config.master_seed, 30 if blocked else 31)


def train_scene_models(env: Environment, config: ScenarioConfig,
                       which=None) -> dict[str, CadmModel]:
    """Train the channel maps the configured methods need: ``"nlos"`` on the
    LoS-blocked channel, ``"los"`` on the mixed channel."""
    which = models_needed(config.methods) if which is None else set(which)
    train_cfg = dataclasses.replace(config.training, bounds=config.area)
    models: dict[str, CadmModel] = {}
    for key, blocked in (("nlos", True), ("los", False)):
        if key not in which:
            continue
        data = scene_training_data(env, config, blocked)
        model, _ = cadm_train(data, train_cfg,
                              rng_seed=scene_model_seed(config, blocked))
        models[key] = model
    return models


def sweep_points(config: ScenarioConfig) -> list[tuple[float, float]]:
    """(sigma_theta, sigma_tau) pairs: the angle sweep at the fixed delay
    noise, then the delay sweep at the fixed angle noise, deduplicated."""
    pts = [(st, config.fixed_sigma_tau) for st in config.sigma_theta_list]
    pts += [(config.fixed_sigma_theta, stau) for stau in config.sigma_tau_list]
    seen, out = set(), []
    for p in pts:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


def _run_trial(method: str, env: Environment, target: Point2, err: ErrorSpec,
               config: ScenarioConfig, models: dict[str, CadmModel],
               loc_cfg: LocalizerConfig, rng: np.random.Generator):
    """One localization attempt; returns (error_m, nll, iterations, converged)."""
    bs = env.bs
    if method == "geo-los":
        obs = synthesize_los_observation(bs, target, err, rng)
        est = localize_geometry_los(obs, bs)
        return est.distance_to(target), math.nan, 0, True
    if method == "geo-nlos":
        obs = synthesize_observation(env.with_los_blocked(True), target, err,
                                     config.l_prime, False, rng)
        est = localize_geometry_nlos(obs, bs)
        return est.distance_to(target), math.nan, 0, True
    reciprocal = method == "ckm-nlos-conv"
    blocked = method != "ckm-los"
    model = models["nlos" if blocked else "los"]
    obs = synthesize_observation(env.with_los_blocked(blocked), target, err,
                                 config.l_prime, reciprocal, rng)
    res = localize_ckm(model, obs, loc_cfg, err=err)
    return (res.estimate.distance_to(target), res.neg_log_likelihood,
            res.iterations_used, res.converged)


def run_sweep(config: ScenarioConfig, out_csv=None, trial_log_csv=None,
              models: dict[str, CadmModel] | None = None) -> list[SweepRow]:
    """RMSE of every configured method at every sweep point.

    By default one scene is generated and its maps trained once (pass
    ``models`` to reuse pre-trained ones); with
    ``resample_scene_per_trial`` every trial gets a fresh scene and freshly
    trained maps, which is drastically slower.
    """
    points = sweep_points(config)
    shared_env = None
    if not config.resample_scene_per_trial:
        shared_env, _ = generate_scene(config, _seeded_rng(config.master_seed, 1))
        if models is None:
            models = train_scene_models(shared_env, config)
    errors: dict[tuple[int, str], list[float]] = {}
    iters: dict[tuple[int, str], list[int]] = {}
    failures: dict[tuple[int, str], int] = {}
    trial_records: list[TrialRecord] = []

    for p_idx, (s_theta, s_tau) in enumerate(points):
        err = ErrorSpec.from_std(s_theta, s_theta, s_tau)
        for t in range(config.n_trials):
            if config.resample_scene_per_trial:
                env, target = generate_scene(
                    config, _seeded_rng(config.master_seed, 104, p_idx, t))
                trial_models = train_scene_models(env, config)
            else:
                env = shared_env
                keepout = np.vstack([env.bs.as_array()[None, :],
                                     env.scatterer_positions()])
                target = _draw_point(_seeded_rng(config.master_seed, 101, p_idx, t),
                                     config.area, keepout, config.min_separation)
                trial_models = models
            loc_cfg = dataclasses.replace(config.localizer, nlos_start_bs=env.bs)
            for m_idx, method in enumerate(config.methods):
                key = (p_idx, method)
                errors.setdefault(key, [])
                iters.setdefault(key, [])
                failures.setdefault(key, 0)
                noise_rng = _seeded_rng(config.master_seed, 102, p_idx, t, m_idx)
                try:
                    e_m, nll, its, conv = _run_trial(method, env, target, err,
                                                     config, trial_models,
                                                     loc_cfg, noise_rng)
                except _TRIAL_FAILURES:
                    failures[key] += 1
                    continue
                errors[key].append(e_m)
                iters[key].append(its)
                trial_records.append(TrialRecord(method, s_theta, s_tau, t,
                                                 e_m, nll, its, conv))

    rows = []
    for p_idx, (s_theta, s_tau) in enumerate(points):
        for method in config.methods:
            key = (p_idx, method)
            errs = errors[key]
            rmse = math.sqrt(float(np.mean(np.square(errs)))) if errs else math.nan
            mean_iters = float(np.mean(iters[key])) if iters[key] else 0.0
            rows.append(SweepRow(method=method, sigma_theta=s_theta,
                                 sigma_tau=s_tau, rmse=rmse,
                                 n_trials=config.n_trials,
                                 mean_iters=mean_iters,
                                 failure_count=failures[key]))
    if out_csv is not None:
        write_sweep_csv(rows, out_csv)
    if trial_log_csv is not None:
        write_trial_log_csv(trial_records, trial_log_csv)
    return rows


def run_crlb_sweep(config: ScenarioConfig, out_csv=None,
                   models: dict[str, CadmModel] | None = None,
                   eval_point: Point2 | None = None) -> list[CrlbRow]:
    """Closed-form position bounds at every sweep point for every method
    except geo-nlos (whose unknown bounce point admits no bound)."""
    methods = [m for m in config.methods if m != "geo-nlos"]
    env, _ = generate_scene(config, _seeded_rng(config.master_seed, 1))
    if eval_point is None:
        keepout = np.vstack([env.bs.as_array()[None, :], env.scatterer_positions()])
        eval_point = _draw_point(_seeded_rng(config.master_seed, 103),
                                 config.area, keepout, config.min_separation)
    if models is None:
        need = models_needed(methods)
        models = train_scene_models(env, config, which=need) if need else {}

    rows = []
    for s_theta, s_tau in sweep_points(config):
        err = ErrorSpec.from_std(s_theta, s_theta, s_tau)
        for method in methods:
            if method == "geo-los":
                rep = fim_los_geometry(env.bs, eval_point, err.var_aoa, err.var_delay)
            else:
                model = models["los" if method == "ckm-los" else "nlos"]
                jac = composite_mean_jacobian(model, eval_point,
                                              reciprocal_only=(method == "ckm-nlos-conv"))
                rep = fim_constant_variance(jac, err)
            rows.append(CrlbRow(method=method, sigma_theta=s_theta, sigma_tau=s_tau,
                                trace_crlb=rep.trace_crlb,
                                fim_xx=rep.fim[0, 0], fim_xy=rep.fim[0, 1],
                                fim_yy=rep.fim[1, 1], n_samples=0))
    if out_csv is not None:
        write_crlb_csv(rows, out_csv)
    return rows


# ---------------------------------------------------------------------------
# CSV emission (17 significant digits, atomic replace)
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path, header: list[str], rows_values) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for values in rows_values:
                fh.write(",".join(_fmt(v) for v in values) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


SWEEP_HEADER = ["method", "sigma_theta", "sigma_tau", "rmse", "n_trials",
                "mean_iters", "failure_count"]
TRIAL_HEADER = ["method", "sigma_theta", "sigma_tau", "trial", "error_m",
                "nll", "iterations", "converged"]
CRLB_HEADER = ["method", "sigma_theta", "sigma_tau", "trace_crlb", "fim_xx",
               "fim_xy", "fim_yy", "n_samples"]


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    _write_csv(path, SWEEP_HEADER,
               ([r.method, r.sigma_theta, r.sigma_tau, r.rmse, r.n_trials,
                 r.mean_iters, r.failure_count] for r in rows))


def write_trial_log_csv(records: list[TrialRecord], path) -> None:
    _write_csv(path, TRIAL_HEADER,
               ([r.method, r.sigma_theta, r.sigma_tau, r.trial, r.error_m,
                 r.nll, r.iterations, r.converged] for r in records))


def write_crlb_csv(rows: list[CrlbRow], path) -> None:
    _write_csv(path, CRLB_HEADER,
               ([r.method, r.sigma_theta, r.sigma_tau, r.trace_crlb, r.fim_xx,
                 r.fim_xy, r.fim_yy, r.n_samples] for r in rows))


def _read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CsvFormatError("line 1: empty file, expected a header row")
    header = lines[0].split(",")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise CsvFormatError(f"line {i}: expected {len(header)} fields, "
                                 f"got {len(parts)}")
        row = {}
        for name, value in zip(header, parts):
            if name == "method":
                row[name] = value
            else:
                try:
                    row[name] = float(value)
                except ValueError as exc:
                    raise CsvFormatError(f"line {i}: bad number {value!r} "
                                         f"in column {name}") from exc
        rows.append(row)
    return header, rows


def emit_plots(csv_path, out_dir) -> list[str]:
    """Render log-scale curve charts from a sweep or CRLB CSV.

    One figure per sweep family: the metric versus sigma_theta at each fixed
    sigma_tau that carries at least two angle points, and vice versa. Output
    is a pure function of the CSV contents. Returns the written paths.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, rows = _read_csv(csv_path)
    if not rows:
        raise NoDataError(f"{csv_path}: no data rows")
    if "rmse" in header:
        metric, ylabel = "rmse", "RMSE [m]"
    elif "trace_crlb" in header:
        metric, ylabel = "trace_crlb", "trace CRLB [m$^2$]"
    else:
        raise CsvFormatError("line 1: header has neither 'rmse' nor 'trace_crlb'")

    os.makedirs(out_dir, exist_ok=True)
    methods = sorted({r["method"] for r in rows},
                     key=lambda m: METHODS.index(m) if m in METHODS else len(METHODS))

    def _family_figs(x_col: str, fixed_col: str, tag: str) -> list[str]:
        written = []
        fixed_values = sorted({r[fixed_col] for r in rows})
        for fv in fixed_values:
            sel = [r for r in rows if r[fixed_col] == fv]
            if len({r[x_col] for r in sel}) < 2:
                continue
            fig, ax = plt.subplots(figsize=(6.0, 4.2))
            for method in methods:
                pts = sorted((r[x_col], r[metric]) for r in sel
                             if r["method"] == method)
                if not pts:
                    continue
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o", label=method)
            ax.set_yscale("log")
            ax.set_xlabel(x_col.replace("_", " "))
            ax.set_ylabel(ylabel)
            ax.set_title(f"{metric} vs {x_col.replace('_', ' ')} "
                         f"({fixed_col.replace('_', ' ')} = {fv:g})")
            ax.grid(True, which="both", alpha=0.3)
            ax.legend()
            fig.tight_layout()
            out = os.path.join(out_dir, f"{metric}_vs_{x_col}__{tag}_{fv:g}.png")
            fig.savefig(out, dpi=120)
            plt.close(fig)
            written.append(out)
        return written

    written = _family_figs("sigma_theta", "sigma_tau", "sigma_tau")
    written += _family_figs("sigma_tau", "sigma_theta", "sigma_theta")
    if not written:
        # single-point CSV: still render something inspectable
        fig, ax = plt.subplots(figsize=(6.0, 4.2))
        for method in methods:
            pts = [(r["sigma_theta"], r[metric]) for r in rows if r["method"] == method]
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", linestyle="none", label=method)
        ax.set_yscale("log")
        ax.set_xlabel("sigma theta")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        out = os.path.join(out_dir, f"{metric}_points.png")
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written


# ---------------------------------------------------------------------------
# Config file round trip
# ---------------------------------------------------------------------------

def scenario_config_to_dict(config: ScenarioConfig) -> dict:
    d = dataclasses.asdict(config)
    d["bs"] = [config.bs.x, config.bs.y]
    d["area"] = list(config.area)
    d["localizer"].pop("nlos_start_bs", None)
    return d


def scenario_config_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    if "bs" in d:
        d["bs"] = Point2(*d["bs"])
    if "area" in d:
        d["area"] = tuple(d["area"])
    if "training" in d and isinstance(d["training"], dict):
        t = dict(d["training"])
        if t.get("bounds") is not None:
            t["bounds"] = tuple(t["bounds"])
        d["training"] = TrainingConfig(**t)
    if "localizer" in d and isinstance(d["localizer"], dict):
        loc = dict(d["localizer"])
        loc.pop("nlos_start_bs", None)
        for key in ("multistart_grid", "prescan_grid"):
            if key in loc:
                loc[key] = tuple(loc[key])
        d["localizer"] = LocalizerConfig(**loc)
    return ScenarioConfig(**d)


def load_scenario_config(path, **overrides) -> ScenarioConfig:
    """Read a JSON scenario config; keyword overrides replace file values."""
    with open(path) as fh:
        d = json.load(fh)
    d.update(overrides)
    return scenario_config_from_dict(d)
