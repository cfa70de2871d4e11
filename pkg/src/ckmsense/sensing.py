"""Sensing pipeline: noisy observations, likelihood, and localizers.

An observation is the set of composite (round-trip) paths seen by the BS,
each contributing a departure angle, an arrival angle, and a total delay,
all corrupted by independent Gaussian estimation errors. Localization
treats the target as a virtual channel user: a path map evaluated at a
candidate location predicts per-path Gaussians, the composite structure
turns those into a likelihood of the observation, and gradient descent over
the candidate location maximizes it.

For composite path ``l`` built from forward slot ``T`` and reverse slot
``R``, the likelihood factors as Gaussians in the AoD (slot ``T`` angle),
the AoA (slot ``R`` angle), and the delay, whose distribution is the
convolution of the two slot delay Gaussians: mean ``mu_T + mu_R``, variance
``var_T + var_R``. Angle residuals are wrapped into (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (Environment, Point2, composite_pair_arrays, invert_los,
                       los_angle_delay, single_bounce_paths, wrap_angle)
from .pathmap import canonical_slot_order

_LOG_2PI = math.log(2.0 * math.pi)


class LocalizationFailureError(RuntimeError):
    """Every descent start produced a non-finite likelihood."""


@dataclass(frozen=True)
class ErrorSpec:
    """Variances of the AoD, AoA, and delay estimation errors."""

    var_aod: float
    var_aoa: float
    var_delay: float

    def __post_init__(self):
        if min(self.var_aod, self.var_aoa, self.var_delay) <= 0:
            raise ValueError("error variances must be strictly positive")

    @classmethod
    def from_std(cls, sigma_aod: float, sigma_aoa: float,
                 sigma_delay: float) -> "ErrorSpec":
        return cls(sigma_aod ** 2, sigma_aoa ** 2, sigma_delay ** 2)


@dataclass
class SensingObservation:
    """Observed composite-path triples in composite-index order.

    ``triples`` is (L, 3) with columns (aod_rad, aoa_rad, delay_s) and
    ``L = l_prime**2`` (or ``l_prime`` when ``reciprocal_only``). Angles are
    wrapped on construction; delays are nominally positive but survive
    untouched so heavy noise keeps its Gaussian law.
    """

    triples: np.ndarray
    l_prime: int
    reciprocal_only: bool = False

    def __post_init__(self):
        self.triples = np.array(self.triples, dtype=float)
        expected = self.l_prime if self.reciprocal_only else self.l_prime ** 2
        if self.triples.shape != (expected, 3):
            raise ValueError(f"expected {expected} triples, got shape "
                             f"{self.triples.shape}")
        if not np.all(np.isfinite(self.triples)):
            raise ValueError("non-finite observation values")
        self.triples[:, 0] = wrap_angle(self.triples[:, 0])
        self.triples[:, 1] = wrap_angle(self.triples[:, 1])

    @property
    def aod(self) -> np.ndarray:
        return self.triples[:, 0]

    @property
    def aoa(self) -> np.ndarray:
        return self.triples[:, 1]

    @property
    def delay(self) -> np.ndarray:
        return self.triples[:, 2]

    def save_text(self, path) -> None:
        """Columnar text: one row per composite path ``l aod aoa delay``."""
        with open(path, "w") as fh:
            fh.write(f"# ckm-observation v1 l_prime={self.l_prime} "
                     f"reciprocal_only={int(self.reciprocal_only)}\n")
            for l, row in enumerate(self.triples, start=1):
                fh.write(f"{l} {row[0]:.17g} {row[1]:.17g} {row[2]:.17g}\n")

    @classmethod
    def load_text(cls, path) -> "SensingObservation":
        with open(path) as fh:
            header = fh.readline().split()
            try:
                if header[:3] != ["#", "ckm-observation", "v1"]:
                    raise ValueError(f"unexpected header {' '.join(header)!r}")
                l_prime = int(header[3].split("=")[1])
                reciprocal = bool(int(header[4].split("=")[1]))
            except (IndexError, ValueError) as exc:
                raise ValueError(f"bad observation header: {exc}") from exc
            data = np.loadtxt(fh, ndmin=2)
        return cls(triples=data[:, 1:4], l_prime=l_prime,
                   reciprocal_only=reciprocal)


@dataclass
class LocalizerConfig:
    """Gradient-descent localizer knobs.

    ``step_size`` is the initial meters moved per unit gradient; each start
    adapts it by halving on uphill proposals and doubling after clean
    accepts. ``multistart_grid`` spans the scene bounds; grid points get a
    small seeded jitter so they never sit exactly on symmetry axes. On top
    of the descent grid, the likelihood is scanned once over the (cheap,
    batched) ``prescan_grid`` and the best ``prescan_starts`` cells join the
    start list — sharply peaked likelihoods have attraction basins narrower
    than any affordable descent grid.
    """

    step_size: float = 1.0
    max_iters: int = 150
    grad_tol: float = 1e-9
    multistart_grid: tuple[int, int] = (10, 10)
    rng_seed: int = 0
    include_nlos_start: bool = True
    nlos_start_bs: Point2 | None = None
    prescan_grid: tuple[int, int] = (64, 64)
    prescan_starts: int = 10
    max_halvings: int = 40
    min_step: float = 1e-7

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.multistart_grid[0] < 1 or self.multistart_grid[1] < 1:
            raise ValueError("multistart grid counts must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class LocalizationResult:
    estimate: Point2
    neg_log_likelihood: float
    iterations_used: int
    converged: bool
    start_used: Point2


def synthesize_observation(env: Environment, target: Point2, err: ErrorSpec,
                           l_prime: int, reciprocal_only: bool,
                           rng: np.random.Generator) -> SensingObservation:
    """True composite paths at ``target`` plus independent Gaussian noise on
    every angle and delay; noisy angles are wrapped.

    One-way paths occupy canonical slots (see
    :func:`ckmsense.pathmap.canonical_slot_order`), so composite labels line
    up with the slots a path map predicts.
    """
    ck = single_bounce_paths(env, target, l_prime)
    slot = canonical_slot_order(ck.aod_array()[None, :],
                                ck.delay_array()[None, :])[0]
    aod_1w = ck.aod_array()[slot]
    delay_1w = ck.delay_array()[slot]
    idx_t, idx_r = composite_pair_arrays(l_prime, reciprocal_only)
    n = len(idx_t)
    triples = np.empty((n, 3))
    triples[:, 0] = aod_1w[idx_t] + rng.normal(0.0, math.sqrt(err.var_aod), n)
    triples[:, 1] = aod_1w[idx_r] + rng.normal(0.0, math.sqrt(err.var_aoa), n)
    triples[:, 2] = (delay_1w[idx_t] + delay_1w[idx_r]
                     + rng.normal(0.0, math.sqrt(err.var_delay), n))
    return SensingObservation(triples=triples, l_prime=l_prime,
                              reciprocal_only=reciprocal_only)


def synthesize_los_observation(bs: Point2, target: Point2, err: ErrorSpec,
                               rng: np.random.Generator) -> tuple[float, float]:
    """Noisy (angle, round-trip delay) pair of the direct path alone."""
    angle, delay = los_angle_delay(bs, target)
    angle = float(wrap_angle(angle + rng.normal(0.0, math.sqrt(err.var_aoa))))
    delay = delay + rng.normal(0.0, math.sqrt(err.var_delay))
    return angle, delay


def _check_compatible(model, obs: SensingObservation) -> None:
    if model.l_prime != obs.l_prime:
        raise ValueError(f"model has {model.l_prime} path slots, observation "
                         f"has {obs.l_prime}")


def _nll_terms(stats, obs: SensingObservation, err: ErrorSpec | None):
    """Per-composite residuals and variances, broadcast over the location
    batch; returns (r_phi, v_phi, r_aoa, v_aoa, r_tau, v_tau), each (n, L).

    When ``err`` is given, each component's variance gains the measurement
    error variance: the observation is the channel draw plus independent
    Gaussian estimation error, and convolving the two Gaussians adds their
    variances, exactly as the composite delay term already adds the two
    one-way delay variances.
    """
    idx_t, idx_r = composite_pair_arrays(obs.l_prime, obs.reciprocal_only)
    e_phi, e_aoa, e_tau = (0.0, 0.0, 0.0) if err is None else \
        (err.var_aod, err.var_aoa, err.var_delay)
    r_phi = wrap_angle(obs.aod[None, :] - stats.mu_theta[:, idx_t])
    v_phi = stats.var_theta[:, idx_t] + e_phi
    r_aoa = wrap_angle(obs.aoa[None, :] - stats.mu_theta[:, idx_r])
    v_aoa = stats.var_theta[:, idx_r] + e_aoa
    r_tau = obs.delay[None, :] - (stats.mu_tau[:, idx_t] + stats.mu_tau[:, idx_r])
    v_tau = stats.var_tau[:, idx_t] + stats.var_tau[:, idx_r] + e_tau
    return r_phi, v_phi, r_aoa, v_aoa, r_tau, v_tau


def nll_batch(model, obs: SensingObservation, locs,
              err: ErrorSpec | None = None) -> np.ndarray:
    """Negative log-likelihood of ``obs`` at each location row; (n,)."""
    _check_compatible(model, obs)
    stats = model.path_stats(locs)
    out = np.zeros(stats.mu_theta.shape[0])
    terms = _nll_terms(stats, obs, err)
    for r, v in zip(terms[0::2], terms[1::2]):
        out += np.sum(0.5 * (_LOG_2PI + np.log(v)) + r ** 2 / (2.0 * v), axis=1)
    return out


def nll_grad_batch(model, obs: SensingObservation, locs,
                   err: ErrorSpec | None = None):
    """NLL and its location-gradient for each location row.

    The gradient is the closed-form sum over composite paths of mean- and
    variance-sensitivity terms chained through the map's Jacobian; it equals
    the analytic derivative of :func:`nll_batch` wherever no angle residual
    sits exactly on the wrap boundary.
    """
    _check_compatible(model, obs)
    stats, jac = model.path_stats_jacobian(locs)
    idx_t, idx_r = composite_pair_arrays(obs.l_prime, obs.reciprocal_only)
    r_phi, v_phi, r_aoa, v_aoa, r_tau, v_tau = _nll_terms(stats, obs, err)

    nll = np.zeros(stats.mu_theta.shape[0])
    for r, v in ((r_phi, v_phi), (r_aoa, v_aoa), (r_tau, v_tau)):
        nll += np.sum(0.5 * (_LOG_2PI + np.log(v)) + r ** 2 / (2.0 * v), axis=1)

    d_mu_tau_c = jac.d_mu_tau[:, idx_t] + jac.d_mu_tau[:, idx_r]
    d_var_tau_c = jac.d_var_tau[:, idx_t] + jac.d_var_tau[:, idx_r]
    grad = np.zeros((stats.mu_theta.shape[0], 2))
    for r, v, d_mu, d_var in (
            (r_phi, v_phi, jac.d_mu_theta[:, idx_t], jac.d_var_theta[:, idx_t]),
            (r_aoa, v_aoa, jac.d_mu_theta[:, idx_r], jac.d_var_theta[:, idx_r]),
            (r_tau, v_tau, d_mu_tau_c, d_var_tau_c)):
        grad -= np.sum((r / v)[..., None] * d_mu, axis=1)
        grad -= np.sum(((r ** 2 - v) / (2.0 * v ** 2))[..., None] * d_var, axis=1)
    return nll, grad


def sensing_nll(model, obs: SensingObservation, x,
                err: ErrorSpec | None = None) -> float:
    """Negative log-likelihood of the observation at one candidate location.

    With ``err=None`` the variances are the map's alone; passing the
    measurement :class:`ErrorSpec` widens every component accordingly, which
    is the statistically matched form when the observation carries
    estimation noise.
    """
    return float(nll_batch(model, obs, _point_array(x)[None, :], err)[0])


def sensing_nll_gradient(model, obs: SensingObservation, x,
                         err: ErrorSpec | None = None) -> np.ndarray:
    """Analytic gradient of :func:`sensing_nll` at ``x``; shape (2,)."""
    _, grad = nll_grad_batch(model, obs, _point_array(x)[None, :], err)
    return grad[0]


def _point_array(x) -> np.ndarray:
    if isinstance(x, Point2):
        return x.as_array()
    return np.asarray(x, dtype=float).reshape(2)


def _cell_centers(lo, hi, counts) -> np.ndarray:
    gx = lo[0] + (np.arange(counts[0]) + 0.5) * (hi[0] - lo[0]) / counts[0]
    gy = lo[1] + (np.arange(counts[1]) + 0.5) * (hi[1] - lo[1]) / counts[1]
    return np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)


def _multistart_points(model, obs, config: LocalizerConfig,
                       err: ErrorSpec | None = None) -> np.ndarray:
    (x_lo, x_hi), (y_lo, y_hi) = model.bounds_rect()
    lo = np.array([x_lo, y_lo])
    hi = np.array([x_hi, y_hi])
    nx, ny = config.multistart_grid
    rng = np.random.default_rng(config.rng_seed)
    pts = _cell_centers(lo, hi, (nx, ny))
    jitter = rng.uniform(-0.1, 0.1, size=pts.shape)
    pts += jitter * np.array([(x_hi - x_lo) / nx, (y_hi - y_lo) / ny])
    extra = []
    if config.prescan_starts > 0:
        scan = _cell_centers(lo, hi, config.prescan_grid)
        scan_nll = nll_batch(model, obs, scan, err)
        scan_nll = np.where(np.isfinite(scan_nll), scan_nll, np.inf)
        best = np.argsort(scan_nll, kind="stable")[:config.prescan_starts]
        extra.append(scan[best])
    bs = config.nlos_start_bs
    if bs is None:
        env = getattr(model, "env", None)
        bs = env.bs if env is not None else None
    if config.include_nlos_start and bs is not None:
        try:
            guess = localize_geometry_nlos(obs, bs)
            extra.append(np.array([[guess.x, guess.y]]))
        except Exception:
            pass
    if extra:
        pts = np.vstack([pts] + extra)
    pts[:, 0] = np.clip(pts[:, 0], x_lo, x_hi)
    pts[:, 1] = np.clip(pts[:, 1], y_lo, y_hi)
    return pts


def localize_ckm(model, obs: SensingObservation,
                 config: LocalizerConfig | None = None,
                 err: ErrorSpec | None = None) -> LocalizationResult:
    """Maximum-likelihood target localization by multistart gradient descent.

    Descends from every multistart grid point (plus the likelihood-prescan
    picks and the shortest-delay geometric guess), clamping iterates to the
    scene bounds, and returns the start that reached the lowest negative
    log-likelihood. Each start stops on ``grad_tol``, on a stalled line
    search, or after ``max_iters``. ``converged`` reports whether the
    winning start stopped before exhausting its iteration budget. Pass the
    measurement ``err`` so the likelihood weights components by map *plus*
    measurement uncertainty.
    """
    if config is None:
        config = LocalizerConfig()
    _check_compatible(model, obs)
    (x_lo, x_hi), (y_lo, y_hi) = model.bounds_rect()
    lo = np.array([x_lo, y_lo])
    hi = np.array([x_hi, y_hi])

    starts = _multistart_points(model, obs, config, err)
    X = starts.copy()
    n = X.shape[0]
    cur_nll = nll_batch(model, obs, X, err)
    alive = np.isfinite(cur_nll)

    if config.max_iters == 0:
        if not alive.any():
            raise LocalizationFailureError("no start evaluated to a finite "
                                           "likelihood")
        best = int(np.argmin(np.where(alive, cur_nll, np.inf)))
        return LocalizationResult(estimate=Point2(*X[best]),
                                  neg_log_likelihood=float(cur_nll[best]),
                                  iterations_used=0, converged=False,
                                  start_used=Point2(*starts[best]))

    eta = np.full(n, config.step_size)
    iters = np.zeros(n, dtype=int)
    stopped_early = np.zeros(n, dtype=bool)
    active = alive.copy()

    for _ in range(config.max_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        nll_a, grad_a = nll_grad_batch(model, obs, X[idx], err)
        cur_nll[idx] = nll_a
        bad = ~(np.isfinite(nll_a) & np.all(np.isfinite(grad_a), axis=1))
        gnorm = np.linalg.norm(np.where(np.isfinite(grad_a), grad_a, 0.0), axis=1)
        done = (gnorm <= config.grad_tol) | bad
        if done.any():
            rows = idx[done]
            active[rows] = False
            stopped_early[rows] = ~bad[done]
            alive[idx[bad]] = alive[idx[bad]] & np.isfinite(nll_a[bad])
            idx = idx[~done]
            if idx.size == 0:
                continue
            grad_a = grad_a[~done]
            nll_a = nll_a[~done]

        step = eta[idx, None] * grad_a
        trial = np.clip(X[idx] - step, lo, hi)
        trial_nll = nll_batch(model, obs, trial, err)
        pending = np.arange(idx.size)
        for _h in range(config.max_halvings):
            worse = pending[~(trial_nll[pending] < nll_a[pending])]
            if worse.size == 0:
                break
            eta[idx[worse]] *= 0.5
            step[worse] *= 0.5
            trial[worse] = np.clip(X[idx[worse]] - step[worse], lo, hi)
            trial_nll[worse] = nll_batch(model, obs, trial[worse], err)
            pending = worse
        improved = trial_nll < nll_a
        accepted = idx[improved]
        step_len = np.linalg.norm(trial[improved] - X[accepted], axis=1)
        X[accepted] = trial[improved]
        cur_nll[accepted] = trial_nll[improved]
        iters[accepted] += 1
        eta[accepted] *= 2.0

        stalled = idx[~improved]
        active[stalled] = False
        stopped_early[stalled] = True
        tiny = accepted[step_len < config.min_step]
        active[tiny] = False
        stopped_early[tiny] = True

    if not (alive & np.isfinite(cur_nll)).any():
        raise LocalizationFailureError("no start evaluated to a finite likelihood")
    score = np.where(alive & np.isfinite(cur_nll), cur_nll, np.inf)
    best = int(np.argmin(score))
    return LocalizationResult(estimate=Point2(*X[best]),
                              neg_log_likelihood=float(cur_nll[best]),
                              iterations_used=int(iters[best]),
                              converged=bool(stopped_early[best]),
                              start_used=Point2(*starts[best]))


def localize_geometry_los(obs_los: tuple[float, float], bs: Point2) -> Point2:
    """Invert a single (angle, round-trip delay) observation geometrically."""
    angle, delay = obs_los
    return invert_los(angle, delay, bs)


def localize_geometry_nlos(obs: SensingObservation, bs: Point2) -> Point2:
    """Treat the shortest-delay composite path as if it were line-of-sight.

    In a pure NLoS scene every composite delay exceeds the direct round
    trip, so this baseline systematically overshoots the target range.
    """
    i = int(np.argmin(obs.delay))
    return invert_los(float(obs.aoa[i]), float(obs.delay[i]), bs)
