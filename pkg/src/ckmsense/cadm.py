"""Channel angle-delay map (CADM).

A small fully-connected network maps a 2-D location to per-path Gaussian
distributions over departure angle and delay: for each of the ``L'``
strongest one-way paths it emits a mean and a variance for the angle and for
the delay, 4 numbers per path. The map is trained on location/channel pairs
and, once trained, serves as the channel prior behind both communication and
sensing queries.

Internally locations are affinely normalized into [-1, 1]^2 and delays are
expressed in units of one scene diagonal of travel time; raw delays of order
1e-7 s would otherwise wreck the conditioning of both training and the
Jacobian. Variances come out of the network as log-variances and pass
through ``exp`` plus a small floor, so they are strictly positive
everywhere.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import Point2, CommChannelKnowledge, wrap_angle
from .mlp import (AdamState, MlpParams, adam_step, init_mlp, mlp_backward,
                  mlp_forward, mlp_forward_cached, mlp_input_jacobian)
from .pathmap import PathStats, PathStatsJacobian, _as_locs, canonical_slot_order

VAR_THETA_FLOOR = 1e-6   # rad^2
VAR_TAU_FLOOR = 1e-20    # s^2

HIDDEN_DIMS = (128, 256, 128)

MODEL_MAGIC = b"CADM"
MODEL_FORMAT_VERSION = 1


class NumericError(ArithmeticError):
    """Non-finite values encountered in a forward/backward pass."""


class TrainingFailureError(RuntimeError):
    """Training loss diverged (became non-finite)."""


class ModelFormatError(ValueError):
    """Corrupt, truncated, or version-mismatched model payload."""


@dataclass(frozen=True)
class GaussianPathDist:
    """Gaussian angle/delay summary of one path at one location."""

    mu_theta: float
    var_theta: float
    mu_tau: float
    var_tau: float

    def __post_init__(self):
        if self.var_theta <= 0 or self.var_tau <= 0:
            raise ValueError("variances must be strictly positive")


@dataclass
class TrainingSet:
    """Location/channel pairs used to fit a map.

    Column layout: ``locations`` is (n, 2); ``aod``, ``delay`` and ``gain``
    are (n, L') with paths in canonical slot order (ascending departure
    angle; see :func:`ckmsense.pathmap.canonical_slot_order`).
    """

    locations: np.ndarray
    aod: np.ndarray
    delay: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float)
        self.aod = np.asarray(self.aod, dtype=float)
        self.delay = np.asarray(self.delay, dtype=float)
        self.gain = np.asarray(self.gain, dtype=float)
        n = self.locations.shape[0]
        if self.locations.shape != (n, 2):
            raise ValueError("locations must be (n, 2)")
        for name in ("aod", "delay", "gain"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ValueError(f"{name} must be (n, l_prime), got {arr.shape}")
            if arr.shape[1] != self.aod.shape[1]:
                raise ValueError("inconsistent path counts across columns")
        if n == 0:
            raise ValueError("training set is empty")
        if not np.all(np.isfinite(self.locations)):
            raise ValueError("non-finite locations")

    @property
    def n_samples(self) -> int:
        return self.locations.shape[0]

    @property
    def l_prime(self) -> int:
        return self.aod.shape[1]

    @classmethod
    def from_pairs(cls, pairs) -> "TrainingSet":
        """Build from ``(Point2, CommChannelKnowledge)`` pairs, reordering
        each channel into canonical slot order; every pair must carry the
        same number of paths."""
        pairs = list(pairs)
        if not pairs:
            raise ValueError("no training pairs")
        l_prime = pairs[0][1].l_prime
        locs, aods, delays, gains = [], [], [], []
        for loc, ck in pairs:
            if not isinstance(ck, CommChannelKnowledge):
                raise TypeError("second pair element must be CommChannelKnowledge")
            if ck.l_prime != l_prime:
                raise ValueError(f"inconsistent path count: {ck.l_prime} != {l_prime}")
            slot = canonical_slot_order(ck.aod_array()[None, :],
                                        ck.delay_array()[None, :])[0]
            locs.append([loc.x, loc.y])
            aods.append(ck.aod_array()[slot])
            delays.append(ck.delay_array()[slot])
            gains.append(ck.gain_array()[slot])
        return cls(locations=np.array(locs), aod=np.array(aods),
                   delay=np.array(delays), gain=np.array(gains))

    def save_text(self, path) -> None:
        """Columnar text: per row ``x y`` then ``aod delay gain`` per path."""
        with open(path, "w") as fh:
            fh.write(f"# ckm-training v1 l_prime={self.l_prime}\n")
            for i in range(self.n_samples):
                vals = [self.locations[i, 0], self.locations[i, 1]]
                for k in range(self.l_prime):
                    vals += [self.aod[i, k], self.delay[i, k], self.gain[i, k]]
                fh.write(" ".join(format(v, ".17g") for v in vals) + "\n")

    @classmethod
    def load_text(cls, path) -> "TrainingSet":
        with open(path) as fh:
            header = fh.readline().strip()
            if not header.startswith("# ckm-training v1"):
                raise ValueError(f"unexpected training-set header {header!r}")
            l_prime = int(header.rsplit("=", 1)[1])
            data = np.loadtxt(fh, ndmin=2)
        if data.shape[1] != 2 + 3 * l_prime:
            raise ValueError(f"expected {2 + 3 * l_prime} columns, got {data.shape[1]}")
        per_path = data[:, 2:].reshape(data.shape[0], l_prime, 3)
        return cls(locations=data[:, :2], aod=per_path[:, :, 0],
                   delay=per_path[:, :, 1], gain=per_path[:, :, 2])


@dataclass
class TrainingConfig:
    """Hyperparameters for :func:`cadm_train`.

    ``loss`` is ``"nll"`` (Gaussian negative log-likelihood, fits means and
    variances jointly) or ``"mse"`` (means only, residuals whitened by the
    fixed variances below, which the model then reports). The NLL mode
    spends the first ``warmup_fraction`` of the epochs in the whitened-mean
    regime before the variance heads go live; without the warmup the
    variance heads inflate over hard spots early and throttle the mean
    gradients there for good. ``bounds`` pins the input normalization to
    the scene; when omitted it is derived from the data extent.
    """

    epochs: int = 1200
    batch_size: int = 256
    learning_rate: float = 3e-3
    lr_min_fraction: float = 0.02
    loss: str = "nll"
    warmup_fraction: float = 0.85
    fixed_var_theta: float = 1e-2
    fixed_var_tau: float = 2.5e-19
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.loss not in ("nll", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid training hyperparameters")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must be in [0, 1]")
        if self.fixed_var_theta <= 0 or self.fixed_var_tau <= 0:
            raise ValueError("fixed variances must be positive")


@dataclass
class CadmModel:
    """Trained channel angle-delay map.

    ``input_offset``/``input_scale`` define the location normalization
    ``(loc - offset) * scale``; ``delay_unit_scale`` converts the network's
    internal delay unit to seconds. ``variance_mode`` is ``"learned"`` when
    the network's variance heads are live and ``"fixed"`` after MSE
    training.
    """

    mlp: MlpParams
    l_prime: int
    input_offset: np.ndarray
    input_scale: np.ndarray
    delay_unit_scale: float
    variance_mode: str = "learned"
    fixed_var_theta: float = 1e-4
    fixed_var_tau: float = 1e-18
    format_version: int = MODEL_FORMAT_VERSION

    def __post_init__(self):
        self.input_offset = np.asarray(self.input_offset, dtype=float).reshape(2)
        self.input_scale = np.asarray(self.input_scale, dtype=float).reshape(2)
        if self.l_prime < 1:
            raise ValueError("l_prime must be >= 1")
        if self.delay_unit_scale <= 0:
            raise ValueError("delay_unit_scale must be positive")
        if self.mlp.layer_dims[-1] != 4 * self.l_prime:
            raise ValueError(f"output width {self.mlp.layer_dims[-1]} != 4 * {self.l_prime}")
        if self.variance_mode not in ("learned", "fixed"):
            raise ValueError(f"unknown variance mode {self.variance_mode!r}")

    def normalize(self, locs: np.ndarray) -> np.ndarray:
        return (locs - self.input_offset) * self.input_scale

    def bounds_rect(self):
        half = 1.0 / self.input_scale
        lo = self.input_offset - half
        hi = self.input_offset + half
        return (lo[0], hi[0]), (lo[1], hi[1])

    def _raw_to_stats(self, raw: np.ndarray) -> PathStats:
        n = raw.shape[0]
        per = raw.reshape(n, self.l_prime, 4)
        mu_theta = per[:, :, 0]
        mu_tau = per[:, :, 2] * self.delay_unit_scale
        if self.variance_mode == "learned":
            var_theta = np.exp(per[:, :, 1]) + VAR_THETA_FLOOR
            var_tau = np.exp(per[:, :, 3]) * self.delay_unit_scale ** 2 + VAR_TAU_FLOOR
        else:
            var_theta = np.full_like(mu_theta, self.fixed_var_theta)
            var_tau = np.full_like(mu_tau, self.fixed_var_tau)
        return PathStats(mu_theta=mu_theta, var_theta=var_theta,
                         mu_tau=mu_tau, var_tau=var_tau)

    def path_stats(self, locs) -> PathStats:
        locs = _as_locs(locs)
        with np.errstate(invalid="ignore", over="ignore"):
            raw = mlp_forward(self.mlp, self.normalize(locs))
        if not np.all(np.isfinite(raw)):
            raise NumericError("non-finite network output")
        return self._raw_to_stats(raw)

    def path_stats_jacobian(self, locs):
        locs = _as_locs(locs)
        with np.errstate(invalid="ignore", over="ignore"):
            raw, jac_norm = mlp_input_jacobian(self.mlp, self.normalize(locs))
        if not (np.all(np.isfinite(raw)) and np.all(np.isfinite(jac_norm))):
            raise NumericError("non-finite network output")
        stats = self._raw_to_stats(raw)
        n = raw.shape[0]
        # chain through input normalization, then per-head output transforms
        jac = (jac_norm * self.input_scale).reshape(n, self.l_prime, 4, 2)
        scale = self.delay_unit_scale
        if self.variance_mode == "learned":
            per = raw.reshape(n, self.l_prime, 4)
            d_var_theta = np.exp(per[:, :, 1])[..., None] * jac[:, :, 1, :]
            d_var_tau = (np.exp(per[:, :, 3])[..., None] * jac[:, :, 3, :]) * scale ** 2
        else:
            d_var_theta = np.zeros((n, self.l_prime, 2))
            d_var_tau = np.zeros((n, self.l_prime, 2))
        out_jac = PathStatsJacobian(d_mu_theta=jac[:, :, 0, :],
                                    d_var_theta=d_var_theta,
                                    d_mu_tau=jac[:, :, 2, :] * scale,
                                    d_var_tau=d_var_tau)
        return stats, out_jac


def _loc_array(loc) -> np.ndarray:
    if isinstance(loc, Point2):
        return loc.as_array()
    return np.asarray(loc, dtype=float).reshape(2)


def cadm_forward(model: CadmModel, loc) -> list[GaussianPathDist]:
    """Per-path Gaussian parameters at one location, canonical path order."""
    stats = model.path_stats(_loc_array(loc)[None, :])
    return [GaussianPathDist(mu_theta=stats.mu_theta[0, k],
                             var_theta=stats.var_theta[0, k],
                             mu_tau=stats.mu_tau[0, k],
                             var_tau=stats.var_tau[0, k])
            for k in range(model.l_prime)]


def cadm_jacobian(model: CadmModel, loc) -> np.ndarray:
    """(4 L', 2) derivative of the flattened forward output w.r.t. location.

    Row order follows the forward output: for each path in canonical order,
    ``mu_theta, var_theta, mu_tau, var_tau``. Variance rows are derivatives
    of the post-transform (strictly positive) variances.
    """
    _, jac = model.path_stats_jacobian(_loc_array(loc)[None, :])
    rows = np.stack([jac.d_mu_theta[0], jac.d_var_theta[0],
                     jac.d_mu_tau[0], jac.d_var_tau[0]], axis=1)
    return rows.reshape(4 * model.l_prime, 2)


def _normalization_from(data: TrainingSet, bounds) -> tuple[np.ndarray, np.ndarray, float]:
    from .geometry import SPEED_OF_LIGHT
    if bounds is not None:
        w, h = bounds
        offset = np.array([w / 2.0, h / 2.0])
        scale = np.array([2.0 / w, 2.0 / h])
        diagonal = float(np.hypot(w, h))
    else:
        lo = data.locations.min(axis=0)
        hi = data.locations.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        offset = (lo + hi) / 2.0
        scale = 2.0 / span
        diagonal = float(np.hypot(*span))
    return offset, scale, diagonal / SPEED_OF_LIGHT


def _head_bias_init(model_bias: np.ndarray, theta_t: np.ndarray,
                    tau_t: np.ndarray, l_prime: int) -> None:
    """Start the mean heads at the marginal statistics of their targets."""
    heads = model_bias.reshape(l_prime, 4)
    heads[:, 0] = theta_t.mean(axis=0)
    heads[:, 2] = tau_t.mean(axis=0)


def _reset_logvar_heads(params: MlpParams, state: AdamState,
                        log_v_theta: float, log_v_tau: float,
                        l_prime: int) -> None:
    """Point the variance heads exactly at the warmup constants, so the
    likelihood value is continuous across the phase switch."""
    cols = np.arange(l_prime * 4).reshape(l_prime, 4)
    for col_idx, value in ((cols[:, 1], log_v_theta), (cols[:, 3], log_v_tau)):
        params.weights[-1][:, col_idx] = 0.0
        params.biases[-1][col_idx] = value
        state.m_w[-1][:, col_idx] = 0.0
        state.v_w[-1][:, col_idx] = 0.0
        state.m_b[-1][col_idx] = 0.0
        state.v_b[-1][col_idx] = 0.0


def cadm_train(data: TrainingSet, config: TrainingConfig,
               rng_seed: int) -> tuple[CadmModel, np.ndarray]:
    """Fit a map to ``data``; returns ``(model, epoch_loss)``.

    The logged loss is the Gaussian negative log-likelihood per path (both
    angle and delay terms) in normalized units; during the whitened phase
    the variances are held at the configured constants, and at the switch
    the variance heads are seated exactly on those constants, so the
    trajectory has no splice jump.

    Deterministic: initialization and minibatch shuffling come from one
    dedicated generator seeded by ``rng_seed``, so identical inputs produce
    bitwise-identical loss trajectories and weights.

    Raises ``TrainingFailureError`` if the loss leaves the finite range.
    """
    offset, scale, delay_unit = _normalization_from(data, config.bounds)
    if config.bounds is not None:
        w, h = config.bounds
        inside = ((data.locations[:, 0] >= 0) & (data.locations[:, 0] <= w)
                  & (data.locations[:, 1] >= 0) & (data.locations[:, 1] <= h))
        if not np.all(inside):
            raise ValueError("training locations outside the configured bounds")

    x = (data.locations - offset) * scale
    theta_t = wrap_angle(data.aod)
    tau_t = data.delay / delay_unit
    n, l_prime = data.n_samples, data.l_prime

    rng = np.random.default_rng(rng_seed)
    params = init_mlp((2,) + HIDDEN_DIMS + (4 * l_prime,), rng)
    _head_bias_init(params.biases[-1], theta_t, tau_t, l_prime)
    state = AdamState.for_params(params)

    floor_tau_model = VAR_TAU_FLOOR / delay_unit ** 2
    fv_theta = config.fixed_var_theta
    fv_tau_model = config.fixed_var_tau / delay_unit ** 2
    if config.loss == "nll":
        nll_from = int(np.ceil(config.warmup_fraction * config.epochs))
    else:
        nll_from = config.epochs  # whitened throughout
    losses = np.empty(config.epochs)
    n_batches = (n + config.batch_size - 1) // config.batch_size

    def _epoch(epoch: int, lr: float, learn_var: bool) -> float:
        perm = rng.permutation(n)
        total = 0.0
        for b in range(n_batches):
            sel = perm[b * config.batch_size:(b + 1) * config.batch_size]
            out, cache = mlp_forward_cached(params, x[sel])
            per = out.reshape(len(sel), l_prime, 4)
            r_theta = wrap_angle(theta_t[sel] - per[:, :, 0])
            r_tau = tau_t[sel] - per[:, :, 2]
            grad = np.zeros_like(per)
            norm = 1.0 / (len(sel) * l_prime)
            if learn_var:
                e_th = np.exp(per[:, :, 1])
                v_th = e_th + VAR_THETA_FLOOR
                e_ta = np.exp(per[:, :, 3])
                v_ta = e_ta + floor_tau_model
                grad[:, :, 1] = e_th * (v_th - r_theta ** 2) / (2 * v_th ** 2) * norm
                grad[:, :, 3] = e_ta * (v_ta - r_tau ** 2) / (2 * v_ta ** 2) * norm
            else:
                v_th = fv_theta
                v_ta = fv_tau_model
            loss_b = np.mean(0.5 * np.log(2 * np.pi * v_th) + r_theta ** 2 / (2 * v_th)
                             + 0.5 * np.log(2 * np.pi * v_ta) + r_tau ** 2 / (2 * v_ta))
            grad[:, :, 0] = -r_theta / v_th * norm
            grad[:, :, 2] = -r_tau / v_ta * norm
            if not np.isfinite(loss_b):
                raise TrainingFailureError(f"loss diverged at epoch {epoch}")
            grads_w, grads_b = mlp_backward(params, cache,
                                            grad.reshape(len(sel), 4 * l_prime))
            adam_step(params, grads_w, grads_b, state, lr=lr)
            total += loss_b * len(sel)
        return total / n

    # divergence shows up as overflow before the finiteness checks fire
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            # cosine decay toward lr_min_fraction * learning_rate
            frac = epoch / max(config.epochs - 1, 1)
            lr = config.learning_rate * (config.lr_min_fraction
                                         + (1 - config.lr_min_fraction)
                                         * 0.5 * (1 + np.cos(np.pi * frac)))
            if epoch == nll_from:
                _reset_logvar_heads(params, state,
                                    np.log(max(fv_theta - VAR_THETA_FLOOR, 1e-300)),
                                    np.log(max(fv_tau_model - floor_tau_model, 1e-300)),
                                    l_prime)
            losses[epoch] = _epoch(epoch, lr, learn_var=epoch >= nll_from)
            if not np.isfinite(losses[epoch]) or not params.all_finite():
                raise TrainingFailureError(f"training diverged at epoch {epoch}")

    if config.loss == "nll" and nll_from >= config.epochs:
        # all-warmup run: seat the variance heads on the whitening constants
        _reset_logvar_heads(params, state,
                            np.log(max(fv_theta - VAR_THETA_FLOOR, 1e-300)),
                            np.log(max(fv_tau_model - floor_tau_model, 1e-300)),
                            l_prime)

    model = CadmModel(mlp=params, l_prime=l_prime, input_offset=offset,
                      input_scale=scale, delay_unit_scale=delay_unit,
                      variance_mode="learned" if config.loss == "nll" else "fixed",
                      fixed_var_theta=config.fixed_var_theta,
                      fixed_var_tau=config.fixed_var_tau)
    return model, losses


def prediction_errors(model: CadmModel, data: TrainingSet) -> tuple[np.ndarray, np.ndarray]:
    """Absolute angle (wrapped) and delay errors of the mean predictions on
    ``data``; both arrays are (n, L')."""
    stats = model.path_stats(data.locations)
    ang = np.abs(wrap_angle(data.aod - stats.mu_theta))
    dly = np.abs(data.delay - stats.mu_tau)
    return ang, dly


_HEADER = struct.Struct("<4sII B dd 2d 2d d d I")


def cadm_save(model: CadmModel, sink) -> None:
    """Serialize to the versioned binary format; ``sink`` is a path or a
    binary file object."""
    dims = model.mlp.layer_dims
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MODEL_MAGIC, model.format_version, model.l_prime,
                           0 if model.variance_mode == "learned" else 1,
                           model.fixed_var_theta, model.fixed_var_tau,
                           model.input_offset[0], model.input_offset[1],
                           model.input_scale[0], model.input_scale[1],
                           model.delay_unit_scale, model.mlp.negative_slope,
                           len(dims)))
    buf.write(struct.pack(f"<{len(dims)}I", *dims))
    for w, b in zip(model.mlp.weights, model.mlp.biases):
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    payload = buf.getvalue()
    if hasattr(sink, "write"):
        sink.write(payload)
    else:
        with open(sink, "wb") as fh:
            fh.write(payload)


def cadm_load(source) -> CadmModel:
    """Inverse of :func:`cadm_save`; raises ``ModelFormatError`` on corrupt,
    truncated, or version-mismatched payloads."""
    if hasattr(source, "read"):
        payload = source.read()
    else:
        with open(source, "rb") as fh:
            payload = fh.read()

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(payload):
            raise ModelFormatError(f"truncated payload while reading {what}")
        chunk = payload[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    (magic, version, l_prime, var_mode, fv_theta, fv_tau,
     off_x, off_y, sc_x, sc_y, delay_unit, slope, n_dims) = _HEADER.unpack(
        take(_HEADER.size, "header"))
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"format version {version} unsupported "
                               f"(expected {MODEL_FORMAT_VERSION})")
    if n_dims < 2 or n_dims > 64:
        raise ModelFormatError(f"implausible layer count {n_dims}")
    dims = struct.unpack(f"<{n_dims}I", take(4 * n_dims, "layer dims"))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = np.frombuffer(take(8 * fan_in * fan_out, "weights"), dtype="<f8")
        b = np.frombuffer(take(8 * fan_out, "biases"), dtype="<f8")
        weights.append(w.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    if pos != len(payload):
        raise ModelFormatError(f"{len(payload) - pos} trailing bytes")
    try:
        mlp = MlpParams(weights=weights, biases=biases, negative_slope=slope)
        return CadmModel(mlp=mlp, l_prime=l_prime,
                         input_offset=np.array([off_x, off_y]),
                         input_scale=np.array([sc_x, sc_y]),
                         delay_unit_scale=delay_unit,
                         variance_mode="learned" if var_mode == 0 else "fixed",
                         fixed_var_theta=fv_theta, fixed_var_tau=fv_tau,
                         format_version=version)
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent payload: {exc}") from exc
