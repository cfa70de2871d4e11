"""Per-path Gaussian angle/delay statistics at query locations.

A *path map* answers, for a batch of 2-D locations, "what do the ``L'``
dominant one-way channel paths look like there": per path a Gaussian over
the departure angle and one over the delay. Two implementations exist:

* :class:`ckmsense.cadm.CadmModel` — learned from location/channel pairs;
* :class:`GeometricPathMap` — exact single-bounce geometry with fixed
  variances, useful as an oracle and for sanity baselines.

Both expose the same duck-typed surface consumed by the sensing layer::

    l_prime                     -> int
    bounds_rect()               -> ((x_lo, x_hi), (y_lo, y_hi))
    path_stats(locs)            -> PathStats           # locs is (n, 2)
    path_stats_jacobian(locs)   -> (PathStats, PathStatsJacobian)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SPEED_OF_LIGHT, Environment

# Distances shorter than this are clipped instead of raising, so a batched
# optimizer iterate may pass through a scatterer without producing NaNs.
_DIST_CLIP = 1e-9


@dataclass
class PathStats:
    """Gaussian parameters per (location, path); every array is (n, L')."""

    mu_theta: np.ndarray
    var_theta: np.ndarray
    mu_tau: np.ndarray
    var_tau: np.ndarray

    @property
    def l_prime(self) -> int:
        return self.mu_theta.shape[1]


@dataclass
class PathStatsJacobian:
    """Location-derivatives of :class:`PathStats`; arrays are (n, L', 2)."""

    d_mu_theta: np.ndarray
    d_var_theta: np.ndarray
    d_mu_tau: np.ndarray
    d_var_tau: np.ndarray


def _as_locs(locs) -> np.ndarray:
    arr = np.asarray(locs, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"locations must be (n, 2), got shape {arr.shape}")
    return arr


def _candidate_stats(env: Environment, locs: np.ndarray, with_grads: bool):
    """Angle/delay/gain (and optionally their gradients) of every candidate
    one-way path at each location. Candidate order: scatterers, then the
    direct path when present."""
    n = locs.shape[0]
    s_pos = env.scatterer_positions()
    refl = env.reflectivities()
    bs = env.bs.as_array()

    d_bs = np.hypot(*(s_pos - bs).T)                      # (m,)
    aod_s = np.arctan2(s_pos[:, 1] - bs[1], s_pos[:, 0] - bs[0])

    diff = locs[:, None, :] - s_pos[None, :, :]           # (n, m, 2)
    d_sq = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), _DIST_CLIP)
    gain = refl / (d_bs * d_sq)
    delay = (d_bs + d_sq) / SPEED_OF_LIGHT
    aod = np.broadcast_to(aod_s, (n, len(refl)))
    if with_grads:
        d_delay = diff / (SPEED_OF_LIGHT * d_sq[..., None])
        d_aod = np.zeros_like(d_delay)

    if not env.los_blocked:
        diff_b = locs - bs                                 # (n, 2)
        rho = np.maximum(np.hypot(diff_b[:, 0], diff_b[:, 1]), _DIST_CLIP)
        gain = np.concatenate([gain, (1.0 / rho ** 2)[:, None]], axis=1)
        delay = np.concatenate([delay, (rho / SPEED_OF_LIGHT)[:, None]], axis=1)
        aod_d = np.arctan2(diff_b[:, 1], diff_b[:, 0])
        aod = np.concatenate([aod, aod_d[:, None]], axis=1)
        if with_grads:
            dd = diff_b / (SPEED_OF_LIGHT * rho[:, None])
            da = np.stack([-diff_b[:, 1], diff_b[:, 0]], axis=1) / (rho ** 2)[:, None]
            d_delay = np.concatenate([d_delay, dd[:, None, :]], axis=1)
            d_aod = np.concatenate([d_aod, da[:, None, :]], axis=1)

    if with_grads:
        return aod, delay, gain, d_aod, d_delay
    return aod, delay, gain


def _top_order(gain: np.ndarray, delay: np.ndarray, l_prime: int) -> np.ndarray:
    """Row-wise indices of the strongest paths; ties break toward shorter
    delay, then candidate order."""
    n, m = gain.shape
    if m < l_prime:
        raise ValueError(f"only {m} candidate paths, need {l_prime}")
    order_key = np.broadcast_to(np.arange(m), (n, m))
    idx = np.lexsort((order_key, delay, -gain), axis=-1)
    return idx[:, :l_prime]


def canonical_slot_order(aod: np.ndarray, delay: np.ndarray) -> np.ndarray:
    """Row-wise slot permutation: ascending departure angle, ties by
    ascending delay.

    Slot identity must be a *learnable* function of location. Ranking the
    selected paths by gain reshuffles slots wherever two gains cross, which
    happens on a dense web of curves; ordering them by departure angle
    leaves slot assignments untouched except where the top-``L'``
    membership itself changes, since a bounce path's angle does not depend
    on the query location. Training targets, synthesized observations, and
    the analytic map all use this one ordering, so composite-path labels
    agree everywhere.
    """
    return np.lexsort((delay, aod), axis=-1)


def top_paths_batch(env: Environment, locs, l_prime: int):
    """Vectorized strongest-path extraction at many locations.

    Selects the ``l_prime`` highest-gain candidates per row, then orders
    them by :func:`canonical_slot_order`. Returns ``(aod, delay, gain)``
    arrays of shape (n, l_prime); the paths per row match
    :func:`ckmsense.geometry.single_bounce_paths`, reordered.
    """
    locs = _as_locs(locs)
    aod, delay, gain = _candidate_stats(env, locs, with_grads=False)
    idx = _top_order(gain, delay, l_prime)
    take = lambda a: np.take_along_axis(a, idx, axis=1)
    aod, delay, gain = take(np.ascontiguousarray(aod)), take(delay), take(gain)
    slot = canonical_slot_order(aod, delay)
    take_s = lambda a: np.take_along_axis(a, slot, axis=1)
    return take_s(aod), take_s(delay), take_s(gain)


class GeometricPathMap:
    """Exact-geometry path map: means are the true single-bounce angles and
    delays at the query location, variances are fixed constants.

    Paths are re-selected by gain and slot-ordered at each query location
    with the same rules observation synthesis uses, so slot identities match
    the synthesized channel exactly at the true target location.
    """

    def __init__(self, env: Environment, l_prime: int,
                 var_theta: float = 1e-4, var_tau: float = 1e-18):
        if l_prime < 1 or env.n_candidate_paths() < l_prime:
            raise ValueError(f"environment offers {env.n_candidate_paths()} "
                             f"paths, need {l_prime}")
        if var_theta <= 0 or var_tau <= 0:
            raise ValueError("variances must be positive")
        self.env = env
        self.l_prime = l_prime
        self.var_theta = float(var_theta)
        self.var_tau = float(var_tau)

    def bounds_rect(self):
        w, h = self.env.bounds
        return (0.0, w), (0.0, h)

    def path_stats(self, locs) -> PathStats:
        locs = _as_locs(locs)
        aod, delay, _ = top_paths_batch(self.env, locs, self.l_prime)
        return PathStats(mu_theta=aod,
                         var_theta=np.full_like(aod, self.var_theta),
                         mu_tau=delay,
                         var_tau=np.full_like(delay, self.var_tau))

    def path_stats_jacobian(self, locs):
        locs = _as_locs(locs)
        aod, delay, gain, d_aod, d_delay = _candidate_stats(self.env, locs,
                                                            with_grads=True)
        idx = _top_order(gain, delay, self.l_prime)
        take = lambda a: np.take_along_axis(np.ascontiguousarray(a), idx, axis=1)
        aod_top, delay_top = take(aod), take(delay)
        slot = canonical_slot_order(aod_top, delay_top)
        sel = np.take_along_axis(idx, slot, axis=1)
        take3 = lambda a: np.take_along_axis(a, sel[..., None], axis=1)
        stats = PathStats(mu_theta=np.take_along_axis(aod_top, slot, axis=1),
                          var_theta=np.full((locs.shape[0], self.l_prime), self.var_theta),
                          mu_tau=np.take_along_axis(delay_top, slot, axis=1),
                          var_tau=np.full((locs.shape[0], self.l_prime), self.var_tau))
        zeros = np.zeros((locs.shape[0], self.l_prime, 2))
        jac = PathStatsJacobian(d_mu_theta=take3(d_aod),
                                d_var_theta=zeros,
                                d_mu_tau=take3(d_delay),
                                d_var_tau=zeros.copy())
        return stats, jac
