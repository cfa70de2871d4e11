"""Fisher information and Cramér-Rao lower bounds on 2-D localization.

Two routes to the 2x2 Fisher information matrix (FIM) about the target
position:

* closed form, ``I = J^T S^-1 J``, for a Gaussian observation whose
  variances do not depend on the position — ``J`` stacks the position
  derivatives of the predicted observation components and ``S`` their
  variances;
* Monte-Carlo score averaging, ``I = E[s s^T]`` with the score
  ``s = grad log P``, which also captures position-dependent variances of a
  learned map.

The CRLB is the FIM inverse; a singular FIM is reported with an infinite
trace rather than raised, so parameter sweeps keep going.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SPEED_OF_LIGHT, Point2, composite_pair_arrays
from .sensing import ErrorSpec, _point_array

_COND_LIMIT = 1e12


@dataclass
class FimReport:
    """2x2 Fisher information, its inverse, and bookkeeping.

    When ``singular`` is set, ``crlb`` is all-inf and ``trace_crlb`` is
    ``inf``. ``n_excluded`` counts Monte-Carlo score samples dropped for
    being non-finite (0 for closed forms).
    """

    fim: np.ndarray
    crlb: np.ndarray
    trace_crlb: float
    jacobian_rows: int
    singular: bool = False
    n_excluded: int = 0


def _report_from_fim(fim: np.ndarray, rows: int, n_excluded: int = 0) -> FimReport:
    fim = 0.5 * (fim + fim.T)  # enforce exact symmetry
    finite = np.all(np.isfinite(fim))
    if finite:
        cond = np.linalg.cond(fim)
        singular = not np.isfinite(cond) or cond > _COND_LIMIT
    else:
        singular = True
    if singular:
        return FimReport(fim=fim, crlb=np.full((2, 2), np.inf),
                         trace_crlb=np.inf, jacobian_rows=rows,
                         singular=True, n_excluded=n_excluded)
    crlb = np.linalg.inv(fim)
    return FimReport(fim=fim, crlb=crlb, trace_crlb=float(np.trace(crlb)),
                     jacobian_rows=rows, singular=False, n_excluded=n_excluded)


def _tiled_variances(err: ErrorSpec, n_rows: int) -> np.ndarray:
    if n_rows % 3 != 0:
        raise ValueError(f"jacobian rows must come in (aod, aoa, delay) "
                         f"triples, got {n_rows}")
    return np.tile([err.var_aod, err.var_aoa, err.var_delay], n_rows // 3)


def fim_constant_variance(jacobian: np.ndarray, err: ErrorSpec) -> FimReport:
    """Closed-form FIM for a constant-variance Gaussian observation.

    ``jacobian`` is (3L, 2), rows ordered (aod, aoa, delay) per composite
    path; the error variances tile accordingly.
    """
    jac = np.asarray(jacobian, dtype=float)
    if jac.ndim != 2 or jac.shape[1] != 2:
        raise ValueError(f"jacobian must be (3L, 2), got {jac.shape}")
    if not np.all(np.isfinite(jac)):
        raise ValueError("jacobian must be finite")
    variances = _tiled_variances(err, jac.shape[0])
    fim = (jac / variances[:, None]).T @ jac
    return _report_from_fim(fim, jac.shape[0])


def composite_mean_jacobian(model, x, reciprocal_only: bool = False) -> np.ndarray:
    """(3L, 2) position-derivative of the predicted observation means.

    Per composite path, rows are the AoD mean (forward slot angle), the AoA
    mean (reverse slot angle), and the composite delay mean (sum of the two
    slot delays), all evaluated through the map at ``x``.
    """
    _, jac = model.path_stats_jacobian(_point_array(x)[None, :])
    idx_t, idx_r = composite_pair_arrays(model.l_prime, reciprocal_only)
    rows = np.stack([jac.d_mu_theta[0, idx_t],
                     jac.d_mu_theta[0, idx_r],
                     jac.d_mu_tau[0, idx_t] + jac.d_mu_tau[0, idx_r]], axis=1)
    return rows.reshape(-1, 2)


def los_jacobian(bs: Point2, x: Point2) -> np.ndarray:
    """(2, 2) derivative of the direct-path (angle, round-trip delay)
    observation w.r.t. the target position."""
    dx = x.x - bs.x
    dy = x.y - bs.y
    d2 = dx * dx + dy * dy
    if d2 <= 0:
        raise ValueError("BS and target coincide")
    d = np.sqrt(d2)
    return np.array([[-dy / d2, dx / d2],
                     [2.0 * dx / (SPEED_OF_LIGHT * d), 2.0 * dy / (SPEED_OF_LIGHT * d)]])


def fim_los_geometry(bs: Point2, x: Point2, var_angle: float,
                     var_delay: float) -> FimReport:
    """Closed-form bound for the geometric LoS method: one (angle, delay)
    observation of the direct path."""
    jac = los_jacobian(bs, x)
    fim = np.outer(jac[0], jac[0]) / var_angle + np.outer(jac[1], jac[1]) / var_delay
    return _report_from_fim(fim, 2)


def _composite_params(model, x, err: ErrorSpec | None, reciprocal_only: bool):
    stats, jac = model.path_stats_jacobian(_point_array(x)[None, :])
    idx_t, idx_r = composite_pair_arrays(model.l_prime, reciprocal_only)
    mu = (stats.mu_theta[0, idx_t], stats.mu_theta[0, idx_r],
          stats.mu_tau[0, idx_t] + stats.mu_tau[0, idx_r])
    d_mu = (jac.d_mu_theta[0, idx_t], jac.d_mu_theta[0, idx_r],
            jac.d_mu_tau[0, idx_t] + jac.d_mu_tau[0, idx_r])
    n_comp = len(idx_t)
    if err is None:
        var = (stats.var_theta[0, idx_t], stats.var_theta[0, idx_r],
               stats.var_tau[0, idx_t] + stats.var_tau[0, idx_r])
        d_var = (jac.d_var_theta[0, idx_t], jac.d_var_theta[0, idx_r],
                 jac.d_var_tau[0, idx_t] + jac.d_var_tau[0, idx_r])
    else:
        var = (np.full(n_comp, err.var_aod), np.full(n_comp, err.var_aoa),
               np.full(n_comp, err.var_delay))
        d_var = tuple(np.zeros((n_comp, 2)) for _ in range(3))
    return mu, var, d_mu, d_var, n_comp


def fim_monte_carlo(model, x, err: ErrorSpec | None = None,
                    n_samples: int = 100_000,
                    rng: np.random.Generator | None = None,
                    reciprocal_only: bool = False,
                    chunk: int = 20_000) -> FimReport:
    """FIM at ``x`` by averaging score outer products over observations
    drawn from the map's composite likelihood.

    With ``err=None`` the likelihood is the map's own (position-dependent
    variances included, so the score carries variance-sensitivity terms).
    Passing an :class:`ErrorSpec` substitutes its variances for the map's —
    the measurement-error view used by bound sweeps — which zeroes the
    variance terms and converges to the closed form of
    :func:`fim_constant_variance`.

    Non-finite score samples are excluded and counted in ``n_excluded``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    mu, var, d_mu, d_var, n_comp = _composite_params(model, x, err, reciprocal_only)

    fim = np.zeros((2, 2))
    n_excluded = 0
    n_done = 0
    while n_done < n_samples:
        m = min(chunk, n_samples - n_done)
        scores = np.zeros((m, 2))
        for v, j_mu, j_var in zip(var, d_mu, d_var):
            resid = rng.normal(0.0, np.sqrt(v), size=(m, n_comp))
            scores += (resid / v) @ j_mu
            scores += ((resid ** 2 - v) / (2.0 * v ** 2)) @ j_var
        ok = np.all(np.isfinite(scores), axis=1)
        n_excluded += int(m - ok.sum())
        good = scores[ok]
        fim += good.T @ good
        n_done += m
    n_valid = n_samples - n_excluded
    if n_valid == 0:
        return FimReport(fim=np.full((2, 2), np.nan), crlb=np.full((2, 2), np.inf),
                         trace_crlb=np.inf, jacobian_rows=3 * n_comp,
                         singular=True, n_excluded=n_excluded)
    return _report_from_fim(fim / n_valid, 3 * n_comp, n_excluded)


def crlb_sweep(model, x, err_list, reciprocal_only: bool = False) -> list[FimReport]:
    """Closed-form bound of the map's composite likelihood at ``x`` for each
    error spec; per-point failures become singular reports, never aborts."""
    jac = composite_mean_jacobian(model, x, reciprocal_only)
    reports = []
    for err in err_list:
        try:
            reports.append(fim_constant_variance(jac, err))
        except ValueError:
            reports.append(FimReport(fim=np.full((2, 2), np.nan),
                                     crlb=np.full((2, 2), np.inf),
                                     trace_crlb=np.inf,
                                     jacobian_rows=jac.shape[0], singular=True))
    return reports
