import numpy as np
import pytest

from ckmsense.cadm import CadmModel
from ckmsense.geometry import Environment, Point2, Scatterer
from ckmsense.mlp import init_mlp
from ckmsense.pathmap import PathStats, PathStatsJacobian


class StubMap:
    """Path map with location-independent statistics (zero Jacobians)."""

    def __init__(self, mu_theta, var_theta, mu_tau, var_tau,
                 bounds=(100.0, 100.0)):
        self.mu_theta = np.asarray(mu_theta, dtype=float)
        self.var_theta = np.asarray(var_theta, dtype=float)
        self.mu_tau = np.asarray(mu_tau, dtype=float)
        self.var_tau = np.asarray(var_tau, dtype=float)
        self.bounds = bounds
        self.l_prime = len(self.mu_theta)

    def bounds_rect(self):
        return (0.0, self.bounds[0]), (0.0, self.bounds[1])

    def path_stats(self, locs):
        n = np.atleast_2d(locs).shape[0]
        tile = lambda a: np.tile(a, (n, 1))
        return PathStats(mu_theta=tile(self.mu_theta), var_theta=tile(self.var_theta),
                         mu_tau=tile(self.mu_tau), var_tau=tile(self.var_tau))

    def path_stats_jacobian(self, locs):
        n = np.atleast_2d(locs).shape[0]
        zeros = lambda: np.zeros((n, self.l_prime, 2))
        return self.path_stats(locs), PathStatsJacobian(zeros(), zeros(),
                                                        zeros(), zeros())


def make_env(n_scatterers=8, seed=0, bounds=(100.0, 100.0), bs=(50.0, 0.0),
             los_blocked=True) -> Environment:
    rng = np.random.default_rng(seed)
    scats = []
    for _ in range(n_scatterers):
        pos = Point2(rng.uniform(2, bounds[0] - 2), rng.uniform(2, bounds[1] - 2))
        scats.append(Scatterer(position=pos, reflectivity=1.0 - rng.uniform()))
    return Environment(bs=Point2(*bs), scatterers=tuple(scats), bounds=bounds,
                       los_blocked=los_blocked)


def make_random_model(l_prime=3, seed=0, hidden=(16, 8), weight_scale=0.5,
                      bounds=(100.0, 100.0)) -> CadmModel:
    """Random-weight map with sane output magnitudes, for derivative and
    persistence tests."""
    rng = np.random.default_rng(seed)
    params = init_mlp((2,) + tuple(hidden) + (4 * l_prime,), rng)
    for w in params.weights:
        w += rng.normal(0.0, weight_scale / np.sqrt(w.shape[0]), size=w.shape)
    for b in params.biases:
        b += rng.normal(0.0, 0.1, size=b.shape)
    w, h = bounds
    return CadmModel(mlp=params, l_prime=l_prime,
                     input_offset=np.array([w / 2, h / 2]),
                     input_scale=np.array([2.0 / w, 2.0 / h]),
                     delay_unit_scale=np.hypot(w, h) / 299_792_458.0)


@pytest.fixture
def env8():
    return make_env()


@pytest.fixture
def env40():
    return make_env(n_scatterers=40, seed=3)
