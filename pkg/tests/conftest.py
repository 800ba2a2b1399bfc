import numpy as np
import pytest

from egolabel import EnergyWeights, default_topology
from egolabel.pipeline import segment
from egolabel.synth import ScenarioConfig, gen_scenario


@pytest.fixture(scope="session")
def topo():
    return default_topology()


@pytest.fixture(scope="session")
def unit_weights():
    return EnergyWeights()


def make_window(n_frames=4, seed=0, motion="walk_cycle", occlusion="none", **noise):
    """Small scenario plus its single full-length observation window."""
    cfg = ScenarioConfig(n_frames=n_frames, motion_kind=motion,
                         occlusion=occlusion, seed=seed, **noise)
    scenario = gen_scenario(cfg)
    obs = segment(scenario.dataset, n_frames)[0].observations
    return scenario, obs


def random_rotation(rng):
    from egolabel import axis_angle_to_matrix
    return axis_angle_to_matrix(rng.normal(0.0, 1.0, 3))


def fd_gradient(fun, x, step):
    """Central finite differences of a scalar function over a flat array."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        g.flat[i] = (fun(xp) - fun(xm)) / (2.0 * step)
    return g


def rel_err(analytic, numeric):
    """Max absolute difference over the max gradient magnitude."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    denom = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
    return float(np.abs(a - n).max() / denom)
