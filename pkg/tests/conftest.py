import numpy as np
import pytest

from sketchfit import kernels
from sketchfit.morphable import synthetic_basis, CoeffVector
from sketchfit.render import CameraSpec


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    kernels.warmup()


@pytest.fixture(scope="session")
def basis():
    return synthetic_basis(seed=0, nv_target=1002, k_id=8, k_exp=6, k_alb=8)


@pytest.fixture(scope="session")
def small_basis():
    return synthetic_basis(seed=1, nv_target=402, k_id=5, k_exp=4, k_alb=5)


@pytest.fixture
def cam16():
    return CameraSpec(focal=72.0, principal_point=(8.0, 8.0),
                      image_size=(16, 16), near=1.0, far=100.0)


@pytest.fixture
def cam64():
    return CameraSpec(focal=290.0, principal_point=(32.0, 32.0),
                      image_size=(64, 64), near=1.0, far=100.0)


def centered_coeffs(basis, seed=None, scale=0.0):
    c = CoeffVector.zeros(basis)
    c.beta_t = np.array([0.0, 0.0, 10.0])
    c.beta_sh[0, :] = 1.0 / 0.28209479
    if seed is not None and scale > 0:
        rng = np.random.default_rng(seed)
        c.beta_id = rng.normal(0, scale, c.beta_id.shape)
        c.beta_exp = rng.normal(0, scale, c.beta_exp.shape)
        c.beta_alb = rng.normal(0, scale, c.beta_alb.shape)
    return c
