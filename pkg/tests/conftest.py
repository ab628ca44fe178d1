import numpy as np
import pytest

from src.config.settings import settings
from src.thermal.model import LeakageParams, ThermalModel, load_model


def _inactive(n_resources):
    return [LeakageParams(1.0, 1e-3, -1000.0, 0, active=False) for _ in range(n_resources)]


@pytest.fixture(scope="session")
def default_model():
    return load_model(settings.DEFAULT_MODEL_PATH)


@pytest.fixture
def scalar_model():
    """N = M = 1 with A = 0.5, B = 1 and no ambient offset."""
    return ThermalModel(
        A=[[0.5]],
        B=[[1.0]],
        hotspot_names=["core"],
        resource_names=["cpu"],
        leakage=_inactive(1),
        domain=(1.0, 1000.0),
        ambient=0.0,
        sample_period=0.1,
    )


def random_stable_model(rng, n=4, m=3, leaky=True, ambient=300.0):
    """Non-negative symmetric A with row sums below 0.96, small non-negative B and random leakage."""
    coupling = np.triu(rng.uniform(0.0, 0.06 / max(n - 1, 1), size=(n, n)), k=1)
    A = np.diag(rng.uniform(0.5, 0.9, size=n)) + coupling + coupling.T
    B = rng.uniform(0.0, 0.05, size=(n, m))
    if leaky:
        leakage = [
            LeakageParams(
                voltage=float(rng.uniform(0.8, 1.2)),
                kappa1=float(rng.uniform(1e-4, 1e-3)),
                kappa2=-float(rng.uniform(1500.0, 3000.0)),
                driving_hotspot=int(rng.integers(n)),
            )
            for _ in range(m)
        ]
    else:
        leakage = _inactive(m)
    return ThermalModel(
        A=A,
        B=B,
        hotspot_names=[f"h{i}" for i in range(n)],
        resource_names=[f"r{j}" for j in range(m)],
        leakage=leakage,
        domain=(max(ambient - 10.0, 1.0), ambient + 200.0),
        ambient=ambient,
        sample_period=0.1,
    )


@pytest.fixture
def model_factory():
    return random_stable_model


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
