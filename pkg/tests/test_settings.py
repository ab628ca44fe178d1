import pytest
from pydantic import ValidationError

from src.config.settings import Settings, get_settings
from src.thermal.convergence import SweepSpec
from src.thermal.mimo import NewtonConfig


def test_defaults():
    s = Settings()
    assert s.NEWTON_TOL == 1e-6
    assert s.NEWTON_MAX_ITER == 50
    assert s.DEFAULT_MODEL_PATH.exists()
    assert get_settings() is get_settings()


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("NEWTON_MAX_ITER", "7")
    monkeypatch.setenv("SWEEP_DENSITY", "5")
    s = Settings()
    assert s.NEWTON_MAX_ITER == 7
    assert s.SWEEP_DENSITY == 5


@pytest.mark.parametrize("name, value", [
    ("NEWTON_TOL", "0"),
    ("NEWTON_MAX_ITER", "0"),
    ("SWEEP_DENSITY", "1"),
    ("FIT_WINDOW_S", "-5"),
])
def test_invalid_values_are_rejected(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    with pytest.raises(ValidationError):
        Settings()


def test_component_configs_take_defaults_from_settings():
    s = get_settings()
    assert NewtonConfig().tol == s.NEWTON_TOL
    assert NewtonConfig().max_iter == s.NEWTON_MAX_ITER
    assert SweepSpec().temp_grid_density == s.SWEEP_DENSITY
    with pytest.raises(ValidationError):
        SweepSpec(temp_grid_density=1)
