"""Pytest configuration and fixtures for the trajectory smoother tests."""
import numpy as np
import pytest

from core.discrete_oracle import DiscreteModel
from core.models import (Bernoulli, FilterState, GaussianDensity, GaussianMixture, MotionModel, MultiBernoulli,
                         Trajectory)
from core.scenario import constant_velocity_model, position_sensor


@pytest.fixture
def rng():
    """Seeded generator for tests that draw random inputs."""
    return np.random.default_rng(20240601)


@pytest.fixture
def crossing_model():
    """F = [1, 1; 0, 1], Q = I, certain survival and no birth: the two-target linking setup."""
    return MotionModel([[1.0, 1.0], [0.0, 1.0]], np.eye(2), 1.0)


@pytest.fixture
def crossing_filter():
    """Filtering density at k = 1: two certain targets with point-mass states."""
    zero = np.zeros((2, 2))
    return FilterState(time=1, posterior=MultiBernoulli((
        Bernoulli(1.0, GaussianDensity([2.0, -1.0], zero)),
        Bernoulli(1.0, GaussianDensity([1.0, 1.0], zero)),
    )))


@pytest.fixture
def crossing_survivors():
    """The two trajectories alive at k = 2, one state each."""
    return [Trajectory(2, [[1.0, 0.0]]), Trajectory(2, [[2.0, 0.0]])]


@pytest.fixture
def broad_birth():
    """A single wide Gaussian birth component with weight 0.1 on a 2-D state."""
    return GaussianMixture((0.1,), (GaussianDensity([0.0, 0.0], np.diag([100.0 ** 2, 2.0 ** 2])),))


@pytest.fixture
def cv_model_1d(broad_birth):
    """1-D constant-velocity model with the broad birth intensity."""
    return constant_velocity_model(1, 1.0, 0.1, 0.97, broad_birth)


@pytest.fixture
def sensor_1d():
    """1-D position sensor on a 200 m line with light clutter."""
    return position_sensor(1, 0.5, 0.9, 2.0, 200.0)


@pytest.fixture
def hand_model():
    """Two states, two steps, one certain static target: small enough to do Bayes by hand."""
    return DiscreteModel(
        state_count=2,
        transition=[[1.0, 0.0], [0.0, 1.0]],
        survival_probability=1.0,
        birth_intensity=[0.0, 0.0],
        horizon=2,
        max_targets=1,
        likelihood=[[0.8, 0.2], [0.3, 0.7]],
        detection_probability=1.0,
        clutter_rate=0.0,
        clutter_distribution=[0.5, 0.5],
        initial=((1.0, (0.5, 0.5)),),
        name="hand",
    )


@pytest.fixture
def quick_document():
    """Small experiment config on the quick scenario."""
    return {
        "seed": 7,
        "runs": 1,
        "scenario": {"name": "quick"},
        "smoother": {"particles": 4, "murty_m": 5},
    }
