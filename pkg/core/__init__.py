from .models import (Trajectory, TrajectorySet, GaussianDensity, GaussianMixture, Bernoulli, MultiBernoulli,
                     MotionModel, SensorModel, FilterState, Particle)
from .errors import SmootherError, ConfigError, DomainError, SmoothingFailure

__all__ = [
    'Trajectory', 'TrajectorySet', 'GaussianDensity', 'GaussianMixture', 'Bernoulli', 'MultiBernoulli',
    'MotionModel', 'SensorModel', 'FilterState', 'Particle',
    'SmootherError', 'ConfigError', 'DomainError', 'SmoothingFailure',
]
