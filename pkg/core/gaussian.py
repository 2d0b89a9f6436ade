"""Gaussian moment algebra for the linear-Gaussian model.

All solves go through a Cholesky factorization; nothing here forms an
explicit inverse.
"""
from typing import Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp
from scipy.stats import chi2

from .errors import DomainError, NumericalError
from .models import BackwardConditional, GaussianDensity, GaussianMixture, MotionModel, SensorModel

LOG_2PI = np.log(2.0 * np.pi)
PSD_REPAIR_TOLERANCE = 1e-10


def _factor(matrix: np.ndarray, what: str):
    try:
        return cho_factor(matrix, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} is singular or not positive definite") from exc


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def _check_dim(expected: int, actual: int, what: str):
    if expected != actual:
        raise DomainError(f"{what}: expected dimension {expected}, got {actual}")


def repair_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp tiny negative eigenvalues to zero"""
    matrix = _symmetrize(np.asarray(matrix, dtype=float))
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    if eigenvalues.size == 0 or eigenvalues[0] >= 0.0:
        return matrix
    if eigenvalues[0] < -PSD_REPAIR_TOLERANCE:
        raise NumericalError(f"matrix has eigenvalue {eigenvalues[0]:.3e}, not repairable to PSD")
    clamped = np.maximum(eigenvalues, 0.0)
    return _symmetrize((eigenvectors * clamped) @ eigenvectors.T)


def predict_moments(g: GaussianDensity, model: MotionModel) -> GaussianDensity:
    _check_dim(model.dim, g.dim, "predict_moments")
    F = model.transition_matrix
    return GaussianDensity(F @ g.mean, _symmetrize(F @ g.covariance @ F.T + model.process_noise))


def gaussian_logpdf(g: GaussianDensity, x) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_dim(g.dim, x.size, "gaussian_logpdf")
    factor = _factor(g.covariance, "covariance")
    residual = x - g.mean
    maha = float(residual @ cho_solve(factor, residual))
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return -0.5 * (g.dim * LOG_2PI + log_det + maha)


def mixture_logpdf(mixture: GaussianMixture, x) -> float:
    """Log of an unnormalized mixture intensity; -inf when the mixture is empty"""
    terms = [np.log(w) + gaussian_logpdf(c, x)
             for w, c in zip(mixture.weights, mixture.components) if w > 0.0]
    if not terms:
        return -np.inf
    return float(logsumexp(terms))


def _innovation(prior: GaussianDensity, model: MotionModel, x_next) -> Tuple[np.ndarray, np.ndarray]:
    x_next = np.asarray(x_next, dtype=float).reshape(-1)
    _check_dim(model.dim, prior.dim, "prior")
    _check_dim(model.dim, x_next.size, "x_next")
    F = model.transition_matrix
    S = _symmetrize(F @ prior.covariance @ F.T + model.process_noise)
    return x_next - F @ prior.mean, S


def mahalanobis_sq(prior: GaussianDensity, model: MotionModel, x_next) -> float:
    residual, S = _innovation(prior, model, x_next)
    factor = _factor(S, "predicted covariance")
    return max(0.0, float(residual @ cho_solve(factor, residual)))


def backward_condition(prior: GaussianDensity, model: MotionModel, x_next) -> BackwardConditional:
    """Condition the state at k on its successor at k+1"""
    residual, S = _innovation(prior, model, x_next)
    factor = _factor(S, "predicted covariance")
    P = prior.covariance
    FP = model.transition_matrix @ P
    # S^{-1} F P; its transpose is the smoothing gain
    solved = cho_solve(factor, FP)
    mean = prior.mean + solved.T @ residual
    covariance = repair_psd(P - FP.T @ solved)
    return BackwardConditional(mean=mean, covariance=covariance)


def kalman_update(g: GaussianDensity, z, sensor: SensorModel) -> Tuple[GaussianDensity, float]:
    """Updated density and the log predictive likelihood of ``z``"""
    z = np.asarray(z, dtype=float).reshape(-1)
    _check_dim(sensor.measurement_dim, z.size, "measurement")
    _check_dim(sensor.state_dim, g.dim, "kalman_update")
    H, R = sensor.measurement_matrix, sensor.measurement_noise
    P = g.covariance
    S = _symmetrize(H @ P @ H.T + R)
    factor = _factor(S, "innovation covariance")
    residual = z - H @ g.mean
    gain = cho_solve(factor, H @ P).T
    mean = g.mean + gain @ residual
    # Joseph form keeps the covariance symmetric PSD
    I_KH = np.eye(g.dim) - gain @ H
    covariance = repair_psd(I_KH @ P @ I_KH.T + gain @ R @ gain.T)
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    maha = float(residual @ cho_solve(factor, residual))
    log_likelihood = -0.5 * (z.size * LOG_2PI + log_det + maha)
    return GaussianDensity(mean, covariance), log_likelihood


def innovation_mahalanobis_sq(g: GaussianDensity, z, sensor: SensorModel) -> float:
    H = sensor.measurement_matrix
    S = _symmetrize(H @ g.covariance @ H.T + sensor.measurement_noise)
    residual = np.asarray(z, dtype=float).reshape(-1) - H @ g.mean
    return max(0.0, float(residual @ cho_solve(_factor(S, "innovation covariance"), residual)))


def gate_threshold(probability: float, dim: int) -> float:
    """Chi-square quantile used as the ellipsoidal gate"""
    if not 0.0 < probability < 1.0:
        raise DomainError(f"gate probability must lie in (0, 1), got {probability}")
    return float(chi2.ppf(probability, dim))


def sample_gaussian(mean, covariance, rng: np.random.Generator) -> np.ndarray:
    """Draw one sample; exact for singular (including zero) covariances"""
    mean = np.asarray(mean, dtype=float)
    if not np.any(covariance):
        return mean.copy()
    return rng.multivariate_normal(mean, covariance, method="eigh")
