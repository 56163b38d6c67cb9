"""Windowed least-squares estimator, residual detector, Luenberger observer and UKF."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, NumericalError
from .plant import HorizonObservation, PlantModel


def _check_window(horizon: HorizonObservation, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (horizon.rows,):
        raise ConfigError(f"window must have shape ({horizon.rows},), got {y.shape}")
    return y


@dataclass(frozen=True)
class MheEstimator:
    """l2 moving-horizon estimator ``x_hat = H^+ y_I``."""

    horizon: HorizonObservation
    pseudo_inverse: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = self.horizon.pinv
        P.setflags(write=False)
        object.__setattr__(self, "pseudo_inverse", P)

    def estimate(self, y_window: np.ndarray) -> np.ndarray:
        return self.pseudo_inverse @ _check_window(self.horizon, y_window)


def mhe_estimate(est: MheEstimator, y_window: np.ndarray) -> np.ndarray:
    return est.estimate(y_window)


class BddResult(NamedTuple):
    residual: float
    alarm: bool


@dataclass(frozen=True)
class BddDetector:
    """Residual detector: alarm when ``||(I - H H^+) y_I|| > delta`` (boundary is no alarm)."""

    horizon: HorizonObservation
    delta: float
    projector: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigError("detector threshold must be non-negative")
        P = self.horizon.projector
        P.setflags(write=False)
        object.__setattr__(self, "projector", P)

    def residual(self, y_window: np.ndarray) -> float:
        y = _check_window(self.horizon, y_window)
        # ||U2 U2^T y|| = ||U2^T y||
        return float(np.linalg.norm(self.horizon.U2.T @ y))

    def check(self, y_window: np.ndarray) -> BddResult:
        r = self.residual(y_window)
        return BddResult(r, r > self.delta)


def bdd_check(det: BddDetector, y_window: np.ndarray) -> BddResult:
    return det.check(y_window)


@dataclass
class LuenbergerObserver:
    """``x+ = A x_hat + L (y - C x_hat)``.

    Default gain is ``0.5 A C^+``, which for full-column-rank ``C`` gives error
    dynamics ``0.5 A``.
    """

    plant: PlantModel
    gain: np.ndarray | None = None

    def __post_init__(self):
        if self.gain is None:
            self.gain = 0.5 * self.plant.A @ np.linalg.pinv(self.plant.C)
        self.gain = np.asarray(self.gain, dtype=float)
        if self.gain.shape != (self.plant.n, self.plant.m):
            raise ConfigError(f"observer gain must be {self.plant.n}x{self.plant.m}")
        rho = self.error_spectral_radius
        if rho >= 1.0:
            raise ConfigError(f"observer error dynamics unstable: rho(A - L C) = {rho:.6g}")

    @property
    def error_dynamics(self) -> np.ndarray:
        return self.plant.A - self.gain @ self.plant.C

    @property
    def error_spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.error_dynamics))))

    def step(self, x_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.plant.A @ x_hat + self.gain @ (y - self.plant.C @ x_hat)


def luenberger_step(obs: LuenbergerObserver, x_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    return obs.step(x_hat, y)


# --------------------------------------------------------------------------
# Unscented Kalman filter
# --------------------------------------------------------------------------

@dataclass
class UkfState:
    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("UKF alpha must lie in (0, 1]")
        if self.kappa < 0:
            raise ConfigError("UKF kappa must be >= 0")
        n = self.x.size
        if self.P.shape != (n, n) or self.Q.shape != (n, n):
            raise ConfigError("UKF covariance shapes do not match the state")

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def spread(self) -> float:
        return self.alpha ** 2 * (self.n + self.kappa) - self.n

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance weights for the ``2n + 1`` sigma points."""
        n, lam = self.n, self.spread
        wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + (1.0 - self.alpha ** 2 + self.beta)
        return wm, wc

    def sigma_points(self, x: np.ndarray | None = None, P: np.ndarray | None = None) -> np.ndarray:
        x = self.x if x is None else x
        P = self.P if P is None else P
        S = _sym_sqrt((self.n + self.spread) * P)
        return np.vstack([x, x + S.T, x - S.T])


def _sym_sqrt(P: np.ndarray) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clipped to zero."""
    w, Q = np.linalg.eigh(0.5 * (P + P.T))
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


class UkfPrediction(NamedTuple):
    y_pred: np.ndarray
    P_y: np.ndarray
    P_xy: np.ndarray


def ukf_predict(state: UkfState, dynamics: Callable, u, measurement: Callable) -> tuple[UkfState, UkfPrediction]:
    """Propagate sigma points through ``dynamics(x, u)`` and ``measurement(x)``.

    Measurement sigma points are redrawn from the predicted mean/covariance so the
    innovation statistics include the process covariance.
    """
    wm, wc = state.weights()
    chi = state.sigma_points()
    X = np.array([dynamics(c, u) for c in chi])
    if not np.all(np.isfinite(X)):
        raise NumericalError("UKF diverged: non-finite state propagation")
    x_pred = wm @ X
    dX = X - x_pred
    P_pred = (dX.T * wc) @ dX + state.Q
    P_pred = 0.5 * (P_pred + P_pred.T)

    chi2 = state.sigma_points(x_pred, P_pred)
    Y = np.array([measurement(c) for c in chi2])
    if not np.all(np.isfinite(Y)):
        raise NumericalError("UKF diverged: non-finite measurement propagation")
    y_pred = wm @ Y
    dY = Y - y_pred
    dX2 = chi2 - x_pred
    P_y = (dY.T * wc) @ dY + state.R
    P_xy = (dX2.T * wc) @ dY
    return replace(state, x=x_pred, P=P_pred), UkfPrediction(y_pred, P_y, P_xy)


def ukf_update(state: UkfState, prediction: UkfPrediction, y: np.ndarray) -> UkfState:
    y = np.asarray(y, dtype=float)
    try:
        gain = np.linalg.solve(prediction.P_y.T, prediction.P_xy.T).T
    except np.linalg.LinAlgError:
        raise NumericalError("UKF update failed: singular innovation covariance") from None
    if not np.all(np.isfinite(gain)):
        raise NumericalError("UKF update failed: non-finite gain")
    x = state.x + gain @ (y - prediction.y_pred)
    P = state.P - gain @ prediction.P_y @ gain.T
    return replace(state, x=x, P=0.5 * (P + P.T))
