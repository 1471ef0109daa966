"""Exact Gaussian process regression with an RBF kernel.

One independent GP is kept per task. Rewards are z-scored per task before
fitting, so the prior mean and the hyperparameter bounds below are in
standardized units; predictions come back in reward units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

NOISE_FLOOR = 1e-6
LOG_2PI = math.log(2.0 * math.pi)

# log-space box for the fitted hyperparameters
LENGTHSCALE_RANGE = (1e-2, 10.0)  # multiples of the action-box width
SIGNAL_VARIANCE_RANGE = (1e-3, 1e3)
NOISE_VARIANCE_RANGE = (NOISE_FLOOR, 1.0)


class NumericalError(ArithmeticError):
    """Cholesky factorization failed even after jitter escalation."""


@dataclass(frozen=True)
class GpHyperparams:
    lengthscales: tuple[float, ...]
    signal_variance: float = 1.0
    noise_variance: float = 1e-4
    mean_constant: float = 0.0

    def __post_init__(self):
        if any(ls <= 0 for ls in self.lengthscales):
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_dict(self) -> dict:
        return {
            "lengthscales": list(self.lengthscales),
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
            "mean_constant": self.mean_constant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpHyperparams":
        return cls(
            lengthscales=tuple(float(v) for v in d["lengthscales"]),
            signal_variance=float(d.get("signal_variance", 1.0)),
            noise_variance=float(d.get("noise_variance", 1e-4)),
            mean_constant=float(d.get("mean_constant", 0.0)),
        )


def default_hyperparams(lower: Sequence[float], upper: Sequence[float]) -> GpHyperparams:
    span = np.asarray(upper, float) - np.asarray(lower, float)
    return GpHyperparams(tuple(float(v) for v in 0.25 * span), 1.0, 1e-4, 0.0)


def _as_matrix(points, dim: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, dim if dim else 1) if arr.size else arr.reshape(0, dim or 1)
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"expected {dim}-dimensional actions, got {arr.shape[1]}")
    return arr


def rbf_kernel(a: Sequence[float], b: Sequence[float], hp: GpHyperparams) -> float:
    if len(a) != hp.dim or len(b) != hp.dim:
        raise ValueError(
            f"dimension mismatch: {len(a)}, {len(b)} vs {hp.dim} lengthscales")
    z = (np.asarray(a, float) - np.asarray(b, float)) / np.asarray(hp.lengthscales)
    return float(hp.signal_variance * math.exp(-0.5 * float(z @ z)))


def gram(A, B, hp: GpHyperparams) -> np.ndarray:
    """Cross-covariance matrix k(A_i, B_j)."""
    ls = np.asarray(hp.lengthscales)
    A = _as_matrix(A, hp.dim) / ls
    B = _as_matrix(B, hp.dim) / ls
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return hp.signal_variance * np.exp(-0.5 * sq)


def jittered_cholesky(K: np.ndarray, scale: float, start: float = 1e-8,
                      stop: float = 1e-2) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, adding diagonal jitter on failure.

    Tries the bare matrix first, then jitter ``start*scale`` growing tenfold
    up to ``stop*scale``.
    """
    n = K.shape[0]
    jitter = 0.0
    while True:
        try:
            L = cholesky(K + jitter * np.eye(n), lower=True, check_finite=True)
            return L, jitter
        except (np.linalg.LinAlgError, ValueError):
            pass
        jitter = start * scale if jitter == 0.0 else jitter * 10.0
        if jitter > stop * scale * (1 + 1e-9):
            raise NumericalError(f"matrix of size {n} not positive definite "
                                 f"with jitter up to {stop * scale:g}")


def log_marginal_likelihood(hp: GpHyperparams, actions, rewards) -> float:
    y = np.asarray(rewards, dtype=float) - hp.mean_constant
    n = y.size
    if n == 0:
        return 0.0
    X = _as_matrix(actions, hp.dim)
    if X.shape[0] != n:
        raise ValueError("actions and rewards differ in length")
    K = gram(X, X, hp) + hp.noise_variance * np.eye(n)
    L, _ = jittered_cholesky(K, hp.signal_variance)
    alpha = cho_solve((L, True), y)
    return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI)


def _lml_and_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray):
    """LML and its gradient w.r.t. (log lengthscales, log sv, log noise)."""
    d = X.shape[1]
    ls = np.exp(theta[:d])
    sv = math.exp(theta[d])
    noise = math.exp(theta[d + 1])
    n = y.size
    Z = X / ls
    diff2 = (Z[:, None, :] - Z[None, :, :]) ** 2  # n x n x d, already / ls^2
    Kf = sv * np.exp(-0.5 * diff2.sum(-1))
    K = Kf + noise * np.eye(n)
    L, _ = jittered_cholesky(K, sv)
    alpha = cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = np.empty(d + 2)
    for j in range(d):
        grad[j] = 0.5 * np.sum(W * Kf * diff2[:, :, j])
    grad[d] = 0.5 * np.sum(W * Kf)
    grad[d + 1] = 0.5 * noise * np.trace(W)
    return float(lml), grad


@dataclass(frozen=True)
class FitConfig:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n_starts: int = 5
    seed: int = 0
    max_iter: int = 200


def _theta_bounds(cfg: FitConfig) -> list[tuple[float, float]]:
    span = np.asarray(cfg.upper, float) - np.asarray(cfg.lower, float)
    b = [(math.log(LENGTHSCALE_RANGE[0] * s), math.log(LENGTHSCALE_RANGE[1] * s)) for s in span]
    b.append(tuple(map(math.log, SIGNAL_VARIANCE_RANGE)))
    b.append(tuple(map(math.log, NOISE_VARIANCE_RANGE)))
    return b


def _theta_of(hp: GpHyperparams) -> np.ndarray:
    return np.log([*hp.lengthscales, hp.signal_variance, max(hp.noise_variance, NOISE_FLOOR)])


def _hp_of(theta: np.ndarray, d: int, mean_constant: float = 0.0) -> GpHyperparams:
    vals = np.exp(theta)
    return GpHyperparams(tuple(float(v) for v in vals[:d]), float(vals[d]),
                         max(float(vals[d + 1]), NOISE_FLOOR), mean_constant)


def fit_hyperparameters(actions, rewards, config: FitConfig) -> GpHyperparams:
    """Multi-start L-BFGS-B maximization of the log marginal likelihood.

    ``rewards`` are taken as already standardized (zero prior mean). The
    first start is the default hyperparameters; the others are log-uniform
    in the bounds. With fewer than two points the defaults are returned.
    """
    defaults = default_hyperparams(config.lower, config.upper)
    y = np.asarray(rewards, dtype=float)
    if y.size < 2:
        return defaults
    d = len(config.lower)
    X = _as_matrix(actions, d)
    bounds = _theta_bounds(config)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(config.seed)
    starts = [np.clip(_theta_of(defaults), lo, hi)]
    starts += [rng.uniform(lo, hi) for _ in range(max(config.n_starts, 1) - 1)]

    def objective(theta):
        try:
            lml, g = _lml_and_grad(theta, X, y)
        except NumericalError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(theta)
        return -lml, -g

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        val0, _ = objective(theta0)
        if val0 < best_val:
            best_theta, best_val = theta0, val0
        try:
            res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                           bounds=bounds, options={"maxiter": config.max_iter})
        except (ValueError, FloatingPointError) as exc:
            logger.debug("hyperparameter start failed: %s", exc)
            continue
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = np.clip(res.x, lo, hi), float(res.fun)
    if best_theta is None or best_val >= 1e25:
        return defaults
    return _hp_of(best_theta, d)


def standardization(rewards) -> tuple[float, float]:
    y = np.asarray(rewards, dtype=float)
    if y.size == 0:
        return 0.0, 1.0
    shift = float(y.mean())
    scale = float(y.std())
    if not scale > 1e-12 * max(1.0, abs(shift)):
        scale = 1.0
    return shift, scale


@dataclass(frozen=True)
class PosteriorSlice:
    candidates: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance)


@dataclass(frozen=True, eq=False)
class GpModel:
    """Conditioned GP for one task. Immutable; build a new one to refit."""

    hyperparams: GpHyperparams
    train_actions: np.ndarray
    train_rewards: np.ndarray  # standardized
    shift: float = 0.0
    scale: float = 1.0
    _chol: Optional[np.ndarray] = field(default=None, repr=False)
    _alpha: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def build(cls, hp: GpHyperparams, actions=(), rewards=(),
              standardize: bool = True, shift_scale: Optional[tuple[float, float]] = None):
        X = np.array(_as_matrix(actions, hp.dim)) if len(actions) else np.zeros((0, hp.dim))
        y_raw = np.array(rewards, dtype=float)
        if X.shape[0] != y_raw.size:
            raise ValueError("actions and rewards differ in length")
        if shift_scale is not None:
            shift, scale = shift_scale
        elif standardize:
            shift, scale = standardization(y_raw)
        else:
            shift, scale = 0.0, 1.0
        y = (y_raw - shift) / scale
        chol = alpha = None
        if y.size:
            K = gram(X, X, hp) + hp.noise_variance * np.eye(y.size)
            chol, _ = jittered_cholesky(K, hp.signal_variance)
            alpha = cho_solve((chol, True), y - hp.mean_constant)
        X.setflags(write=False)
        y.setflags(write=False)
        return cls(hp, X, y, shift, scale, chol, alpha)

    @property
    def n_train(self) -> int:
        return self.train_rewards.size

    @property
    def factorization(self) -> Optional[np.ndarray]:
        return self._chol


def fit_model(actions, rewards, config: FitConfig, standardize: bool = True) -> GpModel:
    """Standardize a task's rewards, fit hyperparameters, and condition."""
    shift, scale = standardization(rewards) if standardize else (0.0, 1.0)
    y = (np.asarray(rewards, dtype=float) - shift) / scale
    hp = fit_hyperparameters(actions, y, config)
    return GpModel.build(hp, actions, rewards, shift_scale=(shift, scale))


def posterior(model: GpModel, candidates) -> PosteriorSlice:
    hp = model.hyperparams
    C = _as_matrix(candidates, hp.dim)
    if C.shape[0] == 0:
        raise ValueError("candidates must be non-empty")
    Kcc = gram(C, C, hp)
    if model.n_train == 0:
        mean = np.full(C.shape[0], hp.mean_constant)
        cov = Kcc
    else:
        Kxc = gram(model.train_actions, C, hp)
        mean = hp.mean_constant + Kxc.T @ model._alpha
        V = solve_triangular(model._chol, Kxc, lower=True)
        cov = Kcc - V.T @ V
    cov = 0.5 * (cov + cov.T)
    diag = np.einsum("ii->i", cov)
    np.maximum(diag, 0.0, out=diag)
    return PosteriorSlice(C, model.shift + model.scale * mean, model.scale ** 2 * cov)


def sample_posterior(model: GpModel, candidates, rng: np.random.Generator,
                     slice_: Optional[PosteriorSlice] = None) -> np.ndarray:
    """One joint posterior draw over ``candidates``."""
    post = slice_ if slice_ is not None else posterior(model, candidates)
    scale = model.hyperparams.signal_variance * model.scale ** 2
    L, _ = jittered_cholesky(post.covariance, scale, start=1e-10)
    z = rng.standard_normal(post.mean.size)
    return post.mean + L @ z
