"""
Gaussian process engine: marginal likelihood, hyperparameter fitting and the
exact posterior of the regression function at factual and counterfactual inputs

Hyperparameters are fitted in log-space by maximizing the log marginal likelihood
with analytic gradients (L-BFGS-B, several restarts). The prior mean is the
constant mean(Y); the GP models the centred outcomes. The posterior uses the
propensity-corrected kernel; all inverses go through Cholesky solves.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

from src import config
from src.errors import FactorizationError, HyperparameterOptimizationError
from src.kernels import GPHyperParams, corrected_gram, jittered_cholesky, se_ard_gram
from src.propensity import RieszWeights

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)

# Covariance repair before sampling, relative to trace / (2n)
SIGMA_JITTER_START = 1e-10
SIGMA_JITTER_MAX = 1e-6


@dataclass(frozen=True, eq=False)
class PosteriorMoments:
    """Posterior mean and covariance of m at Z_star (factual rows first)"""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).ravel()
        sigma = np.array(self.sigma, dtype=float)
        if mu.size % 2 != 0:
            raise ValueError(f"posterior mean must have even length 2n, got {mu.size}")
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"covariance shape {sigma.shape} does not match mean length {mu.size}")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.mu.size // 2

    def factor(self) -> np.ndarray:
        """
        Square-root factor L with L L^T = sigma, used to draw m = mu + L W

        Tries Cholesky, then escalating diagonal jitter, then a clipped
        eigendecomposition for exactly singular covariances (e.g. sigma = 0).
        """
        sigma = 0.5 * (self.sigma + self.sigma.T)
        try:
            return linalg.cholesky(sigma, lower=True)
        except linalg.LinAlgError:
            pass

        scale = float(np.trace(sigma)) / sigma.shape[0]
        eye = np.eye(sigma.shape[0])
        if scale > 0:
            factor = SIGMA_JITTER_START
            while factor <= SIGMA_JITTER_MAX:
                try:
                    L = linalg.cholesky(sigma + factor * scale * eye, lower=True)
                    logger.debug("Posterior covariance repaired with jitter %.3e", factor * scale)
                    return L
                except linalg.LinAlgError:
                    factor *= 10.0

        values, vectors = linalg.eigh(sigma)
        if values.size and values.min() < -SIGMA_JITTER_MAX * abs(scale):
            logger.warning("Posterior covariance has eigenvalue %.3e; clipping to zero", values.min())
        return vectors * np.sqrt(np.clip(values, 0.0, None))


@dataclass(frozen=True, eq=False)
class FitReport:
    params: GPHyperParams
    log_ml: float
    iterations: int
    converged: bool
    restarts_used: int
    prior_mean: float = 0.0


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = field(default_factory=lambda: config.RESTARTS)
    max_iter: int = field(default_factory=lambda: config.OPT_MAX_ITER)
    seed: int = 0


def log_marginal_likelihood(params: GPHyperParams, Z: np.ndarray, Y: np.ndarray, w_f: np.ndarray = None):
    """
    Log marginal likelihood of Y under the GP prior and its gradient

    The gradient is taken with respect to (log l_1..log l_{d+1}, log rho^2,
    log sigma^2) through 1/2 tr((alpha alpha^T - K_y^-1) dK_y/dtheta).
    nu is held fixed; the correction enters K_y only when w_f is given.

    Returns:
        tuple: (value, grad) with grad of length d+3
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    n = Z.shape[0]
    if Y.size != n:
        raise ValueError(f"Z has {n} rows but Y has {Y.size} entries")

    K = se_ard_gram(params, Z, Z)
    Ky = K + params.noise_var * np.eye(n)
    if w_f is not None:
        w_f = np.asarray(w_f, dtype=float).ravel()
        Ky = Ky + params.nu ** 2 * np.outer(w_f, w_f)

    chol, _ = jittered_cholesky(Ky, params, module="gp_engine")
    alpha = linalg.cho_solve(chol, Y)
    log_det = 2.0 * np.sum(np.log(np.diag(chol[0])))
    value = -0.5 * Y @ alpha - 0.5 * log_det - 0.5 * n * LOG_2PI

    Q = np.outer(alpha, alpha) - linalg.cho_solve(chol, np.eye(n))
    QK = Q * K
    grad = np.empty(params.input_dim + 2)
    for i, ell in enumerate(params.length_scales):
        sq = np.subtract.outer(Z[:, i], Z[:, i]) ** 2
        grad[i] = 0.5 * np.sum(QK * sq) / ell ** 2
    grad[-2] = 0.5 * np.sum(QK)
    grad[-1] = 0.5 * params.noise_var * np.trace(Q)
    return float(value), grad


def initial_hyperparams(Z: np.ndarray, Y: np.ndarray) -> GPHyperParams:
    """
    Starting point of the marginal likelihood search

    l_i = sqrt(D) * std of input column i (treatment column: sqrt(D)) where D is
    the number of inputs, rho^2 = var(Y), sigma^2 = 0.1 var(Y). The sqrt(D)
    factor keeps the typical squared scaled distance near 1 whatever D is.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    scales = Z.std(axis=0)
    scales[-1] = 1.0
    scales[scales <= 0] = 1.0
    scales = scales * np.sqrt(Z.shape[1])
    y_var = _output_scale(Y)
    return GPHyperParams(length_scales=scales, signal_var=y_var, noise_var=0.1 * y_var)


def _output_scale(Y):
    y_var = float(np.var(Y))
    return y_var if y_var > 0 else 1.0


def _log_bounds(init: GPHyperParams, y_var: float):
    lengths = [(np.log(ell) + np.log(1e-2), np.log(ell) + np.log(1e3)) for ell in init.length_scales]
    signal = (np.log(y_var * 1e-6), np.log(y_var * 1e3))
    noise = (np.log(y_var * 1e-6), np.log(y_var * 1e1))
    return lengths + [signal, noise]


def optimize_hyperparams(Z: np.ndarray, Y: np.ndarray, opt_config: OptimizerConfig = None) -> FitReport:
    """
    Maximize the log marginal likelihood over log-hyperparameters

    The correction term is excluded (nu = 0) and the likelihood is that of the
    centred outcomes Y - mean(Y); the mean is returned as ``prior_mean``. The
    first run starts from initial_hyperparams; each further restart multiplies
    every hyperparameter by an independent log-uniform factor in [1/e, e]. The
    best run is returned.
    """
    opt_config = opt_config or OptimizerConfig()
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    if Z.shape[0] < 2:
        raise HyperparameterOptimizationError(f"need at least 2 observations, got {Z.shape[0]}")
    if Y.size != Z.shape[0]:
        raise ValueError(f"Z has {Z.shape[0]} rows but Y has {Y.size} entries")
    prior_mean = float(np.mean(Y))
    Y = Y - prior_mean

    init = initial_hyperparams(Z, Y)
    bounds = _log_bounds(init, _output_scale(Y))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    theta0 = init.to_log_vector()
    rng = np.random.default_rng(opt_config.seed)

    def negative_lml(theta):
        value, grad = log_marginal_likelihood(GPHyperParams.from_log_vector(theta), Z, Y)
        return -value, -grad

    best = None
    for restart in range(opt_config.restarts):
        start = theta0 if restart == 0 else theta0 + rng.uniform(-1.0, 1.0, size=theta0.size)
        start = np.clip(start, lo, hi)
        try:
            result = minimize(negative_lml, start, jac=True, method="L-BFGS-B", bounds=bounds,
                              options={"maxiter": opt_config.max_iter})
        except (FactorizationError, ValueError) as e:
            logger.warning("Hyperparameter restart %d failed: %s", restart, e)
            continue
        if not np.isfinite(result.fun):
            logger.warning("Hyperparameter restart %d ended at a non-finite objective", restart)
            continue
        logger.debug("Restart %d: log ML %.4f after %d iterations (%s)",
                     restart, -result.fun, result.nit, result.message)
        if best is None or result.fun < best.fun:
            best = result

    if best is None:
        raise HyperparameterOptimizationError(
            f"all {opt_config.restarts} restarts failed to produce a finite marginal likelihood"
        )

    return FitReport(
        params=GPHyperParams.from_log_vector(best.x),
        log_ml=float(-best.fun),
        iterations=int(best.nit),
        converged=bool(best.success),
        restarts_used=opt_config.restarts,
        prior_mean=prior_mean,
    )


def posterior_moments(
    params: GPHyperParams,
    Z: np.ndarray,
    Z_star: np.ndarray,
    Y: np.ndarray,
    weights: RieszWeights = None,
    prior_mean: float = 0.0,
) -> PosteriorMoments:
    """
    Posterior mean and covariance of m at Z_star under the corrected kernel

        Kbar  = K(Z_star, Z) + nu^2 (w_f, w_c) w_f^T
        mu    = b + Kbar [K(Z, Z) + nu^2 w_f w_f^T + sigma^2 I]^-1 (Y - b)
        Sigma = K(Z_star, Z_star) + nu^2 (w_f, w_c)(w_f, w_c)^T - Kbar [...]^-1 Kbar^T

    with b the constant prior mean.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Z_star = np.atleast_2d(np.asarray(Z_star, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    n = Z.shape[0]
    if Z_star.shape[0] != 2 * n:
        raise ValueError(f"Z_star must have 2n = {2 * n} rows, got {Z_star.shape[0]}")
    if weights is None and params.nu > 0:
        raise ValueError("Riesz weights are required when nu > 0")

    w_f = weights.w_f if weights is not None else None
    w_star = weights.stacked if weights is not None else None

    Ky = corrected_gram(params, Z, Z, w_f, w_f) + params.noise_var * np.eye(n)
    Kbar = corrected_gram(params, Z_star, Z, w_star, w_f)
    Kss = corrected_gram(params, Z_star, Z_star, w_star, w_star)

    chol, _ = jittered_cholesky(Ky, params, module="gp_engine")
    mu = prior_mean + Kbar @ linalg.cho_solve(chol, Y - prior_mean)
    V = linalg.solve_triangular(chol[0], Kbar.T, lower=True)
    sigma = Kss - V.T @ V
    sigma = 0.5 * (sigma + sigma.T)
    return PosteriorMoments(mu=mu, sigma=sigma)
