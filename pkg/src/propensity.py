"""
Propensity score estimation and Riesz weights

The propensity score pi(x) = P(R=1 | X=x) is estimated by ridge-penalized
logistic regression (scikit-learn, Newton-Cholesky solver), then truncated to
[lower, upper]. The truncated scores give the factual and counterfactual weights
that enter the corrected GP covariance.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning
from scipy.special import expit
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from src import config
from src.data_model import ObservationalDataset
from src.errors import PropensityFitError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PropensityModel:
    """Fitted logistic model. beta[0] is the intercept, beta[1:] the slopes."""

    beta: np.ndarray
    lower: float = 0.1
    upper: float = 0.9
    ridge: float = 0.0
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).ravel()
        if beta.size < 1 or not np.all(np.isfinite(beta)):
            raise PropensityFitError(f"coefficients must be finite, got {beta}")
        if not 0.0 < self.lower < 0.5 or not 0.5 < self.upper < 1.0:
            raise PropensityFitError(
                f"truncation bounds must satisfy 0 < lower < 0.5 < upper < 1, "
                f"got [{self.lower}, {self.upper}]"
            )
        if self.ridge < 0:
            raise PropensityFitError(f"ridge must be nonnegative, got {self.ridge}")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def d(self) -> int:
        return self.beta.size - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Truncated propensity scores for every row of X"""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.d:
            raise PropensityFitError(f"model has {self.d} features, input has {X.shape[1]}")
        raw = expit(self.beta[0] + X @ self.beta[1:])
        return np.clip(raw, self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class RieszWeights:
    w_f: np.ndarray
    w_c: np.ndarray
    M_n: float

    @property
    def stacked(self) -> np.ndarray:
        """Weights attached to the rows of Z_star: (w_f, w_c)"""
        return np.concatenate([self.w_f, self.w_c])


def _standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    varying = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    return mean, scale, varying


def penalized_objective(beta: np.ndarray, X: np.ndarray, R: np.ndarray, ridge: float) -> float:
    """
    Objective minimized by fit_logistic, in original coordinates

    Mean negative log-likelihood plus ridge/2 times the squared norm of the
    slopes measured in standardized units (beta_j times the column's standard
    deviation). Constant columns carry no penalty.
    """
    X = np.asarray(X, dtype=float)
    R = np.asarray(R, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float).ravel()
    eta = beta[0] + X @ beta[1:]
    nll = np.mean(np.logaddexp(0.0, eta) - R * eta)
    _, scale, varying = _standardize(X)
    gamma = beta[1:][varying] * scale[varying]
    return float(nll + 0.5 * ridge * gamma @ gamma)


def fit_logistic(
    X: np.ndarray,
    R: np.ndarray,
    ridge: float = None,
    max_iter: int = None,
    tol: float = None,
    lower: float = None,
    upper: float = None,
) -> PropensityModel:
    """
    Fit a ridge-penalized logistic regression of R on X by Newton steps

    Uses scikit-learn's Newton-Cholesky solver with C = 1 / (n * ridge), which
    minimizes exactly penalized_objective. Features are standardized internally
    and the standardization is folded back into the returned coefficients.
    Constant columns get a slope of zero.

    Args:
        X (np.ndarray): n x d feature matrix
        R (np.ndarray): binary treatment vector
        ridge (float): L2 penalty on standardized slopes (per-observation scale)
        max_iter (int): Newton iteration cap
        tol (float): sup-norm tolerance on the penalized gradient
        lower (float): truncation floor used by predictions
        upper (float): truncation ceiling used by predictions

    Returns:
        PropensityModel: fitted model; ``converged`` is False when max_iter was hit
    """
    ridge = config.PS_RIDGE if ridge is None else float(ridge)
    max_iter = config.PS_MAX_ITER if max_iter is None else int(max_iter)
    tol = config.PS_TOL if tol is None else float(tol)
    lower = config.TRUNC_LO if lower is None else float(lower)
    upper = config.TRUNC_HI if upper is None else float(upper)

    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    R = np.asarray(R, dtype=float).ravel()
    n, d = X.shape
    if R.shape[0] != n:
        raise PropensityFitError(f"X has {n} rows but R has {R.shape[0]} entries")
    if ridge < 0:
        raise PropensityFitError(f"ridge must be nonnegative, got {ridge}")
    if R.min() == R.max():
        raise PropensityFitError("both treatment labels must be present to fit a propensity model")

    mean, scale, varying = _standardize(X)
    beta = np.zeros(d + 1)
    if not np.any(varying):
        share = float(R.mean())
        beta[0] = np.log(share / (1.0 - share))
        return PropensityModel(beta=beta, lower=lower, upper=upper, ridge=ridge, converged=True, iterations=0)

    Xs = (X[:, varying] - mean[varying]) / scale[varying]
    C = 1.0 / (n * ridge) if ridge > 0 else np.inf
    solver = LogisticRegression(C=C, solver="newton-cholesky", tol=tol, max_iter=max_iter)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        solver.fit(Xs, R)

    singular = [w for w in caught if issubclass(w.category, LinAlgWarning)]
    if singular:
        if ridge == 0.0:
            raise PropensityFitError(
                "singular Hessian in logistic regression (data may be separable "
                "or collinear); raise the ridge penalty"
            )
        logger.debug("Newton solver fell back to lbfgs: %s", singular[0].message)

    theta = np.concatenate([solver.intercept_, solver.coef_.ravel()])
    iterations = int(np.max(solver.n_iter_))
    A = np.column_stack([np.ones(n), Xs])
    penalty = np.full(A.shape[1], ridge)
    penalty[0] = 0.0
    grad = A.T @ (expit(A @ theta) - R) / n + penalty * theta
    stalled = any(issubclass(w.category, ConvergenceWarning) for w in caught)
    converged = bool(np.max(np.abs(grad)) <= tol or (not stalled and iterations < max_iter))
    if not converged:
        logger.warning("Logistic regression stopped after %d iterations without reaching tol=%g",
                       iterations, tol)

    beta[1:][varying] = theta[1:] / scale[varying]
    beta[0] = theta[0] - np.sum(theta[1:] * mean[varying] / scale[varying])
    if not np.all(np.isfinite(beta)):
        raise PropensityFitError("logistic regression produced non-finite coefficients")

    return PropensityModel(beta=beta, lower=lower, upper=upper, ridge=ridge,
                           converged=converged, iterations=iterations)


def fit_propensity(data: ObservationalDataset, **kwargs) -> PropensityModel:
    """Fit the propensity model of a dataset, see fit_logistic"""
    return fit_logistic(data.X, data.R, **kwargs)


def predict_ps(model: PropensityModel, x: np.ndarray) -> float:
    """Truncated propensity score at a single feature vector"""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise PropensityFitError(f"expected a feature vector, got shape {x.shape}")
    return float(model.predict(x.reshape(1, -1))[0])


def riesz_weights(R: np.ndarray, ps: np.ndarray) -> RieszWeights:
    """
    Factual and counterfactual Riesz weights from truncated propensity scores

    w_f[i] = R_i/pi_i - (1-R_i)/(1-pi_i), w_c[i] = (1-R_i)/pi_i - R_i/(1-pi_i)
    and M_n is the mean absolute factual weight.
    """
    R = np.asarray(R, dtype=float).ravel()
    ps = np.asarray(ps, dtype=float).ravel()
    if R.shape != ps.shape:
        raise PropensityFitError(f"R has {R.size} entries but ps has {ps.size}")
    if np.any(~np.isfinite(ps)) or np.any(ps <= 0.0) or np.any(ps >= 1.0):
        raise PropensityFitError("propensity scores must lie strictly inside (0, 1); truncate upstream")

    w_f = R / ps - (1.0 - R) / (1.0 - ps)
    w_c = (1.0 - R) / ps - R / (1.0 - ps)
    M_n = float(np.mean(R / ps + (1.0 - R) / (1.0 - ps)))
    w_f.setflags(write=False)
    w_c.setflags(write=False)
    return RieszWeights(w_f=w_f, w_c=w_c, M_n=M_n)
