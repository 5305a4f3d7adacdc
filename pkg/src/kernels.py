"""
Covariance kernels for the debiased GP prior

The base kernel is a squared exponential with one length scale per input
dimension; the treatment indicator is the last input. The corrected kernel adds
the rank-one term nu^2 w(z) w(z') where w is the Riesz weight attached to a
(factual or counterfactual) input row.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from src.errors import FactorizationError

logger = logging.getLogger(__name__)

JITTER_START = 1e-8
JITTER_MAX = 1e-4


@dataclass(frozen=True, eq=False)
class GPHyperParams:
    length_scales: np.ndarray
    signal_var: float
    noise_var: float
    nu: float = 0.0

    def __post_init__(self):
        length_scales = np.array(self.length_scales, dtype=float).ravel()
        if length_scales.size < 1 or np.any(~np.isfinite(length_scales)) or np.any(length_scales <= 0):
            raise ValueError(f"length scales must be positive and finite, got {length_scales}")
        if not np.isfinite(self.signal_var) or self.signal_var <= 0:
            raise ValueError(f"signal variance must be positive, got {self.signal_var}")
        if not np.isfinite(self.noise_var) or self.noise_var <= 0:
            raise ValueError(f"noise variance must be positive, got {self.noise_var}")
        if not np.isfinite(self.nu) or self.nu < 0:
            raise ValueError(f"nu must be nonnegative, got {self.nu}")
        length_scales.setflags(write=False)
        object.__setattr__(self, "length_scales", length_scales)
        object.__setattr__(self, "signal_var", float(self.signal_var))
        object.__setattr__(self, "noise_var", float(self.noise_var))
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def input_dim(self) -> int:
        return self.length_scales.size

    def to_log_vector(self) -> np.ndarray:
        """(log l_1..log l_{d+1}, log rho^2, log sigma^2); nu is not included"""
        return np.concatenate([np.log(self.length_scales), [np.log(self.signal_var), np.log(self.noise_var)]])

    @classmethod
    def from_log_vector(cls, theta: np.ndarray, nu: float = 0.0) -> "GPHyperParams":
        theta = np.asarray(theta, dtype=float)
        return cls(length_scales=np.exp(theta[:-2]), signal_var=float(np.exp(theta[-2])),
                   noise_var=float(np.exp(theta[-1])), nu=nu)

    def with_nu(self, nu: float) -> "GPHyperParams":
        return replace(self, nu=float(nu))

    def describe(self) -> dict:
        return {
            "length_scales": [float(v) for v in self.length_scales],
            "signal_var": self.signal_var,
            "noise_var": self.noise_var,
            "nu": self.nu,
        }


def se_ard(params: GPHyperParams, z: np.ndarray, z2: np.ndarray) -> float:
    """rho^2 exp(-1/2 sum_i (z_i - z2_i)^2 / l_i^2)"""
    diff = (np.asarray(z, dtype=float) - np.asarray(z2, dtype=float)) / params.length_scales
    return float(params.signal_var * np.exp(-0.5 * diff @ diff))


def se_ard_gram(params: GPHyperParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != params.input_dim or B.shape[1] != params.input_dim:
        raise ValueError(
            f"inputs have {A.shape[1]} and {B.shape[1]} columns, kernel expects {params.input_dim}"
        )
    sq = cdist(A / params.length_scales, B / params.length_scales, metric="sqeuclidean")
    return params.signal_var * np.exp(-0.5 * sq)


def corrected_gram(
    params: GPHyperParams,
    A: np.ndarray,
    B: np.ndarray,
    wA: np.ndarray = None,
    wB: np.ndarray = None,
) -> np.ndarray:
    """
    Propensity-corrected Gram matrix K(A, B) + nu^2 wA wB^T

    Args:
        params (GPHyperParams): kernel hyperparameters, including nu
        A (np.ndarray): m x (d+1) inputs
        B (np.ndarray): k x (d+1) inputs
        wA (np.ndarray): Riesz weights of the rows of A (may be None when nu == 0)
        wB (np.ndarray): Riesz weights of the rows of B (may be None when nu == 0)

    Returns:
        np.ndarray: m x k matrix
    """
    K = se_ard_gram(params, A, B)
    if params.nu == 0.0 and (wA is None or wB is None):
        return K
    if wA is None or wB is None:
        raise ValueError("Riesz weights are required when nu > 0")
    wA = np.asarray(wA, dtype=float).ravel()
    wB = np.asarray(wB, dtype=float).ravel()
    if wA.size != K.shape[0] or wB.size != K.shape[1]:
        raise ValueError(
            f"weight lengths ({wA.size}, {wB.size}) do not match Gram shape {K.shape}"
        )
    return K + params.nu ** 2 * np.outer(wA, wB)


def calibrate_nu(signal_var: float, n: int, M_n: float) -> float:
    """nu_n = 0.2 rho_m / (sqrt(n) M_n)"""
    if signal_var <= 0 or n <= 0 or M_n <= 0:
        raise ValueError(f"calibrate_nu needs positive inputs, got ({signal_var}, {n}, {M_n})")
    return 0.2 * np.sqrt(signal_var) / (np.sqrt(n) * M_n)


def jittered_cholesky(K: np.ndarray, params: GPHyperParams = None, module: str = "kernels"):
    """
    Lower Cholesky factor of a square matrix, adding diagonal jitter on failure

    The plain factorization is tried first. On failure a jitter of
    1e-8 * mean(diagonal) is added and doubled until it exceeds 1e-4 * mean(diagonal).

    Returns:
        tuple: (cho_factor result usable with scipy.linalg.cho_solve, jitter added)
    """
    K = np.asarray(K, dtype=float)
    try:
        return linalg.cho_factor(K, lower=True, check_finite=True), 0.0
    except (linalg.LinAlgError, ValueError):
        pass

    scale = float(np.mean(np.diag(K)))
    if not np.isfinite(scale) or scale <= 0:
        raise FactorizationError("matrix has a non-positive or non-finite diagonal",
                                 params=params, module=module)
    eye = np.eye(K.shape[0])
    factor = JITTER_START
    while factor <= JITTER_MAX:
        jitter = factor * scale
        try:
            chol = linalg.cho_factor(K + jitter * eye, lower=True, check_finite=False)
            logger.debug("Cholesky succeeded with jitter %.3e", jitter)
            return chol, jitter
        except linalg.LinAlgError:
            factor *= 2.0

    described = params.describe() if params is not None else None
    raise FactorizationError(
        f"Cholesky factorization failed with jitter up to {JITTER_MAX:g} x mean diagonal; "
        f"hyperparameters: {described}",
        params=params, module=module,
    )
