"""
Benchmark data generators

Synthetic HOM/HET data: d independent N(0,1) features, deterministic treatment
rule on the first five, outcome built from ten fixed univariate functions with a
homogeneous (1) or heterogeneous (1 + 2 x_2 x_5) effect.

IHDP-B: user-supplied real covariates and treatments with simulated potential
outcomes Y0 ~ N(exp((x + w) beta), 1) and Y1 ~ N(x beta - omega, 1), omega chosen
so the realized average effect over the sample is exactly 4.

Random streams are keyed by (seed, feature) and (seed, purpose) so a feature
column never depends on how many other features were requested.
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from src.data_model import ColumnSchema, ObservationalDataset, dataset_from_frame
from src.errors import GeneratorError

logger = logging.getLogger(__name__)

HOM = "HOM"
HET = "HET"
IHDP_B = "IHDP-B"
SYNTHETIC_MODES = (HOM, HET)

SYNTHETIC_ATE = 1.0
IHDP_TARGET_CATE = 4.0
IHDP_OFFSET = 0.5
IHDP_BETA_VALUES = (0.0, 0.1, 0.2, 0.3, 0.4)
IHDP_BETA_PROBS = (0.6, 0.1, 0.1, 0.1, 0.1)
IHDP_TREATMENT_COLUMN = "treatment"

# stream purposes
_FEATURE_STREAM = 0
_NOISE_STREAM = 1
_BETA_STREAM = 2


@dataclass(frozen=True, eq=False)
class SimulatedInstance:
    data: ObservationalDataset
    true_ate: Optional[float]
    true_cate: float
    generator: str
    seed: int

    def truth(self, target: str) -> float:
        """Ground truth for an 'ATE' or 'CATE' target"""
        if target == "CATE":
            return self.true_cate
        if self.true_ate is None:
            raise GeneratorError(f"{self.generator} instances have no population ATE; target the CATE")
        return self.true_ate


def _stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose, index]))


_G_FUNCS = {
    1: lambda x: x - 0.5,
    2: lambda x: (x - 0.5) ** 2 + 2.0,
    3: lambda x: x ** 2 - 1.0 / 3.0,
    4: lambda x: -2.0 * np.sin(2.0 * x),
    5: lambda x: np.exp(-x) - np.exp(-1.0) - 1.0,
    6: lambda x: np.exp(-x),
    7: lambda x: x ** 2,
    8: lambda x: x,
    9: lambda x: (x > 0).astype(float),
    10: lambda x: np.cos(x),
}


def g_funcs(k: int, x):
    """The ten univariate building blocks g_1..g_10 (vectorized over x)"""
    if k not in _G_FUNCS:
        raise GeneratorError(f"g index must be in 1..10, got {k}")
    result = _G_FUNCS[k](np.asarray(x, dtype=float))
    return float(result) if np.ndim(result) == 0 else result


def treatment_rule(X: np.ndarray) -> np.ndarray:
    """R = 1{ sum_{k=1..5} g_k(x_k) > 0 }"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    score = sum(g_funcs(k, X[:, k - 1]) for k in range(1, 6))
    return (score > 0).astype(float)


def treatment_effect(X: np.ndarray, mode: str) -> np.ndarray:
    """tau(x) = 1 (HOM) or 1 + 2 x_2 x_5 (HET)"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if mode == HOM:
        return np.ones(X.shape[0])
    if mode == HET:
        return 1.0 + 2.0 * X[:, 1] * X[:, 4]
    raise GeneratorError(f"mode must be one of {SYNTHETIC_MODES}, got {mode!r}")


def outcome_surface(X: np.ndarray, R: np.ndarray, mode: str) -> np.ndarray:
    """Noise-free mean outcome sum_{k=1..5} g_{k+5}(x_k) + tau(x) r"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    base = sum(g_funcs(k + 5, X[:, k - 1]) for k in range(1, 6))
    return base + treatment_effect(X, mode) * np.asarray(R, dtype=float)


def gen_synthetic(n: int, d: int = 100, mode: str = HET, seed: int = 0,
                  noise_scale: float = 1.0) -> SimulatedInstance:
    """
    Generate a synthetic HOM or HET instance

    Args:
        n (int): number of units
        d (int): number of features, at least 5 (only the first five matter)
        mode (str): "HOM" or "HET"
        seed (int): master seed
        noise_scale (float): outcome noise standard deviation; 0 exposes the exact surface

    Returns:
        SimulatedInstance: data with true ATE 1 and realized CATE
    """
    if d < 5:
        raise GeneratorError(f"synthetic data needs d >= 5 features, got {d}")
    if n < 2:
        raise GeneratorError(f"need n >= 2 units, got {n}")
    if mode not in SYNTHETIC_MODES:
        raise GeneratorError(f"mode must be one of {SYNTHETIC_MODES}, got {mode!r}")

    X = np.column_stack([_stream(seed, _FEATURE_STREAM, k).standard_normal(n) for k in range(d)])
    R = treatment_rule(X)
    noise = _stream(seed, _NOISE_STREAM).standard_normal(n)
    Y = outcome_surface(X, R, mode) + noise_scale * noise
    tau = treatment_effect(X, mode)

    data = ObservationalDataset(X=X, R=R, Y=Y)
    return SimulatedInstance(data=data, true_ate=SYNTHETIC_ATE, true_cate=float(np.mean(tau)),
                             generator=mode, seed=int(seed))


def ihdp_surfaces(features: np.ndarray, beta: np.ndarray):
    """
    Noise-free potential outcome means for IHDP-B

    Returns:
        tuple: (mu0, mu1, omega) with mu1 - mu0 averaging exactly 4 over the sample
    """
    features = np.asarray(features, dtype=float)
    linear = features @ beta
    mu0 = np.exp((features + IHDP_OFFSET) @ beta)
    omega = float(np.mean(linear - mu0) - IHDP_TARGET_CATE)
    mu1 = linear - omega
    return mu0, mu1, omega


def gen_ihdp_outcomes(features: np.ndarray, R: np.ndarray, seed: int = 0,
                      noise_scale: float = 1.0) -> SimulatedInstance:
    """
    Simulate IHDP-B outcomes for fixed covariates and treatments

    beta is redrawn for every call (every seed) from {0,.1,.2,.3,.4} with
    probabilities (.6,.1,.1,.1,.1); no intercept term is used.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.size == 0:
        raise GeneratorError("IHDP features must be a non-empty n x d matrix")
    R = np.asarray(R, dtype=float).ravel()
    if R.size != features.shape[0]:
        raise GeneratorError(f"{features.shape[0]} feature rows but {R.size} treatment values")

    beta = _stream(seed, _BETA_STREAM).choice(IHDP_BETA_VALUES, size=features.shape[1], p=IHDP_BETA_PROBS)
    mu0, mu1, omega = ihdp_surfaces(features, beta)
    noise = _stream(seed, _NOISE_STREAM).standard_normal(features.shape[0])
    Y = np.where(R == 1.0, mu1, mu0) + noise_scale * noise
    logger.debug("IHDP-B seed %d: omega=%.4f, %d nonzero coefficients",
                 seed, omega, int(np.count_nonzero(beta)))

    data = ObservationalDataset(X=features, R=R, Y=Y)
    return SimulatedInstance(data=data, true_ate=None, true_cate=IHDP_TARGET_CATE,
                             generator=IHDP_B, seed=int(seed))


def load_ihdp_covariates(path: str):
    """
    Read the IHDP covariate file: a `treatment` column plus numeric feature columns

    Returns:
        tuple: (features, R, feature_names)
    """
    if not os.path.isfile(path):
        raise GeneratorError(f"IHDP covariate file not found: {path}")
    frame = pd.read_csv(path, encoding="utf-8")
    if IHDP_TREATMENT_COLUMN not in frame.columns:
        raise GeneratorError(f"IHDP covariate file must have a '{IHDP_TREATMENT_COLUMN}' column")

    # validated like any dataset, with a placeholder outcome
    frame = frame.assign(_outcome=0.0)
    schema = ColumnSchema(treatment=IHDP_TREATMENT_COLUMN, outcome="_outcome")
    data = dataset_from_frame(frame, schema, source=path)
    return np.array(data.X), np.array(data.R), data.feature_names
