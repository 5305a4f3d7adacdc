"""
Observational datasets and the stacked factual/counterfactual design

A dataset holds features X (n x d), a binary treatment vector R and outcomes Y.
The stacked design appends the treatment indicator to the features, once with the
observed treatment and once with it flipped.
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.errors import DataValidationError

logger = logging.getLogger(__name__)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ObservationalDataset:
    X: np.ndarray
    R: np.ndarray
    Y: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        R = np.asarray(self.R, dtype=float).ravel()
        Y = np.asarray(self.Y, dtype=float).ravel()

        if X.ndim != 2:
            raise DataValidationError(f"X must be a matrix, got {X.ndim} dimensions")
        n, d = X.shape
        if n < 2:
            raise DataValidationError(f"need at least 2 units, got {n}")
        if d < 1:
            raise DataValidationError("need at least one feature column")
        if R.shape[0] != n or Y.shape[0] != n:
            raise DataValidationError(
                f"length mismatch: X has {n} rows, R has {R.shape[0]}, Y has {Y.shape[0]}"
            )
        if not np.all(np.isfinite(X)):
            row, col = np.argwhere(~np.isfinite(X))[0]
            raise DataValidationError(f"non-finite feature at row {row}, column {col}")
        if not np.all(np.isfinite(Y)):
            row = int(np.flatnonzero(~np.isfinite(Y))[0])
            raise DataValidationError(f"non-finite outcome at row {row}")
        bad = np.flatnonzero((R != 0.0) & (R != 1.0))
        if bad.size:
            raise DataValidationError(
                f"treatment must be 0 or 1, got {R[bad[0]]} at row {int(bad[0])}"
            )
        if R.sum() == n:
            raise DataValidationError("no control units")
        if R.sum() == 0:
            raise DataValidationError("no treated units")

        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(d))
        if len(names) != d:
            raise DataValidationError(f"{len(names)} feature names for {d} feature columns")

        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def treated_fraction(self) -> float:
        return float(self.R.mean())


@dataclass(frozen=True, eq=False)
class StackedDesign:
    """Z = [X | R] (n rows) and Z_star = [X | R ; X | 1-R] (2n rows)"""

    Z: np.ndarray
    Z_star: np.ndarray

    @property
    def n(self) -> int:
        return self.Z.shape[0]


@dataclass(frozen=True)
class ColumnSchema:
    """Which CSV columns hold the treatment, the outcome and the features.

    When ``features`` is None every column other than treatment and outcome is a
    feature, in file order.
    """

    treatment: str = "r"
    outcome: str = "y"
    features: Optional[Sequence[str]] = None


def stack_arrays(X: np.ndarray, R: np.ndarray) -> StackedDesign:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    R = np.asarray(R, dtype=float).ravel()
    if R.shape[0] != X.shape[0]:
        raise DataValidationError(f"X has {X.shape[0]} rows but R has {R.shape[0]} entries")

    Z = np.column_stack([X, R])
    Z_star = np.vstack([Z, np.column_stack([X, 1.0 - R])])
    return StackedDesign(Z=_frozen(Z), Z_star=_frozen(Z_star))


def stack_design(data: ObservationalDataset) -> StackedDesign:
    """Build the factual and stacked factual/counterfactual inputs for the GP"""
    return stack_arrays(data.X, data.R)


def load_dataset(path: str, schema: ColumnSchema = ColumnSchema()) -> ObservationalDataset:
    """
    Load and validate an observational dataset from a CSV file with a header row

    Args:
        path (str): CSV file path
        schema (ColumnSchema): treatment, outcome and (optional) feature columns

    Returns:
        ObservationalDataset: validated dataset, feature column order preserved
    """
    if not os.path.isfile(path):
        raise DataValidationError(f"dataset file not found: {path}")

    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataValidationError(f"could not parse {path}: {e}")

    return dataset_from_frame(frame, schema, source=path)


def dataset_from_frame(frame: pd.DataFrame, schema: ColumnSchema = ColumnSchema(),
                       source: str = "frame") -> ObservationalDataset:
    """Validate a DataFrame against a column schema and build the dataset"""
    for column in (schema.treatment, schema.outcome):
        if column not in frame.columns:
            raise DataValidationError(f"column '{column}' not found in {source}")

    if schema.features is None:
        features = [c for c in frame.columns if c not in (schema.treatment, schema.outcome)]
    else:
        features = list(schema.features)
        missing = [c for c in features if c not in frame.columns]
        if missing:
            raise DataValidationError(f"feature columns not found in {source}: {', '.join(missing)}")
    if not features:
        raise DataValidationError(f"no feature columns in {source}")

    columns = features + [schema.treatment, schema.outcome]
    numeric = frame[columns].apply(pd.to_numeric, errors="coerce")
    invalid = numeric.isna()
    if invalid.to_numpy().any():
        row, col = np.argwhere(invalid.to_numpy())[0]
        raw = frame[columns].iat[row, col]
        kind = "missing" if pd.isna(raw) else f"non-numeric value {raw!r}"
        raise DataValidationError(f"{kind} at row {row + 1}, column '{columns[col]}'")

    R = numeric[schema.treatment].to_numpy()
    bad = np.flatnonzero((R != 0.0) & (R != 1.0))
    if bad.size:
        raise DataValidationError(
            f"non-binary treatment value {R[bad[0]]:g} at row {int(bad[0]) + 1}, "
            f"column '{schema.treatment}'"
        )

    data = ObservationalDataset(
        X=numeric[features].to_numpy(),
        R=R,
        Y=numeric[schema.outcome].to_numpy(),
        feature_names=tuple(features),
    )
    logger.debug("Loaded %s: n=%d, d=%d, treated fraction %.3f",
                 source, data.n, data.d, data.treated_fraction)
    return data


def save_dataset(data: ObservationalDataset, path: str, schema: ColumnSchema = ColumnSchema()):
    """Write a dataset as CSV: feature columns, then treatment, then outcome"""
    frame = pd.DataFrame(data.X, columns=list(data.feature_names))
    frame[schema.treatment] = data.R.astype(int)
    frame[schema.outcome] = data.Y
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
