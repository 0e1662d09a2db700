"""Dataset container shared by the balance, estimation and simulation modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Dataset:
    """Observed sample: factor levels Z (N x K, coded -1/+1), covariates
    X (N x D) and outcomes Y (length N)."""

    Z: np.ndarray
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z)
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float).ravel()
        if Z.ndim != 2 or X.ndim != 2:
            raise DataError("Z and X must be two-dimensional arrays")
        n = Z.shape[0]
        if X.shape[0] != n or Y.shape[0] != n:
            raise DataError(
                f"inconsistent row counts: Z has {n}, X has {X.shape[0]}, "
                f"Y has {Y.shape[0]}"
            )
        if n == 0:
            raise DataError("dataset is empty")
        if not np.all(np.isin(Z, (-1, 1))):
            raise DataError("factor levels must be coded -1/+1")
        if not np.all(np.isfinite(X)):
            bad = int(np.argwhere(~np.isfinite(X))[0][0])
            raise DataError(f"non-finite covariate value at row {bad}")
        if not np.all(np.isfinite(Y)):
            bad = int(np.argwhere(~np.isfinite(Y))[0][0])
            raise DataError(f"non-finite outcome value at row {bad}")
        object.__setattr__(self, "Z", Z.astype(np.int8))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[1]
