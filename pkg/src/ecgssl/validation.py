"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .errors import DimensionError

N_LEADS = 12


def check_records(X, n_leads: int = N_LEADS) -> np.ndarray:
    """[n_records, n_leads, n_samples] finite float32 array."""
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_all_finite=True, ensure_2d=False)
    if X.ndim != 3 or X.shape[1] != n_leads:
        raise DimensionError(f"expected records shaped [n, {n_leads}, n_samples], got {X.shape}")
    return X


def check_multilabel(Y, n_records: int) -> np.ndarray:
    Y = check_array(Y, dtype=np.int64, ensure_2d=True)
    if Y.shape[0] != n_records:
        raise DimensionError(f"{Y.shape[0]} label rows for {n_records} records")
    if not np.all((Y == 0) | (Y == 1)):
        raise ValueError("labels must be multi-hot 0/1")
    return Y
