"""Input checks shared by the estimators, built on sklearn's validators."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .layout import IMAGE_COLS, IMAGE_ROWS, N_IRIS
from .oracle import SPECTRUM_LEN

TEMPLATE_WIDTH = 2 + N_IRIS


def check_templates(X) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != TEMPLATE_WIDTH:
        raise ValueError(f"templates must have {TEMPLATE_WIDTH} columns (N, L, cw_0..cw_7), got {X.shape[1]}")
    return X


def check_images(X) -> np.ndarray:
    X = check_array(X, dtype=None, allow_nd=True, ensure_2d=False)
    if X.ndim == 2:
        X = X[None]
    if X.ndim == 4 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 3 or X.shape[1:] != (IMAGE_ROWS, IMAGE_COLS):
        raise ValueError(f"images must be (n, {IMAGE_ROWS}, {IMAGE_COLS}), got {X.shape}")
    return X


def is_template_input(X) -> bool:
    return np.ndim(X) == 2 and np.shape(X)[1] == TEMPLATE_WIDTH


def check_spectra(y) -> np.ndarray:
    y = check_array(y, dtype=np.float32, ensure_2d=True)
    if y.shape[1] != SPECTRUM_LEN:
        raise ValueError(f"spectra must have {SPECTRUM_LEN} columns, got {y.shape[1]}")
    return y


def check_specs(S) -> np.ndarray:
    S = check_array(np.atleast_2d(S), dtype=np.float64)
    if S.shape[1] != 5:
        raise ValueError(f"specs must have 5 columns (f0, fbw, maxS21, alpha_r, alpha_l), got {S.shape[1]}")
    return S
