"""Input validation helpers shared by the estimators and the kernel engine.

Adapters consume *per-space* inputs: a mapping from space name to a 2-D
array whose row i is the embedding of sample i in that space. These helpers
coerce and check such mappings so the estimators can stay small.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingSpace,
    NonFiniteValue,
    RowCountMismatch,
)


def as_float_matrix(x, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 1-D or 2-D, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteValue(
            f"{name} contains a non-finite value at ({bad[0]}, {bad[1]})",
            row=int(bad[0]),
            col=int(bad[1]),
        )
    return arr


def check_embedding_map(
    X: Mapping[str, object],
    required_spaces: Sequence[str] | None = None,
    name: str = "X",
) -> dict[str, np.ndarray]:
    """Validate a space -> (n, dim) mapping.

    All spaces must carry the same row count (rows are shared sample
    indices). When ``required_spaces`` is given, each must be present;
    extra spaces are passed through untouched.
    """
    if not isinstance(X, Mapping):
        raise DimensionMismatch(
            f"{name} must be a mapping of space name to a 2-D array"
        )
    out: dict[str, np.ndarray] = {}
    for space, arr in X.items():
        out[space] = as_float_matrix(arr, name=f"{name}[{space!r}]")
    if required_spaces is not None:
        for space in required_spaces:
            if space not in out:
                raise MissingSpace(space)
    rows = {space: arr.shape[0] for space, arr in out.items()}
    if len(set(rows.values())) > 1:
        raise RowCountMismatch(f"{name} spaces disagree on row count: {rows}")
    return out


def check_row_norms(arr: np.ndarray, tol: float = 1e-5, name: str = "matrix") -> None:
    """Require every row to be unit-norm within ``tol``."""
    norms = np.linalg.norm(arr, axis=1)
    off = np.abs(norms - 1.0)
    if off.size and off.max() > tol:
        i = int(np.argmax(off))
        raise DimensionMismatch(
            f"{name} row {i} has norm {norms[i]:.6f}, expected 1 within {tol}"
        )


def check_labels(y, num_classes: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce labels to a 1-D int array and bound-check them."""
    labels = np.asarray(y)
    if labels.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got ndim={labels.ndim}")
    if labels.size == 0:
        raise DimensionMismatch(f"{name} must be nonempty")
    if not np.issubdtype(labels.dtype, np.integer):
        as_int = labels.astype(np.int64)
        if not np.array_equal(as_int, labels):
            raise DimensionMismatch(f"{name} must hold integer class indices")
        labels = as_int
    labels = labels.astype(np.int64)
    if labels.min() < 0:
        raise DimensionMismatch(f"{name} holds a negative class index")
    if num_classes is not None and labels.max() >= num_classes:
        raise DimensionMismatch(
            f"{name} holds class index {labels.max()} but only "
            f"{num_classes} classes exist"
        )
    return labels
