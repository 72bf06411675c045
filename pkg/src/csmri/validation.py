"""Input validation helpers shared by the core ops and the estimator API."""

import numpy as np

from .exceptions import SizeMismatchError


def as_complex_image(x, name: str = "image") -> np.ndarray:
    """Coerce to a finite 2-D complex128 array."""
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise SizeMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.complex128)
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise ValueError(f"{name} contains NaN/Inf")
    return arr


def as_coil_stack(x, name: str = "stack") -> np.ndarray:
    """Coerce to a finite (C, H, W) complex128 array; 2-D input gains a coil axis."""
    arr = np.asarray(x)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise SizeMismatchError(f"{name} must be (C, H, W), got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.complex128)
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise ValueError(f"{name} contains NaN/Inf")
    return arr


def check_same_grid(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape[-2:] != b.shape[-2:]:
        raise SizeMismatchError(
            f"{what} disagree on grid size: {a.shape[-2:]} vs {b.shape[-2:]}"
        )
