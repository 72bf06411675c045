"""Orthonormal separable wavelet transforms (periodic boundaries) and the
complex soft-thresholding proximal map.

Coefficients use the standard nested quadrant layout: after each level the
approximation block occupies the top-left quadrant and is decomposed
further by the next level. Both transforms are energy preserving and exact
inverses of each other.
"""

import numpy as np

from .exceptions import SizeMismatchError

_SQRT3 = np.sqrt(3.0)
_D4 = np.array([1.0 + _SQRT3, 3.0 + _SQRT3, 3.0 - _SQRT3, 1.0 - _SQRT3]) / (
    4.0 * np.sqrt(2.0)
)

# analysis lowpass filters; highpass is the alternating-sign reverse
FILTERS = {
    "haar": np.array([1.0, 1.0]) / np.sqrt(2.0),
    "db4": _D4,
}


def _highpass(h: np.ndarray) -> np.ndarray:
    g = h[::-1].copy()
    g[1::2] *= -1.0
    return g


def _check_dims(h: int, w: int, levels: int) -> None:
    if levels < 1:
        raise SizeMismatchError("levels must be >= 1")
    div = 1 << levels
    if h % div or w % div:
        raise SizeMismatchError(
            f"grid {h}x{w} not divisible by 2^{levels}; pad to the next valid size"
        )


def _analyze_axis(x: np.ndarray, h: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(h))[None, :]) % n
    windows = x[..., idx]  # (..., n/2, L)
    out = np.concatenate([windows @ h, windows @ g], axis=-1)
    return np.moveaxis(out, -1, axis)


def _synthesize_axis(c: np.ndarray, h: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    c = np.moveaxis(c, axis, -1)
    n = c.shape[-1]
    a, d = c[..., : n // 2], c[..., n // 2 :]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(h))[None, :]) % n
    contrib = a[..., None] * h + d[..., None] * g  # (..., n/2, L)
    out = np.zeros_like(c)
    lead = np.ix_(*[np.arange(s) for s in c.shape[:-1]])
    np.add.at(out, lead + (idx,), contrib)
    return np.moveaxis(out, -1, axis)


def wavelet_forward(img: np.ndarray, levels: int, wavelet: str = "haar") -> np.ndarray:
    """Multi-level 2-D wavelet decomposition, nested quadrant layout."""
    img = np.asarray(img)
    _check_dims(img.shape[-2], img.shape[-1], levels)
    h = FILTERS[wavelet]
    g = _highpass(h)
    out = img.astype(np.result_type(img.dtype, np.float64), copy=True)
    sh, sw = img.shape[-2], img.shape[-1]
    for _ in range(levels):
        block = out[..., :sh, :sw]
        block = _analyze_axis(block, h, g, -1)
        block = _analyze_axis(block, h, g, -2)
        out[..., :sh, :sw] = block
        sh //= 2
        sw //= 2
    return out


def wavelet_inverse(coeffs: np.ndarray, levels: int, wavelet: str = "haar") -> np.ndarray:
    """Exact inverse of :func:`wavelet_forward`."""
    coeffs = np.asarray(coeffs)
    _check_dims(coeffs.shape[-2], coeffs.shape[-1], levels)
    h = FILTERS[wavelet]
    g = _highpass(h)
    out = coeffs.astype(np.result_type(coeffs.dtype, np.float64), copy=True)
    sizes = [
        (coeffs.shape[-2] >> k, coeffs.shape[-1] >> k) for k in range(levels)
    ]
    for sh, sw in reversed(sizes):
        block = out[..., :sh, :sw]
        block = _synthesize_axis(block, h, g, -2)
        block = _synthesize_axis(block, h, g, -1)
        out[..., :sh, :sw] = block
    return out


def soft_threshold(x, tau: float):
    """Complex soft-thresholding: shrink magnitudes by tau, keep phase."""
    if tau < 0:
        raise ValueError(f"threshold must be non-negative, got {tau}")
    x = np.asarray(x)
    mag = np.abs(x)
    scale = np.zeros_like(mag)
    np.divide(np.maximum(mag - tau, 0.0), mag, out=scale, where=mag > 0)
    return x * scale
