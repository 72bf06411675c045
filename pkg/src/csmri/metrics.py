"""Image-quality metrics: MSE, PSNR, NRMSE on complex images, plus SSIM on
magnitude images.

MSE is the mean of |x - x_r|^2 over pixels, PSNR is
10 log10(max(|x_r|^2) / MSE) and NRMSE is sqrt(MSE / mean(|x_r|^2)). SSIM
uses the canonical constants (11x11 Gaussian window with sigma 1.5,
K1=0.01, K2=0.03); the dynamic range is max(max|x|, max|x_r|), which keeps
ssim symmetric in its arguments.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import SizeMismatchError, ZeroReferenceError


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    nrmse: float
    ssim: float
    mse: float

    def __post_init__(self):
        if self.mse < 0 or self.nrmse < 0 or self.ssim > 1.0 + 1e-12:
            raise ValueError("metric values out of range")


def _pair(x, x_r):
    x = np.asarray(x)
    x_r = np.asarray(x_r)
    if x.shape != x_r.shape:
        raise SizeMismatchError(f"shape mismatch {x.shape} vs {x_r.shape}")
    return x, x_r


def mse(x, x_r) -> float:
    """Mean squared error over complex pixel differences."""
    x, x_r = _pair(x, x_r)
    return float(np.mean(np.abs(x - x_r) ** 2))


def psnr(x, x_r) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are equal."""
    x, x_r = _pair(x, x_r)
    peak = float(np.max(np.abs(x_r) ** 2))
    if peak == 0.0:
        raise ZeroReferenceError("reference image is identically zero")
    err = mse(x, x_r)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak / err)


def nrmse(x, x_r) -> float:
    """Root-mean-square error normalized by the reference RMS level."""
    x, x_r = _pair(x, x_r)
    ref_power = float(np.mean(np.abs(x_r) ** 2))
    if ref_power == 0.0:
        raise ZeroReferenceError("reference image is identically zero")
    return float(np.sqrt(mse(x, x_r) / ref_power))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(ax**2) / (2.0 * sigma**2))
    w2 = np.outer(w, w)
    return w2 / w2.sum()


def ssim(x, x_r, window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean local structural similarity on magnitude images.

    Complex inputs are reduced by modulus. Local statistics use a Gaussian
    window over all fully-contained positions.
    """
    x, x_r = _pair(x, x_r)
    a = np.abs(x).astype(np.float64)
    b = np.abs(x_r).astype(np.float64)
    if a.ndim != 2:
        raise SizeMismatchError(f"ssim expects 2-D images, got shape {a.shape}")
    if min(a.shape) < window_size:
        raise SizeMismatchError(
            f"image {a.shape} smaller than the {window_size}x{window_size} window"
        )
    drange = float(max(a.max(), b.max()))
    if drange == 0.0:
        raise ZeroReferenceError("both images are identically zero")
    c1 = (0.01 * drange) ** 2
    c2 = (0.03 * drange) ** 2
    w = _gaussian_window(window_size, sigma)

    def local(img):
        wins = sliding_window_view(img, (window_size, window_size))
        return np.tensordot(wins, w, axes=([2, 3], [0, 1]))

    mu_a = local(a)
    mu_b = local(b)
    var_a = local(a * a) - mu_a**2
    var_b = local(b * b) - mu_b**2
    cov = local(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def report(x, x_r) -> MetricReport:
    """All four metrics for one test/reference pair."""
    return MetricReport(psnr=psnr(x, x_r), nrmse=nrmse(x, x_r), ssim=ssim(x, x_r), mse=mse(x, x_r))
