"""Centered Fourier transforms and grid utilities.

Conventions used throughout the package:

* Images and k-space planes are 2-D complex arrays; multi-coil stacks add a
  leading coil axis. All transforms act on the last two axes.
* The DC term sits at index ``(H // 2, W // 2)`` (MRI convention; the
  calibration region is a centered block).
* Both transform directions carry the orthonormal ``1/sqrt(H*W)`` scaling,
  so ``fft2c`` and ``ifft2c`` are unitary and exact adjoints of each other.
"""

import numpy as np

from .exceptions import SizeMismatchError


def fft2c(img: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D FFT over the last two axes."""
    img = np.asarray(img)
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(img, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


def ifft2c(ksp: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c` (also centered, also orthonormal)."""
    ksp = np.asarray(ksp)
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(ksp, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


def circular_pad(img: np.ndarray, pad: int) -> np.ndarray:
    """Pad the last two axes by ``pad`` on every side with periodic wrap.

    Output pixel (r, c) equals ``img[(r - pad) % H, (c - pad) % W]``.
    """
    img = np.asarray(img)
    if pad < 0:
        raise SizeMismatchError(f"pad must be non-negative, got {pad}")
    if pad >= min(img.shape[-2], img.shape[-1]):
        raise SizeMismatchError(
            f"pad {pad} too large for grid {img.shape[-2]}x{img.shape[-1]}"
        )
    if pad == 0:
        return img.copy()
    width = [(0, 0)] * (img.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(img, width, mode="wrap")


def center_crop(img: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Centered ``target_h x target_w`` window of the last two axes.

    The window is placed so the DC index (floor(n/2)) is preserved, which
    makes ``center_crop(circular_pad(g, p), H, W) == g`` for any pad p.
    """
    img = np.asarray(img)
    h, w = img.shape[-2], img.shape[-1]
    if target_h > h or target_w > w or target_h < 1 or target_w < 1:
        raise SizeMismatchError(
            f"cannot crop {h}x{w} grid to {target_h}x{target_w}"
        )
    r0 = h // 2 - target_h // 2
    c0 = w // 2 - target_w // 2
    return img[..., r0 : r0 + target_h, c0 : c0 + target_w].copy()


def zero_pad_center(ksp: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Embed a k-space block into a larger zero grid, DC index aligned.

    Inverse of :func:`center_crop` on the retained block.
    """
    ksp = np.asarray(ksp)
    h, w = ksp.shape[-2], ksp.shape[-1]
    if target_h < h or target_w < w:
        raise SizeMismatchError(
            f"cannot zero-pad {h}x{w} grid to smaller {target_h}x{target_w}"
        )
    out = np.zeros(ksp.shape[:-2] + (target_h, target_w), dtype=ksp.dtype)
    r0 = target_h // 2 - h // 2
    c0 = target_w // 2 - w // 2
    out[..., r0 : r0 + h, c0 : c0 + w] = ksp
    return out


def inner_product(a: np.ndarray, b: np.ndarray) -> complex:
    """Complex inner product sum(conj(a) * b) over all elements."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise SizeMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))
