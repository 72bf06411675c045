"""SENSE imaging model A = M F S: forward/adjoint, sensitivity estimation,
k-space normalization, and the zero-filled baseline.

``ImagingModel`` is immutable after construction and all operations are
pure, so one model can serve any number of concurrent reconstructions.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    CalibrationError,
    NormalizationError,
    SizeMismatchError,
)
from .fourier import center_crop, fft2c, ifft2c, zero_pad_center
from .validation import as_coil_stack, as_complex_image

# Identifier for the one normalization convention the package implements:
# divide by the L2 norm of the central 5x5 block of k-space over all coils.
NORM_CONVENTION = "l2-central-5x5"

SUPPORT_THRESHOLD_DEFAULT = 0.05


def _centered_block(h: int, w: int, bh: int, bw: int) -> tuple[slice, slice]:
    r0 = h // 2 - bh // 2
    c0 = w // 2 - bw // 2
    return slice(r0, r0 + bh), slice(c0, c0 + bw)


@dataclass(eq=False)
class SamplingMask:
    """Binary k-space sampling pattern with a fully-sampled centered block.

    Attributes:
        mask: (H, W) array of {0, 1}, stored as uint8.
        calib_h, calib_w: extents of the centered calibration block.
        accel_requested: the acceleration target the mask was built for.
    """

    mask: np.ndarray
    calib_h: int
    calib_w: int
    accel_requested: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise SizeMismatchError(f"mask must be 2-D, got shape {m.shape}")
        self.mask = (m != 0).astype(np.uint8)
        h, w = self.mask.shape
        if self.calib_h > h or self.calib_w > w or self.calib_h < 0 or self.calib_w < 0:
            raise SizeMismatchError(
                f"calibration block {self.calib_h}x{self.calib_w} does not fit {h}x{w}"
            )
        if self.accel_requested <= 0:
            raise SizeMismatchError("accel_requested must be positive")
        if self.mask.sum() == 0:
            raise SizeMismatchError("mask is empty")
        rs, cs = _centered_block(h, w, self.calib_h, self.calib_w)
        if not np.all(self.mask[rs, cs] == 1):
            raise SizeMismatchError("calibration block is not fully sampled")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def effective_accel(self) -> float:
        """Total grid points / sampled points (corner-cut zeros count as unsampled)."""
        return self.mask.size / float(self.mask.sum())

    def calib_slices(self) -> tuple[slice, slice]:
        h, w = self.mask.shape
        return _centered_block(h, w, self.calib_h, self.calib_w)

    @classmethod
    def full(cls, h: int, w: int) -> "SamplingMask":
        """Fully-sampled mask (identity subsampling)."""
        return cls(np.ones((h, w), dtype=np.uint8), h, w, 1.0)

    @classmethod
    def from_grid(cls, grid: np.ndarray, accel_requested: float | None = None) -> "SamplingMask":
        """Rebuild a SamplingMask from a bare {0,1} grid (e.g. read from file).

        The calibration extents are re-inferred as the maximal centered
        all-ones block; accel_requested defaults to the achieved effective
        acceleration.
        """
        grid = (np.asarray(grid) != 0).astype(np.uint8)
        if grid.ndim != 2:
            raise SizeMismatchError(f"mask grid must be 2-D, got shape {grid.shape}")
        h, w = grid.shape

        def block_ok(bh, bw):
            if bh < 1 or bw < 1:
                return False
            rs, cs = _centered_block(h, w, bh, bw)
            return bool(np.all(grid[rs, cs] == 1))

        ch = cw = 1 if block_ok(1, 1) else 0
        grew = ch > 0
        while grew:
            grew = False
            if ch < h and block_ok(ch + 1, cw):
                ch += 1
                grew = True
            if cw < w and block_ok(ch, cw + 1):
                cw += 1
                grew = True
        if accel_requested is None:
            accel_requested = grid.size / float(max(grid.sum(), 1))
        return cls(grid, ch, cw, accel_requested)


@dataclass(eq=False)
class MultiCoilKspace:
    """Stack of per-coil k-space planes, optionally tied to a sampling mask.

    If a mask is attached, every plane is exactly zero off the mask support.
    ``normalized_by`` records which normalization convention produced the
    data (see :func:`normalize_kspace`); None means raw/unknown scale.
    """

    data: np.ndarray
    mask: SamplingMask | None = None
    normalized_by: str | None = None

    def __post_init__(self):
        self.data = as_coil_stack(self.data, "k-space data")
        if self.mask is not None:
            if self.mask.shape != self.data.shape[-2:]:
                raise SizeMismatchError(
                    f"mask {self.mask.shape} does not match k-space "
                    f"{self.data.shape[-2:]}"
                )
            if np.any(self.data[:, self.mask.mask == 0] != 0):
                raise SizeMismatchError("k-space has energy outside the mask support")

    @property
    def coils(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[-2:]


def _as_kspace_array(y) -> np.ndarray:
    if isinstance(y, MultiCoilKspace):
        return y.data
    return as_coil_stack(y, "k-space data")


@dataclass(frozen=True, eq=False)
class ImagingModel:
    """The acquisition model A = M F S for one dataset.

    ``sens`` is a (C, H, W) stack of sensitivity maps normalized so that
    sum_c |S_c|^2 is 1 on the support and exactly 0 outside it.
    """

    sens: np.ndarray
    mask: SamplingMask
    _mask_f: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sens = as_coil_stack(self.sens, "sensitivity maps")
        rss2 = np.sum(np.abs(sens) ** 2, axis=0)
        off = (rss2 != 0) & (np.abs(rss2 - 1.0) > 1e-3)
        if np.any(off):
            raise SizeMismatchError(
                "sensitivity maps are not normalized (sum_c |S_c|^2 must be "
                "0 or 1 at every pixel)"
            )
        if self.mask.shape != sens.shape[-2:]:
            raise SizeMismatchError(
                f"mask {self.mask.shape} does not match maps {sens.shape[-2:]}"
            )
        object.__setattr__(self, "sens", sens)
        object.__setattr__(self, "_mask_f", self.mask.mask.astype(np.float64))

    @property
    def coils(self) -> int:
        return self.sens.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.sens.shape[-2:]

    # Raw-array fast paths (no container validation); used in solver loops.
    def _forward_arr(self, m: np.ndarray) -> np.ndarray:
        return self._mask_f * fft2c(self.sens * m[None])

    def _adjoint_arr(self, y: np.ndarray) -> np.ndarray:
        return np.sum(np.conj(self.sens) * ifft2c(self._mask_f * y), axis=0)

    def forward(self, m: np.ndarray) -> MultiCoilKspace:
        """A m = M F S m. Returns masked multi-coil k-space."""
        m = as_complex_image(m)
        if m.shape != self.shape:
            raise SizeMismatchError(f"image {m.shape} does not match model {self.shape}")
        return MultiCoilKspace(self._forward_arr(m), mask=self.mask)

    def adjoint(self, y) -> np.ndarray:
        """A^H y: coil-combined single-channel complex image."""
        data = _as_kspace_array(y)
        if data.shape != self.sens.shape:
            raise SizeMismatchError(
                f"k-space {data.shape} does not match model {self.sens.shape}"
            )
        return self._adjoint_arr(data)

    def zero_filled(self, y) -> np.ndarray:
        """Zero-filled reconstruction: alias of the adjoint (the no-prior baseline)."""
        return self.adjoint(y)


def raised_cosine_window(n: int) -> np.ndarray:
    """Separable apodization taper, strictly positive on all n samples."""
    i = np.arange(n, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * (i + 1.0) / (n + 1.0)))


def estimate_sensitivities(
    calib_data,
    calib_shape: tuple[int, int] | None = None,
    threshold: float = SUPPORT_THRESHOLD_DEFAULT,
) -> np.ndarray:
    """Low-resolution calibration estimate of the coil sensitivity maps.

    Apodizes the fully-sampled central block of each coil's k-space,
    zero-pads back to full size, inverse-transforms, and normalizes by the
    root-sum-of-squares image. Pixels where RSS falls below
    ``threshold * max(RSS)`` are set to exactly zero.

    Args:
        calib_data: (C, H, W) k-space array or MultiCoilKspace whose centered
            ``calib_shape`` block is fully sampled.
        calib_shape: (calib_h, calib_w); taken from the attached mask when
            omitted.
        threshold: support threshold as a fraction of the maximum RSS.
    """
    if calib_shape is None:
        if isinstance(calib_data, MultiCoilKspace) and calib_data.mask is not None:
            calib_shape = (calib_data.mask.calib_h, calib_data.mask.calib_w)
        else:
            raise CalibrationError("calib_shape required when no mask is attached")
    if not 0.0 < threshold < 1.0:
        raise CalibrationError(f"threshold must be in (0, 1), got {threshold}")
    data = _as_kspace_array(calib_data)
    h, w = data.shape[-2:]
    ch, cw = calib_shape
    if ch < 2 or cw < 2 or ch > h or cw > w:
        raise CalibrationError(
            f"calibration block {ch}x{cw} invalid for {h}x{w} grid (need >= 2x2)"
        )
    block = center_crop(data, ch, cw)
    if not np.any(block):
        raise CalibrationError("all-zero calibration data")
    window = np.outer(raised_cosine_window(ch), raised_cosine_window(cw))
    lowres = ifft2c(zero_pad_center(block * window, h, w))
    rss = np.sqrt(np.sum(np.abs(lowres) ** 2, axis=0))
    support = rss >= threshold * rss.max()
    sens = np.zeros_like(lowres)
    np.divide(lowres, rss[None], out=sens, where=support[None])
    return sens


def central_block_norm(data, block: int = 5) -> float:
    """L2 norm over all coils of the centered block x block region of k-space."""
    arr = _as_kspace_array(data)
    if arr.shape[-2] < block or arr.shape[-1] < block:
        raise SizeMismatchError(
            f"grid {arr.shape[-2:]} smaller than the {block}x{block} normalization block"
        )
    return float(np.linalg.norm(center_crop(arr, block, block)))


def normalize_kspace(y: MultiCoilKspace) -> tuple[MultiCoilKspace, float]:
    """Scale k-space by the L2 norm of its central 5x5 region (all coils).

    Returns the normalized data (tagged with the convention) and the scale.
    """
    scale = central_block_norm(y)
    if scale == 0.0:
        raise NormalizationError("central 5x5 block of k-space is empty")
    return (
        MultiCoilKspace(y.data / scale, mask=y.mask, normalized_by=NORM_CONVENTION),
        scale,
    )


def prewhiten(y: MultiCoilKspace, mixing: np.ndarray) -> MultiCoilKspace:
    """Apply a C x C coil-mixing (noise pre-whitening) matrix per k-space sample.

    Identity is the no-op default in pipelines without a noise calibration.
    """
    mixing = np.asarray(mixing, dtype=np.complex128)
    c = y.coils
    if mixing.shape != (c, c):
        raise SizeMismatchError(f"mixing matrix must be {c}x{c}, got {mixing.shape}")
    mixed = np.einsum("ab,bhw->ahw", mixing, y.data)
    # coil mixing preserves the sampling support (zeros mix to zeros)
    return MultiCoilKspace(mixed, mask=y.mask, normalized_by=None)
