"""Convolutional building blocks with hand-written reverse-mode derivatives.

All layers operate on channels-first real float64 arrays (ch, H, W).
Convolutions are circular (periodic): the input is wrap-padded so the valid
part of the correlation has the same spatial size as the input, matching
the FFT-induced wrap-around of Cartesian MRI images. Complex images enter
the network as two real channels (real, imag).

Each ``_*_fw`` helper returns ``(output, cache)`` and the matching
``_*_bw`` consumes the cache plus the upstream gradient; the public ops
wrap the forward paths.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import SizeMismatchError


@dataclass(eq=False)
class ConvLayerParams:
    kernel: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray  # (out_ch,)
    stride: int = 1

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernel.ndim != 4:
            raise SizeMismatchError(f"kernel must be 4-D, got {self.kernel.shape}")
        kh, kw = self.kernel.shape[-2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise SizeMismatchError(f"kernel extents must be odd, got {kh}x{kw}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise SizeMismatchError(
                f"bias shape {self.bias.shape} does not match out_ch "
                f"{self.kernel.shape[0]}"
            )
        if self.stride < 1:
            raise SizeMismatchError(f"stride must be >= 1, got {self.stride}")

    @property
    def out_ch(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_ch(self) -> int:
        return self.kernel.shape[1]


@dataclass(eq=False)
class ResBlockParams:
    """conv -> ReLU -> conv with an additive skip; all channel counts equal."""

    conv1: ConvLayerParams
    conv2: ConvLayerParams

    def __post_init__(self):
        f = self.conv1.out_ch
        if not (self.conv1.in_ch == f == self.conv2.in_ch == self.conv2.out_ch):
            raise SizeMismatchError("ResBlock channel counts must all be equal")
        if self.conv1.stride != 1 or self.conv2.stride != 1:
            raise SizeMismatchError("ResBlock convolutions must have stride 1")


@dataclass(eq=False)
class ProximalBlockParams:
    """2 -> f channel lift, ResBlocks, f -> 2 projection, global residual."""

    conv_in: ConvLayerParams
    blocks: list[ResBlockParams]
    conv_out: ConvLayerParams

    def __post_init__(self):
        f = self.conv_in.out_ch
        if self.conv_in.in_ch != 2 or self.conv_out.out_ch != 2:
            raise SizeMismatchError("proximal block must map 2 -> f -> 2 channels")
        if self.conv_out.in_ch != f:
            raise SizeMismatchError("conv_out input channels must match feature count")
        for blk in self.blocks:
            if blk.conv1.in_ch != f:
                raise SizeMismatchError("ResBlock feature count mismatch")

    @property
    def features(self) -> int:
        return self.conv_in.out_ch


def complex_to_channels(m: np.ndarray) -> np.ndarray:
    """(H, W) complex -> (2, H, W) float64; lossless."""
    m = np.asarray(m, dtype=np.complex128)
    return np.stack([m.real, m.imag]).astype(np.float64)


def channels_to_complex(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`complex_to_channels`."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != 2:
        raise SizeMismatchError(f"expected (2, H, W) channels, got {x.shape}")
    return x[0] + 1j * x[1]


def _wrap_pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)), mode="wrap")


def _conv_fw(x: np.ndarray, p: ConvLayerParams):
    kh, kw = p.kernel.shape[-2:]
    ph, pw = kh // 2, kw // 2
    if x.ndim != 3 or x.shape[0] != p.in_ch:
        raise SizeMismatchError(
            f"input {x.shape} does not match conv expecting {p.in_ch} channels"
        )
    h, w = x.shape[-2:]
    if ph >= h or pw >= w:
        raise SizeMismatchError(f"kernel {kh}x{kw} too large for {h}x{w} input")
    s = p.stride
    if h % s or w % s:
        raise SizeMismatchError(f"stride {s} does not divide grid {h}x{w}")
    xp = _wrap_pad(x, ph, pw)
    win = sliding_window_view(xp, (kh, kw), axis=(-2, -1))[:, ::s, ::s]
    out = np.einsum("ihwkl,oikl->ohw", win, p.kernel, optimize=True)
    out += p.bias[:, None, None]
    return out, (win, x.shape, p)


def _conv_bw(cache, gout: np.ndarray):
    """Returns (grad_input, grad_kernel, grad_bias)."""
    win, xshape, p = cache
    kh, kw = p.kernel.shape[-2:]
    gbias = gout.sum(axis=(1, 2))
    gkernel = np.einsum("ohw,ihwkl->oikl", gout, win, optimize=True)
    # input gradient: circular correlation of the zero-stuffed upstream
    # gradient with the spatially flipped, channel-swapped kernel
    h, w = xshape[-2:]
    s = p.stride
    if s > 1:
        gfull = np.zeros((p.out_ch, h, w), dtype=gout.dtype)
        gfull[:, ::s, ::s] = gout
    else:
        gfull = gout
    kt = p.kernel[:, :, ::-1, ::-1].swapaxes(0, 1)  # (in_ch, out_ch, kh, kw)
    gp = _wrap_pad(gfull, kh // 2, kw // 2)
    gwin = sliding_window_view(gp, (kh, kw), axis=(-2, -1))
    gx = np.einsum("ohwkl,iokl->ihw", gwin, kt, optimize=True)
    return gx, gkernel, gbias


def conv2d_circular(x: np.ndarray, p: ConvLayerParams) -> np.ndarray:
    """Circular (periodic) cross-correlation plus bias.

    Stride 1 preserves H x W; stride s requires s | H, W and yields H/s x W/s.
    """
    out, _ = _conv_fw(np.asarray(x, dtype=np.float64), p)
    return out


def _relu_fw(x: np.ndarray):
    out = np.maximum(x, 0.0)
    return out, x > 0


def _relu_bw(mask, gout):
    return gout * mask


def _resblock_fw(x: np.ndarray, p: ResBlockParams):
    h1, c1 = _conv_fw(x, p.conv1)
    a1, rmask = _relu_fw(h1)
    h2, c2 = _conv_fw(a1, p.conv2)
    return x + h2, (c1, rmask, c2)


def _resblock_bw(cache, gout):
    c1, rmask, c2 = cache
    ga1, gk2, gb2 = _conv_bw(c2, gout)
    gh1 = _relu_bw(rmask, ga1)
    gx, gk1, gb1 = _conv_bw(c1, gh1)
    gx += gout  # skip connection
    grads = ResBlockParams(
        conv1=ConvLayerParams(gk1, gb1, 1), conv2=ConvLayerParams(gk2, gb2, 1)
    )
    return gx, grads


def _prox_fw(m: np.ndarray, p: ProximalBlockParams):
    u0 = complex_to_channels(m)
    h, cin = _conv_fw(u0, p.conv_in)
    a, rmask = _relu_fw(h)
    res_caches = []
    for blk in p.blocks:
        a, cache = _resblock_fw(a, blk)
        res_caches.append(cache)
    v, cout = _conv_fw(a, p.conv_out)
    out = v + u0  # global residual around the whole block
    return channels_to_complex(out), (cin, rmask, res_caches, cout, p)


def _prox_bw(cache, gout_c: np.ndarray):
    cin, rmask, res_caches, cout, p = cache
    g = complex_to_channels(gout_c)
    ga, gko, gbo = _conv_bw(cout, g)
    block_grads = []
    for blk_cache in reversed(res_caches):
        ga, bg = _resblock_bw(blk_cache, ga)
        block_grads.append(bg)
    block_grads.reverse()
    gh = _relu_bw(rmask, ga)
    gu0, gki, gbi = _conv_bw(cin, gh)
    gu0 += g  # global residual
    grads = ProximalBlockParams(
        conv_in=ConvLayerParams(gki, gbi, 1),
        blocks=block_grads,
        conv_out=ConvLayerParams(gko, gbo, 1),
    )
    return channels_to_complex(gu0), grads


def prox_block_apply(m: np.ndarray, p: ProximalBlockParams) -> np.ndarray:
    """Learned proximal map: residual conv stack on the 2-channel image."""
    out, _ = _prox_fw(np.asarray(m, dtype=np.complex128), p)
    return out


def init_conv(
    rng: np.random.Generator,
    out_ch: int,
    in_ch: int,
    kernel_size: int = 3,
    stride: int = 1,
) -> ConvLayerParams:
    """Zero-mean uniform kernel with 1/sqrt(fan_in) scale, zero bias."""
    scale = 1.0 / np.sqrt(in_ch * kernel_size * kernel_size)
    kernel = rng.uniform(-scale, scale, size=(out_ch, in_ch, kernel_size, kernel_size))
    return ConvLayerParams(kernel, np.zeros(out_ch), stride)


def init_prox_block(
    rng: np.random.Generator,
    features: int,
    resblocks: int,
    kernel_size: int = 3,
) -> ProximalBlockParams:
    return ProximalBlockParams(
        conv_in=init_conv(rng, features, 2, kernel_size),
        blocks=[
            ResBlockParams(
                init_conv(rng, features, features, kernel_size),
                init_conv(rng, features, features, kernel_size),
            )
            for _ in range(resblocks)
        ],
        conv_out=init_conv(rng, 2, features, kernel_size),
    )
