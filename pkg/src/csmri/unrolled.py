"""Unrolled proximal-gradient reconstruction network and its exact
reverse-mode derivatives, plus the bounded feature extractor used by the
adversarial loss.

The network alternates, for a fixed number of iterations K, a data-
consistency gradient step

    m+ = m - 2 t_k A^H (A m - y)

with a learned proximal block m <- E_k(m+). Step sizes t_k and all block
weights are learnable. Gradients are computed by hand for this fixed
architecture (complex images treated as two real channels) and are
verified against central finite differences in the test suite.
"""

import copy
from dataclasses import dataclass

import numpy as np

from .exceptions import ConventionError, SizeMismatchError
from .imaging import NORM_CONVENTION, ImagingModel, MultiCoilKspace
from .layers import (
    ConvLayerParams,
    ProximalBlockParams,
    ResBlockParams,
    _conv_bw,
    _conv_fw,
    _prox_bw,
    _prox_fw,
    _relu_bw,
    _relu_fw,
    complex_to_channels,
    channels_to_complex,
    init_conv,
    init_prox_block,
)

PARAMS_FORMAT_VERSION = 1


@dataclass(eq=False)
class UnrolledModelParams:
    """Per-iteration step sizes and proximal-block weights.

    ``meta`` pins the architecture and data conventions: iterations,
    features, resblocks, kernel_size, share_weights, normalization, version.
    """

    step_sizes: np.ndarray  # (K,)
    prox_blocks: list[ProximalBlockParams]
    meta: dict

    def __post_init__(self):
        self.step_sizes = np.asarray(self.step_sizes, dtype=np.float64)
        if self.step_sizes.ndim != 1:
            raise SizeMismatchError("step_sizes must be a 1-D array")
        if len(self.step_sizes) != len(self.prox_blocks):
            raise SizeMismatchError(
                "one proximal block per iteration required "
                f"({len(self.step_sizes)} steps, {len(self.prox_blocks)} blocks)"
            )
        if len(self.prox_blocks) == 0:
            raise SizeMismatchError("at least one unrolled iteration required")
        if not np.all(np.isfinite(self.step_sizes)):
            raise ValueError("step sizes must be finite")

    @property
    def iterations(self) -> int:
        return len(self.step_sizes)


@dataclass(eq=False)
class FeatureExtractorParams:
    """Strided circular conv stack; ReLU between layers, tanh on the last."""

    layers: list[ConvLayerParams]

    def __post_init__(self):
        if not self.layers:
            raise SizeMismatchError("feature extractor needs at least one layer")
        if self.layers[0].in_ch != 2:
            raise SizeMismatchError("feature extractor input must be 2 channels")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_ch != nxt.in_ch:
                raise SizeMismatchError("feature extractor channel chain broken")

    @property
    def n_feat(self) -> int:
        return self.layers[-1].out_ch


def init_unrolled(
    iterations: int = 4,
    features: int = 64,
    resblocks: int = 2,
    kernel_size: int = 3,
    seed: int = 0,
    share_weights: bool = False,
    step_init: float = 0.5,
) -> UnrolledModelParams:
    """Fresh seeded model. With ``share_weights`` all iterations start (and
    are kept, by gradient summing) identical."""
    rng = np.random.default_rng(seed)
    if share_weights:
        block = init_prox_block(rng, features, resblocks, kernel_size)
        blocks = [copy.deepcopy(block) for _ in range(iterations)]
    else:
        blocks = [
            init_prox_block(rng, features, resblocks, kernel_size)
            for _ in range(iterations)
        ]
    meta = {
        "iterations": iterations,
        "features": features,
        "resblocks": resblocks,
        "kernel_size": kernel_size,
        "share_weights": share_weights,
        "normalization": NORM_CONVENTION,
        "version": PARAMS_FORMAT_VERSION,
    }
    return UnrolledModelParams(np.full(iterations, step_init), blocks, meta)


def init_feature_extractor(
    channels: tuple[int, ...] = (32, 64, 128),
    strides: tuple[int, ...] = (1, 2, 2),
    kernel_size: int = 3,
    seed: int = 0,
) -> FeatureExtractorParams:
    if len(channels) != len(strides):
        raise SizeMismatchError("channels and strides must have equal length")
    rng = np.random.default_rng(seed)
    layers = []
    in_ch = 2
    for out_ch, stride in zip(channels, strides):
        layers.append(init_conv(rng, out_ch, in_ch, kernel_size, stride))
        in_ch = out_ch
    return FeatureExtractorParams(layers)


# ---------------------------------------------------------------------------
# gradient step


def gradient_update(
    m: np.ndarray, model: ImagingModel, y, t: float
) -> np.ndarray:
    """One data-consistency step: m - 2 t A^H (A m - y)."""
    m = np.asarray(m, dtype=np.complex128)
    ydata = y.data if isinstance(y, MultiCoilKspace) else np.asarray(y)
    out, _ = _grad_fw(m, model, ydata, float(t))
    return out


def _grad_fw(m, model, ydata, t):
    if m.shape != model.shape or ydata.shape != model.sens.shape:
        raise SizeMismatchError(
            f"shapes (m {m.shape}, y {ydata.shape}) do not match model "
            f"{model.sens.shape}"
        )
    r = model._adjoint_arr(model._forward_arr(m) - ydata)
    return m - 2.0 * t * r, r


def _grad_bw(model, t, r, gout):
    """Backward of the gradient step.

    Returns (grad_m, grad_t, grad_y): grad_m = g - 2t A^H A g,
    grad_t = -2 Re<g, r>, grad_y = 2t A g (accumulated by the caller).
    """
    ag = model._forward_arr(gout)
    gm = gout - 2.0 * t * model._adjoint_arr(ag)
    gt = -2.0 * float(np.real(np.vdot(gout, r)))
    gy = 2.0 * t * ag
    return gm, gt, gy


# ---------------------------------------------------------------------------
# unrolled network


def _check_convention(params: UnrolledModelParams, y) -> np.ndarray:
    if isinstance(y, MultiCoilKspace):
        expected = params.meta.get("normalization")
        if y.normalized_by != expected:
            raise ConventionError(
                f"data normalization {y.normalized_by!r} does not match the "
                f"model's convention {expected!r}; normalize the input first"
            )
        return y.data
    return np.asarray(y, dtype=np.complex128)


def _unrolled_fw(params: UnrolledModelParams, model: ImagingModel, ydata):
    m = model._adjoint_arr(ydata)
    tape = []
    for t, block in zip(params.step_sizes, params.prox_blocks):
        m_plus, r = _grad_fw(m, model, ydata, t)
        m, prox_cache = _prox_fw(m_plus, block)
        tape.append((r, prox_cache))
    return m, tape


def unrolled_forward(
    params: UnrolledModelParams, model: ImagingModel, y
) -> np.ndarray:
    """Reconstruct an image from (normalized) k-space: m_hat = G(y, A).

    ``y`` as MultiCoilKspace must carry the normalization convention named
    in ``params.meta`` (refuses silent wrong-scale inference); a bare array
    bypasses the check.
    """
    ydata = _check_convention(params, y)
    out, _ = _unrolled_fw(params, model, ydata)
    return out


def _zero_block_grads(block: ProximalBlockParams) -> ProximalBlockParams:
    def zc(c):
        return ConvLayerParams(np.zeros_like(c.kernel), np.zeros_like(c.bias), c.stride)

    return ProximalBlockParams(
        conv_in=zc(block.conv_in),
        blocks=[ResBlockParams(zc(b.conv1), zc(b.conv2)) for b in block.blocks],
        conv_out=zc(block.conv_out),
    )


def _add_block_grads(a: ProximalBlockParams, b: ProximalBlockParams) -> ProximalBlockParams:
    def ac(x, y):
        return ConvLayerParams(x.kernel + y.kernel, x.bias + y.bias, x.stride)

    return ProximalBlockParams(
        conv_in=ac(a.conv_in, b.conv_in),
        blocks=[
            ResBlockParams(ac(x.conv1, y.conv1), ac(x.conv2, y.conv2))
            for x, y in zip(a.blocks, b.blocks)
        ],
        conv_out=ac(a.conv_out, b.conv_out),
    )


def _unrolled_bw(params, model, tape, upstream):
    """Reverse pass from an upstream co-gradient on the output image.

    Returns (grads: UnrolledModelParams, grad_y). The upstream gradient
    convention for complex tensors is dL/dRe + i dL/dIm.
    """
    g = np.asarray(upstream, dtype=np.complex128)
    gy = np.zeros(model.sens.shape, dtype=np.complex128)
    k_iters = params.iterations
    step_grads = np.zeros(k_iters)
    block_grads: list[ProximalBlockParams | None] = [None] * k_iters
    for k in range(k_iters - 1, -1, -1):
        r, prox_cache = tape[k]
        g, bg = _prox_bw(prox_cache, g)
        block_grads[k] = bg
        gm, gt, gyk = _grad_bw(model, params.step_sizes[k], r, g)
        step_grads[k] = gt
        gy += gyk
        g = gm
    gy += model._forward_arr(g)  # m0 = A^H y

    if params.meta.get("share_weights"):
        # keep the K slots identical: every slot carries the summed gradient
        acc = block_grads[0]
        for bg in block_grads[1:]:
            acc = _add_block_grads(acc, bg)
        block_grads = [acc] * k_iters

    grads = UnrolledModelParams(step_grads, block_grads, dict(params.meta))
    return grads, gy


def unrolled_backward(
    params: UnrolledModelParams, model: ImagingModel, y, upstream_grad
):
    """Exact reverse-mode derivatives of :func:`unrolled_forward`.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` mirrors the
    UnrolledModelParams structure and ``input_grad`` is the gradient with
    respect to the measured k-space ``y``.
    """
    ydata = _check_convention(params, y)
    _, tape = _unrolled_fw(params, model, ydata)
    grads, gy = _unrolled_bw(params, model, tape, upstream_grad)
    return grads, gy


# ---------------------------------------------------------------------------
# feature extractor (adversarial loss)


def _feat_fw(m: np.ndarray, p: FeatureExtractorParams):
    x = complex_to_channels(m)
    caches = []
    last = len(p.layers) - 1
    for i, layer in enumerate(p.layers):
        x, cache = _conv_fw(x, layer)
        if i < last:
            x, rmask = _relu_fw(x)
            caches.append((cache, rmask))
        else:
            x = np.tanh(x)
            caches.append((cache, x))  # cache tanh output for backward
    return x, caches


def _feat_bw(p: FeatureExtractorParams, caches, gout):
    g = gout
    layer_grads: list[ConvLayerParams] = []
    last = len(p.layers) - 1
    for i in range(last, -1, -1):
        cache, aux = caches[i]
        if i == last:
            g = g * (1.0 - aux * aux)  # tanh'
        else:
            g = _relu_bw(aux, g)
        g, gk, gb = _conv_bw(cache, g)
        layer_grads.append(ConvLayerParams(gk, gb, p.layers[i].stride))
    layer_grads.reverse()
    return channels_to_complex(g), FeatureExtractorParams(layer_grads)


def feature_extract(m: np.ndarray, p: FeatureExtractorParams) -> np.ndarray:
    """Bounded feature maps of an image; every output lies in (-1, 1)."""
    out, _ = _feat_fw(np.asarray(m, dtype=np.complex128), p)
    return out


# ---------------------------------------------------------------------------
# parameter tree utilities (used by the optimizer, file IO, and tests)


def _conv_tensors(prefix, c):
    return [(f"{prefix}.kernel", c.kernel), (f"{prefix}.bias", c.bias)]


def _block_tensors(prefix, block):
    out = _conv_tensors(f"{prefix}.conv_in", block.conv_in)
    for j, rb in enumerate(block.blocks):
        out += _conv_tensors(f"{prefix}.res{j}.conv1", rb.conv1)
        out += _conv_tensors(f"{prefix}.res{j}.conv2", rb.conv2)
    out += _conv_tensors(f"{prefix}.conv_out", block.conv_out)
    return out


def named_tensors(params) -> list[tuple[str, np.ndarray]]:
    """Stable (name, array) listing of all learnable tensors."""
    if isinstance(params, UnrolledModelParams):
        out = [("step_sizes", params.step_sizes)]
        for k, block in enumerate(params.prox_blocks):
            out += _block_tensors(f"iter{k}", block)
        return out
    if isinstance(params, FeatureExtractorParams):
        out = []
        for i, layer in enumerate(params.layers):
            out += _conv_tensors(f"layer{i}", layer)
        return out
    raise TypeError(f"unsupported parameter container {type(params)!r}")


def replace_tensors(params, mapping: dict):
    """Structure-preserving copy of ``params`` with arrays from ``mapping``."""
    new = copy.deepcopy(params)
    for name, arr in named_tensors(new):
        np.copyto(arr, mapping[name])
    return new
