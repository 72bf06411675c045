"""Supervised training of the unrolled reconstruction network.

Supports plain L1/L2 pixel losses and the adversarial loss, where a
jointly-trained bounded feature extractor D maximizes the feature-space
discrepancy between reconstruction and ground truth while the reconstructor
minimizes

    gen_loss = adv_lambda * ||D(G) - D(m)||_2^2 + ||G - m||_2^2.

Adversarial runs can be preceded by an L1 pre-training phase
(``pretrain_steps``) and then alternate one extractor update with one
reconstructor update per step at the reduced ``finetune_rate``.

Training is fully deterministic for a given seed (single-threaded).
"""

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DivergenceError, SizeMismatchError
from .fourier import fft2c
from .imaging import (
    ImagingModel,
    MultiCoilKspace,
    NORM_CONVENTION,
    SamplingMask,
    central_block_norm,
)
from .unrolled import (
    FeatureExtractorParams,
    UnrolledModelParams,
    _feat_bw,
    _feat_fw,
    _unrolled_bw,
    _unrolled_fw,
    init_feature_extractor,
    named_tensors,
    replace_tensors,
)

LOSS_KINDS = ("l1", "l2", "adversarial")


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "l2"
    steps: int = 500
    batch_size: int = 2
    learn_rate: float = 1e-3
    finetune_rate: float = 1e-4
    adv_lambda: float = 1.0
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 100
    pretrain_steps: int = 0  # L1 warm-up steps before the adversarial phase
    freeze_extractor: bool = False
    plain_gradient: bool = False  # raw gradient descent instead of Adam

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learn_rate < 0 or self.finetune_rate < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.finetune_rate > self.learn_rate:
            raise ConfigError("finetune_rate must not exceed learn_rate")
        if self.adv_lambda < 0:
            raise ConfigError("adv_lambda must be non-negative")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.pretrain_steps < 0 or self.pretrain_steps > self.steps:
            raise ConfigError("pretrain_steps must lie in [0, steps]")


@dataclass(eq=False)
class TrainingExample:
    """Ground-truth image with its acquisition context and derived k-space.

    ``kspace`` is always regenerated from (truth, sens, mask) so the
    consistency invariant y = M F S m holds bit-exactly.
    """

    truth: np.ndarray
    sens: np.ndarray
    mask: SamplingMask
    kspace: MultiCoilKspace
    subject_id: str | None = None

    def __post_init__(self):
        expected = _derive_kspace(self.truth, self.sens, self.mask)
        if not np.array_equal(expected, self.kspace.data):
            raise SizeMismatchError(
                "stale k-space: kspace must equal mask * F(S * truth) exactly"
            )

    @classmethod
    def from_truth(
        cls,
        truth: np.ndarray,
        sens: np.ndarray,
        mask: SamplingMask,
        normalize: bool = True,
        subject_id: str | None = None,
    ) -> "TrainingExample":
        """Build an example, normalizing truth so the derived k-space has a
        unit central 5x5 norm (the network's input convention)."""
        truth = np.asarray(truth, dtype=np.complex128)
        sens = np.asarray(sens, dtype=np.complex128)
        tag = None
        if normalize:
            scale = central_block_norm(_derive_kspace(truth, sens, mask))
            if scale == 0:
                raise ConfigError("example has an empty central k-space block")
            truth = truth / scale
            tag = NORM_CONVENTION
        ksp = MultiCoilKspace(
            _derive_kspace(truth, sens, mask), mask=mask, normalized_by=tag
        )
        return cls(truth, sens, mask, ksp, subject_id)

    def model(self) -> ImagingModel:
        return ImagingModel(self.sens, self.mask)


def _derive_kspace(truth, sens, mask: SamplingMask) -> np.ndarray:
    return mask.mask.astype(np.float64) * fft2c(sens * truth[None])


# ---------------------------------------------------------------------------
# losses


def pixel_loss(recon: np.ndarray, truth: np.ndarray, kind: str = "l2") -> float:
    """Sum over pixels of |recon - truth|^2 (l2) or |recon - truth| (l1)."""
    recon = np.asarray(recon)
    truth = np.asarray(truth)
    if recon.shape != truth.shape:
        raise SizeMismatchError(f"shape mismatch {recon.shape} vs {truth.shape}")
    diff = recon - truth
    if kind == "l2":
        return float(np.sum(np.abs(diff) ** 2))
    if kind == "l1":
        return float(np.sum(np.abs(diff)))
    raise ConfigError(f"unknown pixel loss {kind!r}")


def _pixel_loss_grad(recon, truth, kind):
    diff = recon - truth
    if kind == "l2":
        return 2.0 * diff
    mag = np.abs(diff)
    out = np.zeros_like(diff)
    np.divide(diff, mag, out=out, where=mag > 0)
    return out


def adversarial_loss(
    recon: np.ndarray,
    truth: np.ndarray,
    extractor: FeatureExtractorParams,
    adv_lambda: float,
) -> tuple[float, float]:
    """(gen_loss, disc_loss) of the stabilized adversarial objective.

    gen_loss = adv_lambda * ||D(recon) - D(truth)||^2 + ||recon - truth||^2
    is minimized over the reconstructor; disc_loss is the negated feature
    discrepancy, minimized over the extractor (which thereby maximizes it).
    """
    fr, _ = _feat_fw(np.asarray(recon, dtype=np.complex128), extractor)
    ft, _ = _feat_fw(np.asarray(truth, dtype=np.complex128), extractor)
    feat = float(np.sum((fr - ft) ** 2))
    gen = adv_lambda * feat + pixel_loss(recon, truth, "l2")
    return gen, -feat


# ---------------------------------------------------------------------------
# augmentation


def apply_dihedral(arr: np.ndarray, code: int) -> np.ndarray:
    """Apply element ``code`` (0..7) of the flip/transpose group to the last
    two axes: bit 0 = vertical flip, bit 1 = horizontal flip, bit 2 = transpose."""
    out = arr
    if code & 1:
        out = out[..., ::-1, :]
    if code & 2:
        out = out[..., :, ::-1]
    if code & 4:
        out = np.swapaxes(out, -2, -1)
    return np.ascontiguousarray(out)


def augment(example: TrainingExample, rng: np.random.Generator) -> TrainingExample:
    """Random flip/transpose of truth and maps, with k-space regenerated.

    Transposition is only drawn for square grids (non-square grids use the
    four flip combinations); rotations are excluded because they would
    interpolate. The sampling mask is left unchanged.
    """
    h, w = example.truth.shape
    n_codes = 8 if h == w else 4
    code = int(rng.integers(n_codes))
    return augment_with(example, code)


def augment_with(example: TrainingExample, code: int) -> TrainingExample:
    if code == 0:
        return example
    truth = apply_dihedral(example.truth, code)
    sens = apply_dihedral(example.sens, code)
    ksp = MultiCoilKspace(
        _derive_kspace(truth, sens, example.mask),
        mask=example.mask,
        normalized_by=example.kspace.normalized_by,
    )
    return TrainingExample(truth, sens, example.mask, ksp, example.subject_id)


# ---------------------------------------------------------------------------
# optimizer


def adam_init(params) -> dict:
    return {
        "t": 0,
        "m": {name: np.zeros_like(arr) for name, arr in named_tensors(params)},
        "v": {name: np.zeros_like(arr) for name, arr in named_tensors(params)},
    }


def optimizer_step(params, grads, state: dict, rate: float):
    """One Adam update (beta1=0.9, beta2=0.999, eps=1e-8), functional.

    ``rate`` = 0 leaves the parameters unchanged (moments still advance).
    Returns (new_params, new_state).
    """
    b1, b2, eps = 0.9, 0.999, 1e-8
    pt = dict(named_tensors(params))
    gt = dict(named_tensors(grads))
    if set(pt) != set(gt):
        raise SizeMismatchError("gradient tensors do not match parameter tensors")
    t = state["t"] + 1
    new_m, new_v, new_p = {}, {}, {}
    for name, p in pt.items():
        g = gt[name]
        if g.shape != p.shape:
            raise SizeMismatchError(f"gradient shape mismatch for {name}")
        m = b1 * state["m"][name] + (1 - b1) * g
        v = b2 * state["v"][name] + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        new_m[name] = m
        new_v[name] = v
        new_p[name] = p - rate * mhat / (np.sqrt(vhat) + eps)
    return replace_tensors(params, new_p), {"t": t, "m": new_m, "v": new_v}


def _sgd_step(params, grads, rate):
    pt = dict(named_tensors(params))
    gt = dict(named_tensors(grads))
    return replace_tensors(params, {n: pt[n] - rate * gt[n] for n in pt})


def _mean_grads(grad_list):
    template = grad_list[0]
    acc = {name: arr.copy() for name, arr in named_tensors(template)}
    for g in grad_list[1:]:
        for name, arr in named_tensors(g):
            acc[name] += arr
    if len(grad_list) > 1:
        scale = 1.0 / len(grad_list)
        for name in acc:
            acc[name] *= scale
    return replace_tensors(template, acc)


# ---------------------------------------------------------------------------
# training loop


def _theta_grads(params, example, kind, extractor, adv_lambda):
    """Loss and parameter gradients for one example under the given loss."""
    model = example.model()
    out, tape = _unrolled_fw(params, model, example.kspace.data)
    if kind in ("l1", "l2"):
        loss = pixel_loss(out, example.truth, kind)
        upstream = _pixel_loss_grad(out, example.truth, kind)
    else:  # adversarial generator loss
        fr, caches_r = _feat_fw(out, extractor)
        ft, _ = _feat_fw(example.truth, extractor)
        delta = fr - ft
        loss = adv_lambda * float(np.sum(delta**2)) + pixel_loss(
            out, example.truth, "l2"
        )
        upstream = 2.0 * (out - example.truth)
        if adv_lambda > 0:
            gin, _ = _feat_bw(extractor, caches_r, 2.0 * adv_lambda * delta)
            upstream = upstream + gin
    grads, _ = _unrolled_bw(params, model, tape, upstream)
    return loss, grads


def _omega_grads(params, example, extractor):
    """disc_loss and extractor gradients for one example."""
    model = example.model()
    out, _ = _unrolled_fw(params, model, example.kspace.data)
    fr, caches_r = _feat_fw(out, extractor)
    ft, caches_t = _feat_fw(example.truth, extractor)
    delta = fr - ft
    # disc_loss = -||delta||^2; d/dw = -(2 delta via recon path - 2 delta via truth path)
    _, gw_r = _feat_bw(extractor, caches_r, -2.0 * delta)
    _, gw_t = _feat_bw(extractor, caches_t, 2.0 * delta)
    gt = dict(named_tensors(gw_t))
    g = {name: arr + gt[name] for name, arr in named_tensors(gw_r)}
    return -float(np.sum(delta**2)), replace_tensors(gw_r, g)


def train(
    model_init: UnrolledModelParams,
    dataset: list[TrainingExample],
    cfg: TrainConfig,
    extractor_init: FeatureExtractorParams | None = None,
    checkpoint_dir=None,
):
    """Run ``cfg.steps`` optimizer steps over seeded shuffled minibatches.

    Returns (trained params, trained extractor or None, per-step loss
    history). Checkpoints and a step/loss/wall-time log are written when
    ``checkpoint_dir`` is given. Raises DivergenceError on NaN/Inf loss.
    """
    if not dataset:
        raise ConfigError("dataset is empty")
    for i, ex in enumerate(dataset):
        if ex.kspace.normalized_by != NORM_CONVENTION:
            raise ConfigError(
                f"example {i} is not normalized by the central-5x5 rule"
            )

    adversarial = cfg.loss_kind == "adversarial"
    extractor = extractor_init
    if adversarial and extractor is None:
        extractor = init_feature_extractor(seed=cfg.seed + 1)

    params = model_init
    rng = np.random.default_rng(cfg.seed)
    theta_state = adam_init(params)
    omega_state = adam_init(extractor) if adversarial else None

    if checkpoint_dir is not None:
        from . import io as _io  # deferred: io imports TrainingExample from here

        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        log_lines = []

    def maybe_checkpoint(step):
        if checkpoint_dir is None:
            return
        if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == cfg.steps:
            _io.write_weights(checkpoint_dir / f"step_{step + 1:06d}.ckw", params)
            if adversarial:
                _io.write_weights(
                    checkpoint_dir / f"step_{step + 1:06d}.extractor.ckw", extractor
                )

    loss_history = []
    order: list[int] = []
    t_start = time.perf_counter()
    for step in range(cfg.steps):
        batch = []
        for _ in range(cfg.batch_size):
            if not order:
                order = list(rng.permutation(len(dataset)))
            ex = dataset[order.pop(0)]
            if cfg.augment:
                ex = augment(ex, rng)
            batch.append(ex)

        pretraining = adversarial and step < cfg.pretrain_steps
        if adversarial and not pretraining:
            rate = cfg.finetune_rate
            kind = "adversarial"
            if not cfg.freeze_extractor:
                dgrads = []
                for ex in batch:
                    _, gw = _omega_grads(params, ex, extractor)
                    dgrads.append(gw)
                gw = _mean_grads(dgrads)
                if cfg.plain_gradient:
                    extractor = _sgd_step(extractor, gw, rate)
                else:
                    extractor, omega_state = optimizer_step(
                        extractor, gw, omega_state, rate
                    )
        elif pretraining:
            rate = cfg.learn_rate
            kind = "l1"
        else:
            rate = cfg.learn_rate
            kind = cfg.loss_kind

        losses, tgrads = [], []
        for ex in batch:
            loss, g = _theta_grads(params, ex, kind, extractor, cfg.adv_lambda)
            losses.append(loss)
            tgrads.append(g)
        step_loss = float(np.mean(losses))
        if not np.isfinite(step_loss):
            raise DivergenceError(f"loss became non-finite at step {step}")
        g = _mean_grads(tgrads)
        if cfg.plain_gradient:
            params = _sgd_step(params, g, rate)
        else:
            params, theta_state = optimizer_step(params, g, theta_state, rate)

        loss_history.append(step_loss)
        if checkpoint_dir is not None:
            log_lines.append(
                f"{step}\t{step_loss:.10e}\t{time.perf_counter() - t_start:.3f}"
            )
        maybe_checkpoint(step)

    if checkpoint_dir is not None:
        (checkpoint_dir / "training_log.txt").write_text(
            "\n".join(log_lines) + "\n"
        )
    return params, extractor, np.asarray(loss_history)
