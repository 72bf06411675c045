"""sklearn-style estimator wrappers over the reconstruction algorithms.

These are the recommended Python entry points: hyperparameters live in
``__init__`` (so ``get_params``/``set_params``/``clone`` work), ``fit``
trains where training applies, and ``predict`` maps measured k-space to a
complex image. Inputs are validated through the shared helpers; the mask
may be omitted, in which case the sampling support is inferred from the
nonzero k-space entries.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .cs import CsConfig, cs_reconstruct
from .exceptions import ConfigError, SizeMismatchError
from .imaging import ImagingModel, MultiCoilKspace, SamplingMask, normalize_kspace
from .training import TrainConfig, train
from .unrolled import init_feature_extractor, init_unrolled, unrolled_forward
from .validation import as_coil_stack


def _as_mask(mask, kspace_data: np.ndarray) -> SamplingMask:
    if isinstance(mask, SamplingMask):
        return mask
    if mask is not None:
        return SamplingMask.from_grid(np.asarray(mask))
    support = np.any(kspace_data != 0, axis=0)
    if not support.any():
        raise SizeMismatchError("cannot infer a sampling mask from all-zero k-space")
    return SamplingMask.from_grid(support)


def _build_inputs(kspace, sens, mask):
    if isinstance(kspace, MultiCoilKspace):
        data = kspace.data
        if mask is None and kspace.mask is not None:
            mask = kspace.mask
    else:
        data = as_coil_stack(kspace, "k-space")
    mask = _as_mask(mask, data)
    model = ImagingModel(as_coil_stack(sens, "sensitivity maps"), mask)
    return MultiCoilKspace(data * mask.mask, mask=mask), model


class ZeroFilledReconstructor(BaseEstimator):
    """Baseline A^H y reconstruction; stateless."""

    def fit(self, X=None, y=None):
        return self

    def predict(self, kspace, sens, mask=None) -> np.ndarray:
        ksp, model = _build_inputs(kspace, sens, mask)
        return model.zero_filled(ksp)


class CsReconstructor(BaseEstimator):
    """L1-wavelet compressed sensing via proximal gradient descent.

    The input is normalized by the central-5x5 k-space rule before solving
    (so ``lam`` is scale free) and the output is scaled back.
    """

    def __init__(
        self,
        lam: float = 0.01,
        step: float = 0.45,
        max_iters: int = 200,
        tol: float = 1e-5,
        wavelet: str = "haar",
        wavelet_levels: int = 3,
        use_fista: bool = False,
    ):
        self.lam = lam
        self.step = step
        self.max_iters = max_iters
        self.tol = tol
        self.wavelet = wavelet
        self.wavelet_levels = wavelet_levels
        self.use_fista = use_fista

    def _config(self) -> CsConfig:
        return CsConfig(
            lam=self.lam,
            step=self.step,
            max_iters=self.max_iters,
            tol=self.tol,
            wavelet_levels=self.wavelet_levels,
            wavelet=self.wavelet,
            use_fista=self.use_fista,
        )

    def fit(self, X=None, y=None):
        return self

    def predict(self, kspace, sens, mask=None) -> np.ndarray:
        ksp, model = _build_inputs(kspace, sens, mask)
        normalized, scale = normalize_kspace(ksp)
        image, self.iters_used_, self.objective_history_ = cs_reconstruct(
            model, normalized, self._config()
        )
        return image * scale


class UnrolledReconstructor(BaseEstimator):
    """Data-driven unrolled proximal-gradient reconstruction.

    ``fit`` trains on a list of :class:`csmri.training.TrainingExample`;
    ``predict`` normalizes the input k-space, runs the network, and scales
    the image back to the input units.
    """

    def __init__(
        self,
        iterations: int = 4,
        features: int = 64,
        resblocks: int = 2,
        kernel_size: int = 3,
        share_weights: bool = False,
        loss: str = "l2",
        steps: int = 500,
        batch_size: int = 2,
        learn_rate: float = 1e-3,
        finetune_rate: float = 1e-4,
        adv_lambda: float = 1.0,
        pretrain_steps: int = 0,
        augment: bool = True,
        seed: int = 0,
        checkpoint_every: int = 100,
        extractor_channels: tuple = (32, 64, 128),
        extractor_strides: tuple = (1, 2, 2),
    ):
        self.iterations = iterations
        self.features = features
        self.resblocks = resblocks
        self.kernel_size = kernel_size
        self.share_weights = share_weights
        self.loss = loss
        self.steps = steps
        self.batch_size = batch_size
        self.learn_rate = learn_rate
        self.finetune_rate = finetune_rate
        self.adv_lambda = adv_lambda
        self.pretrain_steps = pretrain_steps
        self.augment = augment
        self.seed = seed
        self.checkpoint_every = checkpoint_every
        self.extractor_channels = extractor_channels
        self.extractor_strides = extractor_strides

    def _train_config(self) -> TrainConfig:
        aliases = {"l1": "l1", "l2": "l2", "adv": "adversarial",
                   "adversarial": "adversarial"}
        if self.loss not in aliases:
            raise ConfigError(f"loss must be one of {sorted(aliases)}, got {self.loss!r}")
        kind = aliases[self.loss]
        return TrainConfig(
            loss_kind=kind,
            steps=self.steps,
            batch_size=self.batch_size,
            learn_rate=self.learn_rate,
            finetune_rate=self.finetune_rate,
            adv_lambda=self.adv_lambda,
            seed=self.seed,
            augment=self.augment,
            checkpoint_every=self.checkpoint_every,
            pretrain_steps=self.pretrain_steps,
        )

    def fit(self, examples, y=None, checkpoint_dir=None):
        """Train the unrolled network on TrainingExample instances."""
        init = init_unrolled(
            self.iterations,
            self.features,
            self.resblocks,
            self.kernel_size,
            seed=self.seed,
            share_weights=self.share_weights,
        )
        cfg = self._train_config()
        extractor = None
        if cfg.loss_kind == "adversarial":
            extractor = init_feature_extractor(
                tuple(self.extractor_channels),
                tuple(self.extractor_strides),
                self.kernel_size,
                seed=self.seed + 1,
            )
        self.params_, self.extractor_, self.loss_history_ = train(
            init, list(examples), cfg, extractor, checkpoint_dir
        )
        return self

    def predict(self, kspace, sens, mask=None) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise RuntimeError("UnrolledReconstructor is not fitted; call fit() "
                               "or assign params_ from a weights file")
        ksp, model = _build_inputs(kspace, sens, mask)
        normalized, scale = normalize_kspace(ksp)
        return unrolled_forward(self.params_, model, normalized) * scale

    def score(self, examples, y=None) -> float:
        """Mean PSNR (dB) of predictions against the example ground truths."""
        from .metrics import psnr

        vals = []
        for ex in examples:
            recon = self.predict(ex.kspace, ex.sens, ex.mask)
            vals.append(psnr(recon, ex.truth))
        return float(np.mean(vals))
