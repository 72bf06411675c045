"""Classical compressed-sensing reconstruction: proximal gradient descent
(ISTA) with L1-wavelet regularization, optional FISTA momentum.

Each iteration performs

    m+     = m - 2 t A^H (A m - y)
    m_next = Psi^-1 soft_threshold(Psi m+, t * lambda)

starting from the zero-filled image A^H y. This is proximal gradient
descent with step t on the objective ||A m - y||^2 + lambda ||Psi m||_1,
which is non-increasing across ISTA iterations for t <= 0.5 (after map
normalization the data-term gradient has Lipschitz constant <= 2);
``residual_history`` records that objective.

Grids whose dimensions are not divisible by 2^levels are zero-padded in the
image domain inside the wavelet prox and cropped back, leaving the imaging
model untouched.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DivergenceError
from .imaging import ImagingModel, MultiCoilKspace
from .wavelets import soft_threshold, wavelet_forward, wavelet_inverse


@dataclass(frozen=True)
class CsConfig:
    lam: float = 0.01
    step: float = 0.45
    max_iters: int = 200
    tol: float = 1e-5
    wavelet_levels: int = 3
    wavelet: str = "haar"
    use_fista: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.step <= 0:
            raise ConfigError("step must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.tol < 0:
            raise ConfigError("tol must be non-negative")
        if self.wavelet_levels < 1:
            raise ConfigError("wavelet_levels must be >= 1")


def _next_valid(n: int, levels: int) -> int:
    div = 1 << levels
    return ((n + div - 1) // div) * div


class _WaveletProx:
    """soft-threshold in the wavelet domain, padding to a valid size."""

    def __init__(self, h, w, levels, wavelet):
        self.levels = levels
        self.wavelet = wavelet
        self.h, self.w = h, w
        self.ph, self.pw = _next_valid(h, levels), _next_valid(w, levels)

    def _pad(self, m):
        if (self.ph, self.pw) == (self.h, self.w):
            return m
        out = np.zeros((self.ph, self.pw), dtype=m.dtype)
        out[: self.h, : self.w] = m
        return out

    def transform(self, m):
        return wavelet_forward(self._pad(m), self.levels, self.wavelet)

    def apply(self, m, tau):
        if tau <= 0:
            return m
        coeffs = soft_threshold(self.transform(m), tau)
        out = wavelet_inverse(coeffs, self.levels, self.wavelet)
        return np.ascontiguousarray(out[: self.h, : self.w])

    def l1(self, m):
        return float(np.sum(np.abs(self.transform(m))))


def cs_reconstruct(
    model: ImagingModel, y, cfg: CsConfig
) -> tuple[np.ndarray, int, np.ndarray]:
    """L1-wavelet CS reconstruction.

    Returns (image, iterations used, objective history). The history has the
    initial objective followed by one value per iteration. Raises
    DivergenceError if the objective exceeds 10x its initial value (step too
    large).
    """
    h, w = model.shape
    if (1 << cfg.wavelet_levels) > min(h, w):
        raise ConfigError(
            f"wavelet_levels={cfg.wavelet_levels} too deep for {h}x{w} grid"
        )
    ydata = y.data if isinstance(y, MultiCoilKspace) else np.asarray(y)
    prox = _WaveletProx(h, w, cfg.wavelet_levels, cfg.wavelet)
    t = cfg.step
    lam = cfg.lam

    def objective(m, resid):
        val = float(np.sum(np.abs(resid) ** 2))
        if lam > 0:
            val += lam * prox.l1(m)
        return val

    m = model._adjoint_arr(ydata)
    resid = model._forward_arr(m) - ydata
    history = [objective(m, resid)]
    obj0 = max(history[0], np.finfo(float).tiny)

    z = m  # FISTA extrapolation point (equals the iterate for ISTA)
    fista_t = 1.0
    iters = 0
    for k in range(cfg.max_iters):
        grad = model._adjoint_arr(model._forward_arr(z) - ydata)
        m_new = prox.apply(z - 2.0 * t * grad, t * lam)
        iters = k + 1

        resid = model._forward_arr(m_new) - ydata
        history.append(objective(m_new, resid))
        if not np.isfinite(history[-1]) or history[-1] > 10.0 * obj0:
            raise DivergenceError(
                f"objective grew to {history[-1]:.3e} at iteration {iters} "
                f"(>10x initial); reduce the step size t={t}"
            )

        denom = np.linalg.norm(m)
        diff = np.linalg.norm(m_new - m)
        rel = diff / denom if denom > 0 else (0.0 if diff == 0 else np.inf)
        if cfg.use_fista:
            fista_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * fista_t**2))
            z = m_new + ((fista_t - 1.0) / fista_next) * (m_new - m)
            fista_t = fista_next
        else:
            z = m_new
        m = m_new
        if rel < cfg.tol:
            break

    return m, iters, np.asarray(history)
