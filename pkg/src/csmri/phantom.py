"""Synthetic multi-coil phantom generator.

Produces a piecewise-smooth ellipse phantom with a low-order polynomial
phase, smooth Gaussian coil sensitivity profiles (RSS-normalized, phases
referenced to coil 0 so a single-coil setup has S == 1 exactly), and the
corresponding fully-sampled noisy k-space. Everything is deterministic for
a given seed.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .fourier import fft2c
from .imaging import MultiCoilKspace


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 64
    width: int = 64
    coils: int = 4
    n_ellipses: int = 8
    noise_sigma: float = 0.0  # std of the complex noise sample per k-space point
    seed: int = 0

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ConfigError("phantom grids must be at least 32x32")
        if self.coils < 1:
            raise ConfigError("at least one coil required")
        if self.n_ellipses < 1:
            raise ConfigError("at least one ellipse required")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


def _ellipse(u, v, cy, cx, ry, rx, angle):
    du = u - cy
    dv = v - cx
    ca, sa = np.cos(angle), np.sin(angle)
    p = (du * ca + dv * sa) / ry
    q = (-du * sa + dv * ca) / rx
    return (p * p + q * q) <= 1.0


def simulate_phantom(
    spec: PhantomSpec,
) -> tuple[np.ndarray, np.ndarray, MultiCoilKspace]:
    """Returns (truth image, true sensitivity maps, fully-sampled k-space)."""
    rng = np.random.default_rng(spec.seed)
    h, w, c = spec.height, spec.width, spec.coils
    u = np.linspace(-1.0, 1.0, h)[:, None] * np.ones((1, w))
    v = np.ones((h, 1)) * np.linspace(-1.0, 1.0, w)[None, :]

    # piecewise-constant ellipse stack on a smooth body
    mag = np.zeros((h, w))
    mag += 1.0 * _ellipse(u, v, 0.0, 0.0, 0.82, 0.78, 0.0)
    for _ in range(spec.n_ellipses - 1):
        cy, cx = rng.uniform(-0.45, 0.45, size=2)
        ry, rx = rng.uniform(0.08, 0.4, size=2)
        amp = rng.uniform(-0.5, 0.8)
        mag += amp * _ellipse(u, v, cy, cx, ry, rx, rng.uniform(0, np.pi))
    mag = np.clip(mag, 0.0, None)
    peak = mag.max()
    if peak > 0:
        mag /= peak

    # smooth low-order polynomial phase (no interpolation artifacts)
    c0 = rng.uniform(-np.pi, np.pi)
    lin = rng.uniform(-1.2, 1.2, size=2)
    quad = rng.uniform(-0.8, 0.8, size=3)
    phase = c0 + lin[0] * u + lin[1] * v + quad[0] * u * u + quad[1] * u * v + quad[2] * v * v
    truth = mag * np.exp(1j * phase)

    # shifted Gaussian coil profiles with mild linear phases, RSS-normalized
    angles = 2.0 * np.pi * np.arange(c) / c + rng.uniform(0, 2 * np.pi)
    sigma = 0.9
    profiles = np.empty((c, h, w), dtype=np.complex128)
    for k in range(c):
        cy = 1.1 * np.sin(angles[k])
        cx = 1.1 * np.cos(angles[k])
        g = np.exp(-((u - cy) ** 2 + (v - cx) ** 2) / (2.0 * sigma**2))
        ph = rng.uniform(-np.pi, np.pi) + rng.uniform(-0.8, 0.8) * u + rng.uniform(-0.8, 0.8) * v
        profiles[k] = g * np.exp(1j * ph)
    rss = np.sqrt(np.sum(np.abs(profiles) ** 2, axis=0))
    sens = profiles / rss
    sens = sens * np.exp(-1j * np.angle(sens[0]))[None]  # coil-0 phase reference

    ksp = fft2c(sens * truth[None])
    if spec.noise_sigma > 0:
        noise = rng.standard_normal((c, h, w)) + 1j * rng.standard_normal((c, h, w))
        ksp = ksp + spec.noise_sigma / np.sqrt(2.0) * noise
    return truth, sens, MultiCoilKspace(ksp)
