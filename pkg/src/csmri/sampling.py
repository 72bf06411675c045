"""Variable-density Poisson-disc sampling masks and retrospective undersampling.

Masks are generated by Bridson-style dart throwing with an active list,
adapted to the integer k-space grid and to a radius that grows with the
distance from the k-space center:

    r(k) = r0 * (1 + alpha * ||k - center|| / k_max)

Two accepted samples a, b outside the calibration block always satisfy
dist(a, b) >= min(r(a), r(b)). The base radius r0 is tuned by bisection so
the nominal acceleration (eligible points / sampled points, where
"eligible" excludes the corner-cut region) lands within 10% of the target.

Determinism: the generator uses an inline xoshiro256++ PRNG seeded through
splitmix64 from the 64-bit spec seed, so identical specs produce
bit-identical masks on every platform. All geometric tests use IEEE-exact
arithmetic (no transcendentals).
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .exceptions import InfeasibleSpecError, SizeMismatchError
from .imaging import MultiCoilKspace, SamplingMask


@dataclass(frozen=True)
class MaskSpec:
    """Parameters of one Poisson-disc sampling mask."""

    height: int
    width: int
    accel: float
    calib_h: int = 20
    calib_w: int = 20
    corner_cutting: bool = False
    seed: int = 0
    alpha: float = 2.0  # density falloff: radius grows (1 + alpha) from center to edge

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise SizeMismatchError("grid extents must be positive")
        if self.calib_h < 0 or self.calib_w < 0:
            raise SizeMismatchError("calibration extents must be non-negative")
        if self.calib_h > self.height or self.calib_w > self.width:
            raise SizeMismatchError(
                f"calibration block {self.calib_h}x{self.calib_w} exceeds grid "
                f"{self.height}x{self.width}"
            )
        if self.alpha < 0:
            raise SizeMismatchError("alpha must be non-negative")


@njit(cache=True)
def _xoshiro_next(s):
    """xoshiro256++ step on a 4-element uint64 state; returns a uint64."""
    one = np.uint64(23)
    res = s[0] + s[3]
    res = ((res << one) | (res >> np.uint64(41))) + s[0]
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << np.uint64(45)) | (s[3] >> np.uint64(19))
    return res


@njit(cache=True)
def _seed_state(seed):
    """Expand a 64-bit seed into the xoshiro state via splitmix64."""
    s = np.empty(4, dtype=np.uint64)
    x = np.uint64(seed)
    for i in range(4):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        z = x
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        s[i] = z ^ (z >> np.uint64(31))
    return s


@njit(cache=True)
def _uniform01(s):
    return (_xoshiro_next(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _dart_throw(h, w, r0, alpha, corner_cutting, seed):
    """Run one dart-throwing pass; returns the (h, w) uint8 sample grid."""
    cy = h // 2
    cx = w // 2
    kmax = math.sqrt(
        float(max(cy, h - 1 - cy)) ** 2 + float(max(cx, w - 1 - cx)) ** 2
    )
    if kmax == 0.0:
        kmax = 1.0
    ay = h / 2.0  # ellipse semi-axes for corner cutting
    ax = w / 2.0

    rng = _seed_state(seed)
    occ = np.zeros((h, w), dtype=np.uint8)

    nmax = h * w
    sy = np.empty(nmax, dtype=np.int32)
    sx = np.empty(nmax, dtype=np.int32)
    sr = np.empty(nmax, dtype=np.float64)
    active = np.empty(nmax, dtype=np.int32)

    cell = 4
    nch = (h + cell - 1) // cell
    ncw = (w + cell - 1) // cell
    cell_count = np.zeros((nch, ncw), dtype=np.int32)
    cell_items = np.zeros((nch, ncw, cell * cell), dtype=np.int32)

    def radius_at(y, x):
        d = math.sqrt(float(y - cy) ** 2 + float(x - cx) ** 2)
        return r0 * (1.0 + alpha * d / kmax)

    n = 0
    nact = 0

    # seed sample at the k-space center
    sy[n] = cy
    sx[n] = cx
    sr[n] = radius_at(cy, cx)
    occ[cy, cx] = 1
    cell_items[cy // cell, cx // cell, cell_count[cy // cell, cx // cell]] = n
    cell_count[cy // cell, cx // cell] += 1
    active[nact] = n
    n += 1
    nact += 1

    while nact > 0:
        pick = int(_xoshiro_next(rng) % np.uint64(nact))
        pi = active[pick]
        py = float(sy[pi])
        px = float(sx[pi])
        rp = sr[pi]

        placed = False
        for _ in range(30):
            # draw a point in the annulus [rp, 2*rp] by rejection (no trig)
            dy = 0.0
            dx = 0.0
            ok = False
            for _ in range(8):
                dy = (2.0 * _uniform01(rng) - 1.0) * 2.0 * rp
                dx = (2.0 * _uniform01(rng) - 1.0) * 2.0 * rp
                d2 = dy * dy + dx * dx
                if d2 >= rp * rp and d2 <= 4.0 * rp * rp:
                    ok = True
                    break
            if not ok:
                continue
            iy = int(math.floor(py + dy + 0.5))
            ix = int(math.floor(px + dx + 0.5))
            if iy < 0 or iy >= h or ix < 0 or ix >= w:
                continue
            if occ[iy, ix] == 1:
                continue
            if corner_cutting:
                ey = (iy - cy) / ay
                ex = (ix - cx) / ax
                if ey * ey + ex * ex > 1.0:
                    continue
            rc = radius_at(iy, ix)
            # conflict scan over cells within rc
            reach = int(rc) // cell + 1
            cy0 = max(iy // cell - reach, 0)
            cy1 = min(iy // cell + reach, nch - 1)
            cx0 = max(ix // cell - reach, 0)
            cx1 = min(ix // cell + reach, ncw - 1)
            conflict = False
            for gy in range(cy0, cy1 + 1):
                for gx in range(cx0, cx1 + 1):
                    for k in range(cell_count[gy, gx]):
                        j = cell_items[gy, gx, k]
                        ddy = float(iy - sy[j])
                        ddx = float(ix - sx[j])
                        rmin = min(rc, sr[j])
                        if ddy * ddy + ddx * ddx < rmin * rmin:
                            conflict = True
                            break
                    if conflict:
                        break
                if conflict:
                    break
            if conflict:
                continue
            sy[n] = iy
            sx[n] = ix
            sr[n] = rc
            occ[iy, ix] = 1
            cell_items[iy // cell, ix // cell, cell_count[iy // cell, ix // cell]] = n
            cell_count[iy // cell, ix // cell] += 1
            active[nact] = n
            n += 1
            nact += 1
            placed = True
            break
        if not placed:
            active[pick] = active[nact - 1]
            nact -= 1

    return occ


def ellipse_support(h: int, w: int) -> np.ndarray:
    """Boolean grid of points inside the centered inscribed ellipse."""
    cy, cx = h // 2, w // 2
    yy = (np.arange(h) - cy) / (h / 2.0)
    xx = (np.arange(w) - cx) / (w / 2.0)
    return (yy[:, None] ** 2 + xx[None, :] ** 2) <= 1.0


def _assemble(spec: MaskSpec, grid: np.ndarray) -> SamplingMask:
    h, w = spec.height, spec.width
    out = grid.astype(np.uint8).copy()
    if spec.corner_cutting:
        out[~ellipse_support(h, w)] = 0
    rs = slice(h // 2 - spec.calib_h // 2, h // 2 - spec.calib_h // 2 + spec.calib_h)
    cs = slice(w // 2 - spec.calib_w // 2, w // 2 - spec.calib_w // 2 + spec.calib_w)
    out[rs, cs] = 1
    return SamplingMask(out, spec.calib_h, spec.calib_w, spec.accel)


def poisson_disc_mask(spec: MaskSpec) -> SamplingMask:
    """Generate a variable-density Poisson-disc mask for ``spec``.

    Raises InfeasibleSpecError when the target acceleration cannot be met
    (calibration block alone over budget, accel < 1, or bisection failure).
    """
    h, w = spec.height, spec.width
    if spec.accel < 1.0:
        raise InfeasibleSpecError(f"acceleration {spec.accel} is below 1")

    eligible = ellipse_support(h, w) if spec.corner_cutting else np.ones((h, w), bool)
    n_eligible = int(eligible.sum())
    target = n_eligible / spec.accel
    calib_count = spec.calib_h * spec.calib_w
    if target < calib_count:
        raise InfeasibleSpecError(
            f"calibration block ({calib_count} samples) exceeds the sampling "
            f"budget ({target:.0f} samples) for R={spec.accel}"
        )

    if spec.accel == 1.0:
        full = np.zeros((h, w), dtype=np.uint8)
        full[eligible] = 1
        return _assemble(spec, full)

    seed = spec.seed & 0xFFFFFFFFFFFFFFFF

    def nominal_of(r0: float) -> tuple[float, np.ndarray]:
        grid = _dart_throw(h, w, r0, spec.alpha, spec.corner_cutting, seed)
        mask = _assemble(spec, grid)
        return n_eligible / float(mask.mask.sum()), mask.mask

    # bracket: nominal acceleration grows monotonically (noisily) with r0
    lo = 0.4
    hi = max(1.5, math.sqrt(spec.accel))
    a_hi, grid_hi = nominal_of(hi)
    for _ in range(40):
        if a_hi >= spec.accel:
            break
        hi *= 1.6
        a_hi, grid_hi = nominal_of(hi)
    else:
        raise InfeasibleSpecError(f"could not bracket acceleration {spec.accel}")

    best_err = abs(math.log(a_hi / spec.accel))
    best_grid = grid_hi
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        a_mid, grid_mid = nominal_of(mid)
        err = abs(math.log(a_mid / spec.accel))
        if err < best_err:
            best_err, best_grid = err, grid_mid
        if err < math.log(1.03):
            break
        if a_mid > spec.accel:
            hi = mid
        else:
            lo = mid

    if best_err > math.log(1.10):
        raise InfeasibleSpecError(
            f"bisection could not reach R={spec.accel} within 10% "
            f"(best off by {math.exp(best_err):.3f}x)"
        )
    return SamplingMask(best_grid, spec.calib_h, spec.calib_w, spec.accel)


def nominal_accel(mask: SamplingMask, corner_cutting: bool) -> float:
    """Eligible points / sampled points (the bisection target quantity)."""
    h, w = mask.shape
    n_eligible = int(ellipse_support(h, w).sum()) if corner_cutting else h * w
    return n_eligible / float(mask.mask.sum())


def retrospective_undersample(full, mask: SamplingMask) -> MultiCoilKspace:
    """Mask fully-sampled k-space elementwise per coil; attaches the mask."""
    data = full.data if isinstance(full, MultiCoilKspace) else None
    if data is None:
        data = np.asarray(full, dtype=np.complex128)
        if data.ndim == 2:
            data = data[None]
    if data.shape[-2:] != mask.shape:
        raise SizeMismatchError(
            f"k-space grid {data.shape[-2:]} does not match mask {mask.shape}"
        )
    return MultiCoilKspace(data * mask.mask, mask=mask)
