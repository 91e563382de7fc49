"""Imaging operators for subsampled-Fourier measurements and a Haar/gradient analysis frame.

Conventions used throughout the package:

- Images are n-by-n complex arrays stored as flat row-major vectors of
  length N = n*n, with n a power of two.
- The 2D DFT is unnormalized, so F F* = N I.
- Sampling masks index the *centered* spectrum: frequency (w1, w2) with
  w1, w2 in [-n/2, n/2) maps to flat index (w1 + n/2)*n + (w2 + n/2),
  i.e. the standard fftshift layout.
- The measurement operator A = (1/sqrt(m)) P_Omega F satisfies
  A A* = (N/m) I exactly.
- The analysis operator stacks an orthonormal full-level 2D Haar
  transform on top of a weighted periodic anisotropic gradient:
  W* x = [Phi* x; sqrt(weight) * grad x], giving frame bounds
  [1, 1 + 8*weight] for W W*.

All operators come as forward/adjoint pairs satisfying
<L x, y> = <x, L* y> under the complex dot product.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

__all__ = [
    "ImageGrid",
    "SamplingMask",
    "MaskDensityConfig",
    "MeasurementOperator",
    "AnalysisOperator",
    "image_vector",
    "dft2_forward",
    "dft2_adjoint",
    "haar_forward",
    "haar_inverse",
    "gradient_forward",
    "gradient_adjoint",
    "measure",
    "measure_adjoint",
    "analysis_apply",
    "synthesis_apply",
    "generate_mask",
    "load_mask",
    "save_mask",
    "full_mask",
    "best_s_term_error",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class ImageGrid:
    """A square complex image, vectorized row-major.

    The side must be a power of two; the full-level Haar transform
    requires it.
    """

    side: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.side):
            raise ValueError(f"side must be a power of two, got {self.side}")
        self.data = np.asarray(self.data, dtype=np.complex128).reshape(-1)
        if self.data.size != self.side * self.side:
            raise ValueError(
                f"data length {self.data.size} does not match side {self.side}"
            )

    @classmethod
    def zeros(cls, side: int) -> "ImageGrid":
        return cls(side, np.zeros(side * side, dtype=np.complex128))

    @classmethod
    def from_2d(cls, arr) -> "ImageGrid":
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected a square 2D array, got shape {arr.shape}")
        return cls(arr.shape[0], arr.astype(np.complex128).reshape(-1))

    def to_2d(self) -> np.ndarray:
        return self.data.reshape(self.side, self.side)

    @property
    def size(self) -> int:
        return self.side * self.side


def image_vector(x, side: int | None = None) -> np.ndarray:
    """Coerce an ImageGrid or array to a flat complex vector, checking the side."""
    if isinstance(x, ImageGrid):
        if side is not None and x.side != side:
            raise ValueError(f"image side {x.side} does not match expected {side}")
        return x.data
    v = np.asarray(x, dtype=np.complex128).reshape(-1)
    if side is not None and v.size != side * side:
        raise ValueError(f"vector length {v.size} does not match side {side}")
    return v


def _infer_side(v: np.ndarray) -> int:
    side = math.isqrt(v.size)
    if side * side != v.size or not _is_power_of_two(side):
        raise ValueError(f"length {v.size} is not the square of a power of two")
    return side


# ---------------------------------------------------------------------------
# Fourier transform and sampling


def dft2_forward(x) -> np.ndarray:
    """Unnormalized 2D DFT of a vectorized image; DC at flat index 0."""
    v = image_vector(x)
    side = _infer_side(v)
    return np.fft.fft2(v.reshape(side, side)).reshape(-1)


def dft2_adjoint(z) -> np.ndarray:
    """Adjoint of dft2_forward: F* z = N * ifft2(z)."""
    v = np.asarray(z, dtype=np.complex128).reshape(-1)
    side = _infer_side(v)
    return (v.size * np.fft.ifft2(v.reshape(side, side))).reshape(-1)


@dataclass
class SamplingMask:
    """Sorted distinct flat frequency indices into the centered (fftshifted) spectrum."""

    side: int
    indices: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.side):
            raise ValueError(f"side must be a power of two, got {self.side}")
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        n2 = self.side * self.side
        if idx.size < 1 or idx.size > n2:
            raise ValueError(f"mask must select between 1 and {n2} frequencies")
        if np.any(idx < 0) or np.any(idx >= n2):
            raise ValueError("mask indices out of range")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("mask indices must be strictly increasing")
        self.indices = idx

    @property
    def m(self) -> int:
        return int(self.indices.size)


def full_mask(side: int) -> SamplingMask:
    return SamplingMask(side, np.arange(side * side, dtype=np.int64))


@dataclass
class MaskDensityConfig:
    """Variable-density sampling: an inverse-square-law core plus a uniform tail.

    Low frequencies are kept with probability min(1, C/(w1^2 + w2^2 + 1));
    C is calibrated so the expected core size is split * target_m.  The
    complement is thinned uniformly so the expected total is target_m.
    """

    side: int
    target_m: int
    split: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.side):
            raise ValueError(f"side must be a power of two, got {self.side}")
        if not 1 <= self.target_m <= self.side * self.side:
            raise ValueError("target_m out of range")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie strictly between 0 and 1")


@lru_cache(maxsize=32)
def _inverse_square_probs(side: int, expected: float) -> np.ndarray:
    """Per-frequency keep probabilities min(1, C/(|w|^2+1)) with sum == expected.

    C is found by bisection; the sum is continuous and increasing in C.
    """
    w = np.arange(side, dtype=np.float64) - side // 2
    r2 = (w[:, None] ** 2 + w[None, :] ** 2 + 1.0).reshape(-1)
    lo, hi = 0.0, float(r2.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.minimum(1.0, mid / r2).sum() < expected:
            lo = mid
        else:
            hi = mid
    probs = np.minimum(1.0, 0.5 * (lo + hi) / r2)
    probs.setflags(write=False)
    return probs


def generate_mask(cfg: MaskDensityConfig) -> SamplingMask:
    """Draw a two-component Bernoulli mask; deterministic for a fixed seed.

    Retries with a fresh substream if the draw comes out empty (possible
    for tiny target_m), failing after 16 attempts.
    """
    n2 = cfg.side * cfg.side
    core_probs = _inverse_square_probs(cfg.side, cfg.split * cfg.target_m)
    tail_expected = (1.0 - cfg.split) * cfg.target_m
    # Deterministic tail probability; for target_m == N this is exactly 1,
    # so the complement is always fully included and the mask is all-ones.
    tail_prob = min(1.0, tail_expected / (n2 - cfg.split * cfg.target_m))
    for attempt in range(16):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(attempt,)))
        u = rng.random(n2)
        core = u < core_probs
        tail = ~core & (rng.random(n2) < tail_prob)
        keep = np.flatnonzero(core | tail).astype(np.int64)
        if keep.size > 0:
            return SamplingMask(cfg.side, keep, seed=cfg.seed)
    raise RuntimeError(
        f"mask generation produced an empty mask 16 times (target_m={cfg.target_m})"
    )


_MASK_MAGIC = "# nestanet-mask"


def save_mask(mask: SamplingMask, path) -> None:
    lines = [f"{_MASK_MAGIC} side={mask.side} m={mask.m} seed={mask.seed}"]
    lines.extend(str(int(i)) for i in mask.indices)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mask(path) -> SamplingMask:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(_MASK_MAGIC):
        raise ValueError(f"{path}: not a mask file (missing '{_MASK_MAGIC}' header)")
    fields = dict(tok.split("=", 1) for tok in lines[0][len(_MASK_MAGIC):].split())
    side, m, seed = int(fields["side"]), int(fields["m"]), int(fields["seed"])
    idx = np.array([int(ln) for ln in lines[1:]], dtype=np.int64)
    if idx.size != m:
        raise ValueError(f"{path}: header says m={m} but found {idx.size} indices")
    return SamplingMask(side, idx, seed=seed)


def mask_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class MeasurementOperator:
    """A = (1/sqrt(m)) P_Omega F on the centered spectrum; A A* = (N/m) I."""

    mask: SamplingMask
    _rows: np.ndarray = field(init=False, repr=False)
    _cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = self.mask.side
        # Centered flat index -> (row, col) in the unshifted spectrum.
        r = self.mask.indices // n
        c = self.mask.indices % n
        self._rows = (r + n - n // 2) % n
        self._cols = (c + n - n // 2) % n

    @property
    def side(self) -> int:
        return self.mask.side

    @property
    def m(self) -> int:
        return self.mask.m

    @property
    def n_pixels(self) -> int:
        return self.mask.side * self.mask.side

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.mask.m)

    @property
    def nu(self) -> float:
        """A A* = nu I with nu = N/m."""
        return self.n_pixels / self.mask.m

    def apply(self, v: np.ndarray) -> np.ndarray:
        n = self.mask.side
        spec = np.fft.fft2(v.reshape(n, n))
        return self.scale * spec[self._rows, self._cols]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        n = self.mask.side
        spec = np.zeros((n, n), dtype=np.complex128)
        spec[self._rows, self._cols] = y
        return (self.scale * self.n_pixels) * np.fft.ifft2(spec).reshape(-1)

    def pseudo_inverse(self, y: np.ndarray) -> np.ndarray:
        """A' y = nu^{-1} A* y; exact right inverse since A A* = nu I."""
        return self.adjoint(np.asarray(y, dtype=np.complex128)) / self.nu


def measure(A: MeasurementOperator, x) -> np.ndarray:
    return A.apply(image_vector(x, A.side))


def measure_adjoint(A: MeasurementOperator, y) -> ImageGrid:
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    if y.size != A.m:
        raise ValueError(f"measurement length {y.size} does not match m={A.m}")
    return ImageGrid(A.side, A.adjoint(y))


# ---------------------------------------------------------------------------
# Orthonormal full-level 2D Haar transform
#
# Coefficient layout: the single approximation coefficient first, then the
# three detail bands per level from coarsest to finest, each level in
# (LH, HL, HH) order with row-major entries.  LH is low-pass vertical /
# high-pass horizontal, HL the opposite.


def haar_forward_raw(v: np.ndarray, side: int) -> np.ndarray:
    cur = v.reshape(side, side)
    bands = []
    while cur.shape[0] > 1:
        p = cur[0::2, 0::2]
        q = cur[0::2, 1::2]
        r = cur[1::2, 0::2]
        s = cur[1::2, 1::2]
        lh = 0.5 * (p - q + r - s)
        hl = 0.5 * (p + q - r - s)
        hh = 0.5 * (p - q - r + s)
        bands.append((lh, hl, hh))
        cur = 0.5 * (p + q + r + s)
    pieces = [cur.reshape(-1)]
    for lh, hl, hh in reversed(bands):
        pieces.extend((lh.reshape(-1), hl.reshape(-1), hh.reshape(-1)))
    return np.concatenate(pieces) if len(pieces) > 1 else pieces[0].copy()


def haar_inverse_raw(v: np.ndarray, side: int) -> np.ndarray:
    cur = v[:1].reshape(1, 1)
    pos = 1
    while cur.shape[0] < side:
        k = cur.shape[0]
        lh = v[pos : pos + k * k].reshape(k, k)
        hl = v[pos + k * k : pos + 2 * k * k].reshape(k, k)
        hh = v[pos + 2 * k * k : pos + 3 * k * k].reshape(k, k)
        pos += 3 * k * k
        nxt = np.empty((2 * k, 2 * k), dtype=np.complex128)
        nxt[0::2, 0::2] = 0.5 * (cur + lh + hl + hh)
        nxt[0::2, 1::2] = 0.5 * (cur - lh + hl - hh)
        nxt[1::2, 0::2] = 0.5 * (cur + lh - hl - hh)
        nxt[1::2, 1::2] = 0.5 * (cur - lh - hl + hh)
        cur = nxt
    return cur.reshape(-1)


def haar_forward(x) -> np.ndarray:
    """Apply the orthonormal analysis transform Phi* (row-major layout above)."""
    v = image_vector(x)
    return haar_forward_raw(v, _infer_side(v))


def haar_inverse(z) -> np.ndarray:
    """Apply the synthesis transform Phi; exact inverse of haar_forward."""
    v = np.asarray(z, dtype=np.complex128).reshape(-1)
    return haar_inverse_raw(v, _infer_side(v))


# ---------------------------------------------------------------------------
# Periodic anisotropic gradient: horizontal differences block first, then
# vertical.  ||grad||^2 <= 8.


def gradient_forward_raw(v: np.ndarray, side: int) -> np.ndarray:
    g = v.reshape(side, side)
    h = np.roll(g, -1, axis=1) - g
    vd = np.roll(g, -1, axis=0) - g
    return np.concatenate((h.reshape(-1), vd.reshape(-1)))


def gradient_adjoint_raw(z: np.ndarray, side: int) -> np.ndarray:
    n2 = side * side
    h = z[:n2].reshape(side, side)
    vd = z[n2:].reshape(side, side)
    return ((np.roll(h, 1, axis=1) - h) + (np.roll(vd, 1, axis=0) - vd)).reshape(-1)


def gradient_forward(x) -> np.ndarray:
    """Periodic forward differences: (x[i, j+1] - x[i, j], x[i+1, j] - x[i, j])."""
    v = image_vector(x)
    return gradient_forward_raw(v, _infer_side(v))


def gradient_adjoint(z) -> np.ndarray:
    v = np.asarray(z, dtype=np.complex128).reshape(-1)
    if v.size % 2 != 0:
        raise ValueError("gradient adjoint input must have even length")
    return gradient_adjoint_raw(v, _infer_side(v[: v.size // 2]))


@dataclass
class AnalysisOperator:
    """W* x = [Phi* x; sqrt(weight) grad x]; frame bounds [1, 1 + 8*weight]."""

    side: int
    weight: float = 2.5

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.side):
            raise ValueError(f"side must be a power of two, got {self.side}")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")

    @property
    def n_pixels(self) -> int:
        return self.side * self.side

    @property
    def n_coefficients(self) -> int:
        """M = 3N: N Haar coefficients plus 2N gradient entries."""
        return 3 * self.n_pixels

    @property
    def beta(self) -> float:
        """Upper frame bound of W W*, also the smoothing curvature constant."""
        return 1.0 + 8.0 * self.weight

    def analyze(self, v: np.ndarray) -> np.ndarray:
        root = math.sqrt(self.weight)
        return np.concatenate(
            (haar_forward_raw(v, self.side), root * gradient_forward_raw(v, self.side))
        )

    def synthesize(self, z: np.ndarray) -> np.ndarray:
        n2 = self.n_pixels
        root = math.sqrt(self.weight)
        return haar_inverse_raw(z[:n2], self.side) + root * gradient_adjoint_raw(
            z[n2:], self.side
        )


def analysis_apply(W: AnalysisOperator, x) -> np.ndarray:
    return W.analyze(image_vector(x, W.side))


def synthesis_apply(W: AnalysisOperator, z) -> ImageGrid:
    z = np.asarray(z, dtype=np.complex128).reshape(-1)
    if z.size != W.n_coefficients:
        raise ValueError(f"coefficient length {z.size} does not match M={W.n_coefficients}")
    return ImageGrid(W.side, W.synthesize(z))


# ---------------------------------------------------------------------------


def best_s_term_error(z, s: int) -> float:
    """l1 distance of z to its best s-term approximation: the sum of the
    len(z) - s smallest magnitudes."""
    z = np.asarray(z).reshape(-1)
    if not 0 <= s <= z.size:
        raise ValueError(f"s must lie in [0, {z.size}], got {s}")
    if s == z.size:
        return 0.0
    mags = np.abs(z)
    keep = z.size - s
    return float(np.sum(np.partition(mags, keep - 1)[:keep]))
