"""Orthonormal 2D DCT/IDCT (full-image and block-wise) and the random
spectrum transformation used for frequency-domain model augmentation.

The type-II DCT basis is materialized as an orthogonal matrix so the 2D
transform of a plane is literally two matrix products.  Rectangular
planes use one basis per axis.  `spectrum_transform` perturbs an image
by adding Gaussian pixel noise, scaling every DCT coefficient by an
independent uniform factor, and transforming back.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Sentinel for "treat the whole image as a single block".
FULL_IMAGE = None


@dataclass(frozen=True)
class DctBasis:
    """Orthonormal type-II DCT basis of a given size.

    Row k of `matrix` is s(k) * cos(pi * (2i + 1) * k / (2n)) with
    s(0) = sqrt(1/n) and s(k>0) = sqrt(2/n), so matrix @ matrix.T = I.
    """

    size: int
    matrix: np.ndarray


@lru_cache(maxsize=64)
def _basis(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    a = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    a[0, :] *= np.sqrt(1.0 / n)
    a[1:, :] *= np.sqrt(2.0 / n)
    a.setflags(write=False)  # cached array, shared between callers
    return a


def dct_basis(n: int) -> DctBasis:
    """Build the n x n orthonormal type-II DCT basis."""
    if n < 1:
        raise ValueError(f"basis size must be >= 1, got {n}")
    return DctBasis(size=n, matrix=_basis(n))


def dct2(plane: np.ndarray) -> np.ndarray:
    """Orthonormal 2D type-II DCT of a single H x W plane."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2D plane, got shape {plane.shape}")
    h, w = plane.shape
    return _basis(h) @ plane @ _basis(w).T


def idct2(spectrum_plane: np.ndarray) -> np.ndarray:
    """Inverse of `dct2`; exact up to floating-point round-off."""
    spectrum_plane = np.asarray(spectrum_plane, dtype=np.float64)
    if spectrum_plane.ndim != 2:
        raise ValueError(f"expected a 2D plane, got shape {spectrum_plane.shape}")
    h, w = spectrum_plane.shape
    return _basis(h).T @ spectrum_plane @ _basis(w)


def dct2_channels(arr: np.ndarray) -> np.ndarray:
    """Full-image 2D DCT applied to each channel of an (..., H, W, C) array."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[-3], arr.shape[-2]
    return np.einsum("uh,...hwc,vw->...uvc", _basis(h), arr, _basis(w))


def idct2_channels(arr: np.ndarray) -> np.ndarray:
    """Per-channel inverse of `dct2_channels`."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[-3], arr.shape[-2]
    return np.einsum("uh,...uvc,vw->...hwc", _basis(h), arr, _basis(w))


@dataclass
class Spectrum:
    """Per-channel DCT coefficients of an image.

    `coefficients` has the padded shape when a block size does not divide
    the image; `source_shape` remembers the original (H, W, C) so the
    inverse can crop back.
    """

    coefficients: np.ndarray
    source_shape: tuple[int, int, int]
    block_size: int | None = FULL_IMAGE


@dataclass(frozen=True)
class SpectrumTransformParams:
    """Knobs of the random spectrum transformation.

    sigma: std of the Gaussian pixel noise, in normalized [0, 1] units.
    rho: half-width of the uniform coefficient mask, drawn from
        U(1 - rho, 1 + rho); rho < 1 keeps every mask entry positive.
    n_transforms: number of independent draws averaged per attack step.
    block_size: DCT block edge, or FULL_IMAGE for a whole-image transform.
    """

    sigma: float
    rho: float
    n_transforms: int
    block_size: int | None = FULL_IMAGE

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.n_transforms < 1:
            raise ValueError(f"n_transforms must be >= 1, got {self.n_transforms}")
        if self.block_size is not FULL_IMAGE and self.block_size < 2:
            raise ValueError(f"block_size must be >= 2, got {self.block_size}")


def _pad_to_multiple(image: np.ndarray, block: int) -> np.ndarray:
    h, w, _ = image.shape
    pad_h = (-h) % block
    pad_w = (-w) % block
    if pad_h == 0 and pad_w == 0:
        return image
    return np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)))


def _check_block(block_size: int, h: int, w: int) -> None:
    if block_size < 2:
        raise ValueError(f"block_size must be >= 2, got {block_size}")
    if block_size > min(h, w):
        raise ValueError(
            f"block_size {block_size} exceeds image extent {min(h, w)}"
        )


def block_dct2(image: np.ndarray, block_size: int) -> Spectrum:
    """Block-wise per-channel 2D DCT of an (H, W, C) image.

    The image is zero-padded on the bottom/right to the next multiple of
    `block_size` and every block is transformed independently.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"expected an (H, W, C) image, got shape {image.shape}")
    h, w, c = image.shape
    _check_block(block_size, h, w)
    padded = _pad_to_multiple(image, block_size)
    ph, pw, _ = padded.shape
    a = _basis(block_size)
    xb = padded.reshape(ph // block_size, block_size, pw // block_size, block_size, c)
    yb = np.einsum("uh,nhmwc,vw->numvc", a, xb, a)
    return Spectrum(
        coefficients=yb.reshape(ph, pw, c),
        source_shape=(h, w, c),
        block_size=block_size,
    )


def block_idct2(spectrum: Spectrum) -> np.ndarray:
    """Inverse of `block_dct2`, cropped back to the source shape."""
    coeff = np.asarray(spectrum.coefficients, dtype=np.float64)
    h, w, c = spectrum.source_shape
    if spectrum.block_size is FULL_IMAGE:
        return idct2_channels(coeff)[:h, :w, :]
    b = spectrum.block_size
    ph, pw, _ = coeff.shape
    a = _basis(b)
    zb = coeff.reshape(ph // b, b, pw // b, b, c)
    xb = np.einsum("uh,numvc,vw->nhmwc", a, zb, a)
    return xb.reshape(ph, pw, c)[:h, :w, :]


def image_spectrum(image: np.ndarray, block_size: int | None = FULL_IMAGE) -> Spectrum:
    """Per-channel spectrum of an image, full-image or block-wise."""
    image = np.asarray(image, dtype=np.float64)
    if block_size is FULL_IMAGE:
        return Spectrum(dct2_channels(image), tuple(image.shape), FULL_IMAGE)
    return block_dct2(image, block_size)


def spectrum_transform(
    x: np.ndarray, params: SpectrumTransformParams, rng: np.random.Generator
) -> np.ndarray:
    """Randomly perturb an image in the frequency domain.

    Draws pixel noise ~ N(0, sigma^2), adds it, takes the (block) DCT,
    multiplies every coefficient by an independent U(1 - rho, 1 + rho)
    factor and transforms back.  The result is intentionally NOT clipped
    to [0, 1]: it only ever feeds gradient computation.
    """
    out, _ = spectrum_transform_with_mask(x, params, rng)
    return out


def spectrum_transform_with_mask(
    x: np.ndarray, params: SpectrumTransformParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Like `spectrum_transform` but also returns the coefficient mask.

    The mask is needed by callers that push gradients back through the
    (fixed-draw) transform; draw order is noise first, then mask.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected an (H, W, C) image, got shape {x.shape}")
    noisy = x + rng.normal(0.0, params.sigma, size=x.shape)
    if params.block_size is FULL_IMAGE:
        spec = dct2_channels(noisy)
        mask = rng.uniform(1.0 - params.rho, 1.0 + params.rho, size=spec.shape)
        return idct2_channels(spec * mask), mask
    sp = block_dct2(noisy, params.block_size)
    mask = rng.uniform(1.0 - params.rho, 1.0 + params.rho, size=sp.coefficients.shape)
    out = block_idct2(Spectrum(sp.coefficients * mask, sp.source_shape, sp.block_size))
    return out, mask


def apply_spectrum_mask(
    arr: np.ndarray, mask: np.ndarray, block_size: int | None = FULL_IMAGE
) -> np.ndarray:
    """Apply the masked-filter map z -> IDCT(DCT(z) * mask) to an array.

    With an orthonormal basis this linear map is its own adjoint, so it
    doubles as the backward pass of a fixed spectrum transform draw.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if block_size is FULL_IMAGE:
        return idct2_channels(dct2_channels(arr) * mask)
    sp = block_dct2(arr, block_size)
    return block_idct2(Spectrum(sp.coefficients * mask, sp.source_shape, block_size))
