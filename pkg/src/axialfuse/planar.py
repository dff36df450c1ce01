"""Plane extraction, slice resizing and volumetric augmentation."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PLANES = ("axial", "coronal", "sagittal")
# normal axis of each plane inside a (D, H, W) volume
NORMAL_AXIS = {"axial": 0, "coronal": 1, "sagittal": 2}


@dataclass
class PlaneStack:
    """(n_slices, C, S, S) slices of one plane; channels are identical copies."""

    plane: str
    slices: np.ndarray
    source_id: str = ""

    @property
    def num_slices(self) -> int:
        return self.slices.shape[0]


def _check_plane(plane: str) -> int:
    if plane not in NORMAL_AXIS:
        raise ValueError(f"unknown plane {plane!r}; expected one of {PLANES}")
    return NORMAL_AXIS[plane]


def slice_plane(voxels: np.ndarray, plane: str) -> np.ndarray:
    """Raw slice stack of a (D, H, W) grid along the plane's normal axis.

    axial -> D slices of (H, W); coronal -> H slices of (D, W);
    sagittal -> W slices of (D, H). Slice i is index i on the normal axis.
    Works on a leading batch axis too: (B, D, H, W) -> (B, n, a, b).
    """
    axis = _check_plane(plane)
    lead = voxels.ndim - 3
    return np.moveaxis(voxels, lead + axis, lead)


def assemble_plane(stack: np.ndarray, plane: str) -> np.ndarray:
    """Inverse of :func:`slice_plane`."""
    axis = _check_plane(plane)
    lead = stack.ndim - 3
    return np.moveaxis(stack, lead, lead + axis)


def _interp_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-centred (align_corners=False) sampling: lower index, upper index, fraction."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def _lerp_axis(x: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    lo, hi, frac = _interp_weights(x.shape[axis], n_out)
    a = np.take(x, lo, axis=axis).astype(np.float64)
    b = np.take(x, hi, axis=axis).astype(np.float64)
    shape = [1] * x.ndim
    shape[axis] = n_out
    return a + frac.reshape(shape) * (b - a)


def resize_slices(slices: np.ndarray, size: int) -> np.ndarray:
    """Bilinearly resize the last two axes to (size, size).

    Written as a + t * (b - a) per axis so constant regions stay exactly
    constant and outputs never leave the input's [min, max] envelope.
    """
    if size < 2:
        raise ValueError("resize target must be >= 2")
    out = _lerp_axis(slices, slices.ndim - 2, size)
    out = _lerp_axis(out, out.ndim - 1, size)
    return out.astype(np.float32)


def resize_bilinear(stack: np.ndarray, size: int, plane: str = "axial", source_id: str = "") -> PlaneStack:
    """Resize a raw (n, a, b) slice stack to (n, 3, size, size)."""
    resized = resize_slices(stack, size)
    tri = np.repeat(resized[:, None], 3, axis=1)
    return PlaneStack(plane, tri, source_id)


def plane_stacks(voxels: np.ndarray, size: int, source_id: str = "") -> dict[str, PlaneStack]:
    return {p: resize_bilinear(slice_plane(voxels, p), size, p, source_id) for p in PLANES}


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

AUGMENTATIONS = ("anisotropy", "affine", "flip", "noise", "blur", "gamma")


@dataclass
class AugmentPolicy:
    """Per-transform switches plus one application probability ``p``.

    Ranges: anisotropy factor [1.5, 3]; affine rotation +-10 deg per axis and
    isotropic scale [0.9, 1.1]; noise sigma [0, 0.05]; blur sigma
    [0.25, 1.0] voxels; gamma = exp(u), u in [-0.3, 0.3].
    """

    anisotropy: bool = True
    affine: bool = True
    flip: bool = True
    noise: bool = True
    blur: bool = True
    gamma: bool = True
    p: float = 0.5

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(*([False] * 6), p=0.0)

    def enabled(self) -> list[str]:
        return [name for name in AUGMENTATIONS if getattr(self, name)]

    @property
    def active(self) -> bool:
        return self.p > 0 and bool(self.enabled())


def sample_stream(seed: int, source_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-volume stream derived from (global seed, volume id, epoch)."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(source_id.encode()), epoch]))


def resample_axis(x: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    return _lerp_axis(x, axis, n_out)


def random_anisotropy(x: np.ndarray, axis: int, factor: float) -> np.ndarray:
    n = x.shape[axis]
    low = max(2, int(round(n / factor)))
    return resample_axis(resample_axis(x, axis, low), axis, n)


def random_affine(x: np.ndarray, angles_deg: np.ndarray, scale: float) -> np.ndarray:
    """Rotate about the centre then scale; trilinear, zero outside the grid."""
    ax, ay, az = np.deg2rad(angles_deg)
    rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    fwd = (rz @ ry @ rx) * scale
    inv = np.linalg.inv(fwd)
    centre = (np.array(x.shape) - 1) / 2.0
    offset = centre - inv @ centre
    return ndimage.affine_transform(x, inv, offset=offset, order=1, mode="constant", cval=0.0)


def gamma_transform(x: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 1.0:
        return x
    return np.power(np.clip(x, 0, 1), gamma)


def augment(voxels: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Apply enabled transforms in the fixed order anisotropy, affine, flip, noise, blur, gamma.

    Every transform consumes the same random draws whether or not it fires,
    so toggling one transform does not shift the others' parameters.
    """
    x = np.asarray(voxels, dtype=np.float64)
    if not policy.active:
        return np.asarray(voxels, dtype=np.float32)

    fire = rng.random(6) < policy.p
    aniso_axis, aniso_factor = int(rng.integers(3)), rng.uniform(1.5, 3.0)
    angles, zoom = rng.uniform(-10, 10, 3), rng.uniform(0.9, 1.1)
    flip_axis = int(rng.integers(3))
    noise_sigma = rng.uniform(0, 0.05)
    noise_seed = int(rng.integers(2**32))
    blur_sigma = rng.uniform(0.25, 1.0)
    gamma = float(np.exp(rng.uniform(-0.3, 0.3)))

    if policy.anisotropy and fire[0]:
        x = random_anisotropy(x, aniso_axis, aniso_factor)
    if policy.affine and fire[1]:
        x = random_affine(x, angles, zoom)
    if policy.flip and fire[2]:
        x = np.flip(x, axis=flip_axis)
    if policy.noise and fire[3]:
        x = x + np.random.default_rng(noise_seed).normal(0, noise_sigma, x.shape)
    if policy.blur and fire[4]:
        x = ndimage.gaussian_filter(x, blur_sigma, mode="nearest")
    if policy.gamma and fire[5]:
        x = gamma_transform(x, gamma)
    return np.clip(x, 0, 1).astype(np.float32)
