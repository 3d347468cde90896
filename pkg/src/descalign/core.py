"""Descriptor-field data model and primitive numeric operations.

A convolutional activation tensor of shape (d, h, w) is viewed as a grid
of h*w deep descriptors, each a d-vector: the descriptor at (row, col) is
the channel fiber values[:, row, col].  All types are immutable after
construction (their arrays are frozen read-only) and every operation is a
pure function, so values may be shared freely across threads.

Arithmetic is 64-bit throughout.  Cosine similarity with a zero vector
returns the neutral sentinel 0.0 so that zeroed-out descriptors neither
attract nor repel nearest-neighbor matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DomainError, ShapeError


def _frozen(values, shape=None, what: str = "array") -> np.ndarray:
    """Return ``values`` as a read-only float64 array, copying if writable."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ShapeError(f"{what}: expected shape {shape}, got {arr.shape}")
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DescriptorField:
    """A (d, h, w) activation tensor: d channels over an h x w grid."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values, what="DescriptorField")
        if arr.ndim != 3:
            raise ShapeError(f"DescriptorField needs a (d, h, w) array, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise DomainError(f"DescriptorField dimensions must be >= 1, got {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> int:
        return self.values.shape[1]

    @property
    def w(self) -> int:
        return self.values.shape[2]

    @property
    def num_descriptors(self) -> int:
        return self.h * self.w

    def descriptors(self) -> np.ndarray:
        """All descriptors as an (h*w, d) array, raster (row-major) order."""
        return np.ascontiguousarray(self.values.reshape(self.d, -1).T)


@dataclass(frozen=True)
class ActivationMask:
    """An (h, w) map with every value in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values, what="ActivationMask")
        if arr.ndim != 2:
            raise ShapeError(f"ActivationMask needs an (h, w) array, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise DomainError(f"ActivationMask dimensions must be >= 1, got {arr.shape}")
        if not (np.all(arr >= 0.0) and np.all(arr <= 1.0)):
            raise DomainError("ActivationMask values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def binary(self) -> bool:
        """True when every value is exactly 0 or 1."""
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))


@dataclass(frozen=True)
class ConvWeights:
    """Weights of one convolution: (out, in, kh, kw) plus an (out,) bias.

    Kernel sizes are restricted to 1x1 and 3x3, the only ones used here.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights, what="ConvWeights.weights")
        if w.ndim != 4:
            raise ShapeError(f"ConvWeights needs (out, in, kh, kw) weights, got ndim={w.ndim}")
        kh, kw = w.shape[2], w.shape[3]
        if kh not in (1, 3) or kw not in (1, 3) or kh != kw:
            raise DomainError(f"kernel must be 1x1 or 3x3, got {kh}x{kw}")
        b = _frozen(self.bias, shape=(w.shape[0],), what="ConvWeights.bias")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]


def descriptor_at(field: DescriptorField, row: int, col: int) -> np.ndarray:
    """The d-vector at grid cell (row, col); a read-only view."""
    if not (0 <= row < field.h and 0 <= col < field.w):
        raise IndexError(
            f"descriptor index ({row}, {col}) out of range for {field.h}x{field.w} grid")
    return field.values[:, row, col]


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Returns exactly 0.0 when either vector has zero norm.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {a.shape} and {b.shape}")
    dot = 0.0
    na = 0.0
    nb = 0.0
    for c in range(a.shape[0]):
        dot += a[c] * b[c]
        na += a[c] * a[c]
        nb += b[c] * b[c]
    denom = np.sqrt(na) * np.sqrt(nb)
    if denom == 0.0:
        return 0.0
    return float(dot / denom)


def conv2d_forward(field: DescriptorField, weights: ConvWeights,
                   padding: int = 0) -> DescriptorField:
    """Cross-correlation with bias; output is (out, h+2p-k+1, w+2p-k+1)."""
    if weights.in_channels != field.d:
        raise ShapeError(
            f"conv expects {weights.in_channels} input channels, field has {field.d}")
    if padding < 0:
        raise DomainError("padding must be non-negative")
    k = weights.kernel_size
    oh = field.h + 2 * padding - k + 1
    ow = field.w + 2 * padding - k + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"output size {oh}x{ow} collapses below 1x1")
    y = backend.kernels().conv2d(field.values, weights.weights, weights.bias, padding)
    return DescriptorField(y)


def apply_selection_mask(field: DescriptorField, mask: ActivationMask) -> DescriptorField:
    """Zero out every descriptor whose binary mask cell is 0."""
    if (mask.h, mask.w) != (field.h, field.w):
        raise ShapeError(
            f"mask is {mask.h}x{mask.w}, field grid is {field.h}x{field.w}")
    if not mask.binary:
        raise DomainError("selection mask must be binary (all values 0 or 1)")
    return DescriptorField(field.values * mask.values[None, :, :])


def spatial_multiply(field: DescriptorField, mask: ActivationMask) -> DescriptorField:
    """Scale every descriptor by its mask cell: out(c,i,j) = in(c,i,j) * m(i,j)."""
    if (mask.h, mask.w) != (field.h, field.w):
        raise ShapeError(
            f"mask is {mask.h}x{mask.w}, field grid is {field.h}x{field.w}")
    return DescriptorField(field.values * mask.values[None, :, :])


def _nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    # floor-based nearest lookup, no half-pixel offset: src = floor(i * n_in / n_out)
    return (np.arange(n_out) * n_in) // n_out


def nearest_resize(grid, target_h: int, target_w: int):
    """Nearest-neighbor resize of an ActivationMask or Cam to a new size.

    out(i, j) = in(floor(i*h/target_h), floor(j*w/target_w)); the output
    value set is a subset of the input's, and same-size resize is identity.
    Returns the same kind as the input.
    """
    from .localization import Cam  # Cam lives with the localization ops

    if target_h < 1 or target_w < 1:
        raise DomainError("target size must be >= 1")
    values = grid.values
    rows = _nearest_indices(values.shape[0], target_h)
    cols = _nearest_indices(values.shape[1], target_w)
    out = values[np.ix_(rows, cols)]
    if isinstance(grid, Cam):
        return Cam(out)
    if isinstance(grid, ActivationMask):
        return ActivationMask(out)
    raise ShapeError(f"nearest_resize expects ActivationMask or Cam, got {type(grid).__name__}")
