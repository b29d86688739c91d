"""Lattice tensors, observation masks and boundary frames.

A grid tensor is a float64 numpy array of shape ``(H, W, C)``.  Operators
accept extra leading batch axes, ``(..., H, W, C)``.  The canonical
vectorization is row-major over (row, column, channel), i.e. plain
``reshape(-1)`` of the ``(H, W, C)`` array.

Missing pixels are stored as ``y = 0`` together with ``mask = False``;
NaN only appears in the external text format.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError

GridTensor = np.ndarray


def as_grid(values) -> GridTensor:
    """Return ``values`` as a float64 ``(H, W, C)`` array (2-D input gains C=1)."""
    a = np.asarray(values, dtype=float)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or min(a.shape) < 1:
        raise DimensionError(f"expected an H x W x C grid, got shape {a.shape}")
    return a


def vectorize(t) -> np.ndarray:
    return np.array(as_grid(t)).reshape(-1)


def devectorize(v, shape) -> GridTensor:
    v = np.asarray(v, dtype=float)
    h, w, c = shape
    if v.ndim != 1 or v.size != h * w * c:
        raise DimensionError(f"vector of length {v.size} does not fit grid {shape}")
    return v.reshape(h, w, c).copy()


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations on a lattice.

    Attributes
    ----------
    y : (H, W, C) array
        Observed values, exactly 0 wherever ``mask`` is False.
    mask : (H, W) bool array
        True for observed pixels.  A pixel is observed in all channels or none.
    F : (H*W, p) array, optional
        Covariate matrix for the linear-trend model, one row per pixel in
        row-major order.
    """

    y: np.ndarray
    mask: np.ndarray
    F: Optional[np.ndarray] = None

    def __post_init__(self):
        y = as_grid(self.y)
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != y.shape[:2]:
            raise DimensionError(f"mask shape {mask.shape} does not match grid {y.shape[:2]}")
        y = np.where(mask[:, :, None], y, 0.0)
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "mask", _frozen(mask))
        if self.F is not None:
            F = np.asarray(self.F, dtype=float)
            if F.ndim != 2 or F.shape[0] != mask.size:
                raise DimensionError(f"covariates need {mask.size} rows, got shape {F.shape}")
            if y.shape[2] != 1:
                raise DimensionError("the trend model supports single-channel data only")
            object.__setattr__(self, "F", _frozen(F))

    @property
    def shape(self):
        return self.y.shape

    @property
    def n_observed(self) -> int:
        """Number of observed pixels (M)."""
        return int(self.mask.sum())

    @property
    def n_observed_entries(self) -> int:
        return self.n_observed * self.y.shape[2]

    @classmethod
    def from_array(cls, values, F=None) -> "Dataset":
        """Build a dataset from an array using NaN to mark missing pixels."""
        a = as_grid(values)
        mask = ~np.isnan(a).any(axis=2)
        return cls(np.nan_to_num(a, nan=0.0), mask, F)

    def with_nan(self) -> GridTensor:
        out = np.array(self.y)
        out[~self.mask] = np.nan
        return out


def pad_frame(d: Dataset, width: int) -> Dataset:
    """Surround the data with a frame of missing pixels ``width`` wide."""
    if width < 0:
        raise DimensionError("frame width must be non-negative")
    if width == 0:
        return d
    w = width
    y = np.pad(d.y, ((w, w), (w, w), (0, 0)))
    mask = np.pad(d.mask, w)
    F = None
    if d.F is not None:
        h, wd = d.mask.shape
        F3 = np.pad(d.F.reshape(h, wd, -1), ((w, w), (w, w), (0, 0)), mode="edge")
        F = F3.reshape(-1, F3.shape[2])
    return Dataset(y, mask, F)


def crop_frame(t: GridTensor, width: int) -> GridTensor:
    t = np.asarray(t)
    if width < 0 or 2 * width >= min(t.shape[0], t.shape[1]):
        raise DimensionError(f"cannot crop a {width}-pixel frame from shape {t.shape}")
    if width == 0:
        return t.copy()
    return t[width:-width, width:-width].copy()
