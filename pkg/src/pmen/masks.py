"""Guidance masks derived from a frame's partition map."""

from dataclasses import dataclass

import numpy as np

from .codec import PartitionMap
from .errors import ShapeError

MEAN = "mean"
BOUNDARY = "boundary"
MASK_KINDS = (MEAN, BOUNDARY)


@dataclass
class Mask:
    kind: str
    values: np.ndarray  # (H, W) float64 plane

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def mean_mask(recon: np.ndarray, pmap: PartitionMap) -> Mask:
    """Fill every leaf with the mean of its decoded pixels, normalized by 255."""
    if recon.shape != (pmap.height, pmap.width):
        raise ShapeError(
            f"mean_mask: frame shape {recon.shape} does not match map "
            f"{pmap.width}x{pmap.height}"
        )
    plane = recon.astype(np.float64, copy=False)
    values = np.empty((pmap.height, pmap.width), dtype=np.float64)
    for x, y, size in pmap.leaves:
        values[y : y + size, x : x + size] = plane[y : y + size, x : x + size].mean() / 255.0
    return Mask(MEAN, values)


def boundary_mask(pmap: PartitionMap) -> Mask:
    """Mark width-2 bands along internal leaf edges: one pixel on each side.

    The frame's outer border is not a boundary between partitions and
    stays 0. The mask depends on the map alone, never on pixel values.
    """
    ids = np.zeros((pmap.height, pmap.width), dtype=np.int32)
    for i, (x, y, size) in enumerate(pmap.leaves):
        ids[y : y + size, x : x + size] = i
    values = np.zeros((pmap.height, pmap.width), dtype=np.float64)
    vert = ids[:, :-1] != ids[:, 1:]
    values[:, :-1][vert] = 1.0
    values[:, 1:][vert] = 1.0
    horiz = ids[:-1, :] != ids[1:, :]
    values[:-1, :][horiz] = 1.0
    values[1:, :][horiz] = 1.0
    return Mask(BOUNDARY, values)


def make_mask(kind: str, recon: np.ndarray, pmap: PartitionMap) -> Mask:
    if kind == MEAN:
        return mean_mask(recon, pmap)
    if kind == BOUNDARY:
        return boundary_mask(pmap)
    raise ShapeError(f"unknown mask kind {kind!r}, expected one of {MASK_KINDS}")
