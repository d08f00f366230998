"""Intra still-frame codec simulator: quadtree partitioning, block DCT, QP quantization.

The simulator reproduces the property the enhancement network exploits:
compression artifacts whose structure follows the coding-unit quadtree.
Per coding tree unit it recursively decides leaf-vs-split by rate-distortion
cost, where distortion is the SSE of the transform/quantize/reconstruct
round trip and rate is a signed Exp-Golomb proxy over the quantized levels.

Frames are single-channel 8-bit luma planes, stored as (H, W) uint8 arrays.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DataError, ShapeError

SUPPORTED_BLOCK_SIZES = (8, 16, 32, 64)


@dataclass
class CodecConfig:
    ctu_size: int = 64
    min_cu: int = 8
    qp: int = 32
    lambda_scale: float = 0.85

    def __post_init__(self):
        for name, v in (("ctu_size", self.ctu_size), ("min_cu", self.min_cu)):
            if v < 1 or v & (v - 1):
                raise ConfigError(f"{name} must be a power of two, got {v}")
        if self.min_cu > self.ctu_size:
            raise ConfigError(f"min_cu {self.min_cu} exceeds ctu_size {self.ctu_size}")
        if self.min_cu not in SUPPORTED_BLOCK_SIZES or self.ctu_size not in SUPPORTED_BLOCK_SIZES:
            raise ConfigError(
                f"block sizes must lie in {SUPPORTED_BLOCK_SIZES}, "
                f"got min_cu={self.min_cu}, ctu_size={self.ctu_size}"
            )
        if not 0 <= self.qp <= 51:
            raise ConfigError(f"qp must be in [0, 51], got {self.qp}")
        if self.lambda_scale <= 0:
            raise ConfigError(f"lambda_scale must be positive, got {self.lambda_scale}")

    @property
    def lam(self) -> float:
        """RD lambda, HEVC-convention shape: lambda_scale * 2^((qp-12)/3)."""
        return self.lambda_scale * 2.0 ** ((self.qp - 12) / 3.0)


@dataclass
class PartitionMap:
    """Quadtree leaf set tiling a frame: leaves are (x, y, size) squares."""

    width: int
    height: int
    ctu_size: int
    min_cu: int
    leaves: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.leaves = sorted(self.leaves, key=lambda l: (l[1], l[0]))

    def validate(self) -> None:
        """Check the tiling/alignment invariants; raises DataError on violation."""
        if not self.leaves:
            raise DataError("partition map has no leaves")
        covered = np.zeros((self.height, self.width), dtype=bool)
        area = 0
        for x, y, size in self.leaves:
            if size < self.min_cu or size > self.ctu_size or size & (size - 1):
                raise DataError(f"leaf ({x},{y},{size}): size out of [{self.min_cu},{self.ctu_size}]")
            if x % size or y % size:
                raise DataError(f"leaf ({x},{y},{size}): origin not aligned to its size")
            if x + size > self.width or y + size > self.height:
                raise DataError(f"leaf ({x},{y},{size}): extends past frame {self.width}x{self.height}")
            region = covered[y : y + size, x : x + size]
            if region.any():
                raise DataError(f"leaf ({x},{y},{size}) overlaps another leaf")
            region[:] = True
            area += size * size
        if area != self.width * self.height or not covered.all():
            raise DataError(
                f"leaves cover {area} pixels, frame has {self.width * self.height}"
            )


@dataclass
class RDPoint:
    rate: int  # bits, total for the coded set
    psnr: float  # dB


def qp_to_qstep(qp: int) -> float:
    """HEVC-style quantization step: 2^((qp-4)/6)."""
    if not 0 <= qp <= 51:
        raise ConfigError(f"qp must be in [0, 51], got {qp}")
    return 2.0 ** ((qp - 4) / 6.0)


@lru_cache(maxsize=None)
def _dct_matrix(size: int) -> np.ndarray:
    # orthonormal DCT-II basis: row 0 = 1/sqrt(N), row k = sqrt(2/N) cos(pi(2n+1)k/2N)
    n = np.arange(size)
    k = n[:, None]
    c = np.sqrt(2.0 / size) * np.cos(np.pi * (2 * n[None, :] + 1) * k / (2.0 * size))
    c[0, :] = 1.0 / math.sqrt(size)
    return c


def _check_block(block: np.ndarray, who: str) -> int:
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ShapeError(f"{who}: expected a square 2-D block, got shape {block.shape}")
    size = block.shape[0]
    if size not in SUPPORTED_BLOCK_SIZES:
        raise ConfigError(f"{who}: unsupported block size {size}, supported: {SUPPORTED_BLOCK_SIZES}")
    return size


def dct2d(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a square block (sizes 8/16/32/64)."""
    size = _check_block(block, "dct2d")
    c = _dct_matrix(size)
    return c @ block.astype(np.float64, copy=False) @ c.T


def idct2d(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct2d (orthonormal, so the transpose pair)."""
    size = _check_block(coeffs, "idct2d")
    c = _dct_matrix(size)
    return c.T @ coeffs.astype(np.float64, copy=False) @ c


def quantize(coeffs: np.ndarray, qstep: float) -> np.ndarray:
    """Uniform dead-zone-free quantizer: sign(c) * floor(|c|/qstep + 0.5)."""
    if qstep <= 0:
        raise ConfigError(f"qstep must be positive, got {qstep}")
    return (np.sign(coeffs) * np.floor(np.abs(coeffs) / qstep + 0.5)).astype(np.int64)


def dequantize(levels: np.ndarray, qstep: float) -> np.ndarray:
    return levels.astype(np.float64) * qstep


@lru_cache(maxsize=None)
def _zigzag_order(size: int) -> np.ndarray:
    # diagonal scan, alternating direction, as a flat index array
    idx = []
    for s in range(2 * size - 1):
        diag = [(i, s - i) for i in range(max(0, s - size + 1), min(s, size - 1) + 1)]
        if s % 2 == 0:
            diag.reverse()  # even diagonals run bottom-left to top-right
        idx.extend(i * size + j for i, j in diag)
    return np.asarray(idx, dtype=np.int64)


def _signed_expgolomb_lengths(levels: np.ndarray) -> np.ndarray:
    # v>0 -> u=2v-1, v<=0 -> u=-2v; code length = 2*floor(log2(u+1)) + 1
    v = levels.astype(np.int64)
    u = np.where(v > 0, 2 * v - 1, -2 * v)
    exp = np.frexp((u + 1).astype(np.float64))[1]  # u+1 = m * 2^exp, m in [0.5, 1)
    return 2 * (exp - 1) + 1


def block_bits(levels: np.ndarray) -> int:
    """Rate proxy: signed Exp-Golomb lengths over the zig-zag scan, plus a terminator bit."""
    size = levels.shape[0]
    scanned = levels.reshape(-1)[_zigzag_order(size)]
    return int(_signed_expgolomb_lengths(scanned).sum()) + 1


def leaf_cost(block: np.ndarray, qp: int, config: CodecConfig) -> tuple[float, np.ndarray, int]:
    """RD cost of coding one block as a single leaf.

    Returns (cost, recon_block, bits): recon is the clipped/rounded 8-bit
    reconstruction after the transform/quantize round trip, bits is the
    Exp-Golomb rate proxy, and cost = SSE + lambda * bits.
    """
    qstep = qp_to_qstep(qp)
    coeffs = dct2d(block)
    levels = quantize(coeffs, qstep)
    rec = idct2d(dequantize(levels, qstep))
    rec = np.clip(np.rint(rec), 0, 255).astype(np.uint8)
    err = block.astype(np.float64) - rec.astype(np.float64)
    sse = float(np.sum(err * err))
    bits = block_bits(levels)
    return sse + config.lam * bits, rec, bits


def _partition_block(
    frame: np.ndarray, x: int, y: int, size: int, config: CodecConfig
) -> tuple[float, int, list[tuple[int, int, int]], np.ndarray | None]:
    """Best RD coding of the square at (x, y): (cost, bits, leaves, recon).

    Blocks sticking out of the frame are force-split without a flag bit;
    blocks entirely outside contribute nothing. Where a split-vs-leaf
    decision is actually coded, one flag bit is charged to both options
    and exact ties go to the leaf (shallower tree).
    """
    h, w = frame.shape
    if x >= w or y >= h:
        return 0.0, 0, [], None
    fits = x + size <= w and y + size <= h

    leaf = None
    if fits:
        cost, rec, bits = leaf_cost(frame[y : y + size, x : x + size], config.qp, config)
        leaf = (cost, bits, [(x, y, size)], rec)
        if size == config.min_cu:
            return leaf

    half = size // 2
    child_cost = 0.0
    child_bits = 0
    child_leaves: list[tuple[int, int, int]] = []
    recon = np.zeros((min(size, h - y), min(size, w - x)), dtype=np.uint8)
    for cy in (y, y + half):
        for cx in (x, x + half):
            c_cost, c_bits, c_leaves, c_rec = _partition_block(frame, cx, cy, half, config)
            child_cost += c_cost
            child_bits += c_bits
            child_leaves.extend(c_leaves)
            if c_rec is not None:
                recon[cy - y : cy - y + c_rec.shape[0], cx - x : cx - x + c_rec.shape[1]] = c_rec

    if not fits:
        return child_cost, child_bits, child_leaves, recon  # forced split, flag inferred

    flag = config.lam
    split = (child_cost + flag, child_bits + 1, child_leaves, recon)
    no_split = (leaf[0] + flag, leaf[1] + 1, leaf[2], leaf[3])
    return no_split if no_split[0] <= split[0] else split


def partition_frame(
    frame: np.ndarray, config: CodecConfig
) -> tuple[PartitionMap, np.ndarray, int]:
    """RD-optimal quadtree coding of a whole frame.

    Returns the leaf set, the assembled 8-bit reconstruction, and the
    total rate (leaf bits plus coded split-flag bits).
    """
    if frame.ndim != 2:
        raise ShapeError(f"partition_frame: expected a 2-D luma plane, got shape {frame.shape}")
    h, w = frame.shape
    if h % config.min_cu or w % config.min_cu:
        raise DataError(
            f"frame {w}x{h} is not a multiple of min_cu {config.min_cu}; crop on ingestion"
        )
    recon = np.zeros_like(frame)
    leaves: list[tuple[int, int, int]] = []
    total_bits = 0
    for y in range(0, h, config.ctu_size):
        for x in range(0, w, config.ctu_size):
            _, bits, ctu_leaves, ctu_rec = _partition_block(frame, x, y, config.ctu_size, config)
            total_bits += bits
            leaves.extend(ctu_leaves)
            recon[y : y + ctu_rec.shape[0], x : x + ctu_rec.shape[1]] = ctu_rec
    pmap = PartitionMap(w, h, config.ctu_size, config.min_cu, leaves)
    return pmap, recon, total_bits


def encode_decode(frame: np.ndarray, config: CodecConfig) -> tuple[np.ndarray, PartitionMap, RDPoint]:
    """Code one frame and report the reconstruction, its partition map and the RD point."""
    from .metrics import psnr

    pmap, recon, total_bits = partition_frame(frame, config)
    return recon, pmap, RDPoint(rate=total_bits, psnr=psnr(frame, recon))
