"""Partition-masked quality enhancement of block-transform-compressed frames.

The package covers the full pipeline: an HEVC-like intra codec simulator
(quadtree CU partitioning + block DCT + QP quantization), guidance masks
derived from the partition map, a from-scratch double-input CNN with
mask-frame fusion, patch-based training, and PSNR/BD-rate evaluation.
"""

from .codec import CodecConfig, PartitionMap, RDPoint, dct2d, encode_decode, idct2d, \
    leaf_cost, partition_frame, qp_to_qstep, quantize, dequantize
from .masks import Mask, boundary_mask, make_mask, mean_mask
from .metrics import Sequence, bd_rate, delta_psnr, evaluate_model, psnr
from .model import ArchConfig, Model, build_model, enhance_frame
from .optim import AdamState, adam_step
from .training import PatchDataset, PatchPair, TrainConfig, build_dataset, \
    extract_patches, finetune, split_by_clip, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ArchConfig",
    "CodecConfig",
    "Mask",
    "Model",
    "PartitionMap",
    "PatchDataset",
    "PatchPair",
    "RDPoint",
    "Sequence",
    "TrainConfig",
    "adam_step",
    "bd_rate",
    "boundary_mask",
    "build_dataset",
    "build_model",
    "dct2d",
    "delta_psnr",
    "dequantize",
    "encode_decode",
    "enhance_frame",
    "evaluate_model",
    "extract_patches",
    "finetune",
    "idct2d",
    "leaf_cost",
    "make_mask",
    "mean_mask",
    "partition_frame",
    "psnr",
    "qp_to_qstep",
    "quantize",
    "split_by_clip",
    "train",
]
