"""Patch extraction, dataset construction, and the training/fine-tuning loops."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import CodecConfig, encode_decode
from .errors import ConfigError, ShapeError, TrainingError
from .masks import Mask, make_mask
from .model import SINGLE, ArchConfig, Model, build_model
from .ops import mse_loss
from .optim import AdamState, adam_step

PATCH_SIZE = 64


@dataclass
class PatchPair:
    distorted: np.ndarray  # (64, 64) uint8
    target: np.ndarray  # (64, 64) uint8
    mask: np.ndarray | None  # (64, 64) float32, absent for single-input training
    qp: int


@dataclass
class TrainConfig:
    qp: int
    arch: ArchConfig
    batch_size: int = 32
    lr_initial: float = 1e-4
    lr_decay_epoch: int = 20
    lr_decay_factor: float = 0.1
    epochs: int = 40
    seed: int = 0
    init_checkpoint: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.epochs and self.epochs < self.lr_decay_epoch:
            raise ConfigError(
                f"epochs ({self.epochs}) must be >= lr_decay_epoch ({self.lr_decay_epoch}); "
                "shorten the decay epoch for short schedules"
            )
        if self.lr_initial <= 0 or self.lr_decay_factor <= 0:
            raise ConfigError("learning rates and decay factor must be positive")


def lr_for_epoch(config: TrainConfig, epoch: int) -> float:
    """Two-phase schedule: lr_initial through lr_decay_epoch, then decayed once."""
    if epoch <= config.lr_decay_epoch:
        return config.lr_initial
    return config.lr_initial * config.lr_decay_factor


@dataclass
class PatchDataset:
    distorted: np.ndarray  # (n, 64, 64) uint8
    target: np.ndarray  # (n, 64, 64) uint8
    mask: np.ndarray | None  # (n, 64, 64) float32 or None
    qp: int
    clip_ids: np.ndarray  # (n,) int32 index into clip_names
    clip_names: list[str]
    mask_kind: str | None = None
    failures: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.distorted.shape[0]

    def pairs(self) -> list[PatchPair]:
        return [
            PatchPair(
                self.distorted[i],
                self.target[i],
                None if self.mask is None else self.mask[i],
                self.qp,
            )
            for i in range(len(self))
        ]


def extract_patches(
    original: np.ndarray,
    distorted: np.ndarray,
    mask: Mask | None,
    qp: int,
    size: int = PATCH_SIZE,
    stride: int = PATCH_SIZE,
) -> list[PatchPair]:
    """Cut aligned patch triples on a regular grid; right/bottom remainders are dropped."""
    if original.shape != distorted.shape:
        raise ShapeError(
            f"extract_patches: original {original.shape} vs distorted {distorted.shape}"
        )
    if mask is not None and mask.values.shape != original.shape:
        raise ShapeError(
            f"extract_patches: mask {mask.values.shape} vs frames {original.shape}"
        )
    h, w = original.shape
    out: list[PatchPair] = []
    for y in range(0, h - size + 1, stride):
        for x in range(0, w - size + 1, stride):
            m = None
            if mask is not None:
                m = mask.values[y : y + size, x : x + size].astype(np.float32)
            out.append(
                PatchPair(
                    distorted[y : y + size, x : x + size].copy(),
                    original[y : y + size, x : x + size].copy(),
                    m,
                    qp,
                )
            )
    return out


def build_dataset(
    manifest,
    config: CodecConfig,
    mask_kind: str | None,
    frames_per_clip: int = 3,
    seed: int = 0,
    threads: int = 1,
) -> PatchDataset:
    """Encode a seeded random frame selection of every clip and cut patches.

    ``manifest`` is a loaded DatasetManifest (see fileio). Unreadable
    clips are recorded in ``failures`` and skipped; the build continues.
    """
    from .fileio import read_yuv_frame

    rng = np.random.default_rng(seed)
    jobs = []  # (clip_index, original frame) in deterministic order
    names: list[str] = []
    failures: list[str] = []
    for entry in manifest.entries:
        k = min(frames_per_clip, entry.frame_count)
        picks = sorted(rng.choice(entry.frame_count, size=k, replace=False).tolist())
        clip_index = len(names)
        names.append(entry.name)
        try:
            entry.check_size()
            for fi in picks:
                frame = read_yuv_frame(entry.path, entry.width, entry.height, fi,
                                       min_cu=config.min_cu)
                jobs.append((clip_index, frame))
        except Exception as exc:  # record and move on; one bad clip must not kill the build
            failures.append(f"{entry.name}: {exc}")
            jobs = [j for j in jobs if j[0] != clip_index]

    def _process(job):
        clip_index, frame = job
        recon, pmap, _ = encode_decode(frame, config)
        mask = make_mask(mask_kind, recon, pmap) if mask_kind else None
        return clip_index, extract_patches(frame, recon, mask, config.qp)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_process, jobs))  # order preserved -> deterministic
    else:
        results = [_process(j) for j in jobs]

    distorted, target, masks, clip_ids = [], [], [], []
    for clip_index, pairs in results:
        for p in pairs:
            distorted.append(p.distorted)
            target.append(p.target)
            if mask_kind:
                masks.append(p.mask)
            clip_ids.append(clip_index)
    n = len(distorted)
    return PatchDataset(
        distorted=np.stack(distorted) if n else np.zeros((0, PATCH_SIZE, PATCH_SIZE), np.uint8),
        target=np.stack(target) if n else np.zeros((0, PATCH_SIZE, PATCH_SIZE), np.uint8),
        mask=(np.stack(masks) if n else np.zeros((0, PATCH_SIZE, PATCH_SIZE), np.float32))
        if mask_kind
        else None,
        qp=config.qp,
        clip_ids=np.asarray(clip_ids, dtype=np.int32),
        clip_names=names,
        mask_kind=mask_kind,
        failures=failures,
    )


def split_by_clip(dataset: PatchDataset, holdout_fraction: float = 0.1,
                  seed: int = 0) -> tuple[PatchDataset, PatchDataset]:
    """Hold out whole clips (patch-level splits leak frame content)."""
    n_clips = len(dataset.clip_names)
    if n_clips < 2:
        raise ConfigError("need at least 2 clips to split by clip")
    rng = np.random.default_rng(seed)
    n_hold = max(1, round(holdout_fraction * n_clips))
    held = set(rng.choice(n_clips, size=n_hold, replace=False).tolist())
    hold_sel = np.isin(dataset.clip_ids, list(held))

    def take(sel: np.ndarray) -> PatchDataset:
        return PatchDataset(
            distorted=dataset.distorted[sel],
            target=dataset.target[sel],
            mask=None if dataset.mask is None else dataset.mask[sel],
            qp=dataset.qp,
            clip_ids=dataset.clip_ids[sel],
            clip_names=dataset.clip_names,
            mask_kind=dataset.mask_kind,
        )

    return take(~hold_sel), take(hold_sel)


@dataclass
class TrainLogRow:
    epoch: int
    mean_loss: float
    lr: float
    wall_seconds: float


def _check_dataset(config: TrainConfig, dataset: PatchDataset) -> None:
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    if config.arch.variant != SINGLE:
        if dataset.mask is None:
            raise ConfigError(
                f"variant '{config.arch.variant}' needs masks but the dataset has none"
            )
        if dataset.mask_kind != config.arch.mask_kind:
            raise ConfigError(
                f"dataset mask kind '{dataset.mask_kind}' does not match "
                f"arch mask kind '{config.arch.mask_kind}'"
            )


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def dataset_loss(model: Model, dataset: PatchDataset, batch_size: int = 32) -> float:
    """Mean MSE of the model over a dataset (infer mode, no parameter updates)."""
    total = 0.0
    count = 0
    order = np.arange(len(dataset))
    for idx in _batches(order, batch_size):
        x = (dataset.distorted[idx].astype(np.float32) / 255.0)[:, None]
        t = (dataset.target[idx].astype(np.float32) / 255.0)[:, None]
        m = None
        if model.arch.needs_mask:
            m = dataset.mask[idx].astype(np.float32)[:, None]
        out = model.forward(x, m, mode="infer")
        loss, _ = mse_loss(out, t)
        total += loss * len(idx)
        count += len(idx)
    return total / count


def train(config: TrainConfig, dataset: PatchDataset,
          model: Model | None = None) -> tuple[Model, list[TrainLogRow]]:
    """Seeded SGD loop: per-epoch shuffle, Adam updates, two-phase lr schedule."""
    _check_dataset(config, dataset)
    if model is None:
        model = build_model(config.arch, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    params = dict(model.named_params())
    state = AdamState(params, lr=lr_for_epoch(config, 1))
    log: list[TrainLogRow] = []
    n = len(dataset)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        state.lr = lr_for_epoch(config, epoch)
        order = rng.permutation(n)
        loss_sum = 0.0
        for b, idx in enumerate(_batches(order, config.batch_size)):
            x = (dataset.distorted[idx].astype(np.float32) / 255.0)[:, None]
            t = (dataset.target[idx].astype(np.float32) / 255.0)[:, None]
            m = None
            if model.arch.needs_mask:
                m = dataset.mask[idx].astype(np.float32)[:, None]
            out = model.forward(x, m, mode="train")
            loss, grad = mse_loss(out, t)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = model.backward(grad)
            params = dict(model.named_params())
            new_params = adam_step(params, grads, state)
            for name, value in new_params.items():
                model.set_param(name, value)
            loss_sum += loss * len(idx)
        log.append(
            TrainLogRow(epoch, loss_sum / n, state.lr, time.perf_counter() - t0)
        )
    return model, log


def finetune(base_checkpoint: str, config: TrainConfig,
             dataset: PatchDataset) -> tuple[Model, list[TrainLogRow]]:
    """Continue training from a saved checkpoint whose arch matches the config."""
    from .fileio import load_checkpoint

    model = load_checkpoint(base_checkpoint)
    if model.arch.to_dict() != config.arch.to_dict():
        from .errors import ArchMismatchError

        theirs = {n: a.shape for n, a in model.named_params()}
        ours = {n: a.shape for n, a in build_model(config.arch, seed=0).named_params()}
        diffs = sorted(
            set(theirs) ^ set(ours)
        ) + sorted(n for n in set(theirs) & set(ours) if theirs[n] != ours[n])
        raise ArchMismatchError(
            f"checkpoint arch {model.arch.to_dict()} does not match requested "
            f"{config.arch.to_dict()}; differing parameters: {diffs or 'none (metadata only)'}"
        )
    return train(config, dataset, model=model)
