"""File formats: YUV 4:2:0 input, PGM planes, partition maps, checkpoints, CSV reports.

All on-disk formats are little-endian and platform independent.

Partition map (text)::

    PMAP 1 <width> <height> <ctu_size> <min_cu>
    <x> <y> <size>          one line per leaf, ascending (y, x)

Checkpoint (binary, magic ``PMEN``)::

    "PMEN" | u32 version | u32 json_len | arch JSON (UTF-8)
    u32 tensor_count
    per tensor: u32 name_len | name | u32 rank | u32 dims... | f32 data (row-major)

RD CSV for the bdrate command: header ``qp,rate_bits,psnr_db``.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .codec import PartitionMap, RDPoint
from .errors import (
    ArchMismatchError,
    BadMagicError,
    DataError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from .model import ArchConfig, Model, build_model
from .training import PatchDataset, TrainLogRow

CHECKPOINT_MAGIC = b"PMEN"
CHECKPOINT_VERSION = 1
MANIFEST_FORMAT = "yuv420p8"


# -- raw YUV 4:2:0 ---------------------------------------------------------


def yuv_frame_size(width: int, height: int) -> int:
    if width % 2 or height % 2:
        raise DataError(f"yuv420p8 needs even dimensions, got {width}x{height}")
    return width * height * 3 // 2


def read_yuv_frame(path: str, width: int, height: int, index: int, min_cu: int = 8) -> np.ndarray:
    """Read the Y plane of frame ``index``; chroma is skipped.

    The returned plane is cropped (top-left) to multiples of ``min_cu``
    so it can be fed to the codec without further preparation.
    """
    frame_size = yuv_frame_size(width, height)
    needed = (index + 1) * frame_size
    actual = os.path.getsize(path)
    if actual < needed:
        raise DataError(
            f"{path}: frame {index} needs {needed} bytes, file has {actual}"
        )
    with open(path, "rb") as fh:
        fh.seek(index * frame_size)
        data = fh.read(width * height)
    plane = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    ch = height - height % min_cu
    cw = width - width % min_cu
    if ch < min_cu or cw < min_cu:
        raise DataError(f"{path}: {width}x{height} too small for min_cu {min_cu}")
    return plane[:ch, :cw].copy()


def write_yuv_frames(path: str, frames: list[np.ndarray]) -> None:
    """Write luma planes as yuv420p8 with flat mid-gray chroma."""
    with open(path, "wb") as fh:
        for frame in frames:
            h, w = frame.shape
            yuv_frame_size(w, h)  # dim check
            fh.write(frame.astype(np.uint8).tobytes())
            fh.write(np.full((h // 2) * (w // 2) * 2, 128, dtype=np.uint8).tobytes())


# -- PGM (single planes: frames and masks) ---------------------------------


def write_pgm(path: str, plane: np.ndarray) -> None:
    if plane.dtype != np.uint8:
        raise DataError(f"write_pgm expects uint8, got {plane.dtype}")
    h, w = plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(plane.tobytes())


def write_mask_pgm(path: str, mask_values: np.ndarray) -> None:
    """Export a [0,1] mask plane as 8-bit PGM (values * 255, rounded)."""
    write_pgm(path, np.clip(np.rint(mask_values * 255.0), 0, 255).astype(np.uint8))


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise DataError(f"{path}: truncated PGM payload")
    return pixels.reshape(h, w).copy()


# -- partition map text format ---------------------------------------------


def write_partition_map(path: str, pmap: PartitionMap) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"PMAP 1 {pmap.width} {pmap.height} {pmap.ctu_size} {pmap.min_cu}\n")
        for x, y, size in sorted(pmap.leaves, key=lambda l: (l[1], l[0])):
            fh.write(f"{x} {y} {size}\n")


def read_partition_map(path: str) -> PartitionMap:
    """Parse and re-validate a partition map; tampered maps are rejected."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty partition map file")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "PMAP":
        raise DataError(f"{path}: bad header {lines[0]!r}")
    if head[1] != "1":
        raise DataError(f"{path}: unsupported partition map version {head[1]}")
    try:
        width, height, ctu, min_cu = (int(v) for v in head[2:])
        leaves = [tuple(int(v) for v in ln.split()) for ln in lines[1:]]
    except ValueError as exc:
        raise DataError(f"{path}: malformed partition map: {exc}") from exc
    if any(len(leaf) != 3 for leaf in leaves):
        raise DataError(f"{path}: leaf lines must be 'x y size'")
    pmap = PartitionMap(width, height, ctu, min_cu, leaves)
    try:
        pmap.validate()
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return pmap


# -- model checkpoints ------------------------------------------------------


def save_checkpoint(path: str, model: Model) -> None:
    """Serialize arch plus every named tensor (parameters and BN statistics)."""
    arch_json = json.dumps(model.arch.to_dict(), sort_keys=True).encode("utf-8")
    tensors = list(model.named_arrays())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(arch_json)))
        fh.write(arch_json)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, path: str):
        self.path = path
        with open(path, "rb") as fh:
            self.data = fh.read()
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"{self.path}: needs {self.pos + n} bytes, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str) -> Model:
    """Rebuild a model from a checkpoint; every tensor round-trips bit-exactly."""
    rd = _Reader(path)
    if rd.take(4) != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a PMEN checkpoint")
    version = rd.u32()
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: checkpoint version {version}, supported: {CHECKPOINT_VERSION}"
        )
    try:
        arch = ArchConfig.from_dict(json.loads(rd.take(rd.u32()).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: bad arch descriptor: {exc}") from exc
    stored: dict[str, np.ndarray] = {}
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode("utf-8")
        rank = rd.u32()
        dims = struct.unpack(f"<{rank}I", rd.take(4 * rank))
        count = 1
        for d in dims:
            count *= d
        arr = np.frombuffer(rd.take(4 * count), dtype="<f4").reshape(dims)
        stored[name] = arr.astype(np.float32)

    model = build_model(arch, seed=0)
    expected = dict(model.named_arrays())
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise ArchMismatchError(
            f"{path}: tensor names do not match arch (missing: {missing}, extra: {extra})"
        )
    bad_shapes = {
        n: (stored[n].shape, expected[n].shape)
        for n in expected
        if stored[n].shape != expected[n].shape
    }
    if bad_shapes:
        raise ArchMismatchError(f"{path}: tensor shapes do not match arch: {bad_shapes}")
    for name, arr in stored.items():
        model.set_array(name, arr)
    return model


# -- dataset manifests -------------------------------------------------------


@dataclass
class ManifestEntry:
    path: str
    width: int
    height: int
    frame_count: int
    name: str = ""
    cls: str = "-"

    def check_size(self) -> None:
        needed = yuv_frame_size(self.width, self.height) * self.frame_count
        actual = os.path.getsize(self.path)
        if actual < needed:
            raise DataError(
                f"{self.name}: {self.path} holds {actual} bytes, "
                f"{self.frame_count} frames need {needed}"
            )


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    format: str = MANIFEST_FORMAT


def load_manifest(path: str) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot load manifest: {exc}") from exc
    fmt = raw.get("format", MANIFEST_FORMAT)
    if fmt != MANIFEST_FORMAT:
        raise DataError(f"{path}: unsupported format tag {fmt!r}, only {MANIFEST_FORMAT!r}")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for i, e in enumerate(raw.get("entries", [])):
        try:
            clip_path = e["path"]
            if not os.path.isabs(clip_path):
                clip_path = os.path.join(base, clip_path)
            entries.append(
                ManifestEntry(
                    path=clip_path,
                    width=int(e["width"]),
                    height=int(e["height"]),
                    frame_count=int(e["frame_count"]),
                    name=e.get("name") or os.path.splitext(os.path.basename(e["path"]))[0],
                    cls=e.get("class", "-"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: entry {i} malformed: {exc}") from exc
    if not entries:
        raise DataError(f"{path}: manifest has no entries")
    return DatasetManifest(entries=entries, format=fmt)


# -- patch datasets (npz) ----------------------------------------------------


def save_dataset(path: str, dataset: PatchDataset) -> None:
    arrays = {
        "distorted": dataset.distorted,
        "target": dataset.target,
        "qp": np.int64(dataset.qp),
        "clip_ids": dataset.clip_ids,
        "clip_names": np.asarray(dataset.clip_names),
        "mask_kind": np.asarray(dataset.mask_kind or ""),
    }
    if dataset.mask is not None:
        arrays["mask"] = dataset.mask
    np.savez(path, **arrays)


def load_dataset(path: str) -> PatchDataset:
    try:
        with np.load(path, allow_pickle=False) as z:
            mask_kind = str(z["mask_kind"]) or None
            return PatchDataset(
                distorted=z["distorted"],
                target=z["target"],
                mask=z["mask"] if "mask" in z.files else None,
                qp=int(z["qp"]),
                clip_ids=z["clip_ids"],
                clip_names=[str(n) for n in z["clip_names"]],
                mask_kind=mask_kind,
            )
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: cannot load dataset: {exc}") from exc


# -- CSV surfaces ------------------------------------------------------------


def write_rd_csv(path: str, points: list[tuple[int, RDPoint]]) -> None:
    """(qp, RDPoint) rows in the bdrate input schema."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("qp,rate_bits,psnr_db\n")
        for qp, p in points:
            fh.write(f"{qp},{p.rate},{p.psnr:.6f}\n")


def read_rd_csv(path: str) -> list[RDPoint]:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "qp,rate_bits,psnr_db":
        raise DataError(f"{path}: expected header 'qp,rate_bits,psnr_db'")
    points = []
    for ln in lines[1:]:
        try:
            _, rate, db = ln.split(",")
            points.append(RDPoint(rate=int(rate), psnr=float(db)))
        except ValueError as exc:
            raise DataError(f"{path}: bad RD row {ln!r}: {exc}") from exc
    return points


def write_report_csv(path: str, report) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("class,sequence,qp,psnr_decoded,psnr_enhanced,delta_psnr\n")
        for r in list(report.rows) + list(report.average_rows):
            fh.write(
                f"{r.cls},{r.sequence},{r.qp},{r.psnr_decoded:.6f},"
                f"{r.psnr_enhanced:.6f},{r.delta_psnr:.6f}\n"
            )


def write_bd_csv(path: str, report) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("class,sequence,bd_rate_percent\n")
        for r in report.bd_rows:
            fh.write(f"{r.cls},{r.sequence},{r.bd_rate_percent:.6f}\n")
        fh.write(f"-,Average,{report.bd_average:.6f}\n")


def append_train_log(path: str, rows: list[TrainLogRow]) -> None:
    """Append-only training log: epoch, mean_loss, lr, wall_seconds."""
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="ascii", newline="\n") as fh:
        if new_file:
            fh.write("epoch,mean_loss,lr,wall_seconds\n")
        for r in rows:
            fh.write(f"{r.epoch},{r.mean_loss:.10g},{r.lr:.6g},{r.wall_seconds:.3f}\n")
