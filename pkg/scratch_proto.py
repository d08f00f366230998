"""Scratch: size the desk-scale acceptance run (not part of the package)."""
import time

import numpy as np

import pmen
from pmen.training import PatchDataset, dataset_loss


def synth_frame(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.full((h, w), 110.0)
    for _ in range(4):
        fy, fx = rng.uniform(0.006, 0.05, 2)
        ph1, ph2 = rng.uniform(0, 2 * np.pi, 2)
        img += rng.uniform(15, 40) * np.sin(2 * np.pi * fy * yy + ph1) * np.cos(2 * np.pi * fx * xx + ph2)
    # soft shapes
    for _ in range(3):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(h * 0.05, h * 0.3), rng.uniform(w * 0.05, w * 0.3)
        d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        img += rng.uniform(-50, 50) * np.exp(-d * 2.0)
    # texture: bilinear-upsampled low-res noise
    gh, gw = h // 16 + 2, w // 16 + 2
    g = rng.normal(0, rng.uniform(4, 14), (gh, gw))
    ys = np.linspace(0, gh - 1.001, h)
    xs = np.linspace(0, gw - 1.001, w)
    y0 = ys.astype(int); x0 = xs.astype(int)
    fy = (ys - y0)[:, None]; fx = (xs - x0)[None, :]
    tex = (g[y0][:, x0] * (1 - fy) * (1 - fx) + g[y0 + 1][:, x0] * fy * (1 - fx)
           + g[y0][:, x0 + 1] * (1 - fy) * fx + g[y0 + 1][:, x0 + 1] * fy * fx)
    img += tex
    img += rng.normal(0, 1.5, (h, w))
    return np.clip(img, 0, 255).astype(np.uint8)


def synth_clip(seed, n_frames, h, w):
    rng = np.random.default_rng(seed)
    base = synth_frame(rng, h + 16, w + 16).astype(np.float64)
    frames = []
    for i in range(n_frames):
        dy, dx = int(rng.integers(0, 8)), int(rng.integers(0, 8))
        f = base[dy:dy + h, dx:dx + w] + rng.normal(0, 1.0, (h, w))
        frames.append(np.clip(f, 0, 255).astype(np.uint8))
    return frames


def build_ds(clips, qp, mask_kind):
    cfg = pmen.CodecConfig(qp=qp)
    distorted, target, masks, ids = [], [], [], []
    for ci, frames in enumerate(clips):
        for fr in frames:
            recon, pmap, rd = pmen.encode_decode(fr, cfg)
            mask = pmen.make_mask(mask_kind, recon, pmap) if mask_kind else None
            for p in pmen.extract_patches(fr, recon, mask, qp):
                distorted.append(p.distorted); target.append(p.target)
                if mask_kind: masks.append(p.mask)
                ids.append(ci)
    return PatchDataset(np.stack(distorted), np.stack(target),
                        np.stack(masks) if mask_kind else None, qp,
                        np.asarray(ids, np.int32), [f"clip{c}" for c in range(len(clips))],
                        mask_kind=mask_kind)


def main():
    h, w = 448, 512
    n_clips, n_frames = 6, 2   # prototype scale (accept will use 11x4)
    qp = 37
    t0 = time.perf_counter()
    clips = [synth_clip(100 + i, n_frames, h, w) for i in range(n_clips)]
    print(f"synth: {time.perf_counter()-t0:.1f}s")
    t0 = time.perf_counter()
    ds = build_ds(clips, qp, "mean")
    print(f"encode+patches: {time.perf_counter()-t0:.1f}s, {len(ds)} patches")

    # decoded baseline psnr on a held-out frame
    cfg = pmen.CodecConfig(qp=qp)
    val = synth_clip(999, 1, h, w)[0]
    recon, pmap, rd = pmen.encode_decode(val, cfg)
    print(f"val decoded psnr: {rd.psnr:.3f}")

    for channels in (16,):
        arch = pmen.ArchConfig(variant="af", num_res_blocks=2, channels=channels, mask_kind="mean")
        cfgt = pmen.TrainConfig(qp=qp, arch=arch, epochs=3, lr_decay_epoch=3, seed=5)
        t0 = time.perf_counter()
        model, log = pmen.train(cfgt, ds)
        dt = time.perf_counter() - t0
        nb = (len(ds) + 31) // 32
        print(f"AF ch{channels}: {dt:.1f}s for {cfgt.epochs} epochs "
              f"({dt/(cfgt.epochs*nb)*1000:.0f} ms/batch), losses {[f'{r.mean_loss:.6f}' for r in log]}")
        mask = pmen.make_mask("mean", recon, pmap)
        enh = pmen.enhance_frame(model, recon, mask)
        print(f"  val delta_psnr after {cfgt.epochs} epochs: "
              f"{pmen.delta_psnr(val, recon, enh):+.3f} dB")


if __name__ == "__main__":
    main()
