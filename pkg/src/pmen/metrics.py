"""Quality and rate-distortion metrics: PSNR, delta-PSNR, Bjontegaard BD-rate."""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .codec import CodecConfig, RDPoint, encode_decode
from .errors import EvalError, MetricError, ShapeError
from .masks import make_mask

PSNR_CAP_DB = 100.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio between two 8-bit luma planes, capped at 100 dB."""
    if a.shape != b.shape:
        raise ShapeError(f"psnr: frame shapes differ: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(255.0**2 / mse), PSNR_CAP_DB)


def delta_psnr(original: np.ndarray, decoded: np.ndarray, enhanced: np.ndarray) -> float:
    """PSNR gain of the enhanced frame over the decoded one, both against the original."""
    return psnr(original, enhanced) - psnr(original, decoded)


def _fit_log_rate(points: list[RDPoint], who: str) -> np.ndarray:
    if len(points) < 4:
        raise MetricError(f"bd_rate: {who} curve has {len(points)} points, need at least 4")
    rates = np.array([p.rate for p in points], dtype=np.float64)
    psnrs = np.array([p.psnr for p in points], dtype=np.float64)
    if np.any(rates <= 0):
        raise MetricError(f"bd_rate: {who} curve has non-positive rates")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", np.exceptions.RankWarning)
        coeffs, _, rank, _, _ = np.polyfit(psnrs, np.log10(rates), 3, full=True)
    if rank < 4:
        raise MetricError(f"bd_rate: singular cubic fit for {who} curve (degenerate PSNR values)")
    return coeffs


def bd_rate(anchor: list[RDPoint], test: list[RDPoint]) -> float:
    """Bjontegaard rate delta of ``test`` vs ``anchor``, in percent.

    Fits log10(rate) as a cubic in PSNR for each curve, integrates both
    fits over the common PSNR range, and converts the mean log-rate gap
    back to a percentage. Negative means the test curve needs fewer bits
    at equal quality.
    """
    fit_a = _fit_log_rate(anchor, "anchor")
    fit_t = _fit_log_rate(test, "test")
    lo = max(min(p.psnr for p in anchor), min(p.psnr for p in test))
    hi = min(max(p.psnr for p in anchor), max(p.psnr for p in test))
    if hi <= lo:
        raise MetricError(f"bd_rate: PSNR ranges do not overlap (common range [{lo}, {hi}])")
    int_a = np.polyint(fit_a)
    int_t = np.polyint(fit_t)
    area_a = np.polyval(int_a, hi) - np.polyval(int_a, lo)
    area_t = np.polyval(int_t, hi) - np.polyval(int_t, lo)
    avg_diff = (area_t - area_a) / (hi - lo)
    return float((10.0**avg_diff - 1.0) * 100.0)


def validate_rd_curve(points: list[RDPoint]) -> None:
    """Check the RD-curve invariants: >= 4 points, PSNR non-decreasing in rate."""
    if len(points) < 4:
        raise MetricError(f"RD curve has {len(points)} points, need at least 4")
    by_rate = sorted(points, key=lambda p: p.rate)
    for lo, hi in zip(by_rate, by_rate[1:]):
        if hi.rate > lo.rate and hi.psnr < lo.psnr:
            raise MetricError(
                f"RD curve not monotone: rate {hi.rate} > {lo.rate} but "
                f"psnr {hi.psnr:.3f} < {lo.psnr:.3f}"
            )


@dataclass
class Sequence:
    """A named test clip: original frames, plus a class tag for report rows."""

    name: str
    frames: list[np.ndarray]
    cls: str = "-"


@dataclass
class EvalRow:
    cls: str
    sequence: str
    qp: int
    psnr_decoded: float
    psnr_enhanced: float
    delta_psnr: float


@dataclass
class BDRow:
    cls: str
    sequence: str
    bd_rate_percent: float


@dataclass
class EvalReport:
    rows: list[EvalRow]
    average_rows: list[EvalRow]  # one per QP, sequence name "Average"
    bd_rows: list[BDRow]
    bd_average: float


def evaluate_model(models, sequences: list[Sequence], config: CodecConfig,
                   qps: list[int]) -> EvalReport:
    """Per-sequence/per-QP enhancement report plus per-sequence BD-rate.

    ``models`` is either one model used at every QP or a mapping QP ->
    model (the per-QP training regime). Rates come from the simulator
    unchanged: post-processing adds no bits, so the enhanced curve shares
    the decoded curve's rates.
    """
    from .model import Model, enhance_frame

    if isinstance(models, Model):
        by_qp = {qp: models for qp in qps}
    else:
        by_qp = dict(models)
    for qp in qps:
        if qp not in by_qp:
            seq_names = ", ".join(s.name for s in sequences)
            raise EvalError(f"no model for qp {qp} (needed for sequences: {seq_names})")

    rows: list[EvalRow] = []
    bd_rows: list[BDRow] = []
    for seq in sequences:
        decoded_curve: list[RDPoint] = []
        enhanced_curve: list[RDPoint] = []
        for qp in qps:
            model = by_qp[qp]
            cfg = replace(config, qp=qp)
            rate = 0
            p_dec: list[float] = []
            p_enh: list[float] = []
            for frame in seq.frames:
                recon, pmap, rd = encode_decode(frame, cfg)
                rate += rd.rate
                mask = None
                if model.arch.needs_mask:
                    mask = make_mask(model.arch.mask_kind, recon, pmap)
                enhanced = enhance_frame(model, recon, mask)
                p_dec.append(psnr(frame, recon))
                p_enh.append(psnr(frame, enhanced))
            psnr_dec = float(np.mean(p_dec))
            psnr_enh = float(np.mean(p_enh))
            rows.append(EvalRow(seq.cls, seq.name, qp, psnr_dec, psnr_enh, psnr_enh - psnr_dec))
            decoded_curve.append(RDPoint(rate=rate, psnr=psnr_dec))
            enhanced_curve.append(RDPoint(rate=rate, psnr=psnr_enh))
        try:
            bd = bd_rate(decoded_curve, enhanced_curve)
        except MetricError as exc:
            raise EvalError(f"BD-rate failed for sequence '{seq.name}': {exc}") from exc
        bd_rows.append(BDRow(seq.cls, seq.name, bd))

    average_rows = []
    for qp in qps:
        qp_rows = [r for r in rows if r.qp == qp]
        average_rows.append(
            EvalRow(
                cls="-",
                sequence="Average",
                qp=qp,
                psnr_decoded=float(np.mean([r.psnr_decoded for r in qp_rows])),
                psnr_enhanced=float(np.mean([r.psnr_enhanced for r in qp_rows])),
                delta_psnr=float(np.mean([r.delta_psnr for r in qp_rows])),
            )
        )
    bd_average = float(np.mean([r.bd_rate_percent for r in bd_rows]))
    return EvalReport(rows, average_rows, bd_rows, bd_average)
