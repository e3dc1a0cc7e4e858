"""Separation metrics and bucketed reports.

Si-SNR guards are relative to the estimate norm, so the metric is exactly
scale invariant and saturates at +/-``SI_SNR_CAP_DB``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError

GUARD = 1e-8
SI_SNR_CAP_DB = -20.0 * np.log10(GUARD)  # 160 dB
ANGLE_BUCKETS = (15.0, 45.0, 90.0, 180.0)
BUCKET_LABELS = ("0-15", "15-45", "45-90", "90-180")
REPORT_COLUMNS = ("scene_id", "mode", "si_snr_db", "snr_db", "sdr_proxy_db", "speaker_count",
                  "min_interferer_angle_deg")


def _vectors(estimate, reference):
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64).ravel()
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise DimensionError(f"estimate length {est.size} != reference length {ref.size}")
    ref_energy = float(ref @ ref)
    if ref_energy <= 0.0:
        raise ParameterError("reference signal has zero energy")
    return est, ref, ref_energy


def si_snr_db(estimate, reference) -> float:
    """Scale-invariant SNR in dB, clipped to ``[-cap, cap]``."""
    est, ref, ref_energy = _vectors(estimate, reference)
    est_norm = float(np.linalg.norm(est))
    if est_norm == 0.0:
        return -SI_SNR_CAP_DB
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    floor = GUARD * est_norm
    num = max(float(np.linalg.norm(target)), floor)
    den = max(float(np.linalg.norm(est - target)), floor)
    return float(np.clip(20.0 * np.log10(num / den), -SI_SNR_CAP_DB, SI_SNR_CAP_DB))


def si_snr_loss(estimate, reference) -> float:
    """Negative Si-SNR, the training objective."""
    return -si_snr_db(estimate, reference)


def si_snr_grad(estimate, reference) -> tuple[float, np.ndarray]:
    """Loss ``-Si-SNR`` and its gradient w.r.t. the estimate (guards inactive)."""
    est, ref, ref_energy = _vectors(estimate, reference)
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    resid = est - target
    t2, r2 = float(target @ target), float(resid @ resid)
    loss = -10.0 * np.log10(t2 / r2)
    c = 10.0 / np.log(10.0)
    # d log||a x||^2 / d est = 2 x / (x^T est);  d log||e - a x||^2 / d est = 2 resid / r2
    d_t = 2.0 * ref / (est @ ref)
    d_r = 2.0 * resid / r2
    return loss, -c * (d_t - d_r)


def snr_db(estimate, reference) -> float:
    """Plain SNR ``||x||^2 / ||xhat - x||^2`` in dB (no projection)."""
    est, ref, ref_energy = _vectors(estimate, reference)
    err = float(np.sum((est - ref) ** 2))
    floor = (GUARD ** 2) * ref_energy
    return float(np.clip(10.0 * np.log10(ref_energy / max(err, floor)), -SI_SNR_CAP_DB, SI_SNR_CAP_DB))


def sdr_proxy_db(estimate, reference) -> float:
    """SNR after least-squares projection onto the reference (not BSS-eval SDR)."""
    return si_snr_db(estimate, reference)


def angle_bucket(angle_deg) -> str:
    """Table bucket for the closest-interferer angle; ``none`` for one talker."""
    if angle_deg is None or (isinstance(angle_deg, float) and np.isnan(angle_deg)):
        return "none"
    a = float(angle_deg)
    if not 0.0 <= a <= 180.0:
        raise ParameterError(f"angle {a} outside [0, 180]")
    for edge, label in zip(ANGLE_BUCKETS, BUCKET_LABELS):
        if a < edge:
            return label
    return BUCKET_LABELS[-1]


@dataclass
class MetricRow:
    scene_id: str
    mode: str
    si_snr_db: float
    snr_db: float
    sdr_proxy_db: float
    speaker_count: int
    min_interferer_angle_deg: float | None = None


def evaluate(scene_id: str, mode: str, estimate, reference, speaker_count: int = 1,
             min_interferer_angle_deg: float | None = None) -> MetricRow:
    return MetricRow(scene_id, mode, si_snr_db(estimate, reference), snr_db(estimate, reference),
                     sdr_proxy_db(estimate, reference), int(speaker_count), min_interferer_angle_deg)


@dataclass
class MetricReport:
    rows: list
    overall: dict = field(default_factory=dict)
    by_angle: dict = field(default_factory=dict)
    by_speakers: dict = field(default_factory=dict)
    by_mode: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.scene_id, r.mode, _fmt(r.si_snr_db), _fmt(r.snr_db), _fmt(r.sdr_proxy_db),
                        r.speaker_count, "" if r.min_interferer_angle_deg is None else _fmt(r.min_interferer_angle_deg)])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "rows": [asdict(r) for r in self.rows],
            "overall": self.overall,
            "by_angle": self.by_angle,
            "by_speakers": self.by_speakers,
            "by_mode": self.by_mode,
        }
        return json.dumps(_rounded(payload), indent=2, sort_keys=True) + "\n"


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _rounded(obj):
    if isinstance(obj, float):
        return round(obj, 9)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    return obj


_METRIC_FIELDS = ("si_snr_db", "snr_db", "sdr_proxy_db")


def _means(rows) -> dict:
    out = {"count": len(rows)}
    for name in _METRIC_FIELDS:
        out[name] = float(np.mean([getattr(r, name) for r in rows]))
    return out


def aggregate_report(rows) -> MetricReport:
    """Overall and per-bucket means (closest-interferer angle, talker count, mode)."""
    rows = list(rows)
    if not rows:
        raise ParameterError("cannot aggregate an empty set of rows")
    groups = {"by_angle": {}, "by_speakers": {}, "by_mode": {}}
    for r in rows:
        groups["by_angle"].setdefault(angle_bucket(r.min_interferer_angle_deg), []).append(r)
        groups["by_speakers"].setdefault(f"{r.speaker_count}spk", []).append(r)
        groups["by_mode"].setdefault(r.mode, []).append(r)
    return MetricReport(
        rows=rows,
        overall=_means(rows),
        **{name: {k: _means(v) for k, v in sorted(g.items())} for name, g in groups.items()},
    )
