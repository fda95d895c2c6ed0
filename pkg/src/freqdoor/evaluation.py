"""Attack efficacy (ASR/BA), stealthiness, and frequency-footprint reporting.

Restoration success is judged as a two-class problem: an output counts as
restored when it is perceptually closer to the clean baseline's output on the
same input than to that input's degradation target.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ParameterError
from .imaging import FrequencyAnalysisConfig, frequency_distance, psnr, ssim
from .perceptual import default_extractor, feature_distance
from .victim import RestorerNet, restore_batch


@dataclass
class ClassificationRefs:
    """Success / failure references for one benign test input."""

    hq: np.ndarray  # clean baseline's output on the benign input
    degraded: np.ndarray  # degradation target of the benign input
    _hq_feats: list = field(default=None, repr=False)
    _deg_feats: list = field(default=None, repr=False)

    def features(self):
        ext = default_extractor()
        if self._hq_feats is None:
            self._hq_feats = ext.features(self.hq)
            self._deg_feats = ext.features(self.degraded)
        return self._hq_feats, self._deg_feats


def classify_restoration(out: np.ndarray, refs: ClassificationRefs) -> int:
    """1 when the output sits closer to the success reference; ties break to 0."""
    if out.shape != refs.hq.shape or out.shape != refs.degraded.shape:
        raise ParameterError("output/reference shape mismatch")
    hq_feats, deg_feats = refs.features()
    out_feats = default_extractor().features(out)
    d_hq = feature_distance(out_feats, hq_feats)
    d_deg = feature_distance(out_feats, deg_feats)
    return 1 if d_hq < d_deg else 0


def benign_accuracy(
    model: RestorerNet, testset: list[np.ndarray], refs: list[ClassificationRefs]
) -> float:
    """Percentage of benign inputs whose restoration classifies as successful."""
    if not testset:
        raise ParameterError("empty test set")
    if len(testset) != len(refs):
        raise ParameterError("testset/refs length mismatch")
    outs = restore_batch(model, testset)
    hits = sum(classify_restoration(out, r) for out, r in zip(outs, refs))
    return 100.0 * hits / len(testset)


def attack_success_rate(
    model: RestorerNet,
    poison_fn: Callable[[np.ndarray], np.ndarray],
    testset: list[np.ndarray],
    refs: list[ClassificationRefs],
) -> float:
    """Percentage of poisoned inputs whose restoration classifies as degraded."""
    if not testset:
        raise ParameterError("empty test set")
    if len(testset) != len(refs):
        raise ParameterError("testset/refs length mismatch")
    poisoned = [poison_fn(x) for x in testset]
    outs = restore_batch(model, poisoned)
    misses = sum(1 - classify_restoration(out, r) for out, r in zip(outs, refs))
    return 100.0 * misses / len(testset)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    """Structured evaluation record with provenance for CSV serialization."""

    config_hash: str = ""
    seed: int = 0
    asr: float | None = None
    ba: float | None = None
    image_rows: list = field(default_factory=list)  # dicts, one per image
    frequency_rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def provenance(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed}


def stealth_report(
    benign_lq_set: list[np.ndarray],
    poisoned_set: list[np.ndarray],
    gt_set: list[np.ndarray],
) -> dict:
    """Per-image and mean quality of benign vs poisoned inputs against ground truth."""
    if not (len(benign_lq_set) == len(poisoned_set) == len(gt_set)):
        raise ParameterError("stealth_report requires aligned sets")
    if not benign_lq_set:
        raise ParameterError("empty sets")
    rows = []
    for i, (lq, poi, gt) in enumerate(zip(benign_lq_set, poisoned_set, gt_set)):
        rows.append(
            {
                "index": i,
                "psnr_benign_gt": psnr(lq, gt),
                "ssim_benign_gt": ssim(lq, gt),
                "lpd_benign_gt": _pd(lq, gt),
                "psnr_poisoned_gt": psnr(poi, gt),
                "ssim_poisoned_gt": ssim(poi, gt),
                "lpd_poisoned_gt": _pd(poi, gt),
                "psnr_poisoned_benign": psnr(poi, lq),
            }
        )
    means = {
        k: float(np.mean([r[k] for r in rows])) for k in rows[0] if k != "index"
    }
    return {"rows": rows, "means": means}


def _pd(a, b):
    from .perceptual import perceptual_distance

    return perceptual_distance(a, b)


def frequency_report(
    benign_set: list[np.ndarray],
    poisoned_set: list[np.ndarray],
    cfg: FrequencyAnalysisConfig | None = None,
) -> dict:
    """Per-image and mean low/high frequency distances between aligned sets."""
    if len(benign_set) != len(poisoned_set):
        raise ParameterError("frequency_report requires aligned sets")
    if not benign_set:
        raise ParameterError("empty sets")
    cfg = cfg or FrequencyAnalysisConfig()
    rows = []
    for i, (a, b) in enumerate(zip(benign_set, poisoned_set)):
        low, high = frequency_distance(a, b, cfg)
        rows.append({"index": i, "low_mse": low, "high_mse": high})
    means = {
        "low_mse": float(np.mean([r["low_mse"] for r in rows])),
        "high_mse": float(np.mean([r["high_mse"] for r in rows])),
    }
    return {"rows": rows, "means": means}


# ---------------------------------------------------------------------------
# CSV / summary serialization
# ---------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_rows_csv(path, rows: list[dict], provenance: dict) -> None:
    """Rows to CSV with provenance as leading comment lines (stable schema)."""
    if not rows:
        raise ParameterError(f"no rows to write to {path}")
    with open(path, "w", newline="") as fh:
        for key, value in sorted(provenance.items()):
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        header = list(rows[0].keys())
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(row[k]) for k in header])


def read_rows_csv(path) -> list[dict]:
    """Read a CSV written by write_rows_csv, skipping comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return [dict(row) for row in reader]


def write_summary(path, sections: dict, provenance: dict) -> None:
    """Human-readable key/value summary with the same provenance lines."""
    with open(path, "w") as fh:
        for key, value in sorted(provenance.items()):
            fh.write(f"# {key}={value}\n")
        for section, values in sections.items():
            fh.write(f"[{section}]\n")
            for k, v in values.items():
                fh.write(f"{k} = {format_value(v)}\n")
            fh.write("\n")
