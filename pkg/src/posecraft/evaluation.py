"""Accuracy metrics and dataset tooling for relative-pose runs.

Errors are geodesic degrees.  Recall thresholds use strict inequality
(an error exactly at the threshold does not count), which shifts recalls
in the third decimal versus a non-strict reading; pinned here so results
are comparable across runs.
"""

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Rotation, relative_yaw_deg

RECALL_THRESHOLDS = (5.0, 15.0, 30.0)
AUC_CEILING = 30.0


class EmptySet(ValueError):
    """A metric was asked for zero samples."""


class NoPairsInRange(ValueError):
    """Pair sampling matched nothing in the requested yaw window."""


@dataclass(frozen=True)
class SampleError:
    """Per-pair error record; translation is optional (rotation-only sets)."""

    pair_id: str
    rotation_deg: Optional[float] = None
    translation_deg: Optional[float] = None
    valid: bool = True

    def __post_init__(self):
        for name in ("rotation_deg", "translation_deg"):
            v = getattr(self, name)
            if v is None:
                continue
            if not math.isfinite(v) or not 0.0 <= v <= 180.0:
                raise ValueError(f"{name} must lie in [0, 180], got {v!r}")
        if self.valid and self.rotation_deg is None:
            raise ValueError("a valid sample needs a rotation error")


def _usable(samples: Sequence[SampleError]) -> List[SampleError]:
    return [s for s in samples if s.valid and s.rotation_deg is not None]


def recall_at(errors: Sequence[float], theta: float) -> float:
    """Percentage of errors strictly below ``theta`` degrees."""
    errors = list(errors)
    if not errors:
        raise EmptySet("recall over zero errors is undefined")
    hits = sum(1 for e in errors if e < theta)
    return 100.0 * hits / len(errors)


def _auc_exact(errors: Sequence[float]) -> float:
    # closed form of the area under the strict-recall step curve on
    # [0, 30]: each sample contributes its clamped margin to the ceiling
    total = sum(max(0.0, AUC_CEILING - min(e, AUC_CEILING)) for e in errors)
    return 100.0 * total / (AUC_CEILING * len(errors))


def _auc_sampled(errors: Sequence[float], step: float) -> float:
    thresholds = np.arange(step, AUC_CEILING + step / 2, step)
    recalls = [recall_at(errors, float(t)) for t in thresholds]
    return float(np.mean(recalls))


def auc30(rot_errors: Sequence[float],
          trans_errors: Optional[Sequence[float]] = None,
          step: Optional[float] = None) -> float:
    """Normalized area under the recall curve over [0, 30] degrees.

    With translation errors present the smaller of the two areas is
    returned.  ``step=None`` integrates the step curve exactly;
    a positive step averages recalls sampled every ``step`` degrees,
    provided for comparison against fixed-grid implementations.
    """
    rot_errors = list(rot_errors)
    if not rot_errors:
        raise EmptySet("auc30 over zero errors is undefined")
    if step is not None and step <= 0:
        raise ValueError(f"step must be positive, got {step!r}")

    def area(errs):
        return _auc_exact(errs) if step is None else _auc_sampled(errs, step)

    rot_auc = area(rot_errors)
    if trans_errors is None:
        return rot_auc
    trans_errors = list(trans_errors)
    if not trans_errors:
        raise EmptySet("translation error list present but empty")
    return min(rot_auc, area(trans_errors))


def mean_errors(samples: Sequence[SampleError]) -> Tuple[float, Optional[float]]:
    """(MRE, MTE) over valid samples; MTE is None when no sample has one."""
    usable = _usable(samples)
    if not usable:
        raise EmptySet("no valid samples to average")
    mre = float(np.mean([s.rotation_deg for s in usable]))
    trans = [s.translation_deg for s in usable if s.translation_deg is not None]
    mte = float(np.mean(trans)) if trans else None
    return mre, mte


@dataclass(frozen=True)
class EvalReport:
    mre: float
    mte: Optional[float]
    rotation_recall: dict
    translation_recall: Optional[dict]
    auc30: float
    sample_count: int
    failure_count: int
    fingerprint: str = ""

    def __post_init__(self):
        thetas = sorted(self.rotation_recall)
        values = [self.rotation_recall[t] for t in thetas]
        if any(not 0.0 <= v <= 100.0 for v in values):
            raise ValueError("recall outside [0, 100]")
        if any(a > b + 1e-9 for a, b in zip(values, values[1:])):
            raise ValueError("recall must be non-decreasing in theta")
        if not 0.0 <= self.auc30 <= 100.0:
            raise ValueError("auc30 outside [0, 100]")
        if 30.0 in self.rotation_recall \
                and self.auc30 > self.rotation_recall[30.0] + 1e-9:
            raise ValueError("auc30 cannot exceed recall at 30 degrees")


def build_report(samples: Sequence[SampleError], failure_count: int = 0,
                 fingerprint: str = "",
                 thresholds: Sequence[float] = RECALL_THRESHOLDS) -> EvalReport:
    """Aggregate per-sample errors into the summary report."""
    usable = _usable(samples)
    if not usable:
        raise EmptySet("cannot build a report from zero valid samples")
    mre, mte = mean_errors(samples)
    rot = [s.rotation_deg for s in usable]
    trans = [s.translation_deg for s in usable if s.translation_deg is not None]
    rot_recall = {float(t): recall_at(rot, t) for t in thresholds}
    trans_recall = {float(t): recall_at(trans, t) for t in thresholds} \
        if trans else None
    return EvalReport(
        mre=mre,
        mte=mte,
        rotation_recall=rot_recall,
        translation_recall=trans_recall,
        auc30=auc30(rot, trans or None),
        sample_count=len(usable),
        failure_count=failure_count,
        fingerprint=fingerprint,
    )


def empty_report(failure_count: int = 0, fingerprint: str = "") -> EvalReport:
    """Zero-sample placeholder so empty batches still emit a report."""
    return EvalReport(mre=float("nan"), mte=None, rotation_recall={},
                      translation_recall=None, auc30=0.0, sample_count=0,
                      failure_count=failure_count, fingerprint=fingerprint)


# ------------------------------------------------------------------ emission

def report_json(report: EvalReport) -> str:
    payload = {
        "mre_deg": None if math.isnan(report.mre) else report.mre,
        "mte_deg": report.mte,
        "rotation_recall": {f"R@{int(t)}": v
                            for t, v in sorted(report.rotation_recall.items())},
        "translation_recall": None if report.translation_recall is None else
        {f"T@{int(t)}": v
         for t, v in sorted(report.translation_recall.items())},
        "auc30": report.auc30,
        "samples": report.sample_count,
        "failures": report.failure_count,
        "fingerprint": report.fingerprint,
    }
    return json.dumps(payload, indent=2, sort_keys=False) + "\n"


def report_text(report: EvalReport) -> str:
    """Aligned single-row summary table."""
    headers = ["MRE", "MTE", "R@5", "R@15", "R@30", "AUC30", "N", "fail"]

    def fmt(v):
        if v is None or (isinstance(v, float) and math.isnan(v)):
            return "-"
        return f"{v:.2f}" if isinstance(v, float) else str(v)

    rr = report.rotation_recall
    row = [fmt(report.mre), fmt(report.mte),
           fmt(rr.get(5.0)), fmt(rr.get(15.0)), fmt(rr.get(30.0)),
           fmt(report.auc30), fmt(report.sample_count),
           fmt(report.failure_count)]
    widths = [max(len(h), len(c)) for h, c in zip(headers, row)]
    head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    body = "  ".join(c.rjust(w) for c, w in zip(row, widths))
    return head + "\n" + body + "\n"


def errors_csv(samples: Sequence[SampleError]) -> str:
    """Per-sample errors for external plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["pair_id", "rotation_error_deg",
                     "translation_error_deg", "valid"])
    for s in samples:
        writer.writerow([
            s.pair_id,
            "" if s.rotation_deg is None else f"{s.rotation_deg:.6f}",
            "" if s.translation_deg is None else f"{s.translation_deg:.6f}",
            int(s.valid),
        ])
    return buf.getvalue()


# ------------------------------------------------------------- pair sampling

@dataclass(frozen=True)
class CatalogEntry:
    """One posed image: identity plus ground-truth camera rotation."""

    image_id: str
    rotation: Rotation
    translation: Optional[tuple] = None
    path: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "CatalogEntry":
        quat = d["rotation_quat"]
        trans = d.get("translation")
        return cls(image_id=str(d["id"]),
                   rotation=Rotation.from_quat(quat),
                   translation=None if trans is None else tuple(
                       float(v) for v in trans),
                   path=str(d.get("path", "")))


def sample_pairs(catalog: Sequence, yaw_lo: float, yaw_hi: float,
                 max_pairs: Optional[int] = None, seed: int = 0) -> List[dict]:
    """Manifest records for image pairs whose relative yaw is in [lo, hi).

    Enumerates unordered pairs in catalog order, keeps matches, then takes
    a seeded uniform subsample when ``max_pairs`` caps the count.  Output
    order follows the enumeration so identical seeds give identical
    manifests.
    """
    if not yaw_lo < yaw_hi:
        raise ValueError(f"need yaw_lo < yaw_hi, got [{yaw_lo}, {yaw_hi})")
    entries = [e if isinstance(e, CatalogEntry) else CatalogEntry.from_dict(e)
               for e in catalog]
    kept = []
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            yaw = relative_yaw_deg(entries[i].rotation, entries[j].rotation)
            if yaw_lo <= yaw < yaw_hi:
                kept.append((entries[i], entries[j], yaw))
    if not kept:
        raise NoPairsInRange(
            f"no catalog pair has relative yaw in [{yaw_lo}, {yaw_hi})")
    if max_pairs is not None and max_pairs < len(kept):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(kept), size=max_pairs, replace=False)
        kept = [kept[i] for i in sorted(chosen)]

    records = []
    for a, b, yaw in kept:
        rec = {
            "id": f"{a.image_id}__{b.image_id}",
            "start_path": a.path,
            "end_path": b.path,
            "gt_rotation_quat_start": [float(v) for v in a.rotation.as_quat()],
            "gt_rotation_quat_end": [float(v) for v in b.rotation.as_quat()],
            "dataset_tag": "",
            "yaw_deg": float(yaw),
        }
        if a.translation is not None and b.translation is not None:
            rec["gt_translation_start"] = list(a.translation)
            rec["gt_translation_end"] = list(b.translation)
        records.append(rec)
    return records
