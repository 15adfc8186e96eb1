"""Pixel metrics for binary road masks: precision, recall, accuracy, F1, IoU, PSNR."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

CSV_FIELDS = ("id", "precision", "recall", "accuracy", "f1", "iou", "psnr")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


@dataclass
class EvalReport:
    precision: float
    recall: float
    accuracy: float
    f1: float
    iou: float
    psnr: float = math.nan
    n_samples: int = 1
    n_psnr_inf: int = 0
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["psnr"] = _fmt_psnr(self.psnr)
        return d


def _fmt_psnr(v: float):
    return "inf" if v == math.inf else v


def _check_binary(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return a.astype(bool)


def confusion(pred_mask, gt_mask) -> ConfusionCounts:
    pred, gt = _check_binary(pred_mask, "pred_mask"), _check_binary(gt_mask, "gt_mask")
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def scores(c: ConfusionCounts) -> EvalReport:
    """Fraction metrics from counts.

    A zero denominator scores 1 when both masks are empty in the relevant sense
    (nothing predicted and nothing to find), otherwise 0.
    """
    both_empty = c.tp + c.fp + c.fn == 0
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else float(both_empty)
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else float(both_empty)
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    iou = c.tp / (c.tp + c.fp + c.fn) if not both_empty else 1.0
    acc = (c.tp + c.tn) / c.total if c.total else 1.0
    return EvalReport(precision=p, recall=r, accuracy=acc, f1=f1, iou=iou)


def psnr(pred_img, gt_img) -> float:
    """PSNR in dB of two [0, 1] maps rescaled to 0..255; identical maps give +inf."""
    a = np.asarray(pred_img, np.float64) * 255.0
    b = np.asarray(gt_img, np.float64) * 255.0
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _per_sample(item, threshold: float):
    sid, prob, gt = item
    prob, gt = np.asarray(prob), np.asarray(gt)
    if prob.shape != gt.shape:
        return sid, None, None, f"shape {prob.shape} != {gt.shape}"
    counts = confusion((prob >= threshold).astype(np.uint8), gt)
    return sid, counts, psnr(prob, gt), None


def evaluate_set(
    items: Iterable[tuple[str, np.ndarray, np.ndarray]], threshold: float = 0.5, workers: int = 1
) -> tuple[EvalReport, list[dict]]:
    """Micro-averaged report over (id, probability map, binary mask) items, plus per-sample rows.

    Counts are pooled before scoring. PSNR is the mean over samples with finite
    PSNR; +inf samples are counted in ``n_psnr_inf``. Samples whose shapes
    disagree are skipped and listed in ``skipped``.
    """
    items = list(items)
    if not items:
        raise ValueError("evaluate_set needs at least one sample")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda it: _per_sample(it, threshold), items))
    else:
        results = [_per_sample(it, threshold) for it in items]

    total = ConfusionCounts(0, 0, 0, 0)
    rows, finite, n_inf, skipped = [], [], 0, []
    for sid, counts, db, err in results:
        if err is not None:
            skipped.append(str(sid))
            continue
        total = total + counts
        s = scores(counts)
        rows.append({"id": sid, "precision": s.precision, "recall": s.recall, "accuracy": s.accuracy,
                     "f1": s.f1, "iou": s.iou, "psnr": _fmt_psnr(db)})
        if db == math.inf:
            n_inf += 1
        else:
            finite.append(db)
    if not rows:
        raise ValueError(f"every sample was skipped: {skipped}")
    report = scores(total)
    report.psnr = float(np.mean(finite)) if finite else math.inf
    report.n_samples, report.n_psnr_inf, report.skipped = len(rows), n_inf, skipped
    return report, rows


def write_rows_csv(path, rows: Sequence[dict]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def write_report_json(path, report: EvalReport):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
