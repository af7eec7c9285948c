"""Segmentation metrics on a 1-second frame grid.

NMI, MoF, IoU and F1 compare frame labelings. MoF/IoU/F1 use a one-to-one
matching between predicted clusters and ground-truth segments that
maximizes total frame overlap; among equally good matchings the
lexicographically first (ground-truth segment ``g`` takes the lowest
predicted cluster id it can, unmatched last) is used, so the result is
fully deterministic. BS@k scores boundary localization.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datamodel.types import Lecture, Segmentation, canonical_labels
from .exceptions import ValidationError

DEFAULT_K_LIST = (30,)


@dataclass
class MetricReport:
    nmi: float
    mof: float
    iou: float
    f1: float
    bs_at: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["bs_at"] = {str(k): v for k, v in self.bs_at.items()}
        return d

    @classmethod
    def from_dict(cls, d) -> "MetricReport":
        return cls(d["nmi"], d["mof"], d["iou"], d["f1"], {float(k): v for k, v in d["bs_at"].items()})


def frame_labels(labels, starts, ends, total_duration_s) -> np.ndarray:
    """Label each 1 s frame of ``[0, T)`` by the clip covering its midpoint.

    Frames in gaps between clips take the preceding clip's label; frames
    before the first clip take the first clip's label.
    """
    labels = np.asarray(labels)
    starts = np.asarray(starts, dtype=np.float64)
    n_frames = int(np.floor(total_duration_s))
    mids = np.arange(n_frames) + 0.5
    idx = np.searchsorted(starts, mids, side="right") - 1
    return labels[np.clip(idx, 0, labels.size - 1)]


def _check_pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ValidationError(f"length mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ValidationError("empty labelings")
    return canonical_labels(pred), canonical_labels(gt)


def contingency(pred, gt) -> np.ndarray:
    """Frame counts, rows = predicted clusters, columns = ground-truth segments."""
    kp, kg = int(pred.max()) + 1, int(gt.max()) + 1
    return np.bincount(pred * kg + gt, minlength=kp * kg).reshape(kp, kg)


def nmi(pred, gt) -> float:
    """Mutual information over the arithmetic mean of entropies (natural log)."""
    pred, gt = _check_pair(pred, gt)
    table = contingency(pred, gt).astype(np.float64)
    n = table.sum()
    p_pred = table.sum(axis=1) / n
    p_gt = table.sum(axis=0) / n
    h_pred = -np.sum(p_pred * np.log(p_pred))
    h_gt = -np.sum(p_gt * np.log(p_gt))
    if h_pred == 0 or h_gt == 0:
        return 1.0 if h_pred == h_gt else 0.0
    nz = table > 0
    p_joint = table[nz] / n
    mi = np.sum(p_joint * np.log(p_joint / np.outer(p_pred, p_gt)[nz]))
    return float(np.clip(mi / (0.5 * (h_pred + h_gt)), 0.0, 1.0))


def _best_total(overlap: np.ndarray) -> int:
    if overlap.size == 0:
        return 0
    r, c = linear_sum_assignment(overlap, maximize=True)
    return int(overlap[r, c].sum())


def best_matching(overlap: np.ndarray) -> dict:
    """Map ground-truth column -> predicted row, maximizing total overlap.

    Ties are resolved lexicographically by fixing columns in order, each to
    the smallest row that still admits an optimal completion.
    """
    overlap = np.asarray(overlap, dtype=np.int64)
    target = _best_total(overlap)
    rows = list(range(overlap.shape[0]))
    cols = list(range(overlap.shape[1]))
    mapping = {}
    gained = 0
    while cols:
        g = cols[0]
        rest = cols[1:]
        chosen = None
        for p in rows:
            others = [r for r in rows if r != p]
            sub = overlap[np.ix_(others, rest)] if others and rest else np.zeros((0, 0), np.int64)
            if gained + overlap[p, g] + _best_total(sub) == target:
                chosen = p
                break
        if chosen is not None:
            mapping[g] = chosen
            gained += int(overlap[chosen, g])
            rows.remove(chosen)
        cols = rest
    return mapping


def matched_overlap_metrics(pred, gt) -> tuple[float, float, float]:
    """Return ``(mof, iou, f1)``."""
    pred, gt = _check_pair(pred, gt)
    table = contingency(pred, gt)
    mapping = best_matching(table)
    return _scores_from_mapping(table, mapping)


def _scores_from_mapping(table, mapping):
    # exact rational sums, rounded once, so results do not depend on summation order
    n = int(table.sum())
    size_pred = table.sum(axis=1)
    size_gt = table.sum(axis=0)
    kg = table.shape[1]
    matched = 0
    iou = Fraction(0)
    f1 = Fraction(0)
    for g, p in mapping.items():
        inter = int(table[p, g])
        matched += inter
        iou += Fraction(inter, int(size_pred[p] + size_gt[g]) - inter)
        f1 += Fraction(2 * inter, int(size_pred[p] + size_gt[g]))
    return float(Fraction(matched, n)), float(iou / kg), float(f1 / kg)


def boundary_score(pred_boundaries_s, gt_boundaries_s, k_s) -> float:
    """Percentage of GT boundaries matched one-to-one within ``k_s`` seconds.

    GT boundaries are visited in increasing time, each taking the nearest
    still-unmatched prediction inside the window (earlier one on ties).
    """
    pred = np.asarray(pred_boundaries_s, dtype=np.float64)
    gt = np.asarray(gt_boundaries_s, dtype=np.float64)
    if np.any(np.diff(pred) < 0) or np.any(np.diff(gt) < 0):
        raise ValidationError("boundary lists must be sorted")
    if gt.size == 0 and pred.size == 0:
        return 100.0
    free = np.ones(pred.size, dtype=bool)
    matched = 0
    for g in gt:
        dist = np.where(free, np.abs(pred - g), np.inf)
        if dist.size and dist.min() <= k_s:
            free[int(np.argmin(dist))] = False
            matched += 1
    return 100.0 * matched / max(1, gt.size)


def evaluate(pred: Segmentation, gt: Segmentation, lecture: Lecture, k_list=DEFAULT_K_LIST) -> MetricReport:
    if len(pred) != lecture.n_clips or len(gt) != lecture.n_clips:
        raise ValidationError("pred and gt must label every clip of the lecture")
    T = lecture.total_duration_s
    fp = frame_labels(pred.labels, lecture.starts, lecture.ends, T)
    fg = frame_labels(gt.labels, lecture.starts, lecture.ends, T)
    mof, iou, f1 = matched_overlap_metrics(fp, fg)
    pb = pred.boundaries(lecture.starts)
    gb = gt.boundaries(lecture.starts)
    return MetricReport(
        nmi=nmi(fp, fg),
        mof=mof,
        iou=iou,
        f1=f1,
        bs_at={k: boundary_score(pb, gb, k) for k in k_list},
    )


def mean_report(reports) -> MetricReport:
    """Unweighted mean over lectures."""
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to average")
    keys = reports[0].bs_at.keys()
    return MetricReport(
        nmi=float(np.mean([r.nmi for r in reports])),
        mof=float(np.mean([r.mof for r in reports])),
        iou=float(np.mean([r.iou for r in reports])),
        f1=float(np.mean([r.f1 for r in reports])),
        bs_at={k: float(np.mean([r.bs_at[k] for r in reports])) for k in keys},
    )


TABLE_COLUMNS = ("NMI", "MoF", "IoU", "F1", "BS@30")


def format_table(rows, bs_k=30) -> str:
    """Aligned text table of ``(name, MetricReport)`` rows, percentages to one decimal."""
    rows = list(rows)
    cols = ("NMI", "MoF", "IoU", "F1", f"BS@{bs_k:g}")
    width = max([len("Method")] + [len(name) for name, _ in rows])
    lines = ["  ".join([f"{'Method':<{width}}"] + [f"{c:>6}" for c in cols])]
    for name, r in rows:
        bs = r.bs_at.get(bs_k, r.bs_at.get(float(bs_k), float("nan")))
        vals = [100 * r.nmi, 100 * r.mof, 100 * r.iou, 100 * r.f1, bs]
        lines.append("  ".join([f"{name:<{width}}"] + [f"{v:6.1f}" for v in vals]))
    return "\n".join(lines)
