"""Evaluation metrics for site detections.

Site-level matching is distance-based: a detection is a true positive
when its center lies within a threshold (200 m by default) of a
ground-truth site that no higher-scoring detection has claimed yet.
Repeat detections of an already-claimed site count as duplicates, not
false positives, and are excluded from the precision denominator, so a
site detected several times still counts as one detection.

Part-level metrics use the standard IoU criterion on oriented boxes.
All average precisions use the right-continuous precision envelope
(all-points interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geom import iou

TP = "TP"
FP = "FP"
DUPLICATE = "duplicate"

DEFAULT_MATCH_THRESHOLD_M = 200.0


@dataclass(frozen=True)
class MatchOutcome:
    detection_id: str
    score: float
    verdict: str
    gt_id: str | None = None


@dataclass(frozen=True)
class MatchReport:
    """Outcome of distance matching, in descending-score order."""

    outcomes: tuple
    matched_gt_ids: frozenset
    n_gt: int
    threshold_m: float

    @property
    def n_tp(self) -> int:
        return sum(1 for o in self.outcomes if o.verdict == TP)

    @property
    def n_fp(self) -> int:
        return sum(1 for o in self.outcomes if o.verdict == FP)

    @property
    def n_duplicate(self) -> int:
        return sum(1 for o in self.outcomes if o.verdict == DUPLICATE)

    @property
    def recall(self) -> float:
        if self.n_gt == 0:
            raise DomainError("recall is undefined without ground truth")
        return self.n_tp / self.n_gt

    @property
    def precision(self) -> float:
        considered = self.n_tp + self.n_fp
        return self.n_tp / considered if considered else 0.0


def _ranked(dets) -> list:
    return sorted(dets, key=lambda d: (-_score_of(d), _id_of(d)))


def _score_of(d) -> float:
    return d[1] if isinstance(d, tuple) else d.score


def _id_of(d) -> str:
    return d[0].id if isinstance(d, tuple) else d.id


def _center_of(d):
    det = d[0] if isinstance(d, tuple) else d
    return det.box.center


def match_by_distance(dets, gts, threshold: float = DEFAULT_MATCH_THRESHOLD_M) -> MatchReport:
    """Greedy score-descending matching under the center-distance rule.

    Accepts detections or (detection, score) pairs so rescored outputs can
    be evaluated directly. Ties in score break by detection id; ties in
    distance by ground-truth id.
    """
    if threshold <= 0:
        raise DomainError(f"threshold must be > 0, got {threshold}")
    gts = sorted(gts, key=lambda g: g.id)
    gx = np.array([g.location.x for g in gts])
    gy = np.array([g.location.y for g in gts])
    claimed = np.zeros(len(gts), dtype=bool)
    outcomes = []
    t2 = threshold * threshold
    for d in _ranked(dets):
        c = _center_of(d)
        if len(gts) == 0:
            outcomes.append(MatchOutcome(_id_of(d), _score_of(d), FP))
            continue
        d2 = (gx - c.x) ** 2 + (gy - c.y) ** 2
        within = d2 <= t2
        free = within & ~claimed
        if free.any():
            k = int(np.flatnonzero(free)[np.argmin(d2[free])])
            claimed[k] = True
            outcomes.append(MatchOutcome(_id_of(d), _score_of(d), TP, gts[k].id))
        elif within.any():
            k = int(np.flatnonzero(within)[np.argmin(d2[within])])
            outcomes.append(MatchOutcome(_id_of(d), _score_of(d), DUPLICATE, gts[k].id))
        else:
            outcomes.append(MatchOutcome(_id_of(d), _score_of(d), FP))
    return MatchReport(
        outcomes=tuple(outcomes),
        matched_gt_ids=frozenset(o.gt_id for o in outcomes if o.verdict == TP),
        n_gt=len(gts),
        threshold_m=threshold,
    )


def _average_precision(verdicts, n_gt: int) -> float:
    """All-points interpolated AP from ranked verdicts (duplicates skipped)."""
    if n_gt <= 0:
        raise DomainError("average precision is undefined without ground truth")
    recalls, precisions = [], []
    tp = fp = 0
    for v in verdicts:
        if v == DUPLICATE:
            continue
        if v == TP:
            tp += 1
        else:
            fp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / (tp + fp))
    if not recalls:
        return 0.0
    envelope = precisions[:]
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recalls, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return ap


def ap_dist(dets, gts, threshold: float = DEFAULT_MATCH_THRESHOLD_M) -> float:
    """Average precision under the center-distance matching rule."""
    report = match_by_distance(dets, gts, threshold)
    return _average_precision([o.verdict for o in report.outcomes], report.n_gt)


def max_recall_at_full_precision(dets, gts, threshold: float = DEFAULT_MATCH_THRESHOLD_M) -> float:
    """Largest recall reachable before the first false positive.

    Duplicates do not break a perfect-precision run; 0.0 when the
    top-ranked detection is already wrong.
    """
    report = match_by_distance(dets, gts, threshold)
    if report.n_gt == 0:
        raise DomainError("recall is undefined without ground truth")
    tp = 0
    for o in report.outcomes:
        if o.verdict == FP:
            break
        if o.verdict == TP:
            tp += 1
    return tp / report.n_gt


@dataclass(frozen=True)
class PRPoint:
    cutoff: float
    recall: float
    precision: float


@dataclass(frozen=True)
class PRCurve:
    """Precision-recall samples over descending score cutoffs."""

    points: tuple
    ap: float

    def to_csv(self) -> str:
        lines = ["cutoff,recall,precision"]
        for pt in self.points:
            lines.append(f"{pt.cutoff:.6f},{pt.recall:.6f},{pt.precision:.6f}")
        return "\n".join(lines) + "\n"


def pr_curve(dets, gts, threshold: float = DEFAULT_MATCH_THRESHOLD_M) -> PRCurve:
    """One (recall, precision) sample per distinct score cutoff, descending."""
    report = match_by_distance(dets, gts, threshold)
    if report.n_gt == 0:
        raise DomainError("recall is undefined without ground truth")
    points = []
    tp = fp = 0
    outcomes = report.outcomes
    for i, o in enumerate(outcomes):
        if o.verdict == TP:
            tp += 1
        elif o.verdict == FP:
            fp += 1
        last_of_cutoff = i + 1 == len(outcomes) or outcomes[i + 1].score != o.score
        if last_of_cutoff:
            considered = tp + fp
            points.append(
                PRPoint(
                    cutoff=o.score,
                    recall=tp / report.n_gt,
                    precision=tp / considered if considered else 1.0,
                )
            )
    ap = _average_precision([o.verdict for o in outcomes], report.n_gt)
    return PRCurve(points=tuple(points), ap=ap)


def write_pr_csv(curve: PRCurve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(curve.to_csv())


def ap_iou(dets, gt_boxes, iou_threshold: float = 0.5) -> float:
    """Single-class average precision with greedy IoU matching.

    ``gt_boxes`` is a sequence of OrientedBox. Extra detections of an
    already-claimed box are false positives, per the usual convention.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise DomainError(f"IoU threshold must be in (0, 1), got {iou_threshold}")
    if len(gt_boxes) == 0:
        raise DomainError("average precision is undefined without ground truth")
    claimed = [False] * len(gt_boxes)
    verdicts = []
    for d in _ranked(dets):
        det = d[0] if isinstance(d, tuple) else d
        best, best_iou = -1, 0.0
        for k, gbox in enumerate(gt_boxes):
            if claimed[k]:
                continue
            value = iou(det.box, gbox)
            if value > best_iou:
                best, best_iou = k, value
        if best >= 0 and best_iou >= iou_threshold:
            claimed[best] = True
            verdicts.append(TP)
        else:
            verdicts.append(FP)
    return _average_precision(verdicts, len(gt_boxes))


@dataclass(frozen=True)
class MeanAPResult:
    per_class: dict
    mean: float
    skipped_classes: tuple


def mean_ap(dets, gt_boxes_by_class, iou_threshold: float = 0.5) -> MeanAPResult:
    """Unweighted mean AP over classes; classes without ground truth are
    skipped and reported in ``skipped_classes``."""
    per_class = {}
    skipped = []
    for cls, boxes in sorted(gt_boxes_by_class.items()):
        if not boxes:
            skipped.append(cls)
            continue
        cls_dets = [d for d in dets if (d[0] if isinstance(d, tuple) else d).cls == cls]
        per_class[cls] = ap_iou(cls_dets, boxes, iou_threshold)
    if not per_class:
        raise DomainError("no class has ground truth")
    return MeanAPResult(
        per_class=per_class,
        mean=sum(per_class.values()) / len(per_class),
        skipped_classes=tuple(skipped),
    )


@dataclass(frozen=True)
class RegionReport:
    """One row of the regional detection summary."""

    region: str
    tp: int
    gt: int
    correct: int
    total: int

    @property
    def recall(self) -> float:
        if self.gt == 0:
            raise DomainError("recall is undefined without ground truth")
        return self.tp / self.gt

    @property
    def precision(self) -> float:
        if self.total == 0:
            raise DomainError("precision is undefined without detections")
        return self.correct / self.total

    @classmethod
    def from_counts(cls, tp, gt, correct, total, region="") -> "RegionReport":
        return cls(region=region, tp=tp, gt=gt, correct=correct, total=total)


def region_report(
    dets,
    gts,
    external_db=(),
    threshold: float = DEFAULT_MATCH_THRESHOLD_M,
    region: str = "",
) -> RegionReport:
    """In-database recall plus overall precision for one region.

    Recall counts matches against the reference database only; precision
    counts matches against the database plus human-confirmed external
    sites, over all non-duplicate detections.
    """
    gts = list(gts)
    in_db = match_by_distance(dets, gts, threshold)
    combined = gts + [g for g in external_db if g.id not in {x.id for x in gts}]
    overall = match_by_distance(dets, combined, threshold)
    return RegionReport(
        region=region,
        tp=in_db.n_tp,
        gt=len(gts),
        correct=overall.n_tp,
        total=overall.n_tp + overall.n_fp,
    )


def format_region_table(reports) -> str:
    """Plain-text regional summary with the standard column set."""
    header = ("Region", "TP", "GT", "Recall", "Correct", "Total", "Precision")
    rows = [header]
    for r in reports:
        rows.append(
            (
                r.region or "-",
                str(r.tp),
                str(r.gt),
                f"{100.0 * r.recall:.1f}%",
                str(r.correct),
                str(r.total),
                f"{100.0 * r.precision:.1f}%",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
