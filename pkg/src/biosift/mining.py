"""Iterative hard-negative mining: review batches, verdicts, bookkeeping.

Each iteration ranks the detections that match nothing in the known
database, sends the top K (100 by default) to human review, and folds the
verdicts back: rejected candidates become hard-negative background tiles,
confirmed ones enter the database, unclear ones stay out of both sets and
resurface in the next batch. The verdict log is append-only with
last-write-wins per candidate, so reviewers can correct themselves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .detections import GroundTruthSite, dilution
from .errors import FormatError, UnknownCandidateError, ValidationError

VERDICTS = ("biodigester", "not_biodigester", "unclear")

DEFAULT_K = 100
DEFAULT_ANNOTATED_TILES = 163


@dataclass(frozen=True)
class ReviewBatch:
    """Top-K unexplained detections of one iteration, score-descending."""

    iteration: int
    candidates: tuple  # (Detection, fused_score) pairs
    k: int

    def __post_init__(self):
        if len(self.candidates) > self.k:
            raise ValidationError(f"batch holds {len(self.candidates)} > k = {self.k} candidates")
        scores = [s for _, s in self.candidates]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValidationError("candidates must be in descending score order")

    def candidate_ids(self) -> list[str]:
        return [det.id for det, _ in self.candidates]


@dataclass(frozen=True)
class VerdictRecord:
    """One human triage decision; later records supersede earlier ones."""

    candidate_id: str
    verdict: str
    reviewer: str
    timestamp: str  # UTC instant, ISO 8601
    iteration: int

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValidationError(f"unknown verdict {self.verdict!r}, expected one of {VERDICTS}")


@dataclass(frozen=True)
class IterationLedger:
    """Dataset bookkeeping for one mining iteration."""

    iteration: int
    known_db_size: int
    new_detections: int
    hard_negatives: int
    background_tiles: int
    alpha: float

    @classmethod
    def initial(
        cls,
        known_db_size: int,
        background_tiles: int,
        annotated_tiles: int = DEFAULT_ANNOTATED_TILES,
    ) -> "IterationLedger":
        return cls(
            iteration=0,
            known_db_size=known_db_size,
            new_detections=0,
            hard_negatives=0,
            background_tiles=background_tiles,
            alpha=dilution(annotated_tiles, annotated_tiles + background_tiles),
        )


def build_review_batch(
    scored,
    known,
    k: int = DEFAULT_K,
    threshold: float = 200.0,
    dedup_radius: float | None = None,
    iteration: int = 0,
) -> ReviewBatch:
    """Pick the top-k detections that match nothing in the known database.

    Candidates within ``threshold`` of a known site are dropped, the rest
    deduplicated greedily on fused score (radius defaults to the matching
    threshold), then truncated to k.
    """
    if k <= 0:
        raise ValidationError(f"k must be > 0, got {k}")
    radius = threshold if dedup_radius is None else dedup_radius
    known_xy = [(g.location.x, g.location.y) for g in known]
    t2 = threshold * threshold
    survivors = []
    for det, fused in sorted(scored, key=lambda pair: (-pair[1], pair[0].id)):
        x, y = det.box.center.x, det.box.center.y
        if any((x - kx) ** 2 + (y - ky) ** 2 <= t2 for kx, ky in known_xy):
            continue
        if any(
            (x - sx) ** 2 + (y - sy) ** 2 <= radius * radius for sx, sy, _ in survivors
        ):
            continue
        survivors.append((x, y, (det, fused)))
        if len(survivors) == k:
            break
    return ReviewBatch(iteration=iteration, candidates=tuple(s[2] for s in survivors), k=k)


def latest_verdicts(verdicts) -> dict[str, VerdictRecord]:
    """Collapse an append-only log to its last entry per candidate."""
    latest: dict[str, VerdictRecord] = {}
    for v in verdicts:
        latest[v.candidate_id] = v
    return latest


def apply_verdicts(
    batch: ReviewBatch,
    verdicts,
    ledger_prev: IterationLedger,
    annotated_tiles: int = DEFAULT_ANNOTATED_TILES,
):
    """Fold reviewed verdicts into the dataset state.

    Returns (hard_negatives, confirmed_new, ledger_next). Rejected
    candidates become hard negatives (and background tiles); confirmed
    ones become new database sites, merged into the known-database size at
    the start of the next iteration; unclear ones are left out of both.
    """
    by_id = {det.id: det for det, _ in batch.candidates}
    latest = latest_verdicts(verdicts)
    for cid in latest:
        if cid not in by_id:
            raise UnknownCandidateError(cid)
    hard_negatives = []
    confirmed = []
    for det, _ in batch.candidates:
        verdict = latest.get(det.id)
        if verdict is None or verdict.verdict == "unclear":
            continue
        if verdict.verdict == "not_biodigester":
            hard_negatives.append(det)
        else:
            confirmed.append(
                GroundTruthSite(id=det.id, location=det.box.center, source="new_detection")
            )
    background = ledger_prev.background_tiles + len(hard_negatives)
    ledger_next = IterationLedger(
        iteration=batch.iteration,
        known_db_size=ledger_prev.known_db_size + ledger_prev.new_detections,
        new_detections=len(confirmed),
        hard_negatives=ledger_prev.hard_negatives + len(hard_negatives),
        background_tiles=background,
        alpha=dilution(annotated_tiles, annotated_tiles + background),
    )
    return hard_negatives, confirmed, ledger_next


def dilution_series(ledgers, annotated_tiles: int = DEFAULT_ANNOTATED_TILES):
    """(iteration, alpha) per ledger for a fixed annotated-tile count."""
    return [
        (lg.iteration, dilution(annotated_tiles, annotated_tiles + lg.background_tiles))
        for lg in ledgers
    ]


# --- file formats -----------------------------------------------------------

BATCH_FIELDS = ("candidate_id", "fused_score", "cx", "cy", "tile_id")


def write_batch(
    batch: ReviewBatch, path, chip_uri=None, extras=None, crs: str = ""
) -> None:
    """Write a review batch as line-delimited candidate records.

    ``chip_uri`` maps candidate id to an optional image-chip path;
    ``extras`` maps candidate id to extra keys (baseline score, count
    summaries) surfaced by the triage service.
    """
    chip_uri = chip_uri or {}
    extras = extras or {}
    with open(path, "w", encoding="utf-8") as fh:
        for det, fused in batch.candidates:
            rec = {
                "candidate_id": det.id,
                "fused_score": fused,
                "cx": det.box.center.x,
                "cy": det.box.center.y,
                "tile_id": det.tile_id,
            }
            if crs or det.crs:
                rec["crs"] = crs or det.crs
            if det.id in chip_uri:
                rec["chip_uri"] = chip_uri[det.id]
            rec.update(extras.get(det.id, {}))
            fh.write(json.dumps(rec) + "\n")


def read_batch_records(path) -> list[dict]:
    """Raw candidate records of a batch file, in batch order."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            for name in BATCH_FIELDS:
                if name not in rec:
                    raise FormatError(f"missing field {name!r}", line=lineno, field=name)
            if not math.isfinite(float(rec["fused_score"])):
                raise FormatError("fused_score is not finite", line=lineno, field="fused_score")
            records.append(rec)
    return records


def append_verdict(record: VerdictRecord, path) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(_verdict_record_dict(record)) + "\n")


def _verdict_record_dict(v: VerdictRecord) -> dict:
    return {
        "candidate_id": v.candidate_id,
        "verdict": v.verdict,
        "reviewer": v.reviewer,
        "timestamp": v.timestamp,
        "iteration": v.iteration,
    }


def write_verdicts(verdicts, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps(_verdict_record_dict(v)) + "\n")


def read_verdicts(path) -> list[VerdictRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            try:
                out.append(
                    VerdictRecord(
                        candidate_id=str(rec["candidate_id"]),
                        verdict=str(rec["verdict"]),
                        reviewer=str(rec.get("reviewer", "")),
                        timestamp=str(rec.get("timestamp", "")),
                        iteration=int(rec.get("iteration", 0)),
                    )
                )
            except KeyError as exc:
                raise FormatError(f"missing field {exc}", line=lineno) from exc
            except ValidationError as exc:
                raise FormatError(str(exc), line=lineno, field="verdict") from exc
    return out


def write_hard_negative_tiles(hard_negatives, path) -> None:
    """Export the background tiles implied by rejected candidates, one
    tile id per line, unique and sorted."""
    tiles = sorted({det.tile_id for det in hard_negatives if det.tile_id})
    with open(path, "w", encoding="utf-8") as fh:
        for tile in tiles:
            fh.write(tile + "\n")


def append_ledger(ledger: IterationLedger, path) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(ledger.__dict__) + "\n")


def read_ledgers(path) -> list[IterationLedger]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(IterationLedger(**json.loads(line)))
    return out
