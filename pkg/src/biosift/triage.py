"""HTTP gateway for human review of mining batches.

A thin FastAPI service over the mining files: batches are read-only
line-delimited candidate files in one directory (``batch-<iteration>.jsonl``),
verdicts go to the same append-only log the CLI consumes, so both tools
interoperate on identical state. Every acknowledged verdict is flushed and
fsynced before the response leaves, which makes restarts lossless.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import re
import threading
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import BiosiftError
from .mining import VERDICTS, VerdictRecord, read_batch_records, read_verdicts

BATCH_FILE_RE = re.compile(r"^batch-(\d+)\.jsonl$")


def batch_file_name(iteration: int) -> str:
    return f"batch-{iteration}.jsonl"


class VerdictBody(BaseModel):
    verdict: str
    reviewer: str = ""


class _VerdictLog:
    """Append-only verdict store; single serialized appender."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.records: list[VerdictRecord] = []
        if self.path.exists():
            self.records = read_verdicts(self.path)

    def append(self, record: VerdictRecord) -> None:
        line = json.dumps(
            {
                "candidate_id": record.candidate_id,
                "verdict": record.verdict,
                "reviewer": record.reviewer,
                "timestamp": record.timestamp,
                "iteration": record.iteration,
            }
        )
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self.records.append(record)

    def latest_by_candidate(self) -> dict[str, VerdictRecord]:
        with self._lock:
            latest = {}
            for rec in self.records:
                latest[rec.candidate_id] = rec
            return latest


def _load_batches(batch_dir):
    batches: dict[int, list[dict]] = {}
    for entry in sorted(Path(batch_dir).iterdir()):
        m = BATCH_FILE_RE.match(entry.name)
        if m:
            batches[int(m.group(1))] = read_batch_records(entry)
    return batches


def _candidate_view(rec: dict, verdict: VerdictRecord | None, map_url_template: str | None):
    view = {
        "candidate_id": rec["candidate_id"],
        "fused_score": rec["fused_score"],
        "baseline_score": rec.get("baseline_score"),
        "location": {"x": rec["cx"], "y": rec["cy"], "crs": rec.get("crs", "")},
        "tank_count_expected": rec.get("tank_mode"),
        "pile_count_expected": rec.get("pile_mode"),
        "chip_uri": rec.get("chip_uri"),
        "map_uri": None,
        "status": "pending" if verdict is None else "reviewed",
        "verdict": None if verdict is None else verdict.verdict,
    }
    if view["chip_uri"] is None and map_url_template:
        view["map_uri"] = map_url_template.replace("{x}", str(rec["cx"])).replace(
            "{y}", str(rec["cy"])
        )
    return view


def create_app(
    batch_dir,
    verdict_log,
    chips_dir=None,
    token: str | None = None,
    map_url_template: str | None = None,
    ui_dir=None,
) -> FastAPI:
    app = FastAPI(title="biosift triage")
    batches = _load_batches(batch_dir)
    log = _VerdictLog(verdict_log)
    candidate_iteration: dict[str, int] = {}
    for iteration in sorted(batches):
        for rec in batches[iteration]:
            candidate_iteration[rec["candidate_id"]] = iteration

    def check_token(request: Request):
        if token and request.headers.get("X-Auth-Token") != token:
            raise HTTPException(status_code=401, detail="missing or wrong token")

    @app.exception_handler(BiosiftError)
    async def _domain_error(request, exc):
        return JSONResponse(status_code=400, content={"error": type(exc).__name__, "message": str(exc)})

    @app.get("/api/batches/{iteration}", dependencies=[Depends(check_token)])
    def get_batch(iteration: int):
        if iteration not in batches:
            raise HTTPException(status_code=404, detail=f"no batch for iteration {iteration}")
        latest = log.latest_by_candidate()
        return [
            _candidate_view(rec, latest.get(rec["candidate_id"]), map_url_template)
            for rec in batches[iteration]
        ]

    @app.post("/api/candidates/{candidate_id}/verdict", dependencies=[Depends(check_token)])
    def post_verdict(candidate_id: str, body: VerdictBody):
        if candidate_id not in candidate_iteration:
            raise HTTPException(status_code=404, detail=f"unknown candidate {candidate_id!r}")
        if body.verdict not in VERDICTS:
            raise HTTPException(
                status_code=400,
                detail=f"invalid verdict {body.verdict!r}, expected one of {list(VERDICTS)}",
            )
        record = VerdictRecord(
            candidate_id=candidate_id,
            verdict=body.verdict,
            reviewer=body.reviewer,
            timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat().replace("+00:00", "Z"),
            iteration=candidate_iteration[candidate_id],
        )
        log.append(record)
        return {
            "candidate_id": record.candidate_id,
            "verdict": record.verdict,
            "reviewer": record.reviewer,
            "timestamp": record.timestamp,
            "iteration": record.iteration,
        }

    @app.get("/api/progress", dependencies=[Depends(check_token)])
    def get_progress():
        if not batches:
            raise HTTPException(status_code=404, detail="no batch loaded")
        iteration = max(batches)
        ids = {rec["candidate_id"] for rec in batches[iteration]}
        latest = log.latest_by_candidate()
        by_verdict = {v: 0 for v in VERDICTS}
        reviewed = 0
        for cid in ids:
            rec = latest.get(cid)
            if rec is not None:
                reviewed += 1
                by_verdict[rec.verdict] += 1
        return {
            "iteration": iteration,
            "total": len(ids),
            "reviewed": reviewed,
            "by_verdict": by_verdict,
        }

    if chips_dir:
        app.mount("/chips", StaticFiles(directory=chips_dir), name="chips")
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
