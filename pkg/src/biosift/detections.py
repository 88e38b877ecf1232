"""Detection and ground-truth data model, file formats, deduplication.

Detector outputs travel as line-delimited JSON, one record per line with
fields ``{id, class, score, cx, cy, w, h, angle, tile_id, crs}`` (angle in
radians, coordinates in projected meters). Ground truth and inventories
are GeoJSON feature collections of point (and optionally polygon)
features with properties ``{id, class?, source}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError, ValidationError
from .geom import GeoPoint, OrientedBox, center_distance

CLASSES = ("site", "tank", "pile")
SOURCES = ("initial_db", "new_detection", "external_db")

DETECTION_FIELDS = ("id", "class", "score", "cx", "cy", "w", "h", "angle", "tile_id", "crs")


@dataclass(frozen=True)
class Detection:
    """One detector output box."""

    id: str
    cls: str
    score: float
    box: OrientedBox
    tile_id: str = ""
    crs: str = ""

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValidationError(f"unknown class {self.cls!r}, expected one of {CLASSES}")
        if not (isinstance(self.score, (int, float)) and 0.0 <= self.score <= 1.0):
            raise ValidationError(f"score must be in [0, 1], got {self.score}")

    @property
    def center(self) -> GeoPoint:
        return self.box.center

    def to_record(self) -> dict:
        b = self.box
        return {
            "id": self.id,
            "class": self.cls,
            "score": self.score,
            "cx": b.center.x,
            "cy": b.center.y,
            "w": b.width,
            "h": b.height,
            "angle": b.angle,
            "tile_id": self.tile_id,
            "crs": self.crs,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Detection":
        box = OrientedBox(
            GeoPoint(float(rec["cx"]), float(rec["cy"])),
            float(rec["w"]),
            float(rec["h"]),
            float(rec["angle"]),
        )
        return cls(
            id=str(rec["id"]),
            cls=str(rec["class"]),
            score=float(rec["score"]),
            box=box,
            tile_id=str(rec.get("tile_id", "")),
            crs=str(rec.get("crs", "")),
        )


@dataclass(frozen=True)
class GroundTruthSite:
    """A confirmed site location, optionally with per-class annotation boxes."""

    id: str
    location: GeoPoint
    source: str = "initial_db"
    boxes: tuple = ()  # (class, OrientedBox) pairs

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValidationError(f"unknown source {self.source!r}, expected one of {SOURCES}")


@dataclass(frozen=True)
class DatasetStats:
    """Tile bookkeeping for one dataset split."""

    n_images: int
    n_annotated_tiles: int
    n_background_tiles: int
    alpha: float = field(init=False)

    def __post_init__(self):
        if self.n_annotated_tiles + self.n_background_tiles != self.n_images:
            raise ValidationError(
                f"annotated + background = {self.n_annotated_tiles + self.n_background_tiles} "
                f"!= n_images = {self.n_images}"
            )
        object.__setattr__(self, "alpha", dilution(self.n_annotated_tiles, self.n_images))


def dilution(n_annotated: int, n_total: int) -> float:
    """Fraction of annotated (non-background) tiles in an image set."""
    if n_total <= 0:
        raise DomainError("dilution is undefined for an empty image set")
    if not 0 <= n_annotated <= n_total:
        raise DomainError(f"need 0 <= n_annotated <= n_total, got {n_annotated}/{n_total}")
    return n_annotated / n_total


def _parse_line(line: str, lineno: int) -> Detection:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", line=lineno) from exc
    if not isinstance(rec, dict):
        raise FormatError("record is not an object", line=lineno)
    for name in ("id", "class", "score", "cx", "cy", "w", "h", "angle"):
        if name not in rec:
            raise FormatError(f"missing field {name!r}", line=lineno, field=name)
    for name in ("score", "cx", "cy", "w", "h", "angle"):
        try:
            value = float(rec[name])
        except (TypeError, ValueError):
            raise FormatError(f"field {name!r} is not numeric", line=lineno, field=name)
        if not math.isfinite(value):
            raise FormatError(f"field {name!r} is not finite", line=lineno, field=name)
    if rec["class"] not in CLASSES:
        raise FormatError(f"unknown class {rec['class']!r}", line=lineno, field="class")
    if not 0.0 <= float(rec["score"]) <= 1.0:
        raise FormatError(
            f"score {rec['score']} outside [0, 1]", line=lineno, field="score"
        )
    try:
        return Detection.from_record(rec)
    except ValidationError as exc:
        raise FormatError(str(exc), line=lineno) from exc


def read_detections(path) -> list[Detection]:
    """Parse a line-delimited detections file, preserving record order."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            out.append(_parse_line(line, lineno))
    return out


def write_detections(dets, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for det in dets:
            fh.write(json.dumps(det.to_record()) + "\n")


def dedup_sites(dets, radius: float = 200.0) -> list[Detection]:
    """Merge repeated detections of one site into a single survivor.

    Greedy clustering in descending score order (ties by id): the best
    detection absorbs every remaining one whose center lies within
    ``radius`` of it, keeping its own geometry. Survivors are pairwise
    farther than ``radius`` apart, which makes the pass idempotent.
    """
    if radius <= 0:
        raise DomainError(f"radius must be > 0, got {radius}")
    for det in dets:
        if det.cls != "site":
            raise ValidationError(f"dedup_sites expects site detections, got {det.cls!r} ({det.id})")
    order = sorted(dets, key=lambda d: (-d.score, d.id))
    survivors: list[Detection] = []
    if not order:
        return survivors
    kept_xy: list[tuple[float, float]] = []
    r2 = radius * radius
    # coarse grid over survivor centers keeps the scan near-linear
    cell = radius
    grid: dict[tuple[int, int], list[int]] = {}
    for det in order:
        x, y = det.center.x, det.center.y
        ci, cj = int(math.floor(x / cell)), int(math.floor(y / cell))
        absorbed = False
        for ni in (ci - 1, ci, ci + 1):
            for nj in (cj - 1, cj, cj + 1):
                for k in grid.get((ni, nj), ()):
                    kx, ky = kept_xy[k]
                    if (x - kx) ** 2 + (y - ky) ** 2 <= r2:
                        absorbed = True
                        break
                if absorbed:
                    break
            if absorbed:
                break
        if not absorbed:
            grid.setdefault((ci, cj), []).append(len(kept_xy))
            kept_xy.append((x, y))
            survivors.append(det)
    return survivors


def _point_feature(site: GroundTruthSite) -> dict:
    return {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [site.location.x, site.location.y]},
        "properties": {"id": site.id, "source": site.source},
    }


def _polygon_feature(site_id: str, cls: str, box: OrientedBox, source: str) -> dict:
    ring = [[float(x), float(y)] for x, y in box.corner_array()]
    ring.append(ring[0])
    return {
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": [ring]},
        "properties": {"id": site_id, "class": cls, "source": source},
    }


def write_inventory(sites, path, crs: str = "") -> None:
    """Write sites as a GeoJSON feature collection (point per site, plus a
    polygon feature per annotation box when present)."""
    features = []
    for site in sites:
        features.append(_point_feature(site))
        for cls, box in site.boxes:
            features.append(_polygon_feature(site.id, cls, box, site.source))
    fc = {"type": "FeatureCollection", "features": features}
    if crs:
        fc["crs"] = crs
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fc, fh)
        fh.write("\n")


def _ring_to_box(ring) -> OrientedBox:
    pts = np.asarray(ring, dtype=float)
    if len(pts) >= 2 and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    if len(pts) == 4:
        # assume a rectangle ring: edges give extents and rotation
        e0 = pts[1] - pts[0]
        e1 = pts[2] - pts[1]
        center = pts.mean(axis=0)
        return OrientedBox(
            GeoPoint(float(center[0]), float(center[1])),
            float(np.hypot(*e0)),
            float(np.hypot(*e1)),
            float(math.atan2(e0[1], e0[0])),
        )
    # arbitrary polygon: fall back to the axis-aligned bounding box
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    return OrientedBox(
        GeoPoint(float(center[0]), float(center[1])),
        float(max(hi[0] - lo[0], 1e-9)),
        float(max(hi[1] - lo[1], 1e-9)),
        0.0,
    )


def read_inventory(path) -> list[GroundTruthSite]:
    """Read a GeoJSON feature collection back into sites.

    Point features define site locations; polygon features with the same
    id attach annotation boxes (reduced to oriented rectangles). Polygon
    features without a point use the box center as the location.
    """
    with open(path, "r", encoding="utf-8") as fh:
        fc = json.load(fh)
    if fc.get("type") != "FeatureCollection":
        raise FormatError("not a FeatureCollection")
    locations: dict[str, GeoPoint] = {}
    sources: dict[str, str] = {}
    boxes: dict[str, list] = {}
    order: list[str] = []
    for feature in fc.get("features", []):
        props = feature.get("properties") or {}
        geom = feature.get("geometry") or {}
        sid = str(props.get("id", ""))
        if not sid:
            raise FormatError("feature without an id property")
        if sid not in sources:
            order.append(sid)
        sources.setdefault(sid, str(props.get("source", "initial_db")))
        if geom.get("type") == "Point":
            x, y = geom["coordinates"][:2]
            locations[sid] = GeoPoint(float(x), float(y))
        elif geom.get("type") == "Polygon":
            box = _ring_to_box(geom["coordinates"][0])
            boxes.setdefault(sid, []).append((str(props.get("class", "site")), box))
        else:
            raise FormatError(f"unsupported geometry type {geom.get('type')!r}")
    sites = []
    for sid in order:
        loc = locations.get(sid)
        if loc is None:
            loc = boxes[sid][0][1].center
        sites.append(
            GroundTruthSite(
                id=sid, location=loc, source=sources[sid], boxes=tuple(boxes.get(sid, ()))
            )
        )
    return sites
