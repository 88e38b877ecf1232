"""Power-production estimation from detected tank area.

A site's total detected tank area tracks the scale of the facility, so a
plain least-squares line from area to rated power gives usable aggregate
estimates over a region even though per-site error is large. Per-site
predictions are clamped at zero before aggregation; the fit itself stays
unconstrained.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import FitError, FormatError, ValidationError
from .fusion import CONTAINMENT_MODES
from .geom import box_corners, contains_point


@dataclass(frozen=True)
class SiteFeature:
    site_id: str
    tank_area: float  # m^2, sum of contained tank box areas
    power_kw: float | None = None

    def __post_init__(self):
        if self.tank_area < 0:
            raise ValidationError(f"tank_area must be >= 0, got {self.tank_area}")


@dataclass(frozen=True)
class RegressionFit:
    slope: float  # kW per m^2
    intercept: float  # kW
    r2: float
    n: int

    def predict(self, tank_area: float) -> float:
        return self.slope * tank_area + self.intercept


def tank_area(site, tanks, containment: str = "center_in") -> float:
    """Total area of the tank detections contained in a site box."""
    if containment not in CONTAINMENT_MODES:
        raise ValidationError(f"unknown containment mode {containment!r}")
    total = 0.0
    for det in tanks:
        if det.cls != "tank":
            continue
        if containment == "center_in":
            inside = contains_point(site.box, det.box.center)
        else:
            inside = all(contains_point(site.box, c) for c in box_corners(det.box))
        if inside:
            total += det.box.area
    return total


def fit_linear(features, with_intercept: bool = True) -> RegressionFit:
    """Closed-form least squares of power against tank area.

    r^2 is 1 - SS_res/SS_tot with the total sum of squares about the mean
    (about zero for the no-intercept variant, which keeps it in [0, 1]).
    """
    pts = [(f.tank_area, f.power_kw) for f in features if f.power_kw is not None]
    if len(pts) < 2:
        raise FitError(f"need at least 2 sites with known power, got {len(pts)}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if with_intercept:
        sxx = float(np.sum((x - x.mean()) ** 2))
        if sxx == 0.0:
            raise FitError("tank areas are all equal; slope is undetermined")
        slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
        intercept = float(y.mean() - slope * x.mean())
        ss_tot = float(np.sum((y - y.mean()) ** 2))
    else:
        sxx = float(np.sum(x * x))
        if sxx == 0.0:
            raise FitError("tank areas are all zero; slope is undetermined")
        slope = float(np.sum(x * y) / sxx)
        intercept = 0.0
        ss_tot = float(np.sum(y * y))
    residuals = y - (slope * x + intercept)
    ss_res = float(np.sum(residuals**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return RegressionFit(slope=slope, intercept=intercept, r2=r2, n=len(pts))


def aggregate_power(fit: RegressionFit, features) -> float:
    """Sum of per-site power predictions, each clamped at zero kW."""
    return float(sum(max(0.0, fit.predict(f.tank_area)) for f in features))


def features_from_detections(sites, tanks, containment: str = "center_in"):
    """Per-site tank-area features from raw detections (power unknown)."""
    return [
        SiteFeature(site_id=site.id, tank_area=tank_area(site, tanks, containment))
        for site in sites
    ]


def read_features_csv(path) -> list[SiteFeature]:
    """Read ``site_id,tank_area_m2,power_kw`` rows; blank power means unknown."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"site_id", "tank_area_m2", "power_kw"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"features CSV must have columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            power = row["power_kw"].strip()
            try:
                out.append(
                    SiteFeature(
                        site_id=row["site_id"],
                        tank_area=float(row["tank_area_m2"]),
                        power_kw=float(power) if power else None,
                    )
                )
            except ValueError as exc:
                raise FormatError(str(exc), line=lineno) from exc
    return out


def write_features_csv(features, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["site_id", "tank_area_m2", "power_kw"])
        for f in features:
            writer.writerow(
                [f.site_id, repr(f.tank_area), "" if f.power_kw is None else repr(f.power_kw)]
            )


def write_fit(fit: RegressionFit, path) -> None:
    doc = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "n": fit.n}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
