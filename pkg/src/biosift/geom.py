"""Planar geometry for detection post-processing.

Everything lives in one projected CRS with meter units; the CRS
identifier is opaque metadata carried on files and never interpreted
here. Boxes are oriented rectangles (axis-aligned is the angle-0 special
case) and all predicates are boundary-inclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ValidationError

_HALF_PI = math.pi / 2.0
_CONTAIN_TOL = 1e-9


@dataclass(frozen=True)
class GeoPoint:
    """A point in the projected plane (easting/northing, meters)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"non-finite point ({self.x}, {self.y})")


def canonical_angle(angle: float) -> float:
    """Reduce a rotation angle into [-pi/2, pi/2).

    A rectangle is invariant under rotation by pi, so reduction modulo pi
    always lands in the canonical half-open range without touching the
    width/height pair.
    """
    a = math.fmod(angle + _HALF_PI, math.pi)
    if a < 0.0:
        a += math.pi
    return a - _HALF_PI


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle with a rotation angle, stored in canonical form."""

    center: GeoPoint
    width: float
    height: float
    angle: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.width) and self.width > 0.0):
            raise ValidationError(f"width must be > 0, got {self.width}")
        if not (math.isfinite(self.height) and self.height > 0.0):
            raise ValidationError(f"height must be > 0, got {self.height}")
        if not math.isfinite(self.angle):
            raise ValidationError(f"non-finite angle {self.angle}")
        object.__setattr__(self, "angle", canonical_angle(self.angle))

    @property
    def area(self) -> float:
        return self.width * self.height

    def corner_array(self) -> np.ndarray:
        """Corners as a (4, 2) array in counter-clockwise order."""
        hw, hh = 0.5 * self.width, 0.5 * self.height
        local = np.array([(hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh)])
        c, s = math.cos(self.angle), math.sin(self.angle)
        rot = np.array([(c, -s), (s, c)])
        return local @ rot.T + (self.center.x, self.center.y)


def box_corners(b: OrientedBox) -> tuple[GeoPoint, ...]:
    """The four corners of ``b``, counter-clockwise."""
    return tuple(GeoPoint(float(x), float(y)) for x, y in b.corner_array())


def center_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Euclidean distance in the projected plane, meters."""
    return math.hypot(a.x - b.x, a.y - b.y)


def contains_point(b: OrientedBox, p: GeoPoint) -> bool:
    """Whether ``p`` lies inside or on the boundary of ``b``.

    The point is rotated into the box frame and compared against the
    half-extents with a small tolerance, so tangent parts still count.
    """
    dx, dy = p.x - b.center.x, p.y - b.center.y
    c, s = math.cos(b.angle), math.sin(b.angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return abs(u) <= 0.5 * b.width + _CONTAIN_TOL and abs(v) <= 0.5 * b.height + _CONTAIN_TOL


def convex_intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection area of two oriented boxes, square meters.

    Clipping runs in a local frame around the two centers: projected
    eastings/northings are large, and box-scale coordinates keep the
    result stable under common translations.
    """
    mx = 0.5 * (a.center.x + b.center.x)
    my = 0.5 * (a.center.y + b.center.y)
    shift = np.array([mx, my])
    inter = _kernels.quad_intersection_area(a.corner_array() - shift, b.corner_array() - shift)
    return min(inter, a.area, b.area)


def iou(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection over union of two oriented boxes, in [0, 1]."""
    inter = convex_intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)
