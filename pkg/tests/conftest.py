import math

import numpy as np
import pytest

from biosift.detections import Detection
from biosift.geom import GeoPoint, OrientedBox


def make_box(cx=0.0, cy=0.0, w=1.0, h=1.0, angle=0.0) -> OrientedBox:
    return OrientedBox(GeoPoint(cx, cy), w, h, angle)


def make_det(det_id, cls="site", score=0.5, cx=0.0, cy=0.0, w=100.0, h=100.0, angle=0.0, tile="t0"):
    return Detection(
        id=det_id, cls=cls, score=score, box=make_box(cx, cy, w, h, angle), tile_id=tile, crs="EPSG:2154"
    )


def random_box(rng, center_scale=1.0, dim_lo=0.5, dim_hi=1.5) -> OrientedBox:
    return OrientedBox(
        GeoPoint(rng.uniform(-center_scale, center_scale), rng.uniform(-center_scale, center_scale)),
        rng.uniform(dim_lo, dim_hi),
        rng.uniform(dim_lo, dim_hi),
        rng.uniform(-math.pi / 2, math.pi / 2),
    )


def mc_intersection_area(a: OrientedBox, b: OrientedBox, n=1_000_000, seed=0) -> float:
    """Monte-Carlo intersection oracle: sample uniformly inside the smaller
    box, count the fraction falling inside the other."""
    small, big = (a, b) if a.area <= b.area else (b, a)
    rng = np.random.default_rng(seed)
    u = rng.uniform(-0.5, 0.5, n) * small.width
    v = rng.uniform(-0.5, 0.5, n) * small.height
    c, s = math.cos(small.angle), math.sin(small.angle)
    px = small.center.x + u * c - v * s
    py = small.center.y + u * s + v * c
    dx, dy = px - big.center.x, py - big.center.y
    c2, s2 = math.cos(big.angle), math.sin(big.angle)
    bu = dx * c2 + dy * s2
    bv = -dx * s2 + dy * c2
    inside = (np.abs(bu) <= big.width / 2) & (np.abs(bv) <= big.height / 2)
    return small.area * inside.mean()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
