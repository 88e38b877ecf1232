import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biosift.errors import ValidationError
from biosift.geom import (
    GeoPoint,
    OrientedBox,
    box_corners,
    canonical_angle,
    center_distance,
    contains_point,
    convex_intersection_area,
    iou,
)

from conftest import make_box, mc_intersection_area, random_box

OCTAGON_AREA = 2.0 * (math.sqrt(2.0) - 1.0)  # unit square vs 45-degree copy


class TestValidation:
    def test_point_requires_finite(self):
        with pytest.raises(ValidationError):
            GeoPoint(float("nan"), 0.0)

    @pytest.mark.parametrize("w,h", [(0.0, 1.0), (1.0, -2.0), (float("inf"), 1.0)])
    def test_box_requires_positive_dims(self, w, h):
        with pytest.raises(ValidationError):
            make_box(w=w, h=h)

    def test_angle_canonical_range(self):
        for a in (-7.0, -math.pi / 2, 0.0, math.pi / 2, 3.9, 12.4):
            c = canonical_angle(a)
            assert -math.pi / 2 <= c < math.pi / 2


class TestCorners:
    def test_axis_aligned_unit_square(self):
        corners = box_corners(make_box())
        assert {(round(p.x, 12), round(p.y, 12)) for p in corners} == {
            (0.5, 0.5),
            (-0.5, 0.5),
            (-0.5, -0.5),
            (0.5, -0.5),
        }

    def test_half_turn_matches_negative_half_turn(self):
        plus = {(round(p.x, 9), round(p.y, 9)) for p in box_corners(make_box(angle=math.pi / 2))}
        minus = {(round(p.x, 9), round(p.y, 9)) for p in box_corners(make_box(angle=-math.pi / 2))}
        assert plus == minus

    def test_rotated_corners_via_inverse_rotation(self):
        box = make_box(cx=10.0, cy=10.0, w=2.0, h=1.0, angle=math.pi / 4)
        c, s = math.cos(-math.pi / 4), math.sin(-math.pi / 4)
        unrotated = set()
        for p in box_corners(box):
            dx, dy = p.x - 10.0, p.y - 10.0
            unrotated.add((round(dx * c - dy * s, 9), round(dx * s + dy * c, 9)))
        assert unrotated == {(1.0, 0.5), (-1.0, 0.5), (-1.0, -0.5), (1.0, -0.5)}

    def test_shoelace_area_equals_width_times_height(self, rng):
        for _ in range(50):
            b = random_box(rng)
            pts = b.corner_array()
            area = 0.5 * abs(
                sum(
                    pts[i - 1, 0] * pts[i, 1] - pts[i, 0] * pts[i - 1, 1]
                    for i in range(4)
                )
            )
            assert area == pytest.approx(b.area, rel=1e-9)


class TestDistance:
    def test_same_point(self):
        assert center_distance(GeoPoint(2.0, 3.0), GeoPoint(2.0, 3.0)) == 0.0

    def test_three_four_five(self):
        assert center_distance(GeoPoint(0, 0), GeoPoint(3, 4)) == 5.0

    def test_matching_rule_distances(self):
        assert center_distance(GeoPoint(0, 0), GeoPoint(150, 0)) == 150.0
        assert center_distance(GeoPoint(0, 0), GeoPoint(250, 0)) == 250.0

    @given(
        st.tuples(*[st.floats(-1e6, 1e6) for _ in range(6)]),
    )
    def test_symmetry_and_triangle_inequality(self, xs):
        a, b, c = GeoPoint(xs[0], xs[1]), GeoPoint(xs[2], xs[3]), GeoPoint(xs[4], xs[5])
        assert center_distance(a, b) == center_distance(b, a)
        assert center_distance(a, c) <= center_distance(a, b) + center_distance(b, c) + 1e-6


class TestContainment:
    def test_center_always_inside(self, rng):
        for _ in range(100):
            b = random_box(rng, center_scale=100.0, dim_lo=0.1, dim_hi=40.0)
            assert contains_point(b, b.center)

    def test_boundary_point_included(self):
        assert contains_point(make_box(), GeoPoint(0.5, 0.0))

    def test_far_point_excluded(self):
        b = make_box()
        assert not contains_point(b, GeoPoint(math.sqrt(2.0), math.sqrt(2.0)))

    def test_corners_contained(self, rng):
        for _ in range(25):
            b = random_box(rng)
            for p in box_corners(b):
                assert contains_point(b, p)


class TestIntersectionArea:
    def test_identical_boxes(self):
        b = make_box(cx=3.0, cy=-2.0, w=2.0, h=5.0, angle=0.7)
        assert convex_intersection_area(b, b) == pytest.approx(10.0, rel=1e-12)

    def test_disjoint_boxes(self):
        assert convex_intersection_area(make_box(), make_box(cx=10.0)) == 0.0

    def test_rotated_square_octagon(self):
        a = make_box()
        b = make_box(angle=math.pi / 4)
        assert convex_intersection_area(a, b) == pytest.approx(OCTAGON_AREA, abs=1e-9)

    def test_tangent_boxes_zero_area(self):
        assert convex_intersection_area(make_box(), make_box(cx=1.0)) == pytest.approx(0.0, abs=1e-12)

    def test_monte_carlo_oracle(self, rng):
        for i in range(100):
            a, b = random_box(rng), random_box(rng)
            exact = convex_intersection_area(a, b)
            approx = mc_intersection_area(a, b, n=1_000_000, seed=i)
            assert exact == pytest.approx(approx, abs=3e-3)

    def test_symmetric_and_bounded(self, rng):
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            ab = convex_intersection_area(a, b)
            ba = convex_intersection_area(b, a)
            assert ab == pytest.approx(ba, abs=1e-9)
            assert 0.0 <= ab <= min(a.area, b.area) + 1e-12


class TestIoU:
    def test_identical(self):
        b = make_box(w=3.0, h=2.0, angle=-0.3)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(make_box(), make_box(cx=5.0)) == 0.0

    def test_rotated_same_center_squares(self):
        value = iou(make_box(), make_box(angle=math.pi / 4))
        assert value == pytest.approx(OCTAGON_AREA / (2.0 - OCTAGON_AREA), abs=1e-6)
        assert value == pytest.approx(0.707107, abs=1e-6)

    def test_range_and_symmetry(self, rng):
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            v = iou(a, b)
            assert 0.0 <= v <= 1.0
            assert v == pytest.approx(iou(b, a), abs=1e-12)

    @pytest.mark.parametrize("scale,tol", [(100.0, 1e-12), (1e5, 1e-8)])
    def test_translation_invariance(self, rng, scale, tol):
        for _ in range(50):
            a, b = random_box(rng), random_box(rng)
            dx, dy = rng.uniform(-scale, scale, size=2)
            a2 = OrientedBox(GeoPoint(a.center.x + dx, a.center.y + dy), a.width, a.height, a.angle)
            b2 = OrientedBox(GeoPoint(b.center.x + dx, b.center.y + dy), b.width, b.height, b.angle)
            assert iou(a2, b2) == pytest.approx(iou(a, b), abs=tol)

    def test_common_rotation_invariance(self, rng):
        for _ in range(50):
            a, b = random_box(rng), random_box(rng)
            theta = rng.uniform(0.0, 2.0 * math.pi)
            c, s = math.cos(theta), math.sin(theta)

            def rot(box):
                x = box.center.x * c - box.center.y * s
                y = box.center.x * s + box.center.y * c
                return OrientedBox(GeoPoint(x, y), box.width, box.height, box.angle + theta)

            assert iou(rot(a), rot(b)) == pytest.approx(iou(a, b), abs=1e-9)
