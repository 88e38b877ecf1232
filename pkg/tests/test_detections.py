import json
import math

import pytest

from biosift.detections import (
    DatasetStats,
    Detection,
    GroundTruthSite,
    dedup_sites,
    dilution,
    read_detections,
    read_inventory,
    write_detections,
    write_inventory,
)
from biosift.errors import DomainError, FormatError, ValidationError
from biosift.geom import GeoPoint

from conftest import make_det


class TestDetectionsFile:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "dets.jsonl"
        path.write_text("")
        assert read_detections(path) == []

    def test_round_trip_preserves_order_and_fields(self, tmp_path):
        dets = [
            make_det("a", score=0.9, cx=1.5, cy=-2.25, angle=0.3),
            make_det("b", cls="tank", score=0.1, w=16, h=16),
            make_det("c", cls="pile", score=0.5, w=40, h=12, angle=-1.2),
        ]
        path = tmp_path / "dets.jsonl"
        write_detections(dets, path)
        back = read_detections(path)
        assert [d.to_record() for d in back] == [d.to_record() for d in dets]

    def test_score_out_of_range_names_field_and_line(self, tmp_path):
        rec = make_det("x").to_record()
        rec["score"] = 1.3
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(make_det("ok").to_record()) + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(FormatError) as err:
            read_detections(path)
        assert err.value.field == "score"
        assert err.value.line == 2
        assert "score" in str(err.value)

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(FormatError) as err:
            read_detections(path)
        assert err.value.line == 1

    def test_missing_field(self, tmp_path):
        rec = make_det("x").to_record()
        del rec["angle"]
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(FormatError) as err:
            read_detections(path)
        assert err.value.field == "angle"

    def test_scientific_notation_accepted(self, tmp_path):
        rec = make_det("x").to_record()
        rec["score"] = 1e-3
        path = tmp_path / "sci.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        assert read_detections(path)[0].score == pytest.approx(1e-3)

    def test_unknown_class_rejected(self):
        with pytest.raises(ValidationError):
            make_det("x", cls="barn")


class TestDedup:
    def test_single_detection(self):
        d = make_det("a")
        assert dedup_sites([d]) == [d]

    def test_pair_within_radius_keeps_best(self):
        a = make_det("a", score=0.9, cx=0.0)
        b = make_det("b", score=0.7, cx=50.0)
        out = dedup_sites([a, b], radius=200.0)
        assert out == [a]
        assert out[0].score == 0.9

    def test_chain_absorption(self):
        a = make_det("a", score=0.8, cx=0.0)
        b = make_det("b", score=0.9, cx=150.0)
        c = make_det("c", score=0.7, cx=300.0)
        out = dedup_sites([a, b, c], radius=200.0)
        assert [d.id for d in out] == ["b"]

    def test_idempotent(self, rng):
        dets = [
            make_det(f"d{i}", score=float(rng.random()), cx=float(rng.uniform(0, 3000)), cy=float(rng.uniform(0, 3000)))
            for i in range(200)
        ]
        once = dedup_sites(dets, radius=150.0)
        twice = dedup_sites(once, radius=150.0)
        assert [d.id for d in once] == [d.id for d in twice]

    def test_survivors_pairwise_separated(self, rng):
        dets = [
            make_det(f"d{i}", score=float(rng.random()), cx=float(rng.uniform(0, 2000)), cy=float(rng.uniform(0, 2000)))
            for i in range(300)
        ]
        out = dedup_sites(dets, radius=180.0)
        assert len(out) <= len(dets)
        for i, a in enumerate(out):
            for b in out[i + 1 :]:
                d = math.hypot(a.center.x - b.center.x, a.center.y - b.center.y)
                assert d > 180.0

    def test_tiny_radius_keeps_everything(self, rng):
        dets = [
            make_det(f"d{i}", score=float(rng.random()), cx=float(i * 10.0)) for i in range(50)
        ]
        assert len(dedup_sites(dets, radius=1e-6)) == 50

    def test_rejects_part_classes(self):
        with pytest.raises(ValidationError):
            dedup_sites([make_det("t", cls="tank", w=16, h=16)])

    def test_score_tie_broken_by_id(self):
        a = make_det("b", score=0.5, cx=0.0)
        b = make_det("a", score=0.5, cx=10.0)
        assert [d.id for d in dedup_sites([a, b])] == ["a"]


class TestDilution:
    def test_table_values(self):
        assert f"{100 * dilution(163, 326):.0f}%" == "50%"
        assert f"{100 * dilution(40, 440):.1f}%" == "9.1%"
        assert f"{100 * dilution(27, 5096):.2f}%" == "0.53%"

    def test_zero_total_rejected(self):
        with pytest.raises(DomainError):
            dilution(0, 0)

    def test_stats_invariant(self):
        stats = DatasetStats(n_images=326, n_annotated_tiles=163, n_background_tiles=163)
        assert stats.alpha == 0.5
        with pytest.raises(ValidationError):
            DatasetStats(n_images=10, n_annotated_tiles=3, n_background_tiles=3)


class TestInventory:
    def test_empty_collection(self, tmp_path):
        path = tmp_path / "inv.geojson"
        write_inventory([], path)
        doc = json.loads(path.read_text())
        assert doc["type"] == "FeatureCollection"
        assert doc["features"] == []
        assert read_inventory(path) == []

    def test_two_sites_point_features(self, tmp_path):
        sites = [
            GroundTruthSite(id="s1", location=GeoPoint(10.0, 20.0), source="initial_db"),
            GroundTruthSite(id="s2", location=GeoPoint(30.0, 40.0), source="new_detection"),
        ]
        path = tmp_path / "inv.geojson"
        write_inventory(sites, path)
        doc = json.loads(path.read_text())
        assert len(doc["features"]) == 2
        props = {f["properties"]["id"]: f["properties"] for f in doc["features"]}
        assert props["s2"]["source"] == "new_detection"

    def test_round_trip_random_sites(self, rng, tmp_path):
        sites = [
            GroundTruthSite(
                id=f"s{i:03d}",
                location=GeoPoint(float(rng.uniform(0, 1e5)), float(rng.uniform(0, 1e5))),
                source=("initial_db", "new_detection", "external_db")[int(rng.integers(3))],
            )
            for i in range(100)
        ]
        path = tmp_path / "inv.geojson"
        write_inventory(sites, path, crs="EPSG:2154")
        back = read_inventory(path)
        assert {(s.id, s.location.x, s.location.y, s.source) for s in back} == {
            (s.id, s.location.x, s.location.y, s.source) for s in sites
        }

    def test_polygon_boxes_round_trip(self, tmp_path):
        from conftest import make_box

        box = make_box(cx=5.0, cy=6.0, w=30.0, h=20.0, angle=0.4)
        site = GroundTruthSite(
            id="s1", location=GeoPoint(5.0, 6.0), source="initial_db", boxes=(("site", box),)
        )
        path = tmp_path / "inv.geojson"
        write_inventory([site], path)
        back = read_inventory(path)
        assert len(back) == 1
        cls, got = back[0].boxes[0]
        assert cls == "site"
        assert got.width == pytest.approx(box.width, rel=1e-9)
        assert got.height == pytest.approx(box.height, rel=1e-9)
        assert got.angle == pytest.approx(box.angle, abs=1e-9)

    def test_unsupported_geometry_rejected(self, tmp_path):
        path = tmp_path / "bad.geojson"
        path.write_text(
            json.dumps(
                {
                    "type": "FeatureCollection",
                    "features": [
                        {
                            "type": "Feature",
                            "geometry": {"type": "LineString", "coordinates": [[0, 0], [1, 1]]},
                            "properties": {"id": "x"},
                        }
                    ],
                }
            )
        )
        with pytest.raises(FormatError):
            read_inventory(path)
