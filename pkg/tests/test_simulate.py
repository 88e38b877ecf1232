import numpy as np
import pytest

from biosift import metrics, refdata
from biosift.detections import write_detections
from biosift.errors import GenerationError
from biosift.fusion import fit_empirical_prior
from biosift.simulate import DetectorModel, Scenario, generate, standard_scenario


def noiseless(seed=7, n_sites=12, extent=20_000.0):
    prior = fit_empirical_prior(refdata.TANK_COUNT_FREQ, refdata.PILE_COUNT_FREQ)
    return Scenario(
        seed=seed,
        region_width_m=extent,
        region_height_m=extent,
        n_sites=n_sites,
        count_prior=prior,
        detector=DetectorModel(site_tpr=1.0, part_tpr=1.0, fp_rate_per_km2=0.0, jitter_sigma_m=0.0),
    )


class TestGenerate:
    def test_no_sites_only_fps(self):
        prior = fit_empirical_prior(refdata.TANK_COUNT_FREQ, refdata.PILE_COUNT_FREQ)
        sc = Scenario(seed=3, region_width_m=20_000, region_height_m=20_000, n_sites=0, count_prior=prior)
        gts, dets = generate(sc)
        assert gts == []
        assert all(d.id.startswith("d") for d in dets)
        assert len([d for d in dets if d.cls == "site"]) > 0

    def test_noiseless_limit_detections_at_gt(self):
        gts, dets = generate(noiseless())
        sites = [d for d in dets if d.cls == "site"]
        assert len(sites) == len(gts)
        gt_xy = {(g.location.x, g.location.y) for g in gts}
        assert {(d.center.x, d.center.y) for d in sites} == gt_xy
        assert metrics.ap_dist(sites, gts) == 1.0
        report = metrics.match_by_distance(sites, gts)
        assert report.precision == 1.0 and report.recall == 1.0

    def test_determinism_bit_identical_files(self, tmp_path):
        sc = standard_scenario()
        for name in ("a", "b"):
            gts, dets = generate(sc)
            write_detections(dets, tmp_path / f"{name}.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_region_too_small(self):
        prior = fit_empirical_prior(refdata.TANK_COUNT_FREQ, refdata.PILE_COUNT_FREQ)
        sc = Scenario(seed=1, region_width_m=1000.0, region_height_m=1000.0, n_sites=50, count_prior=prior)
        with pytest.raises(GenerationError):
            generate(sc)

    def test_sites_respect_separation(self):
        gts, _ = generate(standard_scenario())
        for i, a in enumerate(gts):
            for b in gts[i + 1 :]:
                d2 = (a.location.x - b.location.x) ** 2 + (a.location.y - b.location.y) ** 2
                assert d2 >= 500.0**2

    def test_part_count_histogram_converges_to_prior(self):
        # noiseless big batch: per-site detected counts reproduce the
        # generative count prior within total-variation 0.05. With every
        # object detected and no false alarms, the stream is one site
        # detection followed by its parts, so counting by stream order is
        # exact.
        sc = noiseless(seed=11, n_sites=10_000, extent=120_000.0)
        _, dets = generate(sc)
        joint = np.zeros_like(sc.count_prior.table)
        nt = npi = 0
        started = False
        for d in dets:
            if d.cls == "site":
                if started:
                    joint[min(nt, 50), min(npi, 50)] += 1.0
                started, nt, npi = True, 0, 0
            elif d.cls == "tank":
                nt += 1
            else:
                npi += 1
        joint[min(nt, 50), min(npi, 50)] += 1.0
        joint /= joint.sum()
        tv = 0.5 * np.abs(joint - sc.count_prior.table / sc.count_prior.table.sum()).sum()
        assert tv <= 0.05

    def test_standard_scenario_shape(self):
        sc = standard_scenario()
        assert sc.seed == 42
        assert sc.n_sites == 50
        assert sc.region_width_m == sc.region_height_m == 50_000.0
        assert sc.detector == DetectorModel()


class TestScenarioConfig:
    def test_round_trip(self, tmp_path):
        sc = standard_scenario(seed=9)
        path = tmp_path / "scenario.json"
        sc.save(path)
        back = Scenario.load(path)
        assert back.seed == 9
        assert back.detector == sc.detector
        np.testing.assert_allclose(back.count_prior.table, sc.count_prior.table)
        g1 = generate(sc)
        g2 = generate(back)
        assert [d.to_record() for d in g1[1]] == [d.to_record() for d in g2[1]]

    def test_detector_bounds_validated(self):
        with pytest.raises(Exception):
            DetectorModel(site_tpr=1.5)
