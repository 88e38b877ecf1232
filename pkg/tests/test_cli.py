import csv
import json

import pytest

from biosift.cli import main
from biosift.detections import read_detections, write_detections, write_inventory
from biosift.mining import read_batch_records, read_ledgers, write_verdicts, VerdictRecord
from biosift.simulate import generate, standard_scenario

from conftest import make_det


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out-dir", str(out)]) == 0
    return out


def run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, out


class TestSimulate:
    def test_outputs_and_manifest(self, sim_dir):
        assert (sim_dir / "detections.jsonl").is_file()
        assert (sim_dir / "ground_truth.geojson").is_file()
        manifest = json.loads((sim_dir / "detections.jsonl.manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert str(sim_dir / "detections.jsonl") in manifest["outputs"]

    def test_seed_reproducibility(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--out-dir", str(a), "--seed", "7"]) == 0
        assert main(["simulate", "--out-dir", str(b), "--seed", "7"]) == 0
        assert (a / "detections.jsonl").read_bytes() == (b / "detections.jsonl").read_bytes()


class TestFitPriorAndRescore:
    def test_fit_rescore_eval_flow(self, tmp_path, sim_dir, capsys):
        counts = tmp_path / "counts.csv"
        with open(counts, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["site_id", "n_tanks", "n_piles"])
            for i, (nt, npi) in enumerate([(2, 3), (3, 4), (3, 5), (1, 2), (4, 6)]):
                writer.writerow([f"s{i}", nt, npi])
        prior_path = tmp_path / "prior.json"
        code, _ = run(capsys, ["fit-prior", "--counts", str(counts), "--kind", "empirical", "--out", str(prior_path)])
        assert code == 0
        assert json.loads(prior_path.read_text())["kind"] == "empirical_independent"

        fused_path = tmp_path / "fused.jsonl"
        code, _ = run(capsys, [
            "rescore", "--detections", str(sim_dir / "detections.jsonl"),
            "--prior", str(prior_path), "--out", str(fused_path),
        ])
        assert code == 0
        fused = read_detections(fused_path)
        assert all(d.cls == "site" for d in fused)
        scores_csv = tmp_path / "fused.jsonl.scores.csv"
        assert scores_csv.is_file()

        code, out = run(capsys, [
            "eval", "--detections", str(fused_path),
            "--ground-truth", str(sim_dir / "ground_truth.geojson"),
        ])
        assert code == 0
        result = json.loads(out)
        assert 0.0 <= result["ap_dist"] <= 1.0
        assert result["gt"] == 50

    def test_rescore_without_prior_is_identity(self, tmp_path, sim_dir, capsys):
        fused_path = tmp_path / "identity.jsonl"
        code, _ = run(capsys, [
            "rescore", "--detections", str(sim_dir / "detections.jsonl"), "--out", str(fused_path),
        ])
        assert code == 0
        original = {d.id: d.score for d in read_detections(sim_dir / "detections.jsonl") if d.cls == "site"}
        for det in read_detections(fused_path):
            assert det.score == pytest.approx(original[det.id], abs=1e-12)

    def test_bivariate_prior_fit(self, tmp_path, capsys):
        counts = tmp_path / "counts.csv"
        with open(counts, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["site_id", "n_tanks", "n_piles"])
            for i in range(30):
                writer.writerow([f"s{i}", (i % 4) + 1, (i * 7) % 9])
        prior_path = tmp_path / "bi.json"
        code, _ = run(capsys, ["fit-prior", "--counts", str(counts), "--kind", "bivariate", "--out", str(prior_path)])
        assert code == 0
        doc = json.loads(prior_path.read_text())
        assert doc["kind"] == "bivariate_poisson"
        assert set(doc["params"]) == {"lam_t", "lam_p", "lam_c"}


class TestEvalOptions:
    def test_noiseless_fixture_perfect_ap(self, tmp_path, capsys):
        cfg = tmp_path / "scenario.json"
        sc = standard_scenario(seed=5)
        import dataclasses

        from biosift.simulate import DetectorModel, Scenario

        noiseless = Scenario(
            seed=5, region_width_m=20_000.0, region_height_m=20_000.0, n_sites=10,
            count_prior=sc.count_prior,
            detector=DetectorModel(site_tpr=1.0, part_tpr=1.0, fp_rate_per_km2=0.0, jitter_sigma_m=0.0),
        )
        noiseless.save(cfg)
        out = tmp_path / "noiseless"
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(out)]) == 0
        code, text = run(capsys, [
            "eval", "--detections", str(out / "detections.jsonl"),
            "--ground-truth", str(out / "ground_truth.geojson"),
        ])
        assert code == 0
        result = json.loads(text.strip().splitlines()[-1])
        assert result["ap_dist"] == 1.0
        assert result["precision"] == 1.0 and result["recall"] == 1.0

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--detections", "x.jsonl"])
        assert exc.value.code == 2

    def test_data_error_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{broken\n")
        gtf = tmp_path / "gt.geojson"
        write_inventory([], gtf)
        code = main(["eval", "--detections", str(bad), "--ground-truth", str(gtf)])
        err = capsys.readouterr().err
        assert code == 1
        assert json.loads(err.strip())["error"] == "FormatError"


class TestPrCurve:
    def test_csv_output(self, tmp_path, sim_dir, capsys):
        out = tmp_path / "curve.csv"
        code, _ = run(capsys, [
            "pr-curve", "--detections", str(sim_dir / "detections.jsonl"),
            "--ground-truth", str(sim_dir / "ground_truth.geojson"), "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "cutoff,recall,precision"
        assert len(lines) > 10


class TestMineApplyLoop:
    def test_mine_then_apply(self, tmp_path, sim_dir, capsys):
        batches = tmp_path / "batches"
        code, _ = run(capsys, [
            "mine", "--detections", str(sim_dir / "detections.jsonl"),
            "--known", str(sim_dir / "ground_truth.geojson"),
            "--k", "20", "--iteration", "1", "--out-dir", str(batches),
        ])
        assert code == 0
        records = read_batch_records(batches / "batch-1.jsonl")
        assert len(records) == 20
        assert "baseline_score" in records[0]

        verdicts = [
            VerdictRecord(candidate_id=r["candidate_id"], verdict="not_biodigester",
                          reviewer="r", timestamp="2025-01-01T00:00:00Z", iteration=1)
            for r in records
        ]
        vpath = tmp_path / "verdicts.jsonl"
        write_verdicts(verdicts, vpath)
        ledger_path = tmp_path / "ledgers.jsonl"
        hn_path = tmp_path / "hard_negatives.txt"
        confirmed_path = tmp_path / "confirmed.geojson"
        code, out = run(capsys, [
            "apply-verdicts", "--batch", str(batches / "batch-1.jsonl"),
            "--verdicts", str(vpath), "--ledger", str(ledger_path),
            "--iteration", "1", "--known-db-size", "203",
            "--hard-negatives-out", str(hn_path), "--confirmed-out", str(confirmed_path),
        ])
        assert code == 0
        result = json.loads(out.strip().splitlines()[-1])
        assert result["hard_negatives"] == 20
        ledgers = read_ledgers(ledger_path)
        assert ledgers[-1].background_tiles == 183
        assert hn_path.read_text().strip() != ""


class TestRegress:
    def test_fixture_fit(self, tmp_path, capsys):
        features = tmp_path / "features.csv"
        features.write_text("site_id,tank_area_m2,power_kw\na,1,1\nb,2,2\nc,3,2\n")
        out = tmp_path / "fit.json"
        code, text = run(capsys, ["regress", "--features", str(features), "--out", str(out), "--aggregate"])
        assert code == 0
        result = json.loads(text)
        assert result["slope"] == pytest.approx(0.5, abs=1e-12)
        assert result["intercept"] == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert result["r2"] == pytest.approx(0.75, abs=1e-12)
        assert json.loads(out.read_text())["n"] == 3


class TestReport:
    def test_region_table(self, tmp_path, capsys):
        dets = [make_det("a", score=0.9, cx=0.0), make_det("b", score=0.8, cx=50_000.0)]
        det_path = tmp_path / "dets.jsonl"
        write_detections(dets, det_path)
        from biosift.detections import GroundTruthSite
        from biosift.geom import GeoPoint

        gt_path = tmp_path / "gt.geojson"
        write_inventory([GroundTruthSite(id="g", location=GeoPoint(0.0, 0.0))], gt_path)
        code, out = run(capsys, [
            "report", "--detections", str(det_path), "--ground-truth", str(gt_path),
            "--region", "TestZone",
        ])
        assert code == 0
        assert "Region" in out and "Precision" in out
        assert "TestZone" in out
        assert "100.0%" in out  # recall 1/1
        assert "50.0%" in out  # precision 1/2


class TestHelp:
    @pytest.mark.parametrize(
        "cmd", ["fit-prior", "rescore", "eval", "pr-curve", "mine", "apply-verdicts",
                 "regress", "simulate", "serve", "report"]
    )
    def test_every_subcommand_has_help(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        assert "--" in text

    def test_defaults_mirror_pipeline_constants(self, capsys):
        with pytest.raises(SystemExit):
            main(["mine", "--help"])
        text = capsys.readouterr().out
        assert "100" in text  # default k
        with pytest.raises(SystemExit):
            main(["eval", "--help"])
        text = capsys.readouterr().out
        assert "200" in text  # match threshold
        assert "0.5" in text  # IoU threshold
