"""Benchmark harness: intervals, pooling views, sweeps and report files."""

import json

import numpy as np
import pytest

from radood.bench import (
    DetectorReport,
    SweepConfig,
    SweepError,
    calibrate_detector,
    compare,
    read_report_csv,
    report_views,
    run_benchmark,
    run_sweep,
    wilson_interval,
    write_comparison_csv,
    write_manifest,
    write_report_csv,
)
from radood.scores import Threshold
from radood.sigmodel import Scenario

Z = 1.959963984540054


class FakeDetector:
    """Deterministic stand-in scoring each profile by its power."""

    def __init__(self, detector_id="fake", fail_stream=None):
        self.detector_id = detector_id
        self.fail_stream = fail_stream
        self.seen = []

    def scores(self, batch, stream="eval", start_index=0):
        if self.fail_stream is not None and stream.startswith(self.fail_stream):
            raise RuntimeError("synthetic failure")
        self.seen.append(np.array(batch.signals))
        return np.sum(np.abs(batch.signals) ** 2, axis=1)


def scene(**kw):
    base = dict(m=16, rho=0.5, clutter_kind="cGN", cnr_db=15.0, seed=31)
    base.update(kw)
    return Scenario(**base)


def config(**kw):
    base = dict(scenario=scene(), snr_grid_db=(0.0, 20.0),
                doppler_bins=(0, 3), trials=100, target_pfa=0.05,
                n_cal=2000)
    base.update(kw)
    return SweepConfig(**base)


def make_threshold(kind="fake", value=1.0):
    return Threshold(value=value, target_pfa=0.05, n_cal=2000, kind=kind)


def make_report(detector_id, detections, snrs=(10.0,), bins=(0, 1),
                trials=1000):
    return DetectorReport(
        detector_id=detector_id, threshold=make_threshold(detector_id),
        snr_grid_db=tuple(snrs), doppler_bins=tuple(bins), trials=trials,
        detections=np.asarray(detections), pfa_trials=trials,
        pfa_detections=int(round(trials * 0.05)))


class TestWilsonInterval:
    def test_boundary_cases(self):
        lo, hi = wilson_interval(0, 50)
        assert 0.0 <= lo < 1e-12 and hi < 0.1
        lo, hi = wilson_interval(50, 50)
        assert lo > 0.9 and hi > 1.0 - 1e-12

    def test_contains_the_point_estimate(self, gen):
        for _ in range(50):
            n = int(gen.integers(1, 1000))
            k = int(gen.integers(0, n + 1))
            lo, hi = wilson_interval(k, n)
            assert lo <= k / n <= hi

    def test_frozen_anchor(self):
        # k=5, n=100: endpoints are the roots of the score quadratic
        # (phat - p)^2 = z^2 p (1 - p) / n, solved independently
        lo, hi = wilson_interval(5, 100)
        np.testing.assert_allclose(lo, 0.0215436791543680, rtol=1e-12)
        np.testing.assert_allclose(hi, 0.1117504692319191, rtol=1e-12)

    def test_shrinks_with_n(self):
        lo1, hi1 = wilson_interval(10, 100)
        lo2, hi2 = wilson_interval(100, 1000)
        assert (hi2 - lo2) < (hi1 - lo1)

    def test_needs_trials(self):
        with pytest.raises(ValueError, match="n > 0"):
            wilson_interval(0, 0)


class TestSweepConfig:
    def test_defaults(self):
        cfg = config()
        assert cfg.seed == 31
        assert cfg.pfa_trials_resolved == 100
        assert cfg.seeded_scenario.seed == 31
        full = SweepConfig(scenario=scene(), snr_grid_db=(0.0,))
        assert full.doppler_bins == tuple(range(16))

    def test_seed_override(self):
        cfg = config(seed=99)
        assert cfg.seeded_scenario.seed == 99
        assert cfg.scenario.seed == 31

    def test_validation(self):
        with pytest.raises(ValueError, match="non-empty"):
            config(snr_grid_db=())
        with pytest.raises(ValueError, match="distinct"):
            config(doppler_bins=(1, 1))
        with pytest.raises(ValueError, match="lie in"):
            config(doppler_bins=(16,))
        with pytest.raises(ValueError, match="100 trials"):
            config(trials=50)
        with pytest.raises(ValueError, match="target pfa"):
            config(target_pfa=0.5)
        with pytest.raises(ValueError, match="calibration"):
            config(n_cal=0)
        with pytest.raises(ValueError, match="pfa_trials"):
            config(pfa_trials=0)

    def test_to_dict_handles_infinite_snr(self):
        cfg = config(snr_grid_db=(float("-inf"), 10.0))
        doc = cfg.to_dict()
        assert doc["snr_grid_db"][0] == "-inf"
        json.dumps(doc)


class TestDetectorReport:
    def test_views_pool_counts(self):
        rep = make_report("fake", [[10, 20, 30], [40, 50, 60]],
                          snrs=(0.0, 5.0), bins=(0, 1, 2), trials=100)
        mean_view = rep.views["mean_excluding_0"]
        assert mean_view["detections"] == [50, 110]
        assert mean_view["trials"] == [200, 200]
        assert mean_view["pd"] == [0.25, 0.55]
        np.testing.assert_allclose(
            (mean_view["ci_lo"][0], mean_view["ci_hi"][0]),
            wilson_interval(50, 200))
        zero_view = rep.views["doppler_0"]
        assert zero_view["detections"] == [10, 40]
        assert zero_view["pd"] == [0.1, 0.4]

    def test_report_views_helper(self):
        rep = make_report("fake", [[3, 7]])
        mean_view, zero_view = report_views(rep)
        assert mean_view["detections"] == [7]
        assert zero_view["detections"] == [3]

    def test_report_views_missing(self):
        rep = make_report("fake", [[3]], bins=(0,))
        with pytest.raises(ValueError, match="mean_excluding_0"):
            report_views(rep)

    def test_pooled_subsets(self):
        rep = make_report("fake", [[10, 20], [30, 40]], snrs=(0.0, 5.0))
        k, n = rep.pooled([0.0, 5.0], [1])
        assert (k, n) == (60, 2000)
        k, n = rep.pooled([5.0], [0, 1])
        assert (k, n) == (70, 2000)

    def test_properties(self):
        rep = make_report("fake", [[100, 200]])
        np.testing.assert_allclose(rep.pd, [[0.1, 0.2]])
        np.testing.assert_allclose(rep.empirical_pfa, 0.05)

    def test_validation(self):
        with pytest.raises(ValueError, match="does not match"):
            make_report("fake", [[1, 2, 3]])
        with pytest.raises(ValueError, match="lie in"):
            make_report("fake", [[2000, 0]])


class TestSweep:
    def test_calibration_threshold(self):
        cfg = config()
        thr = calibrate_detector(FakeDetector(), cfg)
        assert thr.kind == "fake"
        assert thr.n_cal == 2000
        assert thr.target_pfa == 0.05

    def test_sweep_is_reproducible(self):
        cfg = config()
        det = FakeDetector()
        a = run_sweep(cfg, det)
        b = run_sweep(cfg, det)
        np.testing.assert_array_equal(a.detections, b.detections)
        assert a.pfa_detections == b.pfa_detections
        assert a.threshold == b.threshold

    def test_power_grows_with_snr(self):
        rep = run_sweep(config(), FakeDetector())
        pd = rep.pd
        assert np.all(pd[1] >= pd[0])
        assert pd[1].mean() > 0.9

    def test_silent_target_keeps_the_null_rate(self):
        # at -inf SNR the H1 batch is exactly the H0 law
        cfg = config(snr_grid_db=(float("-inf"),), trials=200)
        rep = run_sweep(cfg, FakeDetector())
        pooled = rep.detections.sum() / (200 * 2)
        assert pooled <= 0.12

    def test_empirical_pfa_near_target(self):
        cfg = config(pfa_trials=2000)
        rep = run_sweep(cfg, FakeDetector())
        # 3 sigma binomial band around the 5% target
        band = 3.0 * np.sqrt(0.05 * 0.95 / 2000)
        assert abs(rep.empirical_pfa - 0.05) < band

    def test_threshold_override(self):
        thr = make_threshold(value=1e9)
        rep = run_sweep(config(), FakeDetector(), threshold=thr)
        assert rep.threshold == thr
        assert rep.detections.sum() == 0

    def test_failure_names_the_grid_point(self):
        with pytest.raises(SweepError, match="snr=0 dB, doppler bin 0"):
            run_sweep(config(), FakeDetector(fail_stream="eval"),
                      threshold=make_threshold())

    def test_failure_on_the_pfa_block(self):
        with pytest.raises(SweepError, match="held-out H0 block"):
            run_sweep(config(), FakeDetector(fail_stream="pfa"),
                      threshold=make_threshold())

    def test_common_random_numbers(self):
        # crn keys the H1 clutter by a shared label instead of detector_id
        thr = make_threshold()
        det_a, det_b = FakeDetector("fake-a"), FakeDetector("fake-b")
        a = run_sweep(config(crn=True), det_a, threshold=thr)
        run_sweep(config(crn=True), det_b, threshold=thr)
        for seen_a, seen_b in zip(det_a.seen, det_b.seen):
            np.testing.assert_array_equal(seen_a, seen_b)
        det_c = FakeDetector("fake-c")
        c = run_sweep(config(), det_c, threshold=thr)
        assert a.detections.shape == c.detections.shape
        assert any(not np.array_equal(sa, sc)
                   for sa, sc in zip(det_a.seen[:-1], det_c.seen[:-1]))


class TestCompare:
    def test_ranking_and_separation(self):
        strong = make_report("strong", [[900, 900]])
        weak = make_report("weak", [[100, 100]])
        rows = compare([weak, strong])
        assert [r["view"] for r in rows] == ["mean_excluding_0"] * 2 + \
            ["doppler_0"] * 2
        top = rows[0]
        assert (top["detector"], top["rank"]) == ("strong", 1)
        assert top["separated"] is True
        assert rows[1]["detector"] == "weak"
        assert rows[1]["separated"] is False

    def test_overlapping_intervals_not_separated(self):
        a = make_report("a", [[500, 500]])
        b = make_report("b", [[490, 490]])
        assert all(not r["separated"] for r in compare([a, b]))

    def test_ties_break_by_name(self):
        a = make_report("zeta", [[500, 500]])
        b = make_report("alpha", [[500, 500]])
        rows = compare([a, b])
        assert rows[0]["detector"] == "alpha"
        assert rows[1]["detector"] == "zeta"

    def test_grid_mismatch(self):
        a = make_report("a", [[1, 2]])
        b = make_report("b", [[1, 2]], snrs=(20.0,))
        with pytest.raises(ValueError, match="grid mismatch"):
            compare([a, b])
        with pytest.raises(ValueError, match="nothing"):
            compare([])


class TestRunBenchmark:
    def test_shared_calibration_block(self):
        cfg = config()
        out = run_benchmark(cfg, [FakeDetector("fake-a"),
                                  FakeDetector("fake-b")])
        thrs = out["thresholds"]
        # identical scoring on one shared H0 set gives identical thresholds
        assert thrs["fake-a"].value == thrs["fake-b"].value
        assert len(out["reports"]) == 2
        assert {r["detector"] for r in out["comparison"]} == \
            {"fake-a", "fake-b"}


class TestReportFiles:
    def test_report_csv_layout(self, tmp_path):
        rep = make_report("fake", [[10, 20], [30, 40]], snrs=(0.0, 5.0))
        path = tmp_path / "report.csv"
        write_report_csv(path, [rep])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ("detector,snr_db,doppler_bin,trials,detections,"
                            "pd,ci_lo,ci_hi")
        assert len(lines) == 5
        first = lines[1].split(",")
        assert first[:5] == ["fake", "0", "0", "1000", "10"]
        assert float(first[5]) == 0.01

    def test_write_is_byte_stable(self, tmp_path):
        rep = make_report("fake", [[7, 13]])
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_report_csv(a, [rep])
        write_report_csv(b, [rep])
        assert a.read_bytes() == b.read_bytes()

    def test_roundtrip_through_files(self, tmp_path):
        reps = [make_report("fake-a", [[10, 20], [30, 40]], snrs=(0.0, 5.0)),
                make_report("fake-b", [[11, 21], [31, 41]], snrs=(0.0, 5.0))]
        csv_path = tmp_path / "report.csv"
        man_path = tmp_path / "manifest.json"
        write_report_csv(csv_path, reps)
        write_manifest(man_path, config(snr_grid_db=(0.0, 5.0),
                                        doppler_bins=(0, 1), trials=1000),
                       reps)
        back = {r.detector_id: r for r in read_report_csv(csv_path, man_path)}
        assert set(back) == {"fake-a", "fake-b"}
        for rep in reps:
            got = back[rep.detector_id]
            np.testing.assert_array_equal(got.detections, rep.detections)
            assert got.snr_grid_db == rep.snr_grid_db
            assert got.doppler_bins == rep.doppler_bins
            assert got.threshold == rep.threshold
            assert got.pfa_detections == rep.pfa_detections
            assert got.views == rep.views

    def test_manifest_contents(self, tmp_path):
        rep = make_report("fake", [[1, 2]])
        path = tmp_path / "manifest.json"
        write_manifest(path, config(snr_grid_db=(10.0,), doppler_bins=(0, 1),
                                    trials=1000), [rep], extra={"note": "x"})
        doc = json.loads(path.read_text())
        assert doc["format"] == "radood-bench"
        assert doc["version"] == 1
        assert doc["config"]["trials"] == 1000
        assert doc["thresholds"]["fake"]["kind"] == "fake"
        assert doc["empirical_pfa"]["fake"]["detections"] == 50
        assert doc["extra"] == {"note": "x"}
        assert path.read_text().endswith("\n")

    def test_rejects_foreign_manifest(self, tmp_path):
        man = tmp_path / "manifest.json"
        man.write_text(json.dumps({"format": "other"}))
        csv_path = tmp_path / "report.csv"
        write_report_csv(csv_path, [make_report("fake", [[1, 2]])])
        with pytest.raises(ValueError, match="not a benchmark manifest"):
            read_report_csv(csv_path, man)

    def test_rejects_foreign_csv(self, tmp_path):
        rep = make_report("fake", [[1, 2]])
        man = tmp_path / "manifest.json"
        write_manifest(man, config(snr_grid_db=(10.0,), doppler_bins=(0, 1),
                                   trials=1000), [rep])
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="not a benchmark report"):
            read_report_csv(bad, man)

    def test_comparison_csv(self, tmp_path):
        rows = compare([make_report("strong", [[900, 900]]),
                        make_report("weak", [[100, 100]])])
        path = tmp_path / "comparison.csv"
        write_comparison_csv(path, rows)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "view,snr_db,rank,detector,pd,ci_lo,ci_hi,separated"
        assert lines[1].startswith("mean_excluding_0,10,1,strong,")
        assert lines[1].endswith(",1")
        assert lines[2].endswith(",0")
