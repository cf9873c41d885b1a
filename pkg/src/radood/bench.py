"""Monte-Carlo benchmark harness for the four detectors.

Every detector is reduced to one interface: a ``detector_id`` string plus
``scores(batch, stream, start_index)`` returning one statistic per profile.
The harness calibrates each detector to the target Pfa on an independent H0
set, sweeps an SNR x Doppler grid of H1 trials, runs a held-out H0 block to
report the empirical Pfa, and emits the two reporting views (mean over
doppler bins excluding 0, and the doppler-0 row) with Wilson confidence
intervals on pooled counts.

Fresh clutter is drawn per trial and, by default, per detector (no common
random numbers across detectors); ``crn=True`` switches every detector onto
the same H1 clutter for variance-reduced pairwise comparisons. Detector-
internal draws (latent sampling, secondary data) stay keyed by detector id
and stream either way.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng, scores as scorelib
from .cvae import CvaeModel, encode, reparameterize
from .cvnn import no_grad
from .scores import EmpiricalNullKL, EmpiricalNullMaha, Threshold
from .sigmodel import SampleBatch, Scenario, inject_target, sample_clutter

__all__ = [
    "SweepConfig",
    "DetectorReport",
    "SweepError",
    "MseDetector",
    "KldDetector",
    "MahaDetector",
    "wilson_interval",
    "calibrate_detector",
    "run_sweep",
    "report_views",
    "compare",
    "run_benchmark",
    "write_report_csv",
    "write_comparison_csv",
    "read_report_csv",
    "write_manifest",
]

_Z95 = 1.959963984540054


class SweepError(RuntimeError):
    """A detector failed inside the sweep; message carries the grid point."""


def wilson_interval(k: int, n: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for k successes in n trials."""
    if n <= 0:
        raise ValueError("need n > 0 trials")
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class SweepConfig:
    """Grid and budget for one benchmark run."""

    scenario: Scenario
    snr_grid_db: tuple
    doppler_bins: tuple | None = None
    trials: int = 2000
    target_pfa: float = 1e-2
    n_cal: int = 5000
    pfa_trials: int | None = None
    seed: int | None = None
    crn: bool = False

    def __post_init__(self):
        object.__setattr__(self, "snr_grid_db",
                           tuple(float(s) for s in self.snr_grid_db))
        if not self.snr_grid_db:
            raise ValueError("snr grid must be non-empty")
        m = self.scenario.m
        bins = (tuple(range(m)) if self.doppler_bins is None
                else tuple(int(b) for b in self.doppler_bins))
        if not bins or len(set(bins)) != len(bins):
            raise ValueError("doppler bins must be non-empty and distinct")
        if any(not 0 <= b < m for b in bins):
            raise ValueError(f"doppler bins must lie in [0, {m})")
        object.__setattr__(self, "doppler_bins", bins)
        if self.trials < 100:
            raise ValueError("need at least 100 trials per grid point")
        if not 0.0 < self.target_pfa < 0.5:
            raise ValueError("target pfa must lie in (0, 0.5)")
        if self.n_cal < 1:
            raise ValueError("calibration set must be non-empty")
        if self.pfa_trials is not None and self.pfa_trials < 1:
            raise ValueError("pfa_trials must be positive when given")
        if self.seed is None:
            object.__setattr__(self, "seed", self.scenario.seed)

    @property
    def pfa_trials_resolved(self) -> int:
        return self.trials if self.pfa_trials is None else self.pfa_trials

    @property
    def seeded_scenario(self) -> Scenario:
        return replace(self.scenario, seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "snr_grid_db": [_jnum(s) for s in self.snr_grid_db],
            "doppler_bins": list(self.doppler_bins),
            "trials": self.trials,
            "target_pfa": self.target_pfa,
            "n_cal": self.n_cal,
            "pfa_trials": self.pfa_trials_resolved,
            "seed": self.seed,
            "crn": self.crn,
        }


def _jnum(x: float):
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _pool_view(snr_grid, detections, trials, cols) -> dict:
    pooled = detections[:, cols].sum(axis=1)
    n = trials * len(cols)
    lo, hi = zip(*(wilson_interval(int(k), n) for k in pooled))
    return {
        "snr_db": [float(s) for s in snr_grid],
        "detections": [int(k) for k in pooled],
        "trials": [n] * len(snr_grid),
        "pd": [int(k) / n for k in pooled],
        "ci_lo": list(lo),
        "ci_hi": list(hi),
    }


def _build_views(snr_grid, doppler_bins, detections, trials) -> dict:
    views = {}
    rest = [i for i, b in enumerate(doppler_bins) if b != 0]
    if rest:
        views["mean_excluding_0"] = _pool_view(snr_grid, detections, trials, rest)
    if 0 in doppler_bins:
        zero = [doppler_bins.index(0)]
        views["doppler_0"] = _pool_view(snr_grid, detections, trials, zero)
    return views


@dataclass(frozen=True, eq=False)
class DetectorReport:
    """Per-grid-point detection counts plus the derived reporting views."""

    detector_id: str
    threshold: Threshold
    snr_grid_db: tuple
    doppler_bins: tuple
    trials: int
    detections: np.ndarray  # (n_snr, n_bins) int
    pfa_trials: int
    pfa_detections: int
    views: dict = field(init=False)

    def __post_init__(self):
        det = np.array(self.detections, dtype=int)
        if det.shape != (len(self.snr_grid_db), len(self.doppler_bins)):
            raise ValueError("detections table does not match the grid")
        if det.min() < 0 or det.max() > self.trials:
            raise ValueError("detections must lie in [0, trials]")
        det.setflags(write=False)
        object.__setattr__(self, "detections", det)
        object.__setattr__(self, "views", _build_views(
            self.snr_grid_db, self.doppler_bins, det, self.trials))

    @property
    def pd(self) -> np.ndarray:
        return self.detections / self.trials

    @property
    def empirical_pfa(self) -> float:
        return self.pfa_detections / self.pfa_trials

    def pooled(self, snrs, bins) -> tuple[int, int]:
        """Detection and trial counts pooled over the given grid subset."""
        rows = [self.snr_grid_db.index(float(s)) for s in snrs]
        cols = [self.doppler_bins.index(int(b)) for b in bins]
        k = int(self.detections[np.ix_(rows, cols)].sum())
        return k, self.trials * len(rows) * len(cols)


class MseDetector:
    """Reconstruction-power score from a trained model (deterministic)."""

    def __init__(self, model: CvaeModel, n_samples: int = 0, seed=None):
        self.model = model
        self.n_samples = int(n_samples)
        self.seed = model.seed if seed is None else seed
        self.detector_id = "cvae-mse"

    def scores(self, batch: SampleBatch, stream: str = "eval",
               start_index: int = 0) -> np.ndarray:
        gen = None
        if self.n_samples > 0:
            gen = rng.signal_stream(
                rng.family_key(self.seed, "mse-eps", stream), start_index)
        return scorelib.score_mse(self.model, batch.signals,
                                  n_samples=self.n_samples, gen=gen)


class KldDetector:
    """Closed-form posterior-vs-null divergence score (deterministic)."""

    def __init__(self, model: CvaeModel, null: EmpiricalNullKL):
        self.model = model
        self.null = null
        self.detector_id = "cvae-kld"

    def scores(self, batch: SampleBatch, stream: str = "eval",
               start_index: int = 0) -> np.ndarray:
        return scorelib.score_kl(self.model, self.null, batch.signals)


class MahaDetector:
    """Latent Mahalanobis score; one posterior draw per profile.

    Draws are keyed by (seed, stream, absolute row index), so scores do not
    depend on how a batch is split. ``use_mean=True`` skips sampling and
    scores the posterior mean instead.
    """

    def __init__(self, model: CvaeModel, null: EmpiricalNullMaha,
                 seed=None, use_mean: bool = False):
        self.model = model
        self.null = null
        self.seed = model.seed if seed is None else seed
        self.use_mean = use_mean
        self.detector_id = "cvae-maha"

    def _eps(self, stream: str, start_index: int, n: int):
        q = self.model.q
        family = rng.family_key(self.seed, "maha-eps", stream)
        eps_r = np.empty((n, q))
        eps_i = np.empty((n, q))
        for i in range(n):
            gen = rng.signal_stream(family, start_index + i)
            eps_r[i] = gen.standard_normal(q)
            eps_i[i] = gen.standard_normal(q)
        return eps_r, eps_i

    def scores(self, batch: SampleBatch, stream: str = "eval",
               start_index: int = 0) -> np.ndarray:
        x = batch.signals
        if self.use_mean:
            z = scorelib.latent_points(self.model, x, use_mean=True)
            return scorelib.score_maha(self.null, z)
        out = np.empty(x.shape[0])
        with no_grad():
            for lo in range(0, x.shape[0], 2048):
                hi = min(lo + 2048, x.shape[0])
                post = encode(self.model, x[lo:hi], training=False)
                eps = self._eps(stream, start_index + lo, hi - lo)
                z = reparameterize(post, eps=eps).data
                out[lo:hi] = scorelib.score_maha(self.null, z)
        return out


def calibrate_detector(detector, config: SweepConfig,
                       h0: SampleBatch | None = None) -> Threshold:
    """Threshold the detector at the target Pfa on an independent H0 set."""
    if h0 is None:
        h0 = sample_clutter(config.seeded_scenario, config.n_cal,
                            stream="cal-h0")
    s = detector.scores(h0, stream="cal", start_index=0)
    return scorelib.calibrate(s, config.target_pfa, kind=detector.detector_id)


def _grid_scores(detector, batch, stream, snr, dbin):
    try:
        return detector.scores(batch, stream=stream, start_index=0)
    except Exception as exc:
        raise SweepError(
            f"detector {detector.detector_id!r} failed at "
            f"snr={snr:g} dB, doppler bin {dbin}: {exc}") from exc


def run_sweep(config: SweepConfig, detector,
              threshold: Threshold | None = None) -> DetectorReport:
    """Pd over the SNR x Doppler grid plus a held-out empirical-Pfa block."""
    if threshold is None:
        threshold = calibrate_detector(detector, config)
    template = config.seeded_scenario
    label = "shared" if config.crn else detector.detector_id
    detections = np.zeros((len(config.snr_grid_db), len(config.doppler_bins)),
                          dtype=int)
    for si, snr in enumerate(config.snr_grid_db):
        for bi, dbin in enumerate(config.doppler_bins):
            sc = replace(template, snr_db=float(snr), doppler_bin=int(dbin))
            h0 = sample_clutter(sc, config.trials,
                                stream=f"h1/{label}/{snr:g}/{dbin}")
            h1 = inject_target(h0)
            s = _grid_scores(detector, h1, f"eval/{snr:g}/{dbin}", snr, dbin)
            detections[si, bi] = int(np.count_nonzero(s > threshold.value))
    h0 = sample_clutter(template, config.pfa_trials_resolved, stream="pfa-h0")
    try:
        s0 = detector.scores(h0, stream="pfa", start_index=0)
    except Exception as exc:
        raise SweepError(f"detector {detector.detector_id!r} failed on the "
                         f"held-out H0 block: {exc}") from exc
    pfa_detections = int(np.count_nonzero(s0 > threshold.value))
    return DetectorReport(
        detector_id=detector.detector_id, threshold=threshold,
        snr_grid_db=config.snr_grid_db, doppler_bins=config.doppler_bins,
        trials=config.trials, detections=detections,
        pfa_trials=config.pfa_trials_resolved, pfa_detections=pfa_detections)


def report_views(report: DetectorReport) -> tuple[dict, dict]:
    """The two standard curves: mean over bins except 0, and the bin-0 row."""
    views = _build_views(report.snr_grid_db, report.doppler_bins,
                         report.detections, report.trials)
    if "mean_excluding_0" not in views or "doppler_0" not in views:
        missing = {"mean_excluding_0", "doppler_0"} - set(views)
        raise ValueError(f"grid cannot produce views: missing {sorted(missing)}")
    return views["mean_excluding_0"], views["doppler_0"]


def compare(reports) -> list:
    """Rank detectors per (view, SNR); flag non-overlapping 95% intervals.

    Returns rows of dicts ordered by view, SNR, then descending pd. A row's
    ``separated`` is True when its interval lies strictly above the interval
    of the next-ranked detector.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to compare")
    ref = reports[0]
    for r in reports[1:]:
        if (r.snr_grid_db != ref.snr_grid_db
                or r.doppler_bins != ref.doppler_bins
                or r.trials != ref.trials):
            raise ValueError(
                f"grid mismatch between {ref.detector_id!r} and {r.detector_id!r}")
    rows = []
    for view in ("mean_excluding_0", "doppler_0"):
        if any(view not in r.views for r in reports):
            continue
        for si, snr in enumerate(ref.snr_grid_db):
            entries = sorted(
                ((r.views[view]["pd"][si], r.views[view]["ci_lo"][si],
                  r.views[view]["ci_hi"][si], r.detector_id) for r in reports),
                key=lambda e: (-e[0], e[3]))
            for rank, (pd, lo, hi, det) in enumerate(entries, start=1):
                separated = rank < len(entries) and lo > entries[rank][2]
                rows.append({"view": view, "snr_db": float(snr), "rank": rank,
                             "detector": det, "pd": pd, "ci_lo": lo,
                             "ci_hi": hi, "separated": separated})
    return rows


def run_benchmark(config: SweepConfig, detectors) -> dict:
    """Calibrate and sweep each detector on one shared calibration set."""
    h0_cal = sample_clutter(config.seeded_scenario, config.n_cal,
                            stream="cal-h0")
    thresholds, reports = {}, []
    for det in detectors:
        thr = calibrate_detector(det, config, h0=h0_cal)
        thresholds[det.detector_id] = thr
        reports.append(run_sweep(config, det, threshold=thr))
    return {"thresholds": thresholds, "reports": reports,
            "comparison": compare(reports)}


def write_report_csv(path, reports) -> None:
    """Per-grid-point rows with Wilson intervals; the plotting contract."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detector", "snr_db", "doppler_bin", "trials",
                    "detections", "pd", "ci_lo", "ci_hi"])
        for r in reports:
            for si, snr in enumerate(r.snr_grid_db):
                for bi, dbin in enumerate(r.doppler_bins):
                    k = int(r.detections[si, bi])
                    lo, hi = wilson_interval(k, r.trials)
                    w.writerow([r.detector_id, f"{snr:g}", dbin, r.trials, k,
                                repr(k / r.trials), repr(lo), repr(hi)])


def write_comparison_csv(path, rows) -> None:
    """Ranking rows from compare() as CSV (separated flag as 0/1)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "snr_db", "rank", "detector", "pd",
                    "ci_lo", "ci_hi", "separated"])
        for r in rows:
            w.writerow([r["view"], f"{r['snr_db']:g}", r["rank"],
                        r["detector"], repr(r["pd"]), repr(r["ci_lo"]),
                        repr(r["ci_hi"]), int(r["separated"])])


def read_report_csv(csv_path, manifest_path) -> list:
    """Rebuild DetectorReports from a report CSV and its JSON manifest."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "radood-bench":
        raise ValueError(f"{manifest_path} is not a benchmark manifest")
    table = {}
    with open(csv_path, newline="") as fh:
        rd = csv.DictReader(fh)
        need = {"detector", "snr_db", "doppler_bin", "trials", "detections"}
        if rd.fieldnames is None or not need.issubset(rd.fieldnames):
            raise ValueError(f"{csv_path} is not a benchmark report")
        for row in rd:
            ent = table.setdefault(row["detector"],
                                   {"snrs": [], "bins": [], "counts": {},
                                    "trials": int(row["trials"])})
            snr, dbin = float(row["snr_db"]), int(row["doppler_bin"])
            if snr not in ent["snrs"]:
                ent["snrs"].append(snr)
            if dbin not in ent["bins"]:
                ent["bins"].append(dbin)
            ent["counts"][(snr, dbin)] = int(row["detections"])
            if int(row["trials"]) != ent["trials"]:
                raise ValueError("trials differ across grid points")
    reports = []
    for det, ent in table.items():
        detections = np.array([[ent["counts"][(s, b)] for b in ent["bins"]]
                               for s in ent["snrs"]], dtype=int)
        pfa = manifest["empirical_pfa"][det]
        reports.append(DetectorReport(
            detector_id=det,
            threshold=Threshold.from_dict(manifest["thresholds"][det]),
            snr_grid_db=tuple(ent["snrs"]), doppler_bins=tuple(ent["bins"]),
            trials=ent["trials"], detections=detections,
            pfa_trials=int(pfa["trials"]),
            pfa_detections=int(pfa["detections"])))
    return reports


def write_manifest(path, config: SweepConfig, reports,
                   extra: dict | None = None) -> None:
    """JSON sidecar: resolved config, seeds, thresholds, empirical Pfa."""
    doc = {
        "format": "radood-bench",
        "version": 1,
        "config": config.to_dict(),
        "seeds": {"seed": config.seed, "crn": config.crn,
                  "h1_stream": "h1/{detector|shared}/{snr}/{bin}",
                  "calibration_stream": "cal-h0", "pfa_stream": "pfa-h0"},
        "thresholds": {r.detector_id: r.threshold.to_dict() for r in reports},
        "empirical_pfa": {
            r.detector_id: {"trials": r.pfa_trials,
                            "detections": r.pfa_detections,
                            "pfa": r.empirical_pfa}
            for r in reports},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
