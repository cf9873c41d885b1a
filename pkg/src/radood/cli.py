"""Command-line front end: generate -> train -> calibrate -> evaluate -> compare.

Each command reads one JSON config file; sections mirror the library types
(scenario, train, calibrate, evaluate, compare) and unset keys fall back to
the published experiment defaults. ``--set section.key=value`` overrides
individual entries, ``--print-config`` dumps the fully resolved
configuration without running, and every run writes that same resolved
config next to its outputs. Relative output paths land under --out-root
(or $RADOOD_OUT, default "."), inputs resolve against the cwd.

Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 I/O error.

Heavy imports happen inside the command handlers so that ``--threads`` can
cap the BLAS pool via environment variables before numpy loads.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

__all__ = ["main", "resolve_config", "DEFAULTS"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")

_CVAE_KINDS = ("cvae-mse", "cvae-kld", "cvae-maha")
_ANMF_KINDS = ("anmf-fp", "anmf-scm")

DEFAULTS = {
    "scenario": {"m": 16, "rho": 0.5, "clutter_kind": "cGN",
                 "texture_shape": 1.0, "cnr_db": 15.0, "snr_db": 0.0,
                 "doppler_bin": 0, "seed": 0},
    "generate": {"n": 15000, "stream": "train", "hypothesis": "H0",
                 "out": "dataset.ciq"},
    "train": {"data": "dataset.ciq", "epochs": 50, "lr": 1e-3, "batch": 128,
              "beta": 100.0, "q": 12, "seed": 0, "train_frac": 2.0 / 3.0,
              "resume": False, "checkpoint": "model.cvn",
              "log": "train_log.csv"},
    "calibrate": {"detector": "cvae-mse", "checkpoint": "model.cvn",
                  "target_pfa": 0.01, "n_cal": 5000, "null_fit_n": 5000,
                  "use_mean": False, "k_secondary": None,
                  "estimator": "tyler", "seed": None,
                  "out": "calibration.json"},
    "evaluate": {"snr_grid_db": [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
                 "doppler_bins": None, "trials": 2000, "pfa_trials": None,
                 "crn": False, "seed": None, "detectors": [],
                 "out_dir": "report"},
    "compare": {"reports": [], "out": None},
}


class ConfigError(ValueError):
    """Bad configuration: unknown keys, invalid values, missing sections."""


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in out and path in ("scenario", "generate", "train",
                                        "calibrate", "evaluate", "compare"):
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out.get(key), dict) and isinstance(val, dict):
            out[key] = _deep_merge(out[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    dotted, raw = text.split("=", 1)
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigError(f"bad --set path {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return keys, value


def _apply_override(cfg: dict, keys, value) -> None:
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"no config section {'.'.join(keys[:-1])!r}")
        node = node[key]
    node[keys[-1]] = value


def resolve_config(path=None, overrides=()) -> dict:
    """Defaults <- config file <- --set overrides, fully materialized."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _deep_merge(cfg, loaded)
    for text in overrides:
        keys, value = _parse_override(text)
        _apply_override(cfg, keys, value)
    return cfg


def _out_path(path, root):
    return path if os.path.isabs(path) else os.path.join(root, path)


def _write_resolved(cfg: dict, dest: str) -> None:
    os.makedirs(os.path.dirname(dest) or ".", exist_ok=True)
    with open(dest, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _scenario(cfg: dict):
    from .sigmodel import Scenario
    try:
        return Scenario.from_dict(cfg["scenario"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario: {exc}")


def cmd_generate(cfg: dict, root: str) -> int:
    from .sigmodel import inject_target, sample_clutter, write_iq
    sc = _scenario(cfg)
    gen = cfg["generate"]
    n = int(gen["n"])
    if n < 1:
        raise ConfigError("generate.n must be positive")
    if gen["hypothesis"] not in ("H0", "H1"):
        raise ConfigError("generate.hypothesis must be 'H0' or 'H1'")
    batch = sample_clutter(sc, n, stream=gen["stream"])
    if gen["hypothesis"] == "H1":
        batch = inject_target(batch)
    out = _out_path(gen["out"], root)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_iq(out, batch.signals)
    _write_resolved(cfg, out + ".config.json")
    print(f"wrote {n} profiles (m={sc.m}, {gen['hypothesis']}) to {out}")
    return EXIT_OK


def cmd_train(cfg: dict, root: str) -> int:
    from .cvae import CvaeModel, TrainConfig, train
    from .sigmodel import load_iq
    tr = cfg["train"]
    tc = TrainConfig(epochs=int(tr["epochs"]), lr=float(tr["lr"]),
                     batch=int(tr["batch"]), beta=float(tr["beta"]),
                     q=int(tr["q"]), seed=int(tr["seed"]),
                     train_frac=float(tr["train_frac"]),
                     val_frac=1.0 - float(tr["train_frac"]))
    data_path = tr["data"]
    if not os.path.exists(data_path):
        print(f"error: dataset not found: {data_path}", file=sys.stderr)
        return EXIT_IO
    data = load_iq(data_path)
    ckpt = _out_path(tr["checkpoint"], root)
    log = _out_path(tr["log"], root)
    os.makedirs(os.path.dirname(ckpt) or ".", exist_ok=True)
    os.makedirs(os.path.dirname(log) or ".", exist_ok=True)
    start_epoch = 1
    if tr["resume"]:
        if not os.path.exists(ckpt):
            print(f"error: no checkpoint to resume: {ckpt}", file=sys.stderr)
            return EXIT_IO
        model = CvaeModel.load(ckpt)
        done = int(model.loaded_meta.get("epochs_done", 0))
        start_epoch = done + 1
        remaining = max(0, tc.epochs - done)
        tc = TrainConfig(epochs=remaining, lr=tc.lr, batch=tc.batch,
                         beta=tc.beta, q=model.q, seed=tc.seed,
                         train_frac=tc.train_frac, val_frac=tc.val_frac)
    else:
        model = CvaeModel(q=tc.q, m=data.shape[1], beta=tc.beta, seed=tc.seed)
    if tc.epochs == 0:
        print(f"checkpoint already at epoch {start_epoch - 1}; nothing to do")
        return EXIT_OK
    history = train(model, data, tc, log_path=log, checkpoint_path=ckpt,
                    start_epoch=start_epoch)
    _write_resolved(cfg, ckpt + ".config.json")
    last = history["epoch"][-1]
    print(f"trained through epoch {last} (val loss {history['val_loss'][-1]:.6g}); "
          f"checkpoint {ckpt}, log {log}")
    return EXIT_OK


def _load_model(path):
    from .cvae import CvaeModel
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return CvaeModel.load(path)


def _fit_null(kind, model, scenario, cal: dict):
    from . import rng, scores
    from .sigmodel import sample_clutter
    if kind not in ("cvae-kld", "cvae-maha"):
        return None
    n = int(cal["null_fit_n"])
    profiles = sample_clutter(scenario, n, stream="null-fit").signals
    if kind == "cvae-kld":
        return scores.fit_null_kl(model, profiles)
    gen = rng.derive(scenario.seed, "maha-fit")
    return scores.fit_null_maha(model, profiles, gen=gen,
                                use_mean=bool(cal["use_mean"]))


def _make_detector(kind, scenario, cal: dict, model=None, null=None):
    from . import bench, classical
    if kind == "cvae-mse":
        return bench.MseDetector(model)
    if kind == "cvae-kld":
        return bench.KldDetector(model, null)
    if kind == "cvae-maha":
        return bench.MahaDetector(model, null, seed=scenario.seed,
                                  use_mean=bool(cal["use_mean"]))
    if kind in _ANMF_KINDS:
        estimator = "tyler" if kind == "anmf-fp" else "scm"
        k = cal["k_secondary"]
        return classical.anmf_fp_detector(
            scenario, k=None if k is None else int(k), estimator=estimator)
    raise ConfigError(f"unknown detector kind {kind!r}")


def cmd_calibrate(cfg: dict, root: str) -> int:
    from . import scores
    from .sigmodel import sample_clutter
    cal = cfg["calibrate"]
    kind = cal["detector"]
    if kind not in _CVAE_KINDS + _ANMF_KINDS:
        raise ConfigError(f"unknown detector kind {kind!r}")
    sc = _scenario(cfg)
    if cal["seed"] is not None:
        from dataclasses import replace
        sc = replace(sc, seed=int(cal["seed"]))
    model = _load_model(cal["checkpoint"]) if kind in _CVAE_KINDS else None
    null = _fit_null(kind, model, sc, cal)
    det = _make_detector(kind, sc, cal, model=model, null=null)
    h0 = sample_clutter(sc, int(cal["n_cal"]), stream="cal-h0")
    thr = scores.calibrate(det.scores(h0, stream="cal"),
                           float(cal["target_pfa"]), kind=kind)
    out = _out_path(cal["out"], root)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    scores.save_calibration(
        out, kind, thr, null=null,
        seeds={"seed": sc.seed, "cal_stream": "cal-h0",
               "null_stream": "null-fit"},
        extra={"scenario": sc.to_dict(),
               "checkpoint": cal["checkpoint"] if kind in _CVAE_KINDS else None})
    _write_resolved(cfg, out + ".config.json")
    print(f"{kind}: threshold {thr.value:.8g} at pfa {thr.target_pfa:g} "
          f"(order statistic {thr.k} of {thr.n_cal}) -> {out}")
    return EXIT_OK


def cmd_evaluate(cfg: dict, root: str) -> int:
    from . import bench, scores
    ev = cfg["evaluate"]
    if not ev["detectors"]:
        raise ConfigError("evaluate.detectors must list at least one detector")
    sc = _scenario(cfg)
    if ev["seed"] is not None:
        from dataclasses import replace
        sc = replace(sc, seed=int(ev["seed"]))
    entries = []
    target_pfa, n_cal = None, None
    for spec in ev["detectors"]:
        if "kind" not in spec or "calibration" not in spec:
            raise ConfigError("each detector needs 'kind' and 'calibration'")
        kind = spec["kind"]
        doc = scores.load_calibration(spec["calibration"])
        if doc["kind"] != kind:
            raise ConfigError(
                f"calibration {spec['calibration']} is for {doc['kind']!r}, "
                f"not {kind!r}")
        thr = doc["threshold"]
        if target_pfa is None:
            target_pfa, n_cal = thr.target_pfa, thr.n_cal
        elif thr.target_pfa != target_pfa:
            raise ConfigError("detectors were calibrated at different pfa")
        cal = dict(DEFAULTS["calibrate"])
        cal.update({k: v for k, v in spec.items()
                    if k in ("use_mean", "k_secondary")})
        model = _load_model(spec["checkpoint"]) if kind in _CVAE_KINDS else None
        det = _make_detector(kind, sc, cal, model=model, null=doc.get("null"))
        entries.append((det, thr))
    sweep = bench.SweepConfig(
        scenario=sc, snr_grid_db=tuple(ev["snr_grid_db"]),
        doppler_bins=None if ev["doppler_bins"] is None
        else tuple(ev["doppler_bins"]),
        trials=int(ev["trials"]), target_pfa=target_pfa, n_cal=n_cal,
        pfa_trials=None if ev["pfa_trials"] is None else int(ev["pfa_trials"]),
        seed=sc.seed, crn=bool(ev["crn"]))
    reports = [bench.run_sweep(sweep, det, threshold=thr)
               for det, thr in entries]
    out_dir = _out_path(ev["out_dir"], root)
    os.makedirs(out_dir, exist_ok=True)
    bench.write_report_csv(os.path.join(out_dir, "report.csv"), reports)
    bench.write_manifest(os.path.join(out_dir, "manifest.json"), sweep, reports)
    bench.write_comparison_csv(os.path.join(out_dir, "comparison.csv"),
                               bench.compare(reports))
    _write_resolved(cfg, os.path.join(out_dir, "resolved-config.json"))
    for r in reports:
        print(f"{r.detector_id}: empirical pfa {r.empirical_pfa:.4g} "
              f"({r.pfa_detections}/{r.pfa_trials})")
    print(f"report written to {out_dir}")
    return EXIT_OK


def cmd_compare(cfg: dict, root: str) -> int:
    from . import bench
    cmp_cfg = cfg["compare"]
    if not cmp_cfg["reports"]:
        raise ConfigError("compare.reports must list report directories")
    reports = []
    for entry in cmp_cfg["reports"]:
        if os.path.isdir(entry):
            csv_path = os.path.join(entry, "report.csv")
            man_path = os.path.join(entry, "manifest.json")
        elif os.path.isfile(entry):
            csv_path = entry
            man_path = os.path.join(os.path.dirname(entry), "manifest.json")
        else:
            raise FileNotFoundError(f"report not found: {entry}")
        reports.extend(bench.read_report_csv(csv_path, man_path))
    try:
        rows = bench.compare(reports)
    except ValueError as exc:
        raise ConfigError(str(exc))
    out = cmp_cfg["out"]
    if out is None:
        for r in rows:
            print(f"{r['view']:17s} snr={r['snr_db']:>6g} #{r['rank']} "
                  f"{r['detector']:10s} pd={r['pd']:.4f} "
                  f"[{r['ci_lo']:.4f}, {r['ci_hi']:.4f}]"
                  + ("  *" if r["separated"] else ""))
    else:
        out = _out_path(out, root)
        os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
        bench.write_comparison_csv(out, rows)
        _write_resolved(cfg, out + ".config.json")
        print(f"comparison written to {out}")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radood",
        description="Radar OOD detection benchmark: synthetic scenes, "
                    "complex-valued VAE training, detector calibration, "
                    "and Pd/Pfa evaluation.")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", "-c", default=None,
                        help="JSON config file (defaults used where unset)")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="SECTION.KEY=VALUE",
                        help="override one resolved config entry")
    parser.add_argument("--print-config", action="store_true",
                        help="dump the fully resolved config and exit")
    parser.add_argument("--out-root", default=None,
                        help="root for relative output paths "
                             "(default $RADOOD_OUT or '.')")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP worker threads")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        for var in _THREAD_VARS:
            os.environ.setdefault(var, str(args.threads))
    root = args.out_root or os.environ.get("RADOOD_OUT", ".")
    try:
        cfg = resolve_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.print_config:
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return EXIT_OK
    try:
        return _COMMANDS[args.command](cfg, root)
    except Exception as exc:
        code = _classify(exc)
        if code is None:
            raise
        label = {EXIT_CONFIG: "config error", EXIT_NUMERIC: "numeric failure",
                 EXIT_IO: "I/O error"}[code]
        print(f"{label}: {exc}", file=sys.stderr)
        return code


def _classify(exc) -> int | None:
    from .cvnn import CheckpointError
    from .sigmodel import IqFormatError
    if isinstance(exc, (IqFormatError, CheckpointError, OSError)):
        return EXIT_IO
    if isinstance(exc, FloatingPointError):
        return EXIT_NUMERIC
    if isinstance(exc, (ConfigError, ValueError, TypeError, KeyError)):
        return EXIT_CONFIG
    if isinstance(exc, RuntimeError):
        return EXIT_NUMERIC
    return None


if __name__ == "__main__":
    sys.exit(main())
