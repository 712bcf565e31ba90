"""Batch command line: train, eval, classify, export, validate.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 validation failure. Every CSV written starts with a
``# config_hash=<hash> seed=<seed>`` comment line.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .analysis import curves_csv, population_summary
from .config import ConfigError, RunConfig, load_config
from .infotheory import NotPositiveDefiniteError, fisher_reports, fisher_reports_csv, mi_asymptotic
from .mt import mt_jacobian
from .optimizer import DensityConvergenceError, TrainingDivergedError, train
from .snapshot import ModelSnapshot, atomic_write_text
from .validate import report_json, run_suites

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VALIDATION = 0, 1, 2, 3

log = logging.getLogger("mtinfomax")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _header(config_hash, seed) -> str:
    return f"# config_hash={config_hash} seed={seed}\n"


def _write_csv(path, body, config_hash, seed):
    atomic_write_text(path, _header(config_hash, seed) + body)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _load_snapshot(path) -> ModelSnapshot:
    if path is None:
        raise UsageError("--snapshot is required")
    try:
        return ModelSnapshot.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read snapshot {path}: {exc.strerror}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(f"malformed snapshot {path}: {exc}") from None


def _check_compatible(snap: ModelSnapshot, cfg: RunConfig):
    m = snap.model
    pairs = [("n_dirs", m.grid.n_dirs, cfg.n_dirs), ("m_cells", m.v1.m_cells, cfg.m_cells),
             ("k_cells", m.k_cells, cfg.k_cells), ("sigma", m.v1.sigma, cfg.sigma)]
    bad = [f"{name}: snapshot {a} vs config {b}" for name, a, b in pairs if a != b]
    if bad:
        raise UsageError("snapshot and config dimensions differ (" + "; ".join(bad) + ")")


def _provenance(snap: ModelSnapshot, cfg: RunConfig):
    prov = snap.provenance or {}
    return prov.get("config_hash", cfg.config_hash()), prov.get("seed", cfg.seed)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args)
    h = cfg.config_hash()
    batch = cfg.batch()
    model = cfg.initial_model()
    tc = cfg.train_config()
    ckpt_dir = out / "checkpoints"

    def checkpoint(snap):
        snap.save(ckpt_dir / f"iter_{snap.provenance['iteration']:07d}.json")

    prov = {"config_hash": h, "config": cfg.canonical_text()}
    t0 = time.perf_counter()
    try:
        snap, trace = train(tc, model, batch, cfg.info(), checkpoint=checkpoint, provenance=prov)
    except TrainingDivergedError as exc:
        _write_csv(out / "trace.csv", exc.trace.to_csv(), h, cfg.seed)
        raise
    runtime = time.perf_counter() - t0
    snap.save(out / "snapshot.json")
    _write_csv(out / "trace.csv", trace.to_csv(), h, cfg.seed)
    print(f"final_Q={trace.Q[-1]:.10g} iterations={trace.iteration[-1]} runtime_s={runtime:.1f} "
          f"seed={cfg.seed} config_hash={h}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    snap = _load_snapshot(args.snapshot)
    _check_compatible(snap, cfg)
    est = mi_asymptotic(snap.model, snap.density, cfg.info(), cfg.batch())
    h, seed = _provenance(snap, cfg)
    rows = [("mi_nats", est.mi_nats), ("mean_logdet_nats", est.mean_logdet_nats),
            ("entropy_H_nats", est.entropy_H_nats), ("n_stimuli", est.n_stimuli)]
    for k, v in rows:
        print(f"{k}={v!r}")
    if args.out:
        body = "quantity,value\n" + "".join(f"{k},{v!r}\n" for k, v in rows)
        _write_csv(_out_dir(args) / "eval.csv", body, h, seed)
    return EXIT_OK


def _separations(args, cfg):
    if args.separation:
        return tuple(float(s) for s in args.separation)
    return (float(cfg.reference_separation),)


def cmd_classify(args) -> int:
    cfg = _load_run_config(args)
    snap = _load_snapshot(args.snapshot)
    requested = _separations(args, cfg)
    for s in requested:
        try:
            if s == 0:
                raise ValueError("separation 0 deg would make the two components coincide")
            snap.model.grid.separation_steps(s)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    reference = requested[0] if args.separation else float(cfg.reference_separation)
    seps = tuple(dict.fromkeys(requested + tuple(float(s) for s in cfg.classify_separations)))
    summary = population_summary(snap.model, seps, reference, cfg.thresholds(), cfg.intensity)
    h, seed = _provenance(snap, cfg)
    out = _out_dir(args)
    _write_csv(out / "summary.csv", summary.to_csv(), h, seed)
    _write_csv(out / "curves.csv", curves_csv(snap.model, requested, cfg.intensity), h, seed)
    sys.stdout.write(summary.table())
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args)
    batch = cfg.batch()
    h, seed = cfg.config_hash(), cfg.seed
    _write_csv(out / "stimuli.csv", batch.to_csv(), h, seed)
    written = ["stimuli.csv"]
    if args.snapshot:
        snap = _load_snapshot(args.snapshot)
        _check_compatible(snap, cfg)
        h, seed = _provenance(snap, cfg)
        reports = fisher_reports(snap.model, snap.density, cfg.info(), batch)
        _write_csv(out / "fisher.csv", fisher_reports_csv(reports), h, seed)
        _write_csv(out / "curves.csv",
                   curves_csv(snap.model, _separations(args, cfg), cfg.intensity), h, seed)
        written += ["fisher.csv", "curves.csv"]
    print("wrote " + ", ".join(str(out / w) for w in written))
    return EXIT_OK


def cmd_validate(args) -> int:
    results = run_suites(args.level, seed=args.seed or 0,
                         jacobian=_corrupt_jacobian if args.corrupt_jacobian else None)
    for r in results:
        print(r.line())
    if args.out:
        atomic_write_text(_out_dir(args) / "validate.json", report_json(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def _corrupt_jacobian(params, x):
    J = mt_jacobian(params, x)
    return J + 1e-3 * np.abs(J).max()


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtinfomax", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, snapshot=False, separation=False):
        sp.add_argument("--config", metavar="PATH", help="key = value run configuration")
        sp.add_argument("--out", metavar="DIR", help="output directory (default: .)")
        sp.add_argument("--seed", type=int, metavar="INT", help="override the config seed")
        if snapshot:
            sp.add_argument("--snapshot", metavar="PATH", help="model snapshot (JSON)")
        if separation:
            sp.add_argument("--separation", type=float, action="append", metavar="DEG",
                            help="bidirectional separation in degrees (repeatable)")
        return sp

    common(sub.add_parser("train", help="train a model and write snapshot + trace"))
    common(sub.add_parser("eval", help="asymptotic mutual information of a snapshot"),
           snapshot=True)
    common(sub.add_parser("classify", help="classify tuning curves of a snapshot"),
           snapshot=True, separation=True)
    common(sub.add_parser("export", help="export stimuli, Fisher reports and curves as CSV"),
           snapshot=True, separation=True)
    v = common(sub.add_parser("validate", help="run the numerical oracle suites"))
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--corrupt-jacobian", action="store_true", help=argparse.SUPPRESS)
    return p


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "classify": cmd_classify,
            "export": cmd_export, "validate": cmd_validate}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, DensityConvergenceError, NotPositiveDefiniteError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
