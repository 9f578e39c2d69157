"""Command-line surface: run / resume / verify / diag / oracle / manufacture.

Exit codes partition failure modes for scripted sweeps: 0 success, 1 usage,
2 configuration, 3 flow breakdown, 4 step limit without convergence,
5 verification or diagnostics failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import checkpoint as ckpt
from . import config as config_mod
from . import diagnostics
from . import fields
from . import flow
from . import oracles
from .diagnostics import CSV_COLUMNS, DiagnosticsRecord
from .errors import (
    EXIT_BREAKDOWN,
    EXIT_CONFIG,
    EXIT_NONCONVERGED,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VERIFICATION,
    AdmissibilityError,
    CheckpointError,
    ConfigError,
    DiagnosticsError,
    FlowBreakdownError,
    HktflowError,
    InvalidBError,
    MalformedInputError,
)


class Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the artifact reserves 2 for config."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = Parser(prog="hktflow", description="Parabolic flows on the quaternionic torus.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p_run = sub.add_parser("run", help="run a flow from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides config out_dir)")
    p_run.add_argument("--force", action="store_true",
                       help="downgrade subsolution failures to warnings")

    p_resume = sub.add_parser("resume", help="continue a run from a checkpoint")
    p_resume.add_argument("checkpoint")
    p_resume.add_argument("--config", required=True)
    p_resume.add_argument("--out", help="output directory (overrides config out_dir)")
    p_resume.add_argument("--force", action="store_true")

    p_verify = sub.add_parser("verify", help="stationary-equation residual at a checkpoint")
    p_verify.add_argument("checkpoint")
    p_verify.add_argument("--config", required=True)

    p_diag = sub.add_parser("diag", help="post-hoc detectors over a history CSV")
    p_diag.add_argument("csv")
    p_diag.add_argument("--tol-osc", type=float, default=1e-8)

    p_oracle = sub.add_parser("oracle", help="independent-oracle self checks")
    p_oracle.add_argument("--seed", type=int, default=0)
    p_oracle.add_argument("--trials", type=int, default=20)

    p_man = sub.add_parser("manufacture", help="emit the data field h for a config")
    p_man.add_argument("config")
    p_man.add_argument("--out", required=True, help="output .npy path")
    return parser


def _resolve_out(args, cfg):
    out = args.out or cfg.out_dir
    if out is None:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    os.makedirs(out, exist_ok=True)
    return out


def _open_history(path, resume=False):
    exists = os.path.exists(path)
    fh = open(path, "a" if resume else "w", newline="", encoding="utf-8")
    writer = csv.writer(fh)
    if not (resume and exists):
        writer.writerow(CSV_COLUMNS)
    return fh, writer


def _execute(problem, cfg, out_dir, start_state=None, resume=False):
    history_path = os.path.join(out_dir, "history.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.hktf")
    fh, writer = _open_history(history_path, resume=resume)
    t0 = time.time()
    try:
        result = flow.run(
            problem,
            start_state=start_state,
            on_record=lambda rec: (writer.writerow(rec.as_row()), fh.flush()),
            on_checkpoint=lambda state: ckpt.save_checkpoint(ckpt_path, state),
            checkpoint_every=cfg.checkpoint_every,
        )
    finally:
        fh.close()
    wall = time.time() - t0
    ev = result.state.last_eval
    summary = {
        "converged": result.converged,
        "steps": result.state.step,
        "t": result.state.t,
        "b": result.b,
        "residual": result.residual,
        "theta_final": float(np.max(ev.rhs) - np.min(ev.rhs)),
        "cone_margin": ev.margin,
        "B": result.B,
        "initial_range": list(result.initial_range),
        "wall_seconds": wall,
        "history_csv": history_path,
        "checkpoint": ckpt_path,
    }
    with open(os.path.join(out_dir, "result.json"), "w", encoding="utf-8") as jfh:
        json.dump(summary, jfh, indent=2)
        jfh.write("\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def cmd_run(args):
    cfg = config_mod.load_config_file(args.config)
    if args.force:
        cfg.problem.force = True
    out_dir = _resolve_out(args, cfg)
    return _execute(cfg.problem, cfg, out_dir)


def cmd_resume(args):
    cfg = config_mod.load_config_file(args.config)
    if args.force:
        cfg.problem.force = True
    problem = cfg.problem
    data = ckpt.load_checkpoint(args.checkpoint, grid=problem.grid)
    ev = flow.evaluate(problem, data.values, need_grad_sum=True)
    if ev.rhs is None:
        raise CheckpointError(
            f"checkpoint state is not admissible (margin {ev.margin:.6e})"
        )
    state = flow.FlowState(
        phi=fields.ScalarField(problem.grid, data.values),
        t=data.t, step=data.step, dt=0.0, last_eval=ev,
    )
    out_dir = _resolve_out(args, cfg)
    return _execute(problem, cfg, out_dir, start_state=state, resume=True)


def cmd_verify(args):
    cfg = config_mod.load_config_file(args.config)
    problem = cfg.problem
    data = ckpt.load_checkpoint(args.checkpoint, grid=problem.grid)
    phi = fields.ScalarField(problem.grid, data.values)
    try:
        report = diagnostics.verify_elliptic(phi, problem)
    except AdmissibilityError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    threshold = 10.0 * cfg.tol_osc
    passed = report.residual < threshold
    print(json.dumps({
        "b": report.b,
        "residual": report.residual,
        "threshold": threshold,
        "cone_margin": report.cone_margin,
        "mult_gap": report.mult_gap,
        "passed": passed,
    }, indent=2))
    return EXIT_OK if passed else EXIT_VERIFICATION


def _read_history(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_COLUMNS):
            raise MalformedInputError(
                f"{path}: header {header} does not match {list(CSV_COLUMNS)}"
            )
        return [DiagnosticsRecord.from_row(row) for row in reader]


def cmd_diag(args):
    history = _read_history(args.csv)
    if not history:
        raise MalformedInputError(f"{args.csv}: no records")
    report = {}
    try:
        fit = diagnostics.fit_decay(history, tol_osc=args.tol_osc)
        report["decay"] = {
            "delta_hat": fit.delta_hat, "c_hat": fit.c_hat,
            "r2": fit.r2, "window": list(fit.window),
        }
    except DiagnosticsError as exc:
        report["decay"] = {"skipped": str(exc)}
    mp = diagnostics.check_max_principle(history)
    report["max_principle"] = {"passed": mp.passed, "detail": mp.detail}
    B = 1.0 + abs(min(history[0].rhs_min, 0.0))
    try:
        ha = diagnostics.check_harnack_monotone(history, B, tol_osc=args.tol_osc)
        report["harnack"] = {
            "passed": ha.passed, "q": ha.q,
            "sup_monotone": ha.sup_monotone, "inf_monotone": ha.inf_monotone,
        }
        harnack_ok = ha.passed
    except InvalidBError as exc:
        report["harnack"] = {"passed": False, "error": str(exc)}
        harnack_ok = False
    ap = diagnostics.track_apriori(history)
    report["apriori"] = {"passed": ap.passed, "series": ap.series}
    print(json.dumps(report, indent=2))
    ok = mp.passed and harnack_ok and ap.passed
    return EXIT_OK if ok else EXIT_VERIFICATION


def cmd_oracle(args):
    checks = oracles.run_suite(seed=args.seed, trials=args.trials)
    failed = 0
    for c in checks:
        print(f"{'PASS' if c['ok'] else 'FAIL'} {c['name']}: {c['detail']}")
        failed += 0 if c["ok"] else 1
    print(f"{len(checks) - failed}/{len(checks)} oracle checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFICATION


def cmd_manufacture(args):
    cfg = config_mod.load_config_file(args.config)
    if cfg.h.get("mode") != "manufactured":
        raise ConfigError("h.mode: manufacture requires a config with h.mode = 'manufactured'")
    h = cfg.problem.h
    directory = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(directory, exist_ok=True)
    np.save(args.out, h.values)
    print(json.dumps({
        "out": args.out,
        "shape": list(h.values.shape),
        "min": float(np.min(h.values)),
        "max": float(np.max(h.values)),
        "mean": fields.mean(h.values),
    }, indent=2))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "resume": cmd_resume,
    "verify": cmd_verify,
    "diag": cmd_diag,
    "oracle": cmd_oracle,
    "manufacture": cmd_manufacture,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MalformedInputError, CheckpointError, AdmissibilityError) as exc:
        print(f"hktflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FlowBreakdownError as exc:
        print(f"hktflow: flow breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except HktflowError as exc:
        print(f"hktflow: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
