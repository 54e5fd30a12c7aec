"""Command-line entry points: ``run``, ``verify`` and ``selftest``.

Exit codes: 0 success, 1 selftest failure or certificate mismatch,
2 line-search stall, 3 invalid configuration, 4 checkpoint error.
"""

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .checkpoint import load_control, load_trajectory, save_control, save_trajectory
from .config import build, load_config, parse_config, resolve_path, tomllib
from .control import ControlTrajectory
from .dynamics import AdjointTrajectory, StateTrajectory
from .errors import CheckpointError, ConfigurationError, LineSearchStall
from .penalty import OptimizationReport, continuation_solve, extract_multiplier
from .selftest import FAULTS, format_results, run_selftest
from .verify import build_certificate

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_STALL = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4

PROFILE_COLUMNS = (
    "step",
    "t",
    "active",
    "singular",
    "omega_norm",
    "feasibility",
    "mu",
    "colinearity",
    "complementarity",
    "stationarity",
)

log = logging.getLogger("nscopt")


def _clean(obj):
    """Replace non-finite floats by ``None`` so the JSON is standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def certificate_json(cert):
    d = cert.to_dict()
    d["passed"] = cert.passed
    return dumps(d)


def _profile_rows(cert, tg, omega):
    mags = omega.magnitudes()
    rows = []
    for m, t in enumerate(tg.times):
        rows.append(
            {
                "step": m,
                "t": float(t),
                "active": cert.active_mask[m],
                "singular": m in cert.singular_flags,
                "omega_norm": float(mags[m]),
                "feasibility": cert.feasibility_profile[m],
                "mu": cert.mu_profile[m],
                "colinearity": cert.colinearity_profile[m],
                "complementarity": cert.complementarity_profile[m],
                "stationarity": cert.stationarity_profile[m],
            }
        )
    return rows


def _save_level(out, j, level, tg):
    d = out / "checkpoints" / f"level_{j}"
    d.mkdir(parents=True, exist_ok=True)
    save_control(d / "control.npy", level.control)
    save_trajectory(d / "state.traj", level.state.fields, tg.T, tg.M)
    save_trajectory(d / "adjoint.traj", level.adjoint.fields, tg.T, tg.M)
    if level.penalty_source:
        save_trajectory(d / "omega.traj", level.penalty_source, tg.T, tg.M)


def _write_reports(out, report, summary):
    _write_csv(out / "report.csv", OptimizationReport.ROW_COLUMNS, report.rows)
    _write_csv(out / "levels.csv", OptimizationReport.LEVEL_COLUMNS, report.levels)
    (out / "summary.json").write_text(dumps(summary))


def cmd_run(config, out=None):
    try:
        path = resolve_path(config)
        cfg = load_config(path)
        problem = build(cfg, base_dir=path.parent)
    except ConfigurationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out or problem.output.get("directory", "nscopt_out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.source)
    (out / "run.json").write_text(dumps({"config_dir": str(path.parent.resolve())}))
    data, tg, K, h = problem.data, problem.time_grid, problem.constraint, problem.cost
    write_ckpt = problem.output.get("checkpoints", True)
    summary = {"status": "ok", "complete": True, "schedule": list(problem.penalty.schedule)}
    try:
        result = continuation_solve(data, K, h, problem.initial_control(), problem.penalty)
    except LineSearchStall as exc:
        partial = getattr(exc, "partial", None)
        report = partial.report if partial is not None else OptimizationReport()
        summary.update(status="stall", complete=False, stall=exc.diagnostics, levels=report.levels)
        if partial is not None and write_ckpt:
            for j, level in enumerate(partial.levels):
                _save_level(out, j, level, tg)
        _write_reports(out, report, summary)
        print(f"solver stalled: {exc}", file=sys.stderr)
        return EXIT_STALL
    if write_ckpt:
        for j, level in enumerate(result.levels):
            _save_level(out, j, level, tg)
    cert = build_certificate(data, K, h, result.control, result.state, result.adjoint, result.multiplier, problem.tolerances)
    summary.update(
        levels=result.report.levels,
        final_level=len(result.levels) - 1,
        final_lambda=result.levels[-1].lam,
        certificate_passed=cert.passed,
    )
    _write_reports(out, result.report, summary)
    (out / "certificate.json").write_text(certificate_json(cert))
    if problem.output.get("profiles", True):
        _write_csv(out / "profiles.csv", PROFILE_COLUMNS, _profile_rows(cert, tg, result.multiplier))
    print(f"run complete: {len(result.levels)} levels, certificate {'passed' if cert.passed else 'FAILED'}")
    print(f"artifacts written to {out}")
    return EXIT_OK


def recompute_certificate(directory):
    """Rebuild the certificate from the checkpoints of a finished run."""
    d = Path(directory)
    if not d.is_dir():
        raise CheckpointError(f"{d} is not a directory")
    try:
        summary = json.loads((d / "summary.json").read_text())
        source = (d / "config.toml").read_text()
        base = Path(json.loads((d / "run.json").read_text())["config_dir"])
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{d}: missing or unreadable run metadata ({exc})") from exc
    if summary.get("status") != "ok" or "final_level" not in summary:
        raise CheckpointError(f"{d}: run did not complete; no final checkpoint")
    try:
        cfg = parse_config(tomllib.loads(source), source, base_dir=base)
    except tomllib.TOMLDecodeError as exc:
        raise CheckpointError(f"{d}/config.toml: corrupt ({exc})") from exc
    problem = build(cfg, base_dir=base)
    data, tg, K, h = problem.data, problem.time_grid, problem.constraint, problem.cost
    lvl = d / "checkpoints" / f"level_{summary['final_level']}"
    lam = summary["final_lambda"]
    u = ControlTrajectory(load_control(lvl / "control.npy", data.space.shape), tg.dt)
    state, adjoint, omega = [], [], ()
    for name, target in (("state", state), ("adjoint", adjoint)):
        fields, T, M = load_trajectory(lvl / f"{name}.traj")
        if M != tg.M or T != tg.T or len(fields) != M + 1 or fields[0].grid != data.grid:
            raise CheckpointError(f"{lvl / name}.traj: does not match the configured grid/time grid")
        target.extend(fields)
    if u.M != tg.M:
        raise CheckpointError(f"{lvl}/control.npy: {u.M} steps, expected {tg.M}")
    if (lvl / "omega.traj").exists():
        omega, _, _ = load_trajectory(lvl / "omega.traj")
        if len(omega) != tg.M + 1:
            raise CheckpointError(f"{lvl}/omega.traj: wrong length")
    st = StateTrajectory(tuple(state), tg)
    adj = AdjointTrajectory(tuple(adjoint), tg)
    mult = extract_multiplier(K, st, omega, lam, problem.penalty.singular_factor)
    return build_certificate(data, K, h, u, st, adj, mult, problem.tolerances)


def cmd_verify(directory):
    d = Path(directory)
    try:
        cert = recompute_certificate(d)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ConfigurationError as exc:
        print(f"checkpoint error: stored configuration invalid ({exc})", file=sys.stderr)
        return EXIT_CHECKPOINT
    text = certificate_json(cert)
    (d / "certificate.recomputed.json").write_text(text)
    stored = d / "certificate.json"
    same = stored.exists() and stored.read_text() == text
    for key, ok in sorted(cert.checks.items()):
        print(f"{key:<24} {'PASS' if ok else 'FAIL'}")
    print(f"certificate identical to run-time certificate: {'yes' if same else 'no'}")
    return EXIT_OK if same else EXIT_FAIL


def cmd_selftest(fast=False, fault=None):
    sizes = (8,) if fast else (8, 16)
    ok = True
    for n in sizes:
        results = run_selftest(n, fault)
        print(f"selftest n={n}")
        print(format_results(results))
        ok &= all(r.passed for r in results)
    print("selftest", "PASSED" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None):
    parser = argparse.ArgumentParser(prog="nscopt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="solve the penalized control problem and certify the result")
    p_run.add_argument("--config", required=True, help="TOML config file or shipped scenario name")
    p_run.add_argument("--out", help="output directory (overrides [output] directory)")
    p_ver = sub.add_parser("verify", help="recompute the certificate from run checkpoints")
    p_ver.add_argument("--dir", required=True)
    p_self = sub.add_parser("selftest", help="fast invariant battery")
    p_self.add_argument("--fast", action="store_true", help="n=8 only")
    p_self.add_argument("--inject-fault", choices=FAULTS, help=argparse.SUPPRESS)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out)
    if args.command == "verify":
        return cmd_verify(args.dir)
    return cmd_selftest(args.fast, args.inject_fault)


if __name__ == "__main__":
    sys.exit(main())
