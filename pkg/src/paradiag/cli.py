"""Command-line driver.

Subcommands::

    run     --config FILE [--out DIR]
    sweep   --config FILE --alphas a,b,c --nts n1,n2 [--out FILE]
    psi     --nt N --dt X --theta T --alpha A [--out FILE]
    predict (--inputs FILE | --K_s ... flags) [--out FILE]

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from .aaos import write_checkpoint
from .circulant import circulant_eigenvalues, psi_ratios
from .config import load_config
from .exceptions import ConfigError, InvalidInput, ParadiagError
from .perfmodel import PerfInputs, predict
from .solvers import Paradiag

__all__ = ["main", "run", "sweep", "psi", "RUN_COLUMNS", "SWEEP_COLUMNS", "PSI_COLUMNS"]

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

RUN_COLUMNS = ("window", "m_p", "eta_mean", "k_p_max", "t_total", "t_blocks", "t_transpose")
SWEEP_COLUMNS = ("alpha", "nt", "m_p", "eta_mean", "eta_ratio", "wallclock")
PSI_COLUMNS = ("k", "re_lambda1", "im_lambda1", "re_lambda2", "im_lambda2", "re_psi", "im_psi")


def _fmt(x):
    """Shortest round-tripping text for a float; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


@contextlib.contextmanager
def _open_out(path):
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            yield fh


# --------------------------------------------------------------------------
# run


def run(config, out_dir=None):
    """Solve ``nwindows`` consecutive windows as configured.

    Writes one CSV row per window (columns :data:`RUN_COLUMNS`), one JSON
    line per window report and optional checkpoints.  Returns the list of
    window timeseries and the list of reports.
    """
    out = config.output
    csv_path, json_path, ckpt_dir = out.csv_path, out.json_path, out.checkpoint_dir
    if out_dir is not None:
        out_dir = Path(out_dir)
        csv_path = csv_path or str(out_dir / "run.csv")
        json_path = json_path or str(out_dir / "reports.jsonl")

    problem = config.build_problem()
    u0 = config.initial_state(problem)
    scheme = config.theta_scheme(problem, u0)
    driver = Paradiag(problem, scheme, config.window.nt, config.solver_options(),
                      config.preconditioner_config(problem), config.window.partition)

    with contextlib.ExitStack() as stack:
        fh = stack.enter_context(_open_out(csv_path))
        jfh = stack.enter_context(_open_out(json_path)) if json_path else None
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUN_COLUMNS)

        def record(w, u, report):
            t = report.timings if out.timings else {}
            writer.writerow([
                w, report.m_p, _fmt(report.eta_mean), _fmt(report.k_p_max),
                _fmt(t.get("T_total")), _fmt(t.get("T_blocks")), _fmt(t.get("T_transpose")),
            ])
            fh.flush()
            if jfh is not None:
                data = report.to_dict()
                data["seed"] = config.seed
                if not out.timings:
                    data["timings"] = {}
                jfh.write(json.dumps(data, sort_keys=True) + "\n")
                jfh.flush()
            if ckpt_dir:
                t_end = u.t0 + u.nt * scheme.dt
                write_checkpoint(ckpt_dir, u.steps[-1], t_end, w)

        return driver.solve(u0, config.window.nwindows, callback=record)


# --------------------------------------------------------------------------
# sweep


def _parse_list(text, kind, name):
    if text is None or not text.strip():
        return []
    try:
        return [kind(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse --{name} {text!r}: {exc}") from exc


def sweep(config, alphas, nts, out=None):
    """Run every ``(alpha, nt)`` pair and write one CSV row per pair.

    ``m_p`` is the largest per-window iteration count, ``eta_mean`` the mean
    of the per-window mean contraction rates and ``eta_ratio`` their ratio to
    ``alpha / (1 - alpha)``.  Rows are flushed as they are produced, so a
    failure leaves the completed rows on disk.

    Raises
    ------
    ConfigError
        When either list is empty (nothing is written) or a value is invalid.
    """
    if not alphas or not nts:
        raise ConfigError("sweep needs at least one alpha and one nt")
    configs = []
    for alpha in alphas:
        for nt in nts:
            cfg = config.with_changes("solver", alpha=alpha)
            cfg = cfg.with_changes("window", nt=nt, partition=None)
            configs.append((alpha, nt, cfg))
    rows = []
    with _open_out(out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        fh.flush()
        for alpha, nt, cfg in configs:
            quiet = replace(cfg, output=replace(cfg.output, csv_path=None, json_path=None, checkpoint_dir=None))
            tic = time.perf_counter()
            with contextlib.redirect_stdout(_Discard()):
                _, reports = run(quiet)
            wall = time.perf_counter() - tic
            m_p = max(r.m_p for r in reports)
            etas = [r.eta_mean for r in reports]
            eta = sum(etas) / len(etas)
            row = (alpha, nt, m_p, eta, eta / (alpha / (1 - alpha)) if alpha < 1 else None,
                   wall if cfg.output.timings else None)
            writer.writerow([_fmt(alpha), nt, m_p, _fmt(row[3]), _fmt(row[4]), _fmt(row[5])])
            fh.flush()
            rows.append(row)
    return rows


class _Discard:
    def write(self, s):
        return len(s)

    def flush(self):
        pass


# --------------------------------------------------------------------------
# psi


def psi(nt, dt, theta, alpha, out=None):
    """Write the per-frequency eigenvalues and block ratios as CSV."""
    eigs = circulant_eigenvalues(nt, dt, theta, alpha)
    ratios = psi_ratios(eigs)
    with _open_out(out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PSI_COLUMNS)
        for k in range(nt):
            l1, l2, p = eigs.lambda1[k], eigs.lambda2[k], ratios[k]
            writer.writerow([k] + [_fmt(v) for v in (l1.real, l1.imag, l2.real, l2.imag, p.real, p.imag)])
    return ratios


# --------------------------------------------------------------------------
# entry point


def _build_parser():
    parser = argparse.ArgumentParser(prog="paradiag", description="Parallel-in-time alpha-circulant solver kit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve consecutive windows from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="directory for run.csv and reports.jsonl")

    p = sub.add_parser("sweep", help="iteration counts over a grid of alpha and nt")
    p.add_argument("--config", required=True)
    p.add_argument("--alphas", required=True)
    p.add_argument("--nts", required=True)
    p.add_argument("--out", help="CSV file (default: stdout)")

    p = sub.add_parser("psi", help="block coefficient ratios of the circulant preconditioner")
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=1e-4)
    p.add_argument("--out", help="CSV file (default: stdout)")

    p = sub.add_parser("predict", help="evaluate the performance model")
    p.add_argument("--inputs", help="JSON file with the model inputs")
    for name in PerfInputs.__dataclass_fields__:
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--out", help="JSON file (default: stdout)")
    return parser


def _predict_inputs(args):
    data = {}
    if args.inputs:
        try:
            data = json.loads(Path(args.inputs).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read inputs {args.inputs}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("performance inputs must be a JSON object")
    for name in PerfInputs.__dataclass_fields__:
        value = getattr(args, name)
        if value is not None:
            data[name] = value
    for name in ("Nx", "Nt"):
        if name in data and float(data[name]).is_integer():
            data[name] = int(data[name])
    return PerfInputs.from_dict(data)


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            run(load_config(args.config), args.out)
        elif args.command == "sweep":
            config = load_config(args.config)
            alphas = _parse_list(args.alphas, float, "alphas")
            nts = _parse_list(args.nts, int, "nts")
            sweep(config, alphas, nts, args.out)
        elif args.command == "psi":
            if args.nt < 1 or not args.dt > 0 or not 0 < args.alpha <= 1 or not 0 <= args.theta <= 1:
                raise ConfigError("psi needs nt >= 1, dt > 0, 0 <= theta <= 1 and 0 < alpha <= 1")
            psi(args.nt, args.dt, args.theta, args.alpha, args.out)
        elif args.command == "predict":
            estimate = predict(_predict_inputs(args))
            with _open_out(args.out) as fh:
                fh.write(estimate.to_json() + "\n")
    except (ConfigError, InvalidInput) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParadiagError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK
