"""Command-line entry point.

Subcommands: gen-data, train, sweep-depth, limit-eval, gamma-check,
stability, plot.  Exit codes: 0 success, 1 usage or I/O error, 2 numeric
failure.  Errors appear as one machine-parsable line on stderr:
``error: <kind>: <message>`` with kind in {usage, io, config, numeric}.

Every command writes a JSON manifest next to its main output (``<out>.
manifest.json``) before computing results; the manifest records the argv,
a hash of the resolved configuration, seeds, and the code version, and is
sufficient to reproduce the outputs bitwise.
"""

from __future__ import annotations

import argparse
import difflib
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np

from . import NumericsError, __version__
from .config import ConfigError, RunConfig, load_config
from .dynamics import limit_solve
from .experiments import (PerturbationSchedule, depth_sweep, gamma_check,
                          gen_dataset, smooth_control, stability_run)
from .learning import init_params, sgd_train
from .storage import (load_control, load_dataset, read_csv, save_dataset,
                      save_params, write_csv, write_json_atomic)
from .svgchart import render_line_chart

_COMMANDS = ("gen-data", "train", "sweep-depth", "limit-eval", "gamma-check",
             "stability", "plot")

SWEEP_HEADER = ["N", "final_train_objective", "final_train_data_loss",
                "final_val_data_loss", "wall_time"]
CURVE_HEADER = ["epoch", "train_objective", "train_data_loss", "val_data_loss"]
GAMMA_HEADER = ["N", "objective_n", "gap"]
STABILITY_HEADER = ["r", "magnitude", "optimal_value_gap", "solution_distance_lp"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, with flag suggestions."""

    def error(self, message):
        if "unrecognized arguments:" in message:
            bad = message.split("unrecognized arguments:")[1].strip().split()[0]
            known = [s for a in self._actions for s in a.option_strings]
            for a in self._actions:
                if isinstance(a, argparse._SubParsersAction):
                    for sp in a.choices.values():
                        known += [s for act in sp._actions for s in act.option_strings]
            close = difflib.get_close_matches(bad, known, n=1)
            if close:
                message += f" (did you mean {close[0]}?)"
        elif "invalid choice:" in message:
            bad = message.split("invalid choice:")[1].strip().split("'")[1]
            close = difflib.get_close_matches(bad, _COMMANDS, n=1)
            if close:
                message += f" (did you mean {close[0]}?)"
        raise UsageError(message)


def _code_version() -> str:
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"],
                              capture_output=True, text=True, timeout=5,
                              cwd=os.path.dirname(os.path.abspath(__file__)))
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except OSError:
        pass
    return __version__


def _config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _write_manifest(out_path, command, argv, config_obj, seed, outputs):
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_hash": _config_hash(config_obj),
        "seed": seed,
        "created_unix": time.time(),
        "outputs": [os.path.abspath(p) for p in outputs],
        "code_version": _code_version(),
    }
    path = out_path + ".manifest.json"
    write_json_atomic(path, manifest)
    return path


def _resolve_threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("FBS_UNROLL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"FBS_UNROLL_THREADS must be an integer, got {env!r}")
    return 1


def _load_cfg(path) -> RunConfig:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return load_config(path)


def _dataset_from(args, cfg: RunConfig):
    if getattr(args, "data", None):
        if not os.path.exists(args.data):
            raise FileNotFoundError(args.data)
        return load_dataset(args.data)
    d = cfg.data
    return gen_dataset(d["m"], d["n"], d["train"], d["val"],
                       d["sparsity"], d["noise_sigma"], d["seed"])


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise UsageError(f"expected a comma-separated number list, got {text!r}")


def _build_parser():
    top = _Parser(prog="fbs-unroll", description=__doc__)
    sub = top.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="synthesize a dataset")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--val", type=int, required=True)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--noise", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one network")
    p.add_argument("--config", required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True, help="loss-curve CSV")
    p.add_argument("--params-out", help="trained-parameter snapshot")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("sweep-depth", help="train across depths")
    p.add_argument("--config", required=True)
    p.add_argument("--layers", help="comma list; defaults to [sweep].layers")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("limit-eval", help="solve the limit system for one sample")
    p.add_argument("--control", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--nref", type=int, default=2048)
    p.add_argument("--config", help="regularizer source; defaults to l1/scale 1")
    p.add_argument("--out", required=True, help="result JSON")

    p = sub.add_parser("gamma-check", help="depth convergence of the objective")
    p.add_argument("--config", required=True)
    p.add_argument("--layers", required=True, help="comma list of depths")
    p.add_argument("--nref", type=int, default=4096)
    p.add_argument("--data")
    p.add_argument("--control", help="control file; synthesized when omitted")
    p.add_argument("--samples", type=int, default=2,
                   help="training samples used in the objective")
    p.add_argument("--out", required=True)

    p = sub.add_parser("stability", help="perturbation-stability table")
    p.add_argument("--config", required=True)
    p.add_argument("--target", required=True, choices=["x0", "b", "y", "all"])
    p.add_argument("--magnitudes", required=True, help="decreasing comma list")
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--direction-seed", type=int, default=0)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("plot", help="CSV columns to an SVG line chart")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True, help="comma list of y columns")
    p.add_argument("--logy", action="store_true")
    p.add_argument("--title", default="")

    return top


def _cmd_gen_data(args, argv):
    data = gen_dataset(args.m, args.n, args.train, args.val,
                       args.sparsity, args.noise, args.seed)
    cfg_obj = {"m": args.m, "n": args.n, "train": args.train, "val": args.val,
               "sparsity": args.sparsity, "noise": args.noise, "seed": args.seed}
    _write_manifest(args.out, "gen-data", argv, cfg_obj, args.seed, [args.out])
    save_dataset(args.out, data)
    return 0


def _cmd_train(args, argv):
    cfg = _load_cfg(args.config)
    data = _dataset_from(args, cfg)
    outputs = [args.out] + ([args.params_out] if args.params_out else [])
    _write_manifest(args.out, "train", argv,
                    {"config": cfg.as_dict(), "layers": args.layers},
                    cfg.tcfg.seed, outputs)
    p0 = init_params(args.layers, cfg.T, data.meta["A_true"], cfg.tcfg)
    p_fin, curve = sgd_train(p0, data, cfg.reg, cfg.ocfg, cfg.tcfg,
                             threads=_resolve_threads(args))
    write_csv(args.out, CURVE_HEADER, curve)
    if args.params_out:
        save_params(args.params_out, p_fin)
    return 0


def _cmd_sweep_depth(args, argv):
    cfg = _load_cfg(args.config)
    layers = _int_list(args.layers) if args.layers else cfg.layers
    data = _dataset_from(args, cfg)
    _write_manifest(args.out, "sweep-depth", argv,
                    {"config": cfg.as_dict(), "layers": layers},
                    cfg.tcfg.seed, [args.out])
    result = depth_sweep(layers, data, cfg.reg, cfg.ocfg, cfg.tcfg, T=cfg.T,
                         threads=_resolve_threads(args))
    for row in result.rows:
        if row.error:
            print(f"warning: depth {row.N} failed: {row.error}", file=sys.stderr)
    write_csv(args.out, SWEEP_HEADER,
              [(r.N, r.final_train_objective, r.final_train_data_loss,
                r.final_val_data_loss, r.wall_time) for r in result.rows])
    return 0


def _cmd_limit_eval(args, argv):
    for path in (args.control, args.data):
        if not os.path.exists(path):
            raise FileNotFoundError(path)
    u = load_control(args.control)
    data = load_dataset(args.data)
    reg = _load_cfg(args.config).reg if args.config else None
    if reg is None:
        from .regularizers import Regularizer
        reg = Regularizer("l1", 1.0)
    j = args.sample
    total = data.train_count + data.val_count
    if not (0 <= j < total):
        raise UsageError(f"--sample {j} out of range [0, {total})")
    manifest = _write_manifest(args.out, "limit-eval", argv,
                               {"control": args.control, "data": args.data,
                                "sample": j, "nref": args.nref},
                               None, [args.out])
    terminal, traj, err_est = limit_solve(u, data.X0[j], data.B[j], reg,
                                          N_ref=args.nref)
    write_json_atomic(args.out, {
        "terminal": [float(x) for x in terminal],
        "err_est": float(err_est),
        "depth_used": traj.N,
        "manifest": manifest,
    })
    return 0


def _cmd_gamma_check(args, argv):
    cfg = _load_cfg(args.config)
    layers = _int_list(args.layers)
    data = _dataset_from(args, cfg)
    if args.control:
        if not os.path.exists(args.control):
            raise FileNotFoundError(args.control)
        u = load_control(args.control)
    else:
        u = smooth_control(data.m, data.n, M=16, T=cfg.T,
                           seed=cfg.data["seed"],
                           lambda_level=cfg.tcfg.lambda0)
    batch = data.train_batch()
    k = min(args.samples, len(batch))
    batch = batch.take(slice(0, k))
    _write_manifest(args.out, "gamma-check", argv,
                    {"config": cfg.as_dict(), "layers": layers,
                     "nref": args.nref, "samples": k},
                    cfg.data["seed"], [args.out])
    rows = gamma_check(u, layers, batch, cfg.reg, cfg.ocfg, N_ref=args.nref)
    write_csv(args.out, GAMMA_HEADER, rows)
    return 0


def _cmd_stability(args, argv):
    cfg = _load_cfg(args.config)
    data = _dataset_from(args, cfg)
    sched = PerturbationSchedule(target=args.target,
                                 magnitudes=tuple(_float_list(args.magnitudes)),
                                 direction_seed=args.direction_seed)
    _write_manifest(args.out, "stability", argv,
                    {"config": cfg.as_dict(), "target": args.target,
                     "magnitudes": list(sched.magnitudes),
                     "direction_seed": args.direction_seed,
                     "layers": args.layers},
                    cfg.tcfg.seed, [args.out])
    rows = stability_run(data, cfg.reg, cfg.ocfg, cfg.tcfg, sched,
                         N=args.layers, T=cfg.T,
                         threads=_resolve_threads(args))
    write_csv(args.out, STABILITY_HEADER, rows)
    return 0


def _cmd_plot(args, argv):
    if not os.path.exists(args.infile):
        raise FileNotFoundError(args.infile)
    header, rows = read_csv(args.infile)
    x_col = args.x
    y_cols = [c for c in args.y.split(",") if c]
    for col in [x_col] + y_cols:
        if col not in header:
            raise UsageError(f"column {col!r} not in {args.infile} "
                             f"(available: {', '.join(header)})")
    xi = header.index(x_col)
    series = []
    for col in y_cols:
        yi = header.index(col)
        xs, ys = [], []
        for row in rows:
            x, y = float(row[xi]), float(row[yi])
            if np.isfinite(x) and np.isfinite(y):
                xs.append(x)
                ys.append(y)
        series.append((col if len(y_cols) > 1 else "", xs, ys))
    manifest = _write_manifest(args.out, "plot", argv,
                               {"in": args.infile, "x": x_col, "y": y_cols},
                               None, [args.out])
    svg = render_line_chart(series, x_label=x_col,
                            y_label=y_cols[0] if len(y_cols) == 1 else "",
                            title=args.title, log_y=args.logy)
    svg = svg.replace("</svg>", f"<!-- manifest: {manifest} -->\n</svg>")
    with open(args.out, "w") as f:
        f.write(svg)
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sweep-depth": _cmd_sweep_depth,
    "limit-eval": _cmd_limit_eval,
    "gamma-check": _cmd_gamma_check,
    "stability": _cmd_stability,
    "plot": _cmd_plot,
}


def run(argv) -> int:
    """Execute one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if args.command not in _HANDLERS:
            close = difflib.get_close_matches(args.command, _COMMANDS, n=1)
            hint = f" (did you mean {close[0]}?)" if close else ""
            raise UsageError(f"unknown command {args.command!r}{hint}")
        return _HANDLERS[args.command](args, argv)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        path = getattr(e, "filename", None) or str(e)
        print(f"error: io: {path}: no such file", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 1
    except NumericsError as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
