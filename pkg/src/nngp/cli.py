"""Command-line entry point: ``nngp <subcommand> --config PATH``.

Exit status: 0 when every enabled check passed, 1 when some check failed,
2 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import runner
from .config import load_config
from .errors import ConfigError, NNGPError
from .gplimit import GPSampleRequest, sample_gp
from .kernel import kernel_at_depth, write_kernel_csv
from .netsim import sample_network


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("NNGP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError([f"NNGP_THREADS must be an integer, got {env!r}"]) from None
    return os.cpu_count() or 1


def _out_dir(args, cfg) -> Path:
    return Path(args.out) if args.out else cfg.resolve(cfg.output_dir)


def cmd_check(args, cfg, threads):
    print(f"config ok: k={cfg.input_set().k} inputs, depth {cfg.depth}, widths {list(cfg.widths)}")
    return 0


def cmd_kernel(args, cfg, threads):
    kernels = kernel_at_depth(cfg.input_set(), cfg.make_activation(), cfg.params, cfg.quadrature, threads)
    with np.printoptions(precision=12, linewidth=160):
        for K in kernels:
            print(f"layer {K.layer}:")
            print(K.entries)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for K in kernels:
            write_kernel_csv(K, out / f"kernel_layer{K.layer}.csv")
    return 0


def cmd_sample_net(args, cfg, threads):
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    inputs, act = cfg.input_set(), cfg.make_activation()
    for n in cfg.widths:
        batches = sample_network(inputs, cfg.params, act, n, cfg.units, cfg.samples, cfg.seed,
                                 method=cfg.sampler, threads=threads, memory_budget=cfg.memory_budget)
        for b in batches:
            path = b.save(out / f"net_n{n}_layer{b.layer}.bin")
            print(path)
    return 0


def cmd_sample_gp(args, cfg, threads):
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    K = kernel_at_depth(cfg.input_set(), cfg.make_activation(), cfg.params, cfg.quadrature, threads)[-1]
    batch = sample_gp(GPSampleRequest(K, cfg.units, cfg.samples, cfg.seed, cfg.jitter))
    print(batch.save(out / f"gp_layer{K.layer}.bin"))
    return 0


def cmd_holder(args, cfg, threads):
    if cfg.segment is None:
        raise ConfigError(["the holder subcommand needs a 'segment' section"])
    res = runner.run_holder(cfg, cfg.make_activation(), threads)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    res["_paths"][0].to_csv(out / "path0.csv")
    holder_only = runner.RunResult(runner.dg.ConvergenceReport(cfg.seed, cfg.echo()), holder=res)
    runner.emit_plotdata(holder_only, out)
    lo, hi = runner.HOLDER_WINDOW
    ok = lo < res["mean_gamma"] < hi and res["mean_se"] < runner.HOLDER_SE_MAX
    print(f"mean gamma {res['mean_gamma']:.4f} (sd {res['sd_gamma']:.4f}), mean SE {res['mean_se']:.4f}: "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok or not cfg.checks["holder_window"] else 1


def cmd_converge(args, cfg, threads):
    res = runner.run_experiment(cfg, threads=threads, timestamp=not args.no_timestamp)
    out = _out_dir(args, cfg)
    runner.write_artifacts(res, out)
    rep = res.report
    for name, c in sorted(rep.checks.items()):
        print(f"{name}: {'PASS' if c['passed'] else 'FAIL'}")
    if rep.error:
        print(f"error in stage {rep.error['stage']}: {rep.error['message']}", file=sys.stderr)
    print(f"report written to {out / 'report.json'}")
    return res.exit_code


COMMANDS = {
    "kernel": (cmd_kernel, "print the kernel of every layer"),
    "sample-net": (cmd_sample_net, "sample finite-width networks for each width"),
    "sample-gp": (cmd_sample_gp, "sample the limiting Gaussian process"),
    "converge": (cmd_converge, "run the full width ladder with diagnostics"),
    "holder": (cmd_holder, "estimate the Holder exponent on a segment"),
    "check": (cmd_check, "validate a config and exit"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nngp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $NNGP_THREADS, then logical cores)")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp from reports")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        threads = _threads(args.threads)
        return COMMANDS[args.command][0](args, cfg, threads)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NNGPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
