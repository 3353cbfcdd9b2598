"""Command-line entry point: ``hflprune {run,allocate,sweep,bound}``."""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys

import numpy as np

from . import kernels
from .bound import BoundParams, bound_terms, estimate_constants, gamma_star
from .config import ConfigError, ExperimentConfig, load_config
from .hierarchy import run
from .experiment import MetricsWriter, build_experiment, first_round_plan, run_experiment, summarize
from .trainer import local_loss

log = logging.getLogger("hflprune")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace("experiment", seed=args.seed)
    if args.scheme is not None:
        cfg = cfg.replace("experiment", scheme=args.scheme)
    if args.latency_ms is not None:
        cfg = cfg.replace("experiment", latency_threshold_ms=args.latency_ms)
    return cfg


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as f:
            yield f


def _print_summary(summary: dict, prefix: str = "") -> None:
    for key, value in summary.items():
        print(f"{prefix}{key}: {value:.6g}" if isinstance(value, float) else f"{prefix}{key}: {value}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = _load(args)
    _, result = run_experiment(cfg)
    with _output(args.out) as out:
        MetricsWriter(out).write(result.metrics, cfg.experiment.scheme)
    _print_summary(summarize(result))
    return 0


def cmd_allocate(args) -> int:
    cfg = _load(args)
    inputs, plan = first_round_plan(cfg)
    doc = plan.to_dict()
    doc["threshold_s"] = inputs.threshold
    doc["inputs"] = {k: getattr(inputs, k).tolist() for k in ("v1", "v2", "v3", "v4", "snr")}
    with _output(args.out) as out:
        json.dump(doc, out, indent=2)
        out.write("\n")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.ratios is not None:
        grid = [("fixed_ratio", r) for r in args.ratios]
    else:
        grid = [("latency_threshold_ms", t) for t in args.thresholds_ms]
    with _output(args.out) as out:
        writer = MetricsWriter(out)
        for key, value in grid:
            if key == "fixed_ratio":
                point = cfg.replace("experiment", scheme="fixed", fixed_ratio=value)
            else:
                point = cfg.replace("experiment", latency_threshold_ms=value)
            _, result = run_experiment(point)
            writer.write(result.metrics, point.experiment.scheme, value)
            _print_summary(summarize(result), prefix=f"[{key}={value:g}] ")
    return 0


def cmd_bound(args) -> int:
    cfg = _load(args)
    t = cfg.training
    n = cfg.topology.edge_servers * cfg.topology.devices_per_edge
    exp = build_experiment(cfg)
    T = max(exp.run_config.train.iterations_for(len(d.data)) for d in exp.topology.devices)
    values = {"L": args.L, "D": args.D, "phi": args.phi, "sigma_hat": args.sigma_hat,
              "gamma_star": args.gamma_star, "F0_minus_Fstar": args.f0_gap}
    rho_sum = args.rho_sum
    diagnostic = {}
    if args.from_run:
        w0 = exp.net.init_weights(exp.seed)
        result = run(exp.net, exp.topology, w0, exp.run_config, exp.test)
        diagnostic = estimate_constants(exp.net, [w0, result.weights], exp.train, seed=exp.seed)
        values.update(diagnostic)
        values["gamma_star"] = gamma_star([m.min_occurrence for m in result.metrics])
        values["F0_minus_Fstar"] = max(0.0, local_loss(exp.net, w0, exp.train) - local_loss(exp.net, result.weights, exp.train))
        # sum over edge rounds and devices, averaged over global rounds
        rho_sum = float(sum(np.sum(m.ratios) for m in result.metrics)) / max(1, t.global_rounds)
    params = BoundParams(
        L=values["L"], D=values["D"], phi=values["phi"], sigma_hat=values["sigma_hat"],
        gamma_star=int(values["gamma_star"]), eta=t.learning_rate, Q=t.global_rounds, E=t.edge_rounds,
        T=T, N=n, W=exp.arch.total, F0_minus_Fstar=values["F0_minus_Fstar"],
    )
    doc = {"params": params.to_dict(), "rho_sum": rho_sum, "terms": bound_terms(params, rho_sum)}
    if diagnostic:
        doc["diagnostic_estimates"] = diagnostic
    with _output(args.out) as out:
        json.dump(doc, out, indent=2)
        out.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hflprune", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key=value config file (defaults if omitted)")
    common.add_argument("--seed", type=int)
    common.add_argument("--scheme", choices=["optimal", "equal", "no_pruning"])
    common.add_argument("--out", help="output path, '-' for stdout (default)")
    common.add_argument("--latency-ms", type=float, help="latency threshold in milliseconds")

    p = sub.add_parser("run", parents=[common], help="run one simulation and write metrics CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("allocate", parents=[common], help="print the first-round allocation plan as JSON")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("sweep", parents=[common], help="repeat the simulation over thresholds or fixed ratios")
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--thresholds-ms", type=_floats, default=[25.0, 30.0, 35.0, 40.0])
    grid.add_argument("--ratio", "--ratios", dest="ratios", type=_floats,
                      help="fixed pruning ratios; bypasses the allocator")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bound", parents=[common], help="evaluate the convergence bound terms")
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--D", type=float, default=1.0)
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--sigma-hat", type=float, default=1.0)
    p.add_argument("--gamma-star", type=int, default=1)
    p.add_argument("--f0-gap", type=float, default=1.0, help="F(w0) - F(w*)")
    p.add_argument("--rho-sum", type=float, default=0.0)
    p.add_argument("--from-run", action="store_true",
                   help="run the simulation and plug in estimated constants (diagnostic only)")
    p.set_defaults(func=cmd_bound)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, FloatingPointError) as exc:
        print(f"hflprune: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
