"""``genmean`` command line.

Exit codes: 0 success, 2 input error, 3 numerical-accuracy failure,
4 consistency-check failure. Result tables go to stdout (or ``--out``),
logs go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys

import numpy as np

from . import discrete, gaussian, harness
from .errors import AccuracyError, CapacityError, DegeneracyError, GenMeanError, InvalidInputError
from .powermean import PowerOrder

log = logging.getLogger("genmean")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONSISTENCY = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def g12(x):
    x = float(x)
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def parse_experts(spec):
    """``"mean:std;mean:std"`` -> list of 1D GaussianDensity."""
    out = []
    for item in spec.split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            m, s = (float(v) for v in item.split(":"))
        except ValueError:
            raise InvalidInputError(f"bad expert {item!r}, expected mean:std") from None
        if not (math.isfinite(m) and math.isfinite(s)) or s <= 0:
            raise InvalidInputError(f"bad expert {item!r}: std must be positive and finite")
        out.append(gaussian.GaussianDensity.univariate(m, s))
    if not out:
        raise InvalidInputError("no experts given")
    return out


def _write(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cfg(args):
    return gaussian.IntegrationConfig(
        rel_tol=args.rel_tol, mc_samples=args.mc_samples, seed=args.seed,
        composition_cap=args.composition_cap,
    )


def cmd_aggregate(args):
    ds = harness.load_dataset(args.manifest)
    order = PowerOrder.parse(args.order)
    if not 0 <= args.ensemble < ds.n_ensembles:
        raise InvalidInputError(f"ensemble {args.ensemble} outside [0, {ds.n_ensembles})")
    lp, _ = discrete.aggregate_batch(ds.log_probs[args.ensemble], order)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.exp(lp):
        w.writerow([g12(v) for v in row])
    _write(buf.getvalue(), args.out)
    return EXIT_OK


def _emit_result(res, args):
    if args.out:
        harness.save_result(res, args.out, args.format)
    else:
        text = harness.result_to_json(res) if args.format == "json" else harness.result_to_csv(res, digits=12)
        sys.stdout.write(text)


def cmd_sweep(args):
    ds = harness.load_dataset(args.manifest)
    res = harness.sweep_discrete(ds, harness.parse_grid(args.grid))
    _emit_result(res, args)
    return EXIT_OK


def cmd_gaussian_sweep(args):
    experts = parse_experts(args.experts)
    (law,) = parse_experts(args.sample)[:1]
    res = harness.sweep_gaussian(experts, law, args.n, harness.parse_grid(args.grid), _cfg(args))
    _emit_result(res, args)
    return EXIT_OK


def cmd_synth(args):
    ds = harness.synth_ensemble(
        args.generator, args.n, args.k, args.classes, args.ensembles, args.seed,
        alpha=args.alpha, accuracy=args.accuracy, sigma=args.sigma,
    )
    path = harness.save_dataset(ds, args.out_dir)
    sys.stdout.write(f"{path}\n")
    return EXIT_OK


def _row(cells):
    return "\t".join(cells) + "\n"


def cmd_counterexample(args):
    lines = [_row(["fixture", "order", "point", "aggregated", "log_aggregated", "avg_log_individual", "gap"])]
    which = args.which
    if which in ("min", "max"):
        fx = discrete.extreme_counterexamples()[which]
        agg = discrete.aggregate(fx.log_models, fx.order)
        lhs = float(agg.log_probs[fx.label])
        rhs = float(np.mean(fx.log_models[:, fx.label]))
        models = " | ".join(",".join(g12(v) for v in row) for row in fx.models)
        log.info("fixture %s: models %s, true label %d", which, models, fx.label)
        lines.append(_row([
            which, str(fx.order), f"y={fx.label}", ",".join(g12(v) for v in agg.probs),
            g12(lhs), g12(rhs), g12(lhs - rhs),
        ]))
    elif which == "gaussian-neg":
        m, r = args.m if args.m is not None else 2.0, -1.0 if args.r is None else args.r
        gs = [gaussian.GaussianDensity.univariate(-m, 1.0), gaussian.GaussianDensity.univariate(m, 1.0)]
        lhs = gaussian.log_mean_density(gs, r, m)
        rhs = float(np.mean([g.log_density(m) for g in gs]))
        lines.append(_row([
            f"N(+-{g12(m)},1)", g12(r), f"x={g12(m)}", "unnormalised", g12(lhs), g12(rhs), g12(lhs - rhs),
        ]))
        lines.append(_row([
            "closed form", g12(r), f"x={g12(m)}", "", "", "", g12(gaussian.counterexample_gap_formula(m, r)),
        ]))
    else:
        m, r = args.m if args.m is not None else 1.5, 2.0 if args.r is None else args.r
        gs = [gaussian.GaussianDensity.univariate(-m, 1.0), gaussian.GaussianDensity.univariate(m, 1.0)]
        norm = gaussian.normalize(gs, r, _cfg(args))
        lhs = gaussian.aggregated_log_density(gs, r, norm, 0.0)
        rhs = float(np.mean([g.log_density(0.0) for g in gs]))
        lines.append(_row([
            f"N(+-{g12(m)},1)", g12(r), "x=0", f"logZ={g12(norm.log_z)}", g12(lhs), g12(rhs), g12(lhs - rhs),
        ]))
    sys.stdout.write("".join(lines))
    return EXIT_OK


def cmd_zcheck(args):
    experts = parse_experts(args.experts)
    order = PowerOrder.parse(args.order)
    cfg = _cfg(args)
    closed = None
    if order.is_geometric:
        closed = gaussian.log_z_geometric(experts)
    elif (n := gaussian.reciprocal_index(order)) is not None:
        closed = gaussian.log_z_reciprocal(experts, n, cfg.composition_cap)
    numeric = gaussian.log_z_numeric(experts, order, cfg)
    out = [_row(["method", "log_z", "error_estimate"])]
    if closed is not None:
        out.append(_row([closed.method, g12(closed.log_z), g12(closed.error_estimate)]))
    out.append(_row([numeric.method, g12(numeric.log_z), g12(numeric.error_estimate)]))
    status = EXIT_OK
    if closed is not None:
        diff = abs(closed.log_z - numeric.log_z)
        out.append(_row(["abs_difference", g12(diff), g12(args.tol)]))
        if diff > args.tol:
            log.error("closed form and numeric log Z differ by %.3g > %.3g", diff, args.tol)
            status = EXIT_CONSISTENCY
    sys.stdout.write("".join(out))
    return status


def _add_cfg(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--mc-samples", type=int, default=1 << 20)
    p.add_argument("--composition-cap", type=int, default=10**6)


def build_parser():
    p = _Parser(prog="genmean", description="Power-mean pooling of probability distributions.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("aggregate", help="pool one ensemble per sample at a given order")
    a.add_argument("manifest")
    a.add_argument("--order", required=True)
    a.add_argument("--ensemble", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("sweep", help="cross-entropy across a grid of orders")
    s.add_argument("manifest")
    s.add_argument("--grid", default=",".join(harness.DEFAULT_GRID))
    s.add_argument("--out")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gaussian-sweep", help="NLL of pooled 1D Gaussian experts across orders")
    g.add_argument("--experts", required=True, help='"mean:std;mean:std;..."')
    g.add_argument("--sample", required=True, help='sampling law "mean:std"')
    g.add_argument("--n", type=int, default=50_000)
    g.add_argument("--grid", default=",".join(harness.DEFAULT_GRID))
    g.add_argument("--out")
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_cfg(g)
    g.set_defaults(func=cmd_gaussian_sweep)

    y = sub.add_parser("synth", help="write a synthetic ensemble dataset")
    y.add_argument("generator", choices=("dirichlet_jitter", "near_consensus"))
    y.add_argument("--out-dir", required=True)
    y.add_argument("--n", type=int, default=1000)
    y.add_argument("--k", type=int, default=10)
    y.add_argument("--classes", type=int, default=10)
    y.add_argument("--ensembles", type=int, default=5)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--alpha", type=float, default=1.0)
    y.add_argument("--accuracy", type=float, default=0.6)
    y.add_argument("--sigma", type=float, default=0.05)
    y.set_defaults(func=cmd_synth)

    c = sub.add_parser("counterexample", help="print a failure fixture and its gap")
    c.add_argument("which", choices=("min", "max", "gaussian-neg", "gaussian-gt1"))
    c.add_argument("--m", type=float)
    c.add_argument("--r", type=float)
    _add_cfg(c)
    c.set_defaults(func=cmd_counterexample)

    z = sub.add_parser("zcheck", help="closed-form vs numeric log Z for 1D experts")
    z.add_argument("--experts", required=True)
    z.add_argument("--order", required=True)
    z.add_argument("--tol", type=float, default=1e-8)
    _add_cfg(z)
    z.set_defaults(func=cmd_zcheck)
    return p


# flags whose values may legitimately start with "-" ("-inf", "-3.5:1.8")
_VALUE_FLAGS = {"--experts", "--sample", "--order", "--grid", "--r", "--m"}


def _join_values(argv):
    out = []
    it = iter(argv)
    for tok in it:
        if tok in _VALUE_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_join_values(argv))
    except UsageError as exc:
        sys.stderr.write(f"genmean: error: {exc}\n")
        return EXIT_INPUT
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    pkg_log = logging.getLogger("genmean")
    pkg_log.handlers[:] = [handler]
    pkg_log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    pkg_log.propagate = False
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    log.info("config %s", resolved)
    try:
        return args.func(args)
    except AccuracyError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except (InvalidInputError, CapacityError, DegeneracyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except GenMeanError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
