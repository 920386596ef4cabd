"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 model error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, builtin, ctmc, htcalc, reproduce, sim
from .model import ModelError, PollingModel, check_ratios, load_model, load_report

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _trunc(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N1,N2, got {text!r}") from None
    return a, b


def _scaling(text: str) -> str:
    names = {"u": "one_minus_u", "gap": "lambda_gap", "ray": "ray"}
    if text not in names:
        raise argparse.ArgumentTypeError(f"scaling must be one of u, gap, ray")
    return names[text]


def load(source: str, variant: str | None = None) -> PollingModel:
    """A model file path or a built-in id (``ex1``..``ex4``)."""
    if source.lower() in builtin.EXAMPLE_IDS and not os.path.exists(source):
        try:
            return builtin.builtin_model(source, variant)
        except KeyError:
            raise UsageError(f"unknown variant {variant!r} for {source}") from None
    try:
        return load_model(source)
    except OSError as exc:
        raise ModelError(f"cannot read {source}: {exc.strerror}") from None


def _default_ratios(model: PollingModel, source: str) -> tuple[float, ...]:
    if source.lower() == "ex4":
        return builtin.EX4_RATIOS
    total = sum(model.rates)
    if total <= 0:
        raise UsageError("model has no arrivals; pass --ratios")
    return tuple(r / total for r in model.rates)


def _apply_options(model: PollingModel, args, source: str) -> PollingModel:
    if getattr(args, "Lambda", None) is not None:
        ratios = args.ratios or _default_ratios(model, source)
        model = model.on_ray(check_ratios(ratios, model.n), args.Lambda)
    if getattr(args, "alpha", None) is not None:
        model = htcalc.interchange(model, args.alpha)
    return model


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, name: str, text: str, force: bool) -> Path:
    target = path / name
    if target.exists() and not force:
        raise UsageError(f"{target} exists; use --force to overwrite")
    target.write_text(text, encoding="utf-8")
    return target


# -- analyze ---------------------------------------------------------------

HT_HEADER = "queue,lambda_crit,EBprime,VBprime,eta_one_minus_u,eta_ray,C0,C1,C2"


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6g}"


def cmd_analyze(args) -> int:
    model = _apply_options(load(args.model, args.variant), args, args.model)
    rep = load_report(model)
    ratios = args.ratios or (_default_ratios(model, args.model) if sum(model.rates) > 0 else None)
    lines, notes = [HT_HEADER], []
    for j in range(model.n):
        try:
            d = htcalc.eta(model, j)
        except htcalc.HeavyTrafficError as exc:
            notes.append(f"queue {j + 1}: no heavy-traffic limit ({exc})")
            continue
        ray = None
        if ratios is not None:
            try:
                ray = htcalc.eta(model, j, scaling=htcalc.ScalingSpec.ray(ratios))
            except (htcalc.HeavyTrafficError, ValueError):
                ray = None
        if args.scaling == "lambda_gap":
            shown = htcalc.eta(model, j, scaling=htcalc.ScalingSpec.lambda_gap(args.omega))
        elif args.scaling == "ray":
            shown = ray
        else:
            shown = d
        if d.conjectured:
            notes.append(f"queue {j + 1}: eta is conjectured (non-exponential inputs)")
        lines.append(",".join([
            str(j + 1), _fmt(d.lambda_crit), _fmt(d.effective.mean), _fmt(d.effective.variance),
            _fmt(d.eta), _fmt(ray.eta if ray else None),
            _fmt(shown.c0 if shown else None), _fmt(shown.c1 if shown else None), _fmt(shown.c2 if shown else None),
        ]))
    load_csv = rep.to_csv()
    ht_csv = "\n".join(lines) + "\n"
    sys.stdout.write(load_csv + "\n" + ht_csv)
    for note in notes:
        print(note)
    out = _out_dir(args)
    if out:
        _write(out, "loads.csv", load_csv, args.force)
        _write(out, "heavy_traffic.csv", ht_csv, args.force)
    return EXIT_OK


# -- ladder ----------------------------------------------------------------

LADDER_HEADER = "stage,queue,Lambda_crit,eta_ray"


def ladder_csv(stages) -> str:
    rows = [LADDER_HEADER] + [f"{i + 1},{st.queue + 1},{st.Lambda_crit:.6g},{st.derivation.eta:.6g}"
                              for i, st in enumerate(stages)]
    return "\n".join(rows) + "\n"


def cmd_ladder(args) -> int:
    model = load(args.model, args.variant)
    ratios = args.ratios or _default_ratios(model, args.model)
    stages = htcalc.critical_ladder(model, ratios)
    text = ladder_csv(stages)
    sys.stdout.write(text)
    gone = []
    for i, st in enumerate(stages[:-1]):
        gone.append(st.queue)
        left = htcalc.surviving_queues(model.n, gone)
        if len(left) >= 2:
            red = htcalc.corresponding_system(model, gone)
            desc = "; ".join(f"S{q + 1}: mean {red[r].switchover_moments.mean:.6g}" for r, q in enumerate(left))
            print(f"after stage {i + 1}: queues {' '.join(str(q + 1) for q in left)} remain ({desc})")
        else:
            vac = htcalc.reduce_to_vacation(model, left[0])
            print(f"after stage {i + 1}: queue {left[0] + 1} remains as a vacation queue "
                  f"(vacation mean {vac.vacation_moments.mean:.6g})")
    out = _out_dir(args)
    if out:
        _write(out, "ladder.csv", text, args.force)
    return EXIT_OK


# -- simulate --------------------------------------------------------------

def _run_config(args) -> sim.RunConfig:
    try:
        return sim.RunConfig(horizon=args.horizon, warmup=args.warmup, seed=args.seed,
                             replications=args.reps, batches=args.batches,
                             waiting_server=args.waiting_server)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> int:
    model = _apply_options(load(args.model, args.variant), args, args.model)
    run = _run_config(args)
    q = args.designated - 1
    if not 0 <= q < model.n:
        raise UsageError(f"--designated must lie in 1..{model.n}")
    factor = None
    if args.Lambda is not None and args.scaling == "ray":
        ratios = args.ratios or _default_ratios(load(args.model, args.variant), args.model)
        stages = {st.queue: st for st in htcalc.critical_ladder(model, ratios)}
        factor = stages[q].Lambda_crit - args.Lambda
    pair = (0, 1) if model.n > 1 else (0, 0)
    stats = sim.replicate(model, run, designated=q, pair=pair, factor=factor)
    table = stats.to_csv(upto=args.upto)
    sys.stdout.write(table)
    out = _out_dir(args)
    if out:
        _write(out, "stats.csv", table, args.force)
        _write(out, "correlation.csv", stats.correlation_csv(), args.force)
        if stats.factor > 0:
            dens = sim.scaled_histogram(stats)
            keep = max(1, int(math.ceil(reproduce.DENSITY_XMAX / dens.factor)))
            _write(out, "density.csv", sim.DensityTable(dens.factor, dens.probs[:keep]).to_csv(), args.force)
    return EXIT_OK


# -- oracle ----------------------------------------------------------------

def cmd_oracle(args) -> int:
    variants = args.variant.split(",") if args.variant else [None]
    gap_lines = [ctmc.GAP_HEADER]
    margs = []
    for v in variants:
        model = load(args.model, v)
        if not model.all_exponential or model.n != 2:
            raise ModelError("the CTMC oracle needs an all-exponential two-queue model; use `simulate` instead")
        n1, n2 = args.trunc if args.trunc else (None, None)
        gen = ctmc.build_generator(model, n1, n2)
        table = ctmc.steady_state(gen)
        der = htcalc.eta(model, 1)
        vac = ctmc.vacation_steady_state(htcalc.vacation_model(model, 0, 1), gen.N1max)
        gap = ctmc.product_form_gap(table, der.eta, vac)
        gap_lines.append(gap.csv_row())
        p1, p2, _ = ctmc.marginals(table)
        margs.append((v, p1, p2))
    gap_csv = "\n".join(gap_lines) + "\n"
    sys.stdout.write(gap_csv)
    out = _out_dir(args)
    if out:
        _write(out, "gap.csv", gap_csv, args.force)
        for v, p1, p2 in margs:
            size = max(p1.size, p2.size)
            a = np.zeros(size)
            b = np.zeros(size)
            a[: p1.size], b[: p2.size] = p1, p2
            rows = ["n,p_n1,p_n2"] + [f"{n},{a[n]:.6g},{b[n]:.6g}" for n in range(size)]
            name = f"marginals_{v}.csv" if v else "marginals.csv"
            _write(out, name, "\n".join(rows) + "\n", args.force)
    return EXIT_OK


# -- reproduce -------------------------------------------------------------

def cmd_reproduce(args) -> int:
    if args.example.lower() not in reproduce.EXAMPLES:
        raise UsageError(f"unknown example {args.example!r}; choose from {', '.join(reproduce.EXAMPLES)}")
    opts = reproduce.Options(seed=args.seed, reps=args.reps, horizon=args.horizon, warmup=args.warmup,
                             sweep_horizon=args.sweep_horizon)
    out = Path(args.out or f"out_{args.example}")
    arts = reproduce.reproduce(args.example, opts)
    names = [a.name for a in arts] + ["manifest.json"]
    clash = [n for n in names if (out / n).exists()]
    if clash and not args.force:
        raise UsageError(f"{out / clash[0]} exists; use --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    for a in arts:
        _write(out, a.name, a.text, True)
    manifest = {
        "example": args.example.lower(),
        "version": __version__,
        "files": [{"path": a.name, "role": a.role} for a in arts],
        "parameters": opts.echo(),
    }
    _write(out, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n", True)
    for a in arts:
        print(f"{a.role:8s} {out / a.name}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kpoll", description="Heavy-traffic toolkit for k-limited cyclic polling systems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_args(sp):
        sp.add_argument("model", help="model file or built-in id (ex1, ex2, ex3, ex4)")
        sp.add_argument("--variant", help="built-in variant, e.g. P1..P4")
        sp.add_argument("--out", help="directory for CSV output")
        sp.add_argument("--force", action="store_true", help="overwrite existing files")

    def point_args(sp):
        sp.add_argument("--alpha", type=float, help="move this switch-over fraction into queue-2 service")
        sp.add_argument("--Lambda", type=float, help="total arrival rate along the ray")
        sp.add_argument("--ratios", type=_floats, help="ray ratios a,b,...")
        sp.add_argument("--scaling", type=_scaling, default="u", help="u | gap | ray")
        sp.add_argument("--omega", type=float, default=1.0, help="omega of the gap scaling")

    sp = sub.add_parser("analyze", help="loads, stability and heavy-traffic parameters")
    model_args(sp)
    point_args(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("ladder", help="saturation order along a ray")
    model_args(sp)
    sp.add_argument("--ratios", type=_floats)
    sp.set_defaults(func=cmd_ladder)

    sp = sub.add_parser("simulate", help="discrete-event simulation")
    model_args(sp)
    point_args(sp)
    sp.add_argument("--horizon", type=float, default=1e7)
    sp.add_argument("--warmup", type=float, default=None, help="default: 10%% of the horizon")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--batches", type=int, default=20)
    sp.add_argument("--designated", type=int, default=2, help="queue for scaled output (1-based)")
    sp.add_argument("--upto", type=int, default=20, help="probabilities listed per queue")
    sp.add_argument("--waiting-server", action="store_true", help="park the server when the system empties")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("oracle", help="exact CTMC solution (exponential two-queue models)")
    model_args(sp)
    sp.add_argument("--trunc", type=_trunc, help="truncation N1,N2")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("reproduce", help="regenerate the tables and densities of a built-in example")
    sp.add_argument("example", help="ex1, ex2, ex3 or ex4")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--reps", type=int, default=10)
    sp.add_argument("--horizon", type=float, default=None, help="override the per-model horizons")
    sp.add_argument("--warmup", type=float, default=None)
    sp.add_argument("--sweep-horizon", type=float, default=reproduce.SWEEP_HORIZON)
    sp.add_argument("--out", help="output directory (default out_<example>)")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"kpoll: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, htcalc.SimultaneousSaturationError, ctmc.OracleError, KeyError) as exc:
        print(f"kpoll: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (htcalc.HeavyTrafficError, ctmc.ConvergenceError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"kpoll: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"kpoll: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
