"""Data production for the four built-in examples.

Each ``exN`` function returns a list of :class:`Artifact` (file name, role,
CSV text); the CLI writes them and a manifest.  Horizons default per model:
``1e7`` when the designated utilization is at most 0.98 and ``1e8`` closer to
saturation, unless :class:`Options` overrides them.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import builtin, ctmc, htcalc, sim
from .model import PollingModel, load_report

SHORT_HORIZON = 1e7
LONG_HORIZON = 1e8
SWEEP_HORIZON = 1e6
DENSITY_XMAX = 5.0


@dataclass(frozen=True)
class Options:
    seed: int = 1
    reps: int = 10
    horizon: float | None = None  # None: per-model default
    warmup: float | None = None
    sweep_horizon: float = SWEEP_HORIZON
    sweep_points: int = 60
    vacation_trunc: int = 200

    def run(self, default_horizon: float, reps: int | None = None) -> sim.RunConfig:
        h = default_horizon if self.horizon is None else self.horizon
        return sim.RunConfig(horizon=h, warmup=self.warmup, seed=self.seed,
                             replications=self.reps if reps is None else reps)

    def echo(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Artifact:
    name: str
    role: str  # table | density | ladder | sweep | summary
    text: str


def _g(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def _csv(header, rows) -> str:
    return "\n".join([",".join(header)] + [",".join(_g(v) for v in r) for r in rows]) + "\n"


def _horizon_for(u: float) -> float:
    return SHORT_HORIZON if u <= 0.98 else LONG_HORIZON


def _sim(model: PollingModel, opts: Options, designated: int, factor=None, default=None) -> sim.SimStats:
    u = load_report(model).utilizations[designated]
    run = opts.run(_horizon_for(u) if default is None else default)
    return sim.replicate(model, run, designated=designated, factor=factor)


def density_artifact(name: str, stats: sim.SimStats, eta: float, factor=None, queue=None,
                     xmax: float = DENSITY_XMAX) -> Artifact:
    table = sim.scaled_histogram(stats, factor, queue)
    keep = max(1, int(math.ceil(xmax / table.factor)))
    cut = sim.DensityTable(table.factor, table.probs[:keep])
    return Artifact(name, "density", cut.to_csv(eta))


# -- example 1 -------------------------------------------------------------

def ex1(opts: Options = Options()) -> list[Artifact]:
    """N1 marginals of P1..P3 and the vacation queue, scaled N2 density of P1,
    and the N1/N2 correlations."""
    rows, corr, out = [], [], []
    eta = None
    for name, lam in builtin.EX1_LAMBDA2.items():
        m = builtin.example1(lam)
        s = _sim(m, opts, designated=1)
        rows.append([name, lam, load_report(m).utilizations[1], *s.queue_dist[0, :6]])
        corr.append([name, "1-2", s.correlation])
        if name == "P1":
            eta = htcalc.eta(m, 1).eta
            out.append(density_artifact("fig1_density_P1.csv", s, eta))
    spec = htcalc.vacation_model(builtin.example1(), 0, 1)
    v = ctmc.vacation_steady_state(spec, opts.vacation_trunc)
    rows.append(["V", None, None, *v[:6]])
    header = ["model", "lambda2", "u2"] + [f"p{i}" for i in range(6)]
    return [Artifact("table1.csv", "table", _csv(header, rows)),
            *out,
            Artifact("correlation.csv", "table", _csv(["model", "pair", "corr"], corr))]


# -- example 2 -------------------------------------------------------------

INTERCHANGE = {"R": 0.5, "S": 1.0}


def interchange_models():
    """``(name, alpha, lambda2, model)`` for R1..R3 and S1..S3."""
    out = []
    for prefix, alpha in INTERCHANGE.items():
        for i, lam in enumerate(builtin.EX1_LAMBDA2.values(), start=1):
            out.append((f"{prefix}{i}", alpha, lam, htcalc.interchange(builtin.example1(lam), alpha)))
    return out


def ex2(opts: Options = Options()) -> list[Artifact]:
    rows = []
    for name, alpha, lam, m in interchange_models():
        d = htcalc.eta(m, 1)
        s = _sim(m, opts, designated=1)
        mean, std = s.scaled_mean(), s.scaled_std()
        rows.append([name, alpha, lam, load_report(m).utilizations[1], mean, std, std / mean,
                     s.scaled_mean_ci(), 1.0 / d.eta])
    header = ["model", "alpha", "lambda2", "u2", "mean", "std", "cv", "ci_halfwidth", "theory_mean"]
    return [Artifact("table2.csv", "table", _csv(header, rows))]


# -- example 3 -------------------------------------------------------------

def ex3(opts: Options = Options()) -> list[Artifact]:
    rows, dens = [], []
    for name, lam in builtin.EX3_LAMBDA2.items():
        m = builtin.example3(lam)
        d = htcalc.eta(m, 1)
        s = _sim(m, opts, designated=1)
        mean, std = s.scaled_mean(), s.scaled_std()
        rows.append([name, lam, load_report(m).utilizations[1], mean, std, std / mean,
                     s.scaled_mean_ci(), 1.0 / d.eta])
        dens.append(density_artifact(f"fig3_density_{name}.csv", s, d.eta))
    header = ["model", "lambda2", "u2", "mean", "std", "cv", "ci_halfwidth", "theory_mean"]
    return [Artifact("table4.csv", "table", _csv(header, rows)), *dens]


# -- example 4 -------------------------------------------------------------

def sweep_grid(crit, points: int = 60, lo: float = 0.01, hi: float = 1.3) -> np.ndarray:
    """Uniform grid refined with five points around each critical total rate."""
    refine = [c * f for c in crit for f in (0.98, 0.99, 0.995, 1.005, 1.01)]
    base = np.linspace(lo, hi, max(points - len(refine), 2))
    return np.unique(np.round(np.concatenate([base, refine]), 12))


def table5_pairs(model: PollingModel, ratios, stages, fraction: float = 0.995):
    """For each ladder stage but the last: ``(stage, Lambda, stable queues,
    original model, reduced model or vacation spec)``."""
    out = []
    for s, stage in enumerate(stages[:-1]):
        lam = fraction * stage.Lambda_crit
        gone = [st.queue for st in stages[: s + 1]]
        survivors = htcalc.surviving_queues(model.n, gone)
        orig = model.on_ray(ratios, lam)
        if len(survivors) >= 2:
            reduced = htcalc.corresponding_system(orig, gone)
        else:
            reduced = htcalc.reduce_to_vacation(orig, survivors[0])
        out.append((s, lam, survivors, orig, reduced))
    return out


def table5_stats(opts: Options, fraction: float = 0.995, default=LONG_HORIZON):
    """Simulated p0..p5 of the stable queues, original vs reduced system."""
    model, ratios = builtin.example4(), builtin.EX4_RATIOS
    stages = htcalc.critical_ladder(model, ratios)
    run = opts.run(default)
    results = []
    for s, lam, survivors, orig, reduced in table5_pairs(model, ratios, stages, fraction):
        a = sim.replicate(orig, run, designated=stages[s].queue, pair=(0, 1))
        if isinstance(reduced, htcalc.VacationModelSpec):
            b = sim.simulate_vacation(reduced, run)
        else:
            b = sim.replicate(reduced, run, designated=0, pair=(0, 1))
        pa = np.array([a.queue_dist[q, :6] for q in survivors])
        pb = b.queue_dist[:, :6]
        results.append((stages[s], lam, survivors, pa, pb))
    return results


def ex4(opts: Options = Options()) -> list[Artifact]:
    model, ratios = builtin.example4(), builtin.EX4_RATIOS
    stages = htcalc.critical_ladder(model, ratios)
    crit = [st.Lambda_crit for st in stages]
    out = []

    ladder_rows = [[i + 1, st.queue + 1, st.Lambda_crit, st.derivation.eta] for i, st in enumerate(stages)]
    out.append(Artifact("ladder.csv", "ladder", _csv(["stage", "queue", "Lambda_crit", "eta_ray"], ladder_rows)))

    sweep_run = sim.RunConfig(horizon=opts.sweep_horizon, seed=opts.seed, replications=1)
    rows = []
    for lam in sweep_grid(crit, opts.sweep_points):
        s = sim.replicate(model.on_ray(ratios, float(lam)), sweep_run, designated=0)
        rows.append([float(lam), *s.mean_queue])
    out.append(Artifact("fig2_sweep.csv", "sweep",
                        _csv(["Lambda"] + [f"mean_N{i + 1}" for i in range(model.n)], rows)))

    t5, diff = [], []
    for stage, lam, survivors, pa, pb in table5_stats(opts):
        label = f"Q{stage.queue + 1}"
        for r, q in enumerate(survivors):
            t5.append([label, lam, q + 1, "original", *pa[r]])
            t5.append([label, lam, q + 1, "corresponding", *pb[r]])
            diff.append([label, q + 1, float(np.abs(pa[r] - pb[r]).max())])
    header = ["critical", "Lambda", "queue", "system"] + [f"p{i}" for i in range(6)]
    out.append(Artifact("table5.csv", "table", _csv(header, t5)))
    out.append(Artifact("table5_diff.csv", "table", _csv(["critical", "queue", "max_abs_diff"], diff)))

    for stage in stages:
        lam = 0.995 * stage.Lambda_crit
        factor = stage.Lambda_crit - lam
        run = opts.run(SHORT_HORIZON)
        s = sim.replicate(model.on_ray(ratios, lam), run, designated=stage.queue, factor=factor)
        out.append(density_artifact(f"fig4_density_Q{stage.queue + 1}.csv", s, stage.derivation.eta))

    # two stable queues against the system with queues 3 and 4 folded in
    gone = [st.queue for st in stages[:2]]
    limit = stages[2].Lambda_crit
    grid = np.linspace(0.02, 0.99 * limit, 20)
    rows = []
    for lam in grid:
        orig = model.on_ray(ratios, float(lam))
        red = htcalc.corresponding_system(orig, gone)
        a = sim.replicate(orig, sweep_run, designated=0)
        b = sim.replicate(red, sweep_run, designated=0)
        rows.append([float(lam), a.mean_queue[0], b.mean_queue[0], a.mean_queue[1], b.mean_queue[1]])
    header = ["Lambda", "orig_N1", "corr_N1", "orig_N2", "corr_N2"]
    out.append(Artifact("fig5_corresponding.csv", "sweep", _csv(header, rows)))
    return out


EXAMPLES = {"ex1": ex1, "ex2": ex2, "ex3": ex3, "ex4": ex4}


def reproduce(example_id: str, opts: Options = Options()) -> list[Artifact]:
    try:
        fn = EXAMPLES[example_id.lower()]
    except KeyError:
        raise KeyError(f"unknown example {example_id!r}; choose from {', '.join(EXAMPLES)}") from None
    return fn(opts)
