"""Discrete-event simulation of k-limited polling systems and vacation queues.

Each replication owns a :class:`~kpoll.dists.RandomStream` keyed by
``(seed, replication)``; every queue/variate type draws from its own child
stream, so results depend only on the seed set.  Queue lengths count the
customer in service.  All occupancy statistics are time averages over
``[warmup, horizon]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import stats as sps

from . import _kernel, dists
from .dists import RandomStream
from .htcalc import VacationModelSpec
from .model import PollingModel, load_report

POOL_SIZE = 1 << 16


@dataclass(frozen=True)
class RunConfig:
    horizon: float = 1e7
    warmup: float | None = None  # default: 10% of the horizon
    seed: int = 1
    replications: int = 1
    histogram_cap: int = 10_000
    batches: int = 20
    waiting_server: bool = False

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", 0.1 * self.horizon)
        if not 0 <= self.warmup < self.horizon:
            raise ValueError("need 0 <= warmup < horizon")
        if self.histogram_cap < 1:
            raise ValueError("histogram_cap must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if self.batches < 10:
            raise ValueError("batches must be >= 10 for batch-means intervals")


@dataclass(frozen=True)
class Visiting:
    """Server at ``queue``; ``served`` counts customers of this visit including
    the one in service (0 while the server waits at an empty queue)."""

    queue: int
    served: int


@dataclass(frozen=True)
class Switching:
    from_queue: int


ServerPhase = Union[Visiting, Switching]


def _phase(iv) -> ServerPhase:
    mode, q = int(iv[_kernel.I_MODE]), int(iv[_kernel.I_QUEUE])
    if mode == _kernel.SWITCHING:
        return Switching(q)
    if mode == _kernel.SERVING:
        return Visiting(q, int(iv[_kernel.I_SERVED]) + 1)
    return Visiting(q, 0)


def _half_width(values: np.ndarray, level: float = 0.95) -> np.ndarray:
    """t-based confidence half-width of the mean along axis 0."""
    n = values.shape[0]
    if n < 2:
        return np.full(values.shape[1:], np.nan)
    return sps.t.ppf(0.5 + level / 2, n - 1) * values.std(axis=0, ddof=1) / math.sqrt(n)


@dataclass
class SimStats:
    """Time-weighted statistics of one or more replications.

    ``queue_dist[i]`` holds ``p_0 .. p_cap`` followed by the overflow mass.
    """

    limits: tuple[int, ...]
    queue_dist: np.ndarray
    mean_queue: np.ndarray
    mean_ci: np.ndarray
    second_moment: np.ndarray
    wait_mean: np.ndarray
    wait_ci: np.ndarray
    pair: tuple[int, int]
    cross_moment: float
    arrivals: np.ndarray
    departures: np.ndarray
    in_system: np.ndarray
    visits: np.ndarray
    full_visits: np.ndarray
    max_served: np.ndarray
    designated: int
    factor: float
    horizon: float
    warmup: float
    replications: int
    batch_means: np.ndarray  # (replications, batches, queues)
    rep_means: np.ndarray  # (replications, queues)
    events: int = 0
    final_phase: ServerPhase | None = None  # of the last replication

    @property
    def correlation(self) -> float:
        a, b = self.pair
        ma, mb = self.mean_queue[a], self.mean_queue[b]
        va = self.second_moment[a] - ma**2
        vb = self.second_moment[b] - mb**2
        if va <= 0 or vb <= 0:
            return 0.0
        return float((self.cross_moment - ma * mb) / math.sqrt(va * vb))

    @property
    def std_queue(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.second_moment - self.mean_queue**2, 0.0))

    @property
    def full_visit_fraction(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.full_visits / self.visits

    def scaled_mean(self, factor: float | None = None, queue: int | None = None) -> float:
        f = self.factor if factor is None else factor
        return f * float(self.mean_queue[self.designated if queue is None else queue])

    def scaled_mean_ci(self, factor: float | None = None, queue: int | None = None) -> float:
        f = self.factor if factor is None else factor
        return f * float(self.mean_ci[self.designated if queue is None else queue])

    def scaled_std(self, factor: float | None = None, queue: int | None = None) -> float:
        f = self.factor if factor is None else factor
        return f * float(self.std_queue[self.designated if queue is None else queue])

    def scaled_wait_mean(self, factor: float | None = None, queue: int | None = None) -> float:
        f = self.factor if factor is None else factor
        return f * float(self.wait_mean[self.designated if queue is None else queue])

    def to_csv(self, upto: int | None = None) -> str:
        """``queue,k,p0,...,p_cap,overflow,mean,ci_halfwidth``; ``upto`` truncates the
        listed probabilities (the remainder is folded into ``overflow``)."""
        cap = self.queue_dist.shape[1] - 2
        last = cap if upto is None else min(upto, cap)
        head = ["queue", "k"] + [f"p{i}" for i in range(last + 1)] + ["overflow", "mean", "ci_halfwidth"]
        lines = [",".join(head)]
        for q in range(len(self.limits)):
            p = self.queue_dist[q]
            cells = [str(q + 1), str(self.limits[q])] + [f"{v:.6g}" for v in p[: last + 1]]
            cells += [f"{p[last + 1:].sum():.6g}", f"{self.mean_queue[q]:.6g}", f"{self.mean_ci[q]:.6g}"]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def correlation_csv(self) -> str:
        a, b = self.pair
        return f"pair,corr\n{a + 1}-{b + 1},{self.correlation:.6g}\n"


def _default_factor(model: PollingModel | None, queue: int) -> float:
    if model is None:
        return math.nan
    u = load_report(model).utilizations[queue]
    return 1.0 - u if u < 1 else math.nan


def _run_kernel(arrivals, services, switchovers, limits, run: RunConfig, stream: RandomStream,
                pair: tuple[int, int]):
    """Drive the compiled loop for one replication; returns the raw accumulators."""
    N = len(limits)
    laws = [("one", a) for a in arrivals] + [("one", s) for s in services] + [("conv", s) for s in switchovers]
    children = [stream.child(c) for c in range(3 * N)]
    pools = np.empty((3 * N, POOL_SIZE))

    def fill(c, start):
        kind, law = laws[c]
        n = POOL_SIZE - start
        if kind == "one":
            pools[c, start:] = dists.sample(law, children[c], n)
        else:
            pools[c, start:] = dists.sample_convolution(law, children[c], n)

    for c in range(3 * N):
        fill(c, 0)
    pos = np.zeros(3 * N, dtype=np.int64)

    fs = np.zeros(4)
    iv = np.zeros(8, dtype=np.int64)
    # start at t=0 as if just finishing the switch-over into queue 0
    iv[_kernel.I_MODE] = _kernel.SWITCHING
    iv[_kernel.I_QUEUE] = N - 1
    fs[_kernel.F_EVENT] = 0.0
    fs[_kernel.F_BATCH_END] = run.warmup + (run.horizon - run.warmup) / run.batches
    next_arr = pools[:N, 0].copy()
    pos[:N] = 1

    nq = np.zeros(N, dtype=np.int64)
    rq = np.zeros(N, dtype=np.int64)
    buf = np.zeros((N, 1024))
    head = np.zeros(N, dtype=np.int64)
    cap = run.histogram_cap
    B = run.batches
    acc = dict(
        hist=np.zeros((N, cap + 2)), sum_n=np.zeros(N), sum_n2=np.zeros(N), bsum=np.zeros((B, N)),
        scalars=np.zeros(2), wsum=np.zeros(N), wsum2=np.zeros(N), wcnt=np.zeros(N),
        bwsum=np.zeros((B, N)), bwcnt=np.zeros((B, N)),
        arrivals=np.zeros(N, dtype=np.int64), departures=np.zeros(N, dtype=np.int64),
        visits=np.zeros(N, dtype=np.int64), full_visits=np.zeros(N, dtype=np.int64),
        max_served=np.zeros(N, dtype=np.int64),
    )
    lim = np.asarray(limits, dtype=np.int64)
    while True:
        code = _kernel.run(
            fs, iv, next_arr, nq, rq, buf, head, pools, pos, lim,
            float(run.horizon), float(run.warmup), B, bool(run.waiting_server), pair[0], pair[1],
            acc["hist"], acc["sum_n"], acc["sum_n2"], acc["bsum"], acc["scalars"],
            acc["wsum"], acc["wsum2"], acc["wcnt"], acc["bwsum"], acc["bwcnt"],
            acc["arrivals"], acc["departures"], acc["visits"], acc["full_visits"], acc["max_served"],
        )
        if code == 0:
            break
        if code > 0:
            c = code - 1
            rest = POOL_SIZE - pos[c]
            pools[c, :rest] = pools[c, pos[c]:]
            fill(c, rest)
            pos[c] = 0
        else:
            old = buf
            size = old.shape[1]
            buf = np.zeros((N, 2 * size))
            for q in range(N):
                idx = (head[q] + np.arange(rq[q])) % size
                buf[q, : rq[q]] = old[q, idx]
            head[:] = 0
    acc["in_system"] = nq.copy()
    acc["events"] = int(iv[_kernel.I_EVENTS])
    acc["phase"] = _phase(iv)
    return acc


def _stats_from(accs, limits, run: RunConfig, pair, designated, factor) -> SimStats:
    T = run.horizon - run.warmup
    blen = T / run.batches
    R = len(accs)
    dist = np.mean([a["hist"] / T for a in accs], axis=0)
    rep_means = np.array([a["sum_n"] / T for a in accs])
    second = np.mean([a["sum_n2"] / T for a in accs], axis=0)
    cross = float(np.mean([a["scalars"][0] / T for a in accs]))
    batch_means = np.array([a["bsum"] / blen for a in accs])
    with np.errstate(invalid="ignore", divide="ignore"):
        rep_wait = np.array([a["wsum"] / a["wcnt"] for a in accs])
        batch_wait = np.array([a["bwsum"] / a["bwcnt"] for a in accs])
    if R >= 2:
        mean_ci = _half_width(rep_means)
        wait_ci = _half_width(rep_wait)
    else:
        mean_ci = _half_width(batch_means[0])
        wait_ci = _half_width(batch_wait[0])
    wcnt = np.sum([a["wcnt"] for a in accs], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        wait_mean = np.sum([a["wsum"] for a in accs], axis=0) / wcnt

    def total(key):
        return np.sum([a[key] for a in accs], axis=0)

    return SimStats(
        limits=tuple(int(k) for k in limits), queue_dist=dist, mean_queue=rep_means.mean(axis=0),
        mean_ci=mean_ci, second_moment=second, wait_mean=wait_mean, wait_ci=wait_ci, pair=pair,
        cross_moment=cross, arrivals=total("arrivals"), departures=total("departures"),
        in_system=total("in_system"), visits=total("visits"), full_visits=total("full_visits"),
        max_served=np.max([a["max_served"] for a in accs], axis=0), designated=designated,
        factor=factor, horizon=run.horizon, warmup=run.warmup, replications=R,
        batch_means=batch_means, rep_means=rep_means, events=sum(a["events"] for a in accs), final_phase=accs[-1]["phase"],
    )


def _model_laws(model: PollingModel):
    return ([q.arrival for q in model.queues], [q.service for q in model.queues],
            [q.switchover for q in model.queues])


def _check_pair(pair, n):
    a, b = pair
    if not (0 <= a < n and 0 <= b < n):
        raise IndexError(f"pair {pair} out of range")
    return int(a), int(b)


def simulate(model: PollingModel, run: RunConfig = RunConfig(), designated: int = 1,
             pair: Sequence[int] = (0, 1), factor: float | None = None, replication: int = 0) -> SimStats:
    """One replication (stream ``(run.seed, replication)``); CIs from batch means."""
    pair = _check_pair(pair, model.n)
    f = _default_factor(model, designated) if factor is None else float(factor)
    acc = _run_kernel(*_model_laws(model), model.limits, run, RandomStream(run.seed, replication), pair)
    return _stats_from([acc], model.limits, run, pair, designated, f)


def replicate(model: PollingModel, run: RunConfig = RunConfig(), designated: int = 1,
              pair: Sequence[int] = (0, 1), factor: float | None = None) -> SimStats:
    """``run.replications`` independent runs pooled in replication order; CIs across runs."""
    pair = _check_pair(pair, model.n)
    f = _default_factor(model, designated) if factor is None else float(factor)
    laws = _model_laws(model)
    accs = [_run_kernel(*laws, model.limits, run, RandomStream(run.seed, r), pair)
            for r in range(run.replications)]
    return _stats_from(accs, model.limits, run, pair, designated, f)


def simulate_vacation(spec: VacationModelSpec, run: RunConfig = RunConfig()) -> SimStats:
    """Multiple-vacation queue with k-limited service (vacations repeat while empty)."""
    accs = [
        _run_kernel([spec.arrival], [spec.service], [spec.vacation], (spec.limit,), run,
                    RandomStream(run.seed, r), (0, 0))
        for r in range(run.replications)
    ]
    return _stats_from(accs, (spec.limit,), run, (0, 0), 0, math.nan)


@dataclass(frozen=True)
class DensityTable:
    """Piecewise-constant density of ``factor * N``: bin ``n`` covers
    ``[n * factor, (n + 1) * factor)``."""

    factor: float
    probs: np.ndarray
    overflow: float = 0.0
    edges: np.ndarray = field(init=False)
    density: np.ndarray = field(init=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "edges", self.factor * np.arange(probs.size + 1))
        object.__setattr__(self, "density", probs / self.factor)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def cdf(self, x) -> np.ndarray:
        """CDF with the mass spread uniformly within each bin."""
        cum = np.concatenate([[0.0], np.cumsum(self.probs)])
        return np.interp(x, self.edges, cum)

    def ks_exponential(self, eta: float) -> float:
        """Kolmogorov-Smirnov distance to Exp(eta).  The piecewise-linear CDF is
        compared at the bin edges and at the interior points where the
        exponential CDF has the same slope."""
        cum = np.concatenate([[0.0], np.cumsum(self.probs)])
        expo = 1.0 - np.exp(-eta * self.edges)
        worst = float(np.abs(cum - expo).max())
        dens = self.density
        with np.errstate(divide="ignore"):
            x = -np.log(dens / eta) / eta
        inside = (dens > 0) & (x > self.edges[:-1]) & (x < self.edges[1:])
        if inside.any():
            xi = x[inside]
            worst = max(worst, float(np.abs(self.cdf(xi) - (1.0 - np.exp(-eta * xi))).max()))
        tail = 1.0 - cum[-1]
        return max(worst, abs(tail - np.exp(-eta * self.edges[-1])))

    def to_csv(self, eta: float | None = None) -> str:
        head = "xi,density" + (",exp_density" if eta is not None else "")
        lines = [head]
        for x, d in zip(self.midpoints, self.density):
            row = f"{x:.6g},{d:.6g}"
            if eta is not None:
                row += f",{eta * math.exp(-eta * x):.6g}"
            lines.append(row)
        return "\n".join(lines) + "\n"


def scaled_histogram(stats: SimStats | np.ndarray, factor: float | None = None,
                     queue: int | None = None) -> DensityTable:
    """Density of ``factor * N_queue`` with one bin per integer queue length."""
    if isinstance(stats, SimStats):
        f = stats.factor if factor is None else factor
        q = stats.designated if queue is None else queue
        row = stats.queue_dist[q]
        probs, overflow = row[:-1], float(row[-1])
    else:
        f = factor
        probs, overflow = np.asarray(stats, dtype=float), 0.0
    if f is None or not f > 0:
        raise ValueError(f"factor must be > 0, got {f}")
    return DensityTable(float(f), probs, overflow)
