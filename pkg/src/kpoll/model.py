"""Cyclic k-limited polling models: definition, loads, stability and config files.

Queues are indexed from 0 in the API; config files and CSV output number
them from 1.  The switch-over attached to a queue is the one incurred when
the server *leaves* it.  A switch-over is a convolution list of
distributions, which lets a reduced ("corresponding") system carry the
service and switch-over work of the queues it absorbed.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Sequence

from . import dists
from .dists import DistributionError, DistributionSpec


class ModelError(ValueError):
    """Invalid model or model file.  ``line`` / ``queue`` locate the problem (1-based)."""

    def __init__(self, message, line=None, queue=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if queue is not None:
            where.append(f"queue {queue}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.queue = queue


@dataclass(frozen=True)
class QueueSpec:
    arrival: DistributionSpec
    service: DistributionSpec
    limit: int
    switchover: tuple[DistributionSpec, ...] = (dists.constant(0.0),)

    def __post_init__(self):
        if isinstance(self.switchover, DistributionSpec):
            object.__setattr__(self, "switchover", (self.switchover,))
        else:
            object.__setattr__(self, "switchover", tuple(self.switchover))
        if not self.switchover:
            raise ModelError("empty switch-over list")
        if int(self.limit) != self.limit or self.limit < 1:
            raise ModelError(f"limit must be a positive integer, got {self.limit}")
        object.__setattr__(self, "limit", int(self.limit))
        if not dists.mean(self.service) > 0:
            raise ModelError("service time mean must be > 0")
        if not dists.mean(self.arrival) > 0:
            raise ModelError("interarrival mean must be > 0")

    @property
    def arrival_rate(self) -> float:
        return 1.0 / dists.mean(self.arrival)

    @property
    def service_moments(self) -> dists.MomentSummary:
        return dists.moments(self.service)

    @property
    def switchover_moments(self) -> dists.MomentSummary:
        return dists.convolution_moments(self.switchover)

    @property
    def all_exponential(self) -> bool:
        return (
            self.arrival.is_exponential
            and self.service.is_exponential
            and all(s.is_exponential for s in self.switchover)
        )


@dataclass(frozen=True)
class PollingModel:
    queues: tuple[QueueSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "queues", tuple(self.queues))
        if len(self.queues) < 2:
            raise ModelError("a polling model needs at least 2 queues")

    @property
    def n(self) -> int:
        return len(self.queues)

    def __len__(self):
        return len(self.queues)

    def __getitem__(self, i) -> QueueSpec:
        return self.queues[i]

    @property
    def limits(self) -> tuple[int, ...]:
        return tuple(q.limit for q in self.queues)

    @property
    def rates(self) -> tuple[float, ...]:
        return tuple(q.arrival_rate for q in self.queues)

    @property
    def total_switchover(self) -> dists.MomentSummary:
        return dists.sum_moments([q.switchover_moments for q in self.queues])

    @property
    def all_exponential(self) -> bool:
        return all(q.all_exponential for q in self.queues)

    def with_rates(self, rates: Sequence[float]) -> "PollingModel":
        """Same model with new arrival rates; interarrival SCVs are kept."""
        if len(rates) != self.n:
            raise ValueError(f"expected {self.n} rates, got {len(rates)}")
        return PollingModel(
            tuple(replace(q, arrival=dists.with_rate(q.arrival, r)) for q, r in zip(self.queues, rates))
        )

    def on_ray(self, ratios: Sequence[float], total_rate: float) -> "PollingModel":
        """Rates ``ratios[i] * total_rate`` (ray scaling with fixed proportions)."""
        return self.with_rates([r * total_rate for r in check_ratios(ratios, self.n)])


def check_ratios(ratios: Sequence[float], n: int) -> tuple[float, ...]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != n:
        raise ValueError(f"expected {n} ratios, got {len(ratios)}")
    if any(not r > 0 for r in ratios):
        raise ValueError("ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    return ratios


def arrival_rate(model: PollingModel, i: int) -> float:
    return model[i].arrival_rate


@dataclass(frozen=True)
class LoadReport:
    rates: tuple[float, ...]
    loads: tuple[float, ...]
    rho: float
    utilizations: tuple[float, ...]
    mean_cycle: float
    stable: tuple[bool, ...]

    def to_csv(self) -> str:
        lines = ["queue,lambda,rho_i,u_i,stable"]
        for i, (lam, r, u, s) in enumerate(zip(self.rates, self.loads, self.utilizations, self.stable)):
            lines.append(f"{i + 1},{lam:.6g},{r:.6g},{u:.6g},{str(s).lower()}")
        lines.append(f"total,rho={self.rho:.6g},EC={self.mean_cycle:.6g}")
        return "\n".join(lines) + "\n"


def load_report(model: PollingModel) -> LoadReport:
    """Loads, utilizations ``u_i = rho + lambda_i E[S] / k_i``, mean cycle time, stability."""
    rates = model.rates
    loads = tuple(lam * q.service_moments.mean for lam, q in zip(rates, model.queues))
    rho = sum(loads)
    es = model.total_switchover.mean
    utils = tuple(rho + lam * es / q.limit for lam, q in zip(rates, model.queues))
    cycle = es / (1.0 - rho) if rho < 1 else math.inf
    return LoadReport(rates, loads, rho, utils, cycle, tuple(u < 1 for u in utils))


def cycle_condition(model: PollingModel) -> tuple[bool, ...]:
    """Stability in the form ``lambda_i E[C] < k_i`` (needs rho < 1)."""
    rep = load_report(model)
    return tuple(lam * rep.mean_cycle < q.limit for lam, q in zip(rep.rates, model.queues))


# --- config files -----------------------------------------------------------

_SECTION = re.compile(r"^\[\s*queue\s+(\d+)\s*\]$", re.IGNORECASE)
_KEYS = ("arrival", "service", "limit", "switchover")


def parse_model(text: str) -> PollingModel:
    """Parse the line-oriented model format.

    ::

        [queue 1]
        arrival    = exp 0.06
        service    = exp 0.5
        limit      = 2
        switchover = exp 0.5

    Switch-overs may be convolutions: ``exp 0.5 + 5 * exp 0.5``.
    """
    sections: list[dict] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            number = int(m.group(1))
            if number != len(sections) + 1:
                raise ModelError(f"expected [queue {len(sections) + 1}], got [queue {number}]", line=lineno)
            current = {"_line": lineno}
            sections.append(current)
            continue
        if line.startswith("["):
            raise ModelError(f"unknown section {line!r}", line=lineno)
        if "=" not in line:
            raise ModelError(f"expected 'key = value', got {line!r}", line=lineno)
        if current is None:
            raise ModelError("key outside a [queue N] section", line=lineno)
        key, _, value = (s.strip() for s in line.partition("="))
        key = key.lower()
        if key not in _KEYS:
            raise ModelError(f"unknown key {key!r}", line=lineno)
        if key in current:
            raise ModelError(f"duplicate key {key!r}", line=lineno)
        try:
            if key == "limit":
                if not re.fullmatch(r"[+-]?\d+", value):
                    raise ModelError(f"limit must be an integer, got {value!r}", line=lineno)
                current[key] = int(value)
            elif key == "switchover":
                current[key] = dists.parse_convolution(value)
            else:
                current[key] = dists.parse_distribution(value)
        except DistributionError as exc:
            raise ModelError(str(exc), line=lineno) from None

    queues = []
    for idx, sec in enumerate(sections, 1):
        for key in _KEYS:
            if key not in sec:
                raise ModelError(f"missing key {key!r}", queue=idx)
        try:
            queues.append(QueueSpec(sec["arrival"], sec["service"], sec["limit"], sec["switchover"]))
        except (ModelError, DistributionError) as exc:
            raise ModelError(str(exc), queue=idx) from None
    try:
        return PollingModel(tuple(queues))
    except ModelError as exc:
        raise ModelError(str(exc)) from None


def render_model(model: PollingModel) -> str:
    out = []
    for i, q in enumerate(model.queues, 1):
        out.append(f"[queue {i}]")
        out.append(f"arrival    = {q.arrival}")
        out.append(f"service    = {q.service}")
        out.append(f"limit      = {q.limit}")
        out.append(f"switchover = {dists.render_convolution(q.switchover)}")
    return "\n".join(out) + "\n"


def load_model(path) -> PollingModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())
