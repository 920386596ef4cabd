"""Parametric distributions for interarrival, service and switch-over times.

Every spec knows its exact first two moments and can be sampled from a
:class:`RandomStream`.  Streams are counter-based (Philox) and keyed by
``(base_seed, stream_id)``, so replications are reproducible no matter in
which order they run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FAMILIES = {
    "exp": ("rate",),
    "gamma": ("shape", "rate"),
    "pareto": ("scale", "shape"),
    "uniform": ("lower", "upper"),
    "const": ("value",),
}


class DistributionError(ValueError):
    """Invalid distribution parameters or syntax."""


class InfiniteMomentError(DistributionError):
    """Raised when a requested moment does not exist."""


@dataclass(frozen=True)
class DistributionSpec:
    """A nonnegative random variable given by family name and parameters.

    ``exp 0`` is accepted as the interarrival law of a queue that never
    receives customers; its mean is infinite.
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DistributionError(f"unknown family {self.family!r}")
        names = FAMILIES[self.family]
        if len(self.params) != len(names):
            raise DistributionError(
                f"{self.family} takes {len(names)} parameter(s) {names}, got {len(self.params)}"
            )
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if any(not math.isfinite(p) for p in params):
            raise DistributionError(f"{self.family}: parameters must be finite")
        if self.family == "exp":
            if params[0] < 0:
                raise DistributionError("exp: rate must be >= 0")
        elif self.family == "uniform":
            lo, hi = params
            if lo < 0 or hi <= lo:
                raise DistributionError("uniform: need 0 <= lower < upper")
        elif self.family == "const":
            if params[0] < 0:
                raise DistributionError("const: value must be >= 0")
        elif any(p <= 0 for p in params):
            raise DistributionError(f"{self.family}: parameters must be > 0")

    def __str__(self):
        return " ".join([self.family] + [repr(p) for p in self.params])

    @property
    def is_exponential(self) -> bool:
        return self.family == "exp"

    @property
    def is_zero(self) -> bool:
        return self.family == "const" and self.params[0] == 0.0


def exponential(rate):
    return DistributionSpec("exp", (rate,))


def gamma(shape, rate):
    return DistributionSpec("gamma", (shape, rate))


def pareto(scale, shape):
    return DistributionSpec("pareto", (scale, shape))


def uniform(lower, upper):
    return DistributionSpec("uniform", (lower, upper))


def constant(value):
    return DistributionSpec("const", (value,))


@dataclass(frozen=True)
class MomentSummary:
    mean: float
    variance: float

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean**2

    @property
    def scv(self) -> float:
        if self.mean > 0 and math.isfinite(self.mean):
            return self.variance / self.mean**2
        return math.nan


def mean(spec: DistributionSpec) -> float:
    """First moment only; defined for Pareto with shape > 1."""
    f, p = spec.family, spec.params
    if f == "exp":
        return math.inf if p[0] == 0 else 1.0 / p[0]
    if f == "gamma":
        return p[0] / p[1]
    if f == "pareto":
        xm, a = p
        if a <= 1:
            raise InfiniteMomentError(f"{spec}: infinite mean (shape <= 1)")
        return a * xm / (a - 1)
    if f == "uniform":
        return 0.5 * (p[0] + p[1])
    return p[0]


def moments(spec: DistributionSpec) -> MomentSummary:
    """Exact mean and variance of ``spec``.

    Raises
    ------
    InfiniteMomentError
        For Pareto with shape <= 2 (infinite second moment).
    """
    f, p = spec.family, spec.params
    m = mean(spec)
    if f == "exp":
        var = math.inf if p[0] == 0 else 1.0 / p[0] ** 2
    elif f == "gamma":
        var = p[0] / p[1] ** 2
    elif f == "pareto":
        xm, a = p
        if a <= 2:
            raise InfiniteMomentError(f"{spec}: infinite second moment (shape <= 2)")
        var = a * xm**2 / ((a - 1) ** 2 * (a - 2))
    elif f == "uniform":
        var = (p[1] - p[0]) ** 2 / 12.0
    else:
        var = 0.0
    return MomentSummary(m, var)


def sum_moments(parts: Sequence[MomentSummary]) -> MomentSummary:
    """Moments of a sum of independent variables."""
    if not parts:
        raise ValueError("sum_moments needs at least one part")
    return MomentSummary(sum(p.mean for p in parts), sum(p.variance for p in parts))


def convolution_moments(specs: Iterable[DistributionSpec]) -> MomentSummary:
    return sum_moments([moments(s) for s in specs])


def fit_two_moments(mean: float, variance: float) -> DistributionSpec:
    """Constant when ``variance == 0``, otherwise the gamma law with these moments."""
    if not mean > 0:
        raise DistributionError(f"fit_two_moments: mean must be > 0, got {mean}")
    if variance < 0:
        raise DistributionError(f"fit_two_moments: variance must be >= 0, got {variance}")
    if variance == 0:
        return constant(mean)
    return gamma(mean * mean / variance, mean / variance)


def with_mean(spec: DistributionSpec, new_mean: float) -> DistributionSpec:
    """Rescale ``spec`` to ``new_mean`` keeping its coefficient of variation."""
    if spec.family == "exp" and spec.params[0] == 0:
        raise DistributionError("cannot rescale a null arrival process")
    if new_mean == math.inf:
        if spec.family != "exp":
            raise DistributionError("only exp supports an infinite mean (exp 0)")
        return exponential(0.0)
    factor = new_mean / mean(spec)
    f, p = spec.family, spec.params
    if f == "exp":
        return exponential(1.0 / new_mean)
    if f == "gamma":
        return gamma(p[0], p[1] / factor)
    if f == "pareto":
        return pareto(p[0] * factor, p[1])
    if f == "uniform":
        return uniform(p[0] * factor, p[1] * factor)
    return constant(new_mean)


def with_rate(spec: DistributionSpec, rate: float) -> DistributionSpec:
    """Interarrival spec with arrival rate ``rate`` and the same shape as ``spec``."""
    if rate < 0:
        raise DistributionError("rate must be >= 0")
    if rate == 0:
        return exponential(0.0)
    if spec.family == "exp":
        return exponential(rate)
    return with_mean(spec, 1.0 / rate)


def parse_distribution(text: str) -> DistributionSpec:
    """Parse ``exp 0.5``, ``gamma 0.5 0.03``, ``pareto 1.17 2.4``, ``uniform 0 4``, ``const 2``."""
    tokens = text.split()
    if not tokens:
        raise DistributionError("empty distribution")
    family, *args = tokens
    family = family.lower()
    if family not in FAMILIES:
        raise DistributionError(f"unknown family {family!r}")
    try:
        values = tuple(float(a) for a in args)
    except ValueError:
        raise DistributionError(f"non-numeric parameter in {text.strip()!r}") from None
    return DistributionSpec(family, values)


def parse_convolution(text: str) -> tuple[DistributionSpec, ...]:
    """Parse ``part + part + ...`` where a part may carry a ``n *`` repeat."""
    parts: list[DistributionSpec] = []
    for chunk in text.split("+"):
        chunk = chunk.strip()
        count = 1
        if "*" in chunk:
            head, _, chunk = chunk.partition("*")
            try:
                count = int(head)
            except ValueError:
                raise DistributionError(f"bad repeat count {head.strip()!r}") from None
            if count < 1:
                raise DistributionError("repeat count must be >= 1")
        parts.extend([parse_distribution(chunk)] * count)
    return tuple(parts)


def render_convolution(parts: Sequence[DistributionSpec]) -> str:
    out = []
    i = 0
    while i < len(parts):
        j = i
        while j < len(parts) and parts[j] == parts[i]:
            j += 1
        out.append(str(parts[i]) if j - i == 1 else f"{j - i} * {parts[i]}")
        i = j
    return " + ".join(out)


@dataclass
class RandomStream:
    """Reproducible Philox stream for one replication (or one sub-purpose of it).

    ``counter`` counts the variates drawn through :func:`sample`.
    """

    base_seed: int
    stream_id: int = 0
    counter: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(int(self.base_seed), spawn_key=(int(self.stream_id),))
        self._gen = np.random.Generator(np.random.Philox(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, index: int) -> "RandomStream":
        """Independent sub-stream, e.g. one per queue and variate type."""
        sub = RandomStream.__new__(RandomStream)
        sub.base_seed = self.base_seed
        sub.stream_id = self.stream_id
        sub.counter = 0
        ss = np.random.SeedSequence(int(self.base_seed), spawn_key=(int(self.stream_id), int(index)))
        sub._gen = np.random.Generator(np.random.Philox(ss))
        return sub


def sample(spec: DistributionSpec, stream: RandomStream, size=None):
    """Draw one variate (``size=None``) or an array of variates."""
    g = stream.generator
    n = 1 if size is None else int(np.prod(size))
    f, p = spec.family, spec.params
    if f == "exp":
        if p[0] == 0:
            out = math.inf if size is None else np.full(size, math.inf)
        else:
            out = g.exponential(1.0 / p[0], size)
    elif f == "gamma":
        out = g.gamma(p[0], 1.0 / p[1], size)
    elif f == "pareto":
        # inverse transform; 1 - U lies in (0, 1]
        out = p[0] * (1.0 - g.random(size)) ** (-1.0 / p[1])
    elif f == "uniform":
        out = g.uniform(p[0], p[1], size)
    else:
        out = np.full(size, p[0]) if size is not None else p[0]
    stream.counter += n
    return float(out) if size is None else out


def sample_convolution(parts: Sequence[DistributionSpec], stream: RandomStream, size: int) -> np.ndarray:
    """Sums of independent draws, one per part (compound switch-overs, vacations)."""
    total = np.zeros(size)
    for spec in parts:
        if spec.is_zero:
            continue
        total += sample(spec, stream, size)
    return total
