"""Closed-form heavy-traffic analytics for a critically loaded queue.

The critical queue ``j`` absorbs a ``1/k_j`` share of the cycle's
switch-over work, and of the work of every other overloaded queue, into an
*effective service time* ``B'``.  Its scaled queue length is exponential with
parameter ``eta``; the value of ``eta`` depends on the scaling used to
approach the critical point:

* ``one_minus_u``   -- ``(1 - u_j) N_j``
* ``lambda_gap(w)`` -- ``(lambda_j^crit - lambda_j) N_j / w``
* ``ray(ratios)``   -- ``(Lambda_j^crit - Lambda) N_j`` with all rates moving
  along ``lambda_i = ratios_i * Lambda``.

For non-exponential inputs ``eta`` comes from the GI/G/1-type
generalization, which is a conjecture; derivations record this in
``conjectured``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from . import dists
from .dists import DistributionSpec
from .model import PollingModel, check_ratios


class HeavyTrafficError(ValueError):
    pass


class NotCriticalError(HeavyTrafficError):
    """The chosen queue is not the one that saturates first."""


class SimultaneousSaturationError(HeavyTrafficError):
    """Two queues reach their critical point together (out of scope)."""


@dataclass(frozen=True)
class EffectiveService:
    mean: float
    variance: float

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean**2


@dataclass(frozen=True)
class ScalingSpec:
    kind: str = "one_minus_u"
    omega: float | None = None
    ratios: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("one_minus_u", "lambda_gap", "ray"):
            raise ValueError(f"unknown scaling {self.kind!r}")
        if self.kind == "lambda_gap" and not (self.omega is not None and self.omega > 0):
            raise ValueError("lambda_gap scaling needs omega > 0")
        if self.kind == "ray":
            if self.ratios is None:
                raise ValueError("ray scaling needs ratios")
            check_ratios(self.ratios, len(self.ratios))
            object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))

    @classmethod
    def one_minus_u(cls):
        return cls("one_minus_u")

    @classmethod
    def lambda_gap(cls, omega):
        return cls("lambda_gap", omega=float(omega))

    @classmethod
    def ray(cls, ratios):
        return cls("ray", ratios=tuple(ratios))


@dataclass(frozen=True)
class VacationModelSpec:
    """k-limited multiple-vacation queue; a vacation is the sum of ``vacation``."""

    arrival: DistributionSpec
    service: DistributionSpec
    limit: int
    vacation: tuple[DistributionSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "vacation", tuple(self.vacation))
        if not self.vacation:
            raise ValueError("vacation list must be nonempty")
        if self.limit < 1:
            raise ValueError("limit must be >= 1")

    @property
    def vacation_moments(self) -> dists.MomentSummary:
        return dists.convolution_moments(self.vacation)


@dataclass(frozen=True)
class HtDerivation:
    queue: int
    overloaded: frozenset[int]
    effective: EffectiveService
    lambda_crit: float
    stable_rates: dict
    c0: float
    c1: float
    c2: float
    eta: float
    eta_one_minus_u: float
    scaling: ScalingSpec
    Lambda_crit: float | None = None
    conjectured: bool = False
    vacation_specs: dict = field(default_factory=dict)

    @property
    def omega(self) -> float:
        return self.c2


def _check_sets(model: PollingModel, j: int, overloaded: Iterable[int]) -> frozenset[int]:
    over = frozenset(int(i) for i in overloaded)
    if not 0 <= j < model.n:
        raise IndexError(f"queue index {j} out of range")
    if j not in over:
        raise HeavyTrafficError(f"queue {j} must belong to the overloaded set {sorted(over)}")
    if not over <= set(range(model.n)):
        raise IndexError(f"overloaded set {sorted(over)} out of range")
    return over


def effective_service(model: PollingModel, j: int, overloaded: Iterable[int] = None) -> EffectiveService:
    """Moments of ``B'_j``: service of ``j`` plus a ``1/k_j`` share of all
    switch-over work and of ``k_m`` services of every other overloaded queue ``m``."""
    over = _check_sets(model, j, {j} if overloaded is None else overloaded)
    b = model[j].service_moments
    kj = model[j].limit
    s = model.total_switchover
    extra_mean = s.mean + sum(model[m].limit * model[m].service_moments.mean for m in over if m != j)
    extra_var = s.variance + sum(model[m].limit * model[m].service_moments.variance for m in over if m != j)
    return EffectiveService(b.mean + extra_mean / kj, b.variance + extra_var / kj)


def critical_rate(model: PollingModel, j: int, overloaded: Iterable[int] = None) -> float:
    """``lambda_j^crit = (1 - load of the stable queues) / E[B'_j]`` at the model's rates."""
    over = _check_sets(model, j, {j} if overloaded is None else overloaded)
    stable_load = sum(model[i].arrival_rate * model[i].service_moments.mean for i in range(model.n) if i not in over)
    if stable_load >= 1:
        raise HeavyTrafficError(f"stable queues carry load {stable_load:.6g} >= 1; no critical point")
    return (1.0 - stable_load) / effective_service(model, j, over).mean


def ray_critical_total(model: PollingModel, j: int, overloaded: Iterable[int], ratios: Sequence[float]) -> float:
    """Total rate ``Lambda`` at which ``u_j = 1`` along the ray, with ``overloaded`` saturated."""
    over = _check_sets(model, j, overloaded)
    ratios = check_ratios(ratios, model.n)
    eff = effective_service(model, j, over)
    slope = ratios[j] * eff.mean + sum(
        ratios[i] * model[i].service_moments.mean for i in range(model.n) if i not in over
    )
    return 1.0 / slope


def _arrival_scv(spec: DistributionSpec) -> float:
    return 1.0 if spec.is_exponential else dists.moments(spec).scv


def _is_conjectured(model: PollingModel, queues: Iterable[int]) -> bool:
    if not all(s.is_exponential for q in model.queues for s in q.switchover):
        return True
    return not all(model[i].arrival.is_exponential and model[i].service.is_exponential for i in queues)


def _switchover_with(model: PollingModel, over: frozenset[int], j: int) -> float:
    """Mean switch-over per cycle of the corresponding system seen by ``j``."""
    return model.total_switchover.mean + sum(
        model[m].limit * model[m].service_moments.mean for m in over if m != j
    )


def eta(model: PollingModel, j: int, overloaded: Iterable[int] = None,
        scaling: ScalingSpec | None = None) -> HtDerivation:
    """Heavy-traffic derivation for critical queue ``j``.

    Stable-queue rates enter at the critical point: the model's own rates for
    ``one_minus_u``/``lambda_gap`` and ``ratios_i * Lambda_j^crit`` for ``ray``.
    """
    scaling = scaling or ScalingSpec.one_minus_u()
    over = _check_sets(model, j, {j} if overloaded is None else overloaded)
    stable = [i for i in range(model.n) if i not in over]
    eff = effective_service(model, j, over)

    Lambda_crit = None
    if scaling.kind == "ray":
        ratios = check_ratios(scaling.ratios, model.n)
        Lambda_crit = ray_critical_total(model, j, over, ratios)
        rates = {i: ratios[i] * Lambda_crit for i in stable}
        lam_crit = ratios[j] * Lambda_crit
    else:
        rates = {i: model[i].arrival_rate for i in stable}
        lam_crit = critical_rate(model, j, over)

    # the other queues must stay stable once j is saturated; in the corresponding
    # system j's k_j services are switch-over work, which stays well defined when E[S] = 0
    rho_stable = sum(rates[i] * model[i].service_moments.mean for i in stable)
    es = _switchover_with(model, over, j) + model[j].limit * model[j].service_moments.mean
    for i in stable:
        u_i = rho_stable + rates[i] * es / model[i].limit
        if u_i >= 1 - 1e-12:
            raise NotCriticalError(
                f"queue {i + 1} reaches u={u_i:.6g} before queue {j + 1} becomes critical"
            )

    denom = 0.0
    for i in stable:
        if rates[i] == 0:
            continue
        b = model[i].service_moments
        denom += rates[i] * (b.variance + _arrival_scv(model[i].arrival) * b.mean**2)
    denom += lam_crit * (eff.variance + _arrival_scv(model[j].arrival) * eff.mean**2)

    eta_std = 2.0 * eff.mean / denom
    if scaling.kind == "one_minus_u":
        omega = 1.0 / eff.mean
    elif scaling.kind == "lambda_gap":
        omega = scaling.omega
    else:
        omega = 1.0 / (eff.mean * Lambda_crit)
    eta_value = 2.0 * omega * eff.mean**2 / denom

    c0 = (denom - 2.0 * lam_crit * eff.mean**2) / (2.0 * eff.mean**2)
    c1 = lam_crit
    c2 = omega
    check = c2 / (c0 + c1)
    if not math.isclose(check, eta_value, rel_tol=1e-12):
        raise ArithmeticError(f"C2/(C0+C1)={check!r} disagrees with eta={eta_value!r}")

    vac = {}
    if model.n == 2 and len(stable) == 1:
        vac[stable[0]] = vacation_model(model, stable[0], j)
    return HtDerivation(
        queue=j, overloaded=over, effective=eff, lambda_crit=lam_crit, stable_rates=rates,
        c0=c0, c1=c1, c2=c2, eta=eta_value, eta_one_minus_u=eta_std, scaling=scaling,
        Lambda_crit=Lambda_crit, conjectured=_is_conjectured(model, stable + [j]),
        vacation_specs=vac,
    )


def waiting_time_eta(derivation: HtDerivation) -> float:
    """Parameter of the limiting scaled waiting time at the critical queue."""
    return derivation.lambda_crit * derivation.eta


def vacation_model(model: PollingModel, stable: int, critical: int) -> VacationModelSpec:
    """Vacation queue seen by the stable queue of a two-queue model in heavy traffic."""
    if stable == critical:
        raise ValueError("stable and critical queue must differ")
    if model.n != 2:
        raise ValueError("vacation_model needs a two-queue model; reduce with corresponding_system first")
    q, c = model[stable], model[critical]
    vacation = (c.service,) * c.limit + model[0].switchover + model[1].switchover
    return VacationModelSpec(q.arrival, q.service, q.limit, vacation)


def reduce_to_vacation(model: PollingModel, survivor: int) -> VacationModelSpec:
    """Vacation queue left when every queue but ``survivor`` is saturated: the
    vacation is one full round of the others' ``k`` services plus all switch-overs."""
    if not 0 <= survivor < model.n:
        raise IndexError(f"queue {survivor} out of range")
    parts = list(model[survivor].switchover)
    for step in range(1, model.n):
        m = (survivor + step) % model.n
        parts.extend([model[m].service] * model[m].limit)
        parts.extend(model[m].switchover)
    q = model[survivor]
    return VacationModelSpec(q.arrival, q.service, q.limit, tuple(parts))


def surviving_queues(n: int, unstable: Iterable[int]) -> list[int]:
    gone = set(unstable)
    return [i for i in range(n) if i not in gone]


def corresponding_system(model: PollingModel, unstable: Iterable[int]) -> PollingModel:
    """Drop saturated queues; each removed queue's ``k`` services and its
    switch-over are appended to the switch-over of the preceding survivor."""
    gone = frozenset(int(i) for i in unstable)
    if not gone:
        raise ValueError("unstable set must be nonempty")
    if not gone < set(range(model.n)):
        raise ValueError("unstable set must be a proper subset of the queues")
    survivors = surviving_queues(model.n, gone)
    if len(survivors) < 2:
        raise ValueError("corresponding system would have fewer than 2 queues")
    queues = []
    for p in survivors:
        parts = list(model[p].switchover)
        m = (p + 1) % model.n
        while m in gone:
            parts.extend([model[m].service] * model[m].limit)
            parts.extend(model[m].switchover)
            m = (m + 1) % model.n
        queues.append(replace(model[p], switchover=tuple(parts)))
    return PollingModel(tuple(queues))


@dataclass(frozen=True)
class LadderStage:
    queue: int
    Lambda_crit: float
    derivation: HtDerivation


def critical_ladder(model: PollingModel, ratios: Sequence[float], tie_tol: float = 1e-9) -> list[LadderStage]:
    """Saturation order of all queues when every rate grows along the ray."""
    ratios = check_ratios(ratios, model.n)
    over: set[int] = set()
    stages = []
    while len(over) < model.n:
        candidates = sorted(
            (ray_critical_total(model, j, over | {j}, ratios), j) for j in range(model.n) if j not in over
        )
        if len(candidates) > 1:
            (l0, j0), (l1, j1) = candidates[0], candidates[1]
            if math.isclose(l0, l1, rel_tol=tie_tol):
                raise SimultaneousSaturationError(
                    f"simultaneous saturation of queues {j0 + 1} and {j1 + 1} at Lambda={l0:.6g}"
                )
        lam, j = candidates[0]
        over.add(j)
        der = eta(model, j, over, ScalingSpec.ray(ratios))
        stages.append(LadderStage(j, lam, der))
    return stages


def interchange(model: PollingModel, alpha: float, critical: int = 1) -> PollingModel:
    """Move a fraction ``alpha`` of the switch-over moments into the critical
    queue's service time, leaving ``B'`` unchanged.  Fitted laws are gamma (or
    constant when the variance vanishes)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if model.n != 2:
        raise ValueError("interchange is defined for two-queue models")
    s = model.total_switchover
    k = model[critical].limit
    b = model[critical].service_moments
    queues = list(model.queues)
    queues[critical] = replace(
        queues[critical],
        service=dists.fit_two_moments(b.mean + alpha * s.mean / k, b.variance + alpha * s.variance / k),
    )
    for i, q in enumerate(queues):
        m = q.switchover_moments
        if alpha == 1.0 or m.mean == 0:
            sw = dists.constant(0.0)
        else:
            sw = dists.fit_two_moments((1 - alpha) * m.mean, (1 - alpha) * m.variance)
        queues[i] = replace(q, switchover=(sw,))
    return PollingModel(tuple(queues))

