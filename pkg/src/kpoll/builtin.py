"""Built-in models for the four numerical examples."""
from __future__ import annotations

from .dists import constant, exponential, gamma, pareto, uniform
from .model import PollingModel, QueueSpec

EXAMPLE_IDS = ("ex1", "ex2", "ex3", "ex4")

# queue-2 arrival rates of models P1, P2, P3 (and P4 for example 3)
EX1_LAMBDA2 = {"P1": 0.25, "P2": 0.258, "P3": 0.263}
EX3_LAMBDA2 = {"P1": 0.25, "P2": 0.258, "P3": 0.263, "P4": 0.2635}
EX4_RATIOS = (0.1, 0.2, 0.3, 0.4)
EX4_LAMBDA_CRIT = (7 / 6, 15 / 26, 10 / 23, 25 / 74)


def example1(lambda2: float = 0.25) -> PollingModel:
    return PollingModel((
        QueueSpec(exponential(0.06), exponential(0.5), 2, exponential(0.5)),
        QueueSpec(exponential(lambda2), exponential(0.5), 3, exponential(0.5)),
    ))


def example3(lambda2: float = 0.25) -> PollingModel:
    return PollingModel((
        QueueSpec(gamma(0.5, 0.03), uniform(0.0, 4.0), 2, constant(2.0)),
        QueueSpec(pareto(2.0 / (3.0 * lambda2), 3.0), pareto(1.17, 2.4), 3, constant(2.0)),
    ))


def example4(total_rate: float = 0.3) -> PollingModel:
    limits = (7, 6, 6, 5)
    return PollingModel(tuple(
        QueueSpec(exponential(r * total_rate), exponential(0.5), k, exponential(1 / 3))
        for r, k in zip(EX4_RATIOS, limits)
    ))


def builtin_model(name: str, variant: str | None = None) -> PollingModel:
    """``ex1``/``ex2`` (variant P1..P3), ``ex3`` (P1..P4) or ``ex4``."""
    name = name.lower()
    if name in ("ex1", "ex2"):
        return example1(EX1_LAMBDA2[(variant or "P1").upper()])
    if name == "ex3":
        return example3(EX3_LAMBDA2[(variant or "P1").upper()])
    if name == "ex4":
        return example4()
    raise KeyError(name)
