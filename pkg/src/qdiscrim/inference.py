"""Bayes-rule posteriors and the likelihood-ratio decision for two hypotheses.

All likelihood arithmetic stays in log space.  Functions taking log-likelihoods
accept scalars or equally shaped arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .trajectory import ModelSpec

Hypothesis = Literal["H0", "H1"]


class InvalidCostError(ValueError):
    pass


@dataclass(frozen=True)
class CostMatrix:
    """``cij`` is the cost of accepting Hi when Hj is true."""

    c00: float = 0.0
    c01: float = 1.0
    c10: float = 1.0
    c11: float = 0.0

    @classmethod
    def zero_one(cls) -> "CostMatrix":
        return cls(0.0, 1.0, 1.0, 0.0)

    def is_admissible(self) -> bool:
        return self.c01 > self.c11 and self.c10 > self.c00

    def as_array(self) -> np.ndarray:
        return np.array([[self.c00, self.c01], [self.c10, self.c11]])


@dataclass(frozen=True, eq=False)
class HypothesisPair:
    model0: ModelSpec
    model1: ModelSpec
    prior0: float = 0.5
    prior1: float = 0.5
    cost: CostMatrix = CostMatrix()

    def __post_init__(self):
        if not (self.prior0 > 0 and self.prior1 > 0):
            raise ValueError(f"priors must be positive, got ({self.prior0}, {self.prior1})")
        if self.prior0 + self.prior1 != 1.0:
            raise ValueError(f"priors must sum to exactly 1, got {self.prior0} + {self.prior1}")


@dataclass(frozen=True)
class PosteriorPair:
    p0: float | np.ndarray
    p1: float | np.ndarray


@dataclass(frozen=True)
class Decision:
    accepted: Hypothesis
    log_ratio: float
    log_threshold: float


def posteriors(loglik0, loglik1, pair: HypothesisPair) -> PosteriorPair:
    """Posterior probabilities of H0 and H1 given the two record log-likelihoods."""
    l0 = np.asarray(loglik0, dtype=float)
    l1 = np.asarray(loglik1, dtype=float)
    top = np.maximum(l0, l1)
    w0 = pair.prior0 * np.exp(l0 - top)
    w1 = pair.prior1 * np.exp(l1 - top)
    z = w0 + w1
    p0, p1 = w0 / z, w1 / z
    if p0.ndim == 0:
        return PosteriorPair(float(p0), float(p1))
    return PosteriorPair(p0, p1)


def bayes_threshold(pair: HypothesisPair) -> float:
    """Log of the Bayes-criterion threshold on the likelihood ratio L0/L1."""
    c = pair.cost
    if not c.is_admissible():
        raise InvalidCostError(f"cost matrix {c} violates c01 > c11 and c10 > c00")
    return math.log((c.c01 - c.c11) / (c.c10 - c.c00) * (pair.prior1 / pair.prior0))


def decide(loglik0: float, loglik1: float, pair: HypothesisPair) -> Decision:
    """Accept H0 iff ln(L0/L1) exceeds the Bayes threshold; a tie accepts H1."""
    log_ratio = float(loglik0) - float(loglik1)
    thr = bayes_threshold(pair)
    return Decision("H0" if log_ratio > thr else "H1", log_ratio, thr)


def accepts_h0(loglik0, loglik1, log_threshold: float) -> np.ndarray:
    """Vectorized form of :func:`decide`: boolean mask of H0 acceptances."""
    return (np.asarray(loglik0) - np.asarray(loglik1)) > log_threshold


def map_accepts_h0(post: PosteriorPair) -> np.ndarray | bool:
    """Maximum-a-posteriori rule, ties resolved toward H1 as in :func:`decide`."""
    return post.p0 > post.p1


def conditional_error(post: PosteriorPair):
    """Probability that the zero-one Bayes decision is wrong given the record."""
    return np.minimum(post.p0, post.p1) if isinstance(post.p0, np.ndarray) else min(post.p0, post.p1)


def bayes_risk(pair: HypothesisPair, p_10: float, p_01: float) -> float:
    """Expected cost given P(accept H1 | H0) = ``p_10`` and P(accept H0 | H1) = ``p_01``.

    Under zero-one cost this is the average error probability.
    """
    for name, p in (("p_10", p_10), ("p_01", p_01)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name}={p} is not a probability")
    c = pair.cost
    # conditional[i][j] = P(accept Hi | Hj true)
    conditional = ((1.0 - p_10, p_01), (p_10, 1.0 - p_01))
    priors = (pair.prior0, pair.prior1)
    costs = ((c.c00, c.c01), (c.c10, c.c11))
    return sum(costs[i][j] * conditional[i][j] * priors[j] for i in range(2) for j in range(2))
