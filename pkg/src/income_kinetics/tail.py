"""Power-law overlay for incomes above the Pareto threshold."""

from dataclasses import dataclass

import numpy as np


class DivergentMeanError(ValueError):
    pass


@dataclass(frozen=True)
class ParetoTail:
    """Pareto tail with ``P(X >= x) = mass * (x / threshold) ** -exponent``.

    ``mass`` is a population fraction, or an absolute weight when the tail
    is attached to weighted observations.
    """

    threshold: float
    exponent: float
    mass: float

    def __post_init__(self):
        if not self.exponent > 1:
            raise DivergentMeanError(
                f"tail exponent must exceed 1 for a finite mean, got {self.exponent!r}"
            )
        if self.mass < 0:
            raise ValueError(f"tail mass must be non-negative, got {self.mass!r}")

    def ccdf(self, x):
        x = np.asarray(x, dtype=float)
        ratio = np.maximum(x, self.threshold) / self.threshold
        return self.mass * ratio ** -self.exponent

    def conditional_mean(self):
        """Mean income of the tail population."""
        return self.threshold * self.exponent / (self.exponent - 1)


@dataclass(frozen=True)
class TailDistribution:
    """Discretized tail: CCDF on a log grid and the probability in each bin.

    The last bin is open-ended, so ``probability.sum()`` equals the mass.
    """

    x: np.ndarray
    ccdf: np.ndarray
    probability: np.ndarray

    @property
    def mass(self):
        return float(self.probability.sum())


def synthesize_tail(mass, threshold, exponent, sample_count=200, decades=3.0):
    """Discretize a Pareto tail on ``sample_count`` log-spaced points."""
    if not exponent > 1:
        raise DivergentMeanError(f"tail exponent must exceed 1, got {exponent!r}")
    if not 0 <= mass <= 1:
        raise ValueError(f"tail mass must lie in [0, 1], got {mass!r}")
    if mass == 0:
        empty = np.empty(0)
        return TailDistribution(empty, empty, empty)
    tail = ParetoTail(threshold, exponent, mass)
    x = threshold * np.logspace(0.0, decades, sample_count)
    ccdf = tail.ccdf(x)
    ccdf[0] = mass
    probability = np.append(ccdf[:-1] - ccdf[1:], ccdf[-1])
    return TailDistribution(x, ccdf, probability)
