"""Transaction-value analytics: exponential and Pareto value models,
mean/median relations, below-mean mass, and dispute-threshold cost reports.

Right-skewed value distributions put the median well left of the mean; for an
exponential model the below-mean mass is 1 - 1/e (about 63.2%) regardless of
the rate. That asymmetry is what makes the choice of the internal-vs-external
dispute threshold an economic decision rather than a cosmetic one.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import EmptyInput, NonpositiveRate


@dataclass(frozen=True)
class ExpModel:
    """Density rate * exp(-rate * x) on x >= 0. Mean 1/rate, median ln2/rate."""

    rate: float

    def __post_init__(self):
        if not (self.rate > 0):
            raise NonpositiveRate(f"rate must be > 0, got {self.rate}")

    def mean(self) -> float:
        return 1.0 / self.rate

    def median(self) -> float:
        return math.log(2) / self.rate

    def cdf(self, x: float) -> float:
        return 0.0 if x < 0 else 1.0 - math.exp(-self.rate * x)

    def inverse_cdf(self, u: float) -> float:
        return -math.log(1.0 - u) / self.rate


@dataclass(frozen=True)
class ParetoModel:
    """Survival (x/scale)^(-shape) for x >= scale. Mean finite iff shape > 1."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0):
            raise NonpositiveRate(f"shape must be > 0, got {self.shape}")
        if not (self.scale > 0):
            raise NonpositiveRate(f"scale must be > 0, got {self.scale}")

    def mean(self) -> Optional[float]:
        if self.shape <= 1:
            return None
        return self.shape * self.scale / (self.shape - 1)

    def median(self) -> float:
        return self.scale * 2 ** (1.0 / self.shape)

    def cdf(self, x: float) -> float:
        return 0.0 if x < self.scale else 1.0 - (x / self.scale) ** (-self.shape)

    def inverse_cdf(self, u: float) -> float:
        return self.scale * (1.0 - u) ** (-1.0 / self.shape)


def exp_stats(rate: float) -> dict:
    """Closed-form mean, median and below-mean mass of the exponential model."""
    model = ExpModel(rate)
    return {
        "mean": model.mean(),
        "median": model.median(),
        "frac_below_mean": 1.0 - math.exp(-1.0),
    }


def sample_values(model, n: int, seed: int) -> list:
    """Inverse-CDF sampling, reproducible from the seed."""
    if n < 1:
        raise EmptyInput("need n >= 1 samples")
    rng = random.Random(seed)
    return [model.inverse_cdf(rng.random()) for _ in range(n)]


@dataclass
class CostModel:
    """Per-dispute handling costs, in USD.

    Internal handling is cheap but form-based, so its expected cost carries an
    error charge proportional to the value at stake; external court cases pay
    the juror fee schedule regardless of value.
    """

    internal_cost_per_case: float = 2.0
    internal_error_rate: float = 0.05
    external_cost_per_case: float = 12.0
    dispute_probability: float = 0.05


def threshold_report(values: Sequence[float], threshold: float,
                     cost_model: Optional[CostModel] = None) -> dict:
    """Fraction of values routed internally at `threshold`, expected handling
    costs under the cost model, and the cost-minimizing threshold over a
    1-USD grid up to the 99th percentile."""
    values = list(values)
    if not values:
        raise EmptyInput("values must be non-empty")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    cost_model = cost_model or CostModel()

    ordered = sorted(values)
    n = len(ordered)

    def frac_below(t: float) -> float:
        # integer-exact recount: |{v <= t}| / n
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            if ordered[mid] <= t:
                lo = mid + 1
            else:
                hi = mid
        return lo / n

    def mean_below(t: float) -> float:
        below = [v for v in ordered if v <= t]
        return sum(below) / len(below) if below else 0.0

    def expected_cost(t: float) -> tuple:
        f = frac_below(t)
        internal = f * (cost_model.internal_cost_per_case
                        + cost_model.internal_error_rate * mean_below(t))
        external = (1.0 - f) * cost_model.external_cost_per_case
        return internal, external

    internal_cost, external_cost = expected_cost(threshold)

    p99 = ordered[min(n - 1, math.ceil(0.99 * n) - 1)]
    grid = range(0, int(math.ceil(p99)) + 1)
    best_t, best_cost = 0, None
    for t in grid:
        i, e = expected_cost(float(t))
        total = cost_model.dispute_probability * (i + e)
        if best_cost is None or total < best_cost:
            best_t, best_cost = t, total

    return {
        "threshold": threshold,
        "fraction_below": frac_below(threshold),
        "expected_internal_cost": cost_model.dispute_probability * internal_cost,
        "expected_external_cost": cost_model.dispute_probability * external_cost,
        "recommended_threshold": float(best_t),
        "recommended_expected_cost": best_cost,
        "n_values": n,
    }


def fit_rate(values: Sequence[float]) -> float:
    """Method-of-moments exponential rate: 1 / sample mean."""
    values = list(values)
    if not values:
        raise EmptyInput("values must be non-empty")
    mean = sum(values) / len(values)
    if mean <= 0:
        raise NonpositiveRate("sample mean must be positive to fit a rate")
    return 1.0 / mean
