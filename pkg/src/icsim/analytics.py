"""Closed-form and Monte Carlo evaluation of consensus delay and V2V usage.

The delay analysis considers the two-vehicle scenario in which one receiver
suffers a single contiguous burst of slot failures while the other receives
everything. Averaging the per-burst delay over the burst-length law, with
bursts beyond the tolerance threshold excluded by normalization, gives the
expected consensus delay; the complementary tail gives the probability that
V2V is used at all rather than the sensor fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import (
    ChannelModel,
    CorrelatedBurst,
    DistanceIID,
    Perfect,
    burst_length_pmf,
    pdr,
)
from .protocol import closed_form_enter_delay, simulate_enter_round

#: Fitted delivery-ratio decay rates per environment, 1/m.
DECAY_OPEN_FIELD = 0.00063
DECAY_HARSH = 0.0013


@dataclass(frozen=True)
class PdrSample:
    """One measured (distance, delivery ratio) point."""

    distance: float
    pdr: float

    def __post_init__(self):
        if not (0 <= self.pdr <= 1):
            raise ValueError("pdr must be in [0, 1]")


@dataclass(frozen=True)
class DelayCurvePoint:
    distance: float
    expected_delay: float
    environment: str
    xi: float | None
    F: int


def expected_enter_delay(p: float, F: int, xi: float | None = None) -> float:
    """Expected consensus delay in slots, averaged over burst lengths 0..F.

    Weights come from the burst-length law (independent slots, or correlated
    with transition probability ``xi``), renormalized over the tolerated
    range.
    """
    if not (0 < p <= 1):
        raise ValueError("delivery probability must be in (0, 1]; a zero-"
                         "delivery channel has no finite expected delay")
    if F < 0:
        raise ValueError("F must be nonnegative")
    num = 0.0
    den = 0.0
    for m in range(F + 1):
        w = burst_length_pmf(p, xi, m)
        num += w * closed_form_enter_delay(F, {1: m, 2: 0})
        den += w
    return num / den


def v2v_probability(p: float, F: int, xi: float | None = None) -> float:
    """Probability that the crossing uses V2V rather than the sensor fallback.

    The fallback starts once a burst of F+1 failures hits one vehicle, so
    this is one minus the probability of that burst length.
    """
    if not (0 < p <= 1):
        raise ValueError("delivery probability must be in (0, 1]")
    if F < 0:
        raise ValueError("F must be nonnegative")
    return 1.0 - burst_length_pmf(p, xi, F + 1)


def fit_decay_rate(samples: list[PdrSample]) -> float:
    """Least-squares decay rate of an exponential delivery-ratio law.

    Fits ``-ln(pdr)`` against distance through the origin. Requires at least
    two distinct distances and strictly positive delivery ratios.
    """
    if any(s.pdr <= 0 for s in samples):
        raise ValueError("delivery ratios must be positive to fit a decay rate")
    d = np.array([s.distance for s in samples], dtype=float)
    if len(set(d.tolist())) < 2:
        raise ValueError("need samples at two or more distinct distances")
    y = -np.log(np.array([s.pdr for s in samples], dtype=float))
    return float(np.dot(d, y) / np.dot(d, d))


@lru_cache(maxsize=None)
def _simulated_delay_by_burst(F: int) -> tuple[int, ...]:
    """Resolution delay of the two-vehicle round per burst length 0..F,
    measured on the actual protocol machine."""
    delays = []
    for m in range(F + 1):
        res = simulate_enter_round(2, F=F, losses={(2, s) for s in range(1, m + 1)})
        delays.append(res.resolution_slot())
    return tuple(delays)


def monte_carlo_enter_delay(
    model: ChannelModel,
    d: float,
    F: int,
    n_trials: int = 100_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Sample mean and standard error of the two-vehicle consensus delay.

    Each trial draws one initial receive-failure burst at a single receiver
    from the burst-length law of the channel model, conditioned on the burst
    not exceeding ``F`` (the same truncation the closed-form average
    normalizes over). The per-burst delay is read off a simulation of the
    actual protocol machine, not the closed form, so the two delay routes
    stay independent.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if isinstance(model, Perfect):
        return 3.0, 0.0
    if isinstance(model, DistanceIID):
        p, xi = pdr(d, model.lam), None
    elif isinstance(model, CorrelatedBurst):
        p, xi = pdr(d, model.lam), model.xi
    else:
        raise TypeError(f"no burst-length law for channel model {model!r}")
    if p <= 0:
        raise ValueError("zero-delivery channel never completes a round")
    weights = np.array([burst_length_pmf(p, xi, m) for m in range(F + 1)])
    cdf = np.cumsum(weights / weights.sum())
    delays_by_burst = np.array(_simulated_delay_by_burst(F), dtype=float)
    rng = np.random.default_rng([seed, 2])
    bursts = np.searchsorted(cdf, rng.random(n_trials), side="right")
    bursts = np.minimum(bursts, F)  # guard the u == 1.0 edge
    delays = delays_by_burst[bursts]
    mean = float(delays.mean())
    stderr = float(delays.std(ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else 0.0
    return mean, stderr


def delay_curve(
    lam: float,
    distances: list[float],
    F: int,
    xi: float | None,
    environment: str,
) -> list[DelayCurvePoint]:
    """Expected-delay curve over distance for one environment and one
    correlation setting."""
    return [
        DelayCurvePoint(
            distance=d,
            expected_delay=expected_enter_delay(pdr(d, lam), F, xi),
            environment=environment,
            xi=xi,
            F=F,
        )
        for d in distances
    ]


def v2v_probability_curve(
    lam: float,
    d: float,
    F_values: list[int],
    xi: float | None,
) -> list[float]:
    return [v2v_probability(pdr(d, lam), F, xi) for F in F_values]
