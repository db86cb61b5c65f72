"""Lossy-link models producing per-slot delivery outcomes.

Four variants: a perfect channel, distance-dependent i.i.d. losses with an
exponential delivery-ratio law, a two-state correlated burst model, and a
scripted loss table for exact reproduction of failure scenarios. Burst-length
probability laws used by the analytics live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def pdr(d: float, lam: float) -> float:
    """Packet delivery ratio at distance ``d`` under decay rate ``lam``: e^(-lam*d)."""
    if d < 0:
        raise ValueError("distance must be nonnegative")
    if lam < 0:
        raise ValueError("decay rate must be nonnegative")
    return math.exp(-lam * d)


@dataclass(frozen=True)
class Perfect:
    """Every message is delivered."""


@dataclass(frozen=True)
class DistanceIID:
    """Independent per-slot losses; delivery probability e^(-lam*d)."""

    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("decay rate must be nonnegative")


@dataclass(frozen=True)
class CorrelatedBurst:
    """Receiver-side burst losses: once a slot is lost, the next is lost
    with probability ``xi``; otherwise losses follow the distance law."""

    lam: float
    xi: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("decay rate must be nonnegative")
        if not (0 <= self.xi < 1):
            raise ValueError("xi must be in [0, 1)")


@dataclass(frozen=True)
class Scripted:
    """Explicit loss table: a (receiver uid, slot) pair present in ``losses``
    is lost; uids in ``all_lost`` lose every slot; everything else is
    delivered."""

    losses: frozenset[tuple[int, int]] = field(default_factory=frozenset)
    all_lost: frozenset[int] = field(default_factory=frozenset)


ChannelModel = Perfect | DistanceIID | CorrelatedBurst | Scripted


@dataclass(frozen=True)
class LinkContext:
    """Per-delivery context: who is sending to whom, this slot, at what
    distance, and whether the receiver's previous slot was lost."""

    sender: int
    receiver: int
    distance: float
    slot: int
    prior_lost: bool = False

    def __post_init__(self):
        if self.distance < 0:
            raise ValueError("distance must be nonnegative")


def sample_delivery(model: ChannelModel, ctx: LinkContext, rng) -> bool:
    """Whether one message crosses the link this slot.

    Deterministic given the rng stream state. The scripted variant ignores
    the rng entirely; a lookup miss means delivered (the table is a loss
    list).
    """
    if isinstance(model, Perfect):
        return True
    if isinstance(model, DistanceIID):
        return rng.random() < pdr(ctx.distance, model.lam)
    if isinstance(model, CorrelatedBurst):
        p_loss = model.xi if ctx.prior_lost else 1.0 - pdr(ctx.distance, model.lam)
        return rng.random() >= p_loss
    if isinstance(model, Scripted):
        if ctx.receiver in model.all_lost:
            return False
        return (ctx.receiver, ctx.slot) not in model.losses
    raise TypeError(f"unknown channel model {model!r}")


def burst_length_pmf(p: float, xi: float | None, m: int) -> float:
    """Probability of exactly ``m`` consecutive slot failures.

    With ``xi`` absent the slots are independent and the law is geometric:
    ``(1-p)^m * p``. With a transition probability ``xi`` the first failure
    occurs with probability ``1-p`` and persists with probability ``xi``:
    ``p`` for m = 0 and ``(1-p) * p * xi^(m-1)`` for m >= 1. The correlated
    form does not sum to one over all m; consumers normalize over the range
    they average on.
    """
    if not (0 <= p <= 1):
        raise ValueError("delivery probability must be in [0, 1]")
    if m < 0:
        raise ValueError("burst length must be nonnegative")
    if xi is None:
        return (1.0 - p) ** m * p
    if not (0 <= xi < 1):
        raise ValueError("xi must be in [0, 1)")
    if m == 0:
        return p
    return (1.0 - p) * p * xi ** (m - 1)
