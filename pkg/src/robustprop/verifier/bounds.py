"""Interval bound propagation with optional fixed activation phases."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..nn import CLAMP, IDENTITY, RELU, Network

FEAS_TOL = 1e-9


class Phase(IntEnum):
    UNKNOWN = -1
    INACTIVE = 0   # relu, pre <= 0
    ACTIVE = 1     # relu, pre >= 0
    LOW = 2        # clamp, pre <= lo
    LINEAR = 3     # clamp, lo <= pre <= hi
    HIGH = 4       # clamp, pre >= hi


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape:
            raise ValueError("box bounds disagree in shape")
        if np.any(self.lo > self.hi):
            raise ValueError("box needs lo <= hi in every coordinate")

    @classmethod
    def ball(cls, center, epsilon, domain=None) -> Box:
        center = np.asarray(center, dtype=float)
        lo, hi = center - epsilon, center + epsilon
        if domain is not None:
            lo = np.maximum(lo, domain[0])
            hi = np.minimum(hi, domain[1])
        return cls(lo, hi)

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, tol=0.0) -> bool:
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


@dataclass
class LayerBounds:
    pre_lo: np.ndarray
    pre_hi: np.ndarray
    post_lo: np.ndarray
    post_hi: np.ndarray


def restrict(layer, phases: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Intersect pre-activation bounds with the regions of fixed phases."""
    lo, hi = lo.copy(), hi.copy()
    if layer.activation == RELU:
        lo[phases == Phase.ACTIVE] = np.maximum(lo[phases == Phase.ACTIVE], 0.0)
        hi[phases == Phase.INACTIVE] = np.minimum(hi[phases == Phase.INACTIVE], 0.0)
    elif layer.activation == CLAMP:
        cl, ch = layer.clamp_lo, layer.clamp_hi
        sel = phases == Phase.LOW
        hi[sel] = np.minimum(hi[sel], cl)
        sel = phases == Phase.LINEAR
        lo[sel] = np.maximum(lo[sel], cl)
        hi[sel] = np.minimum(hi[sel], ch)
        sel = phases == Phase.HIGH
        lo[sel] = np.maximum(lo[sel], ch)
    return lo, hi


def ibp(net: Network, box: Box, phases: list[np.ndarray] | None = None):
    """Sound interval enclosure of every pre/post activation over ``box``.

    ``phases`` optionally fixes activation phases per layer (``Phase.UNKNOWN``
    for free neurons). Returns None when the fixed phases are inconsistent
    with the propagated bounds.
    """
    lo, hi = box.lo, box.hi
    out = []
    for k, layer in enumerate(net.layers):
        mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
        c = layer.weights @ mid + layer.bias
        r = np.abs(layer.weights) @ rad
        pre_lo, pre_hi = c - r, c + r
        if phases is not None and layer.activation != IDENTITY:
            pre_lo, pre_hi = restrict(layer, phases[k], pre_lo, pre_hi)
            if np.any(pre_lo > pre_hi + FEAS_TOL):
                return None
            pre_hi = np.maximum(pre_hi, pre_lo)
        lo, hi = layer.activate(pre_lo), layer.activate(pre_hi)
        out.append(LayerBounds(pre_lo, pre_hi, lo, hi))
    return out


def stable_phases(layer, pre_lo, pre_hi) -> np.ndarray:
    """Phases implied by the bounds alone; ``UNKNOWN`` where the unit may switch."""
    ph = np.full(pre_lo.shape, Phase.UNKNOWN, dtype=np.int64)
    if layer.activation == RELU:
        ph[pre_lo >= 0] = Phase.ACTIVE
        ph[pre_hi <= 0] = Phase.INACTIVE
    elif layer.activation == CLAMP:
        cl, ch = layer.clamp_lo, layer.clamp_hi
        ph[(pre_lo >= cl) & (pre_hi <= ch)] = Phase.LINEAR
        ph[pre_hi <= cl] = Phase.LOW
        ph[pre_lo >= ch] = Phase.HIGH
    return ph


def candidate_phases(layer, lo: float, hi: float) -> list[Phase]:
    """Phases a unit with pre-activation in ``[lo, hi]`` can take."""
    if layer.activation == RELU:
        return [p for p, ok in ((Phase.ACTIVE, hi >= 0), (Phase.INACTIVE, lo <= 0)) if ok]
    cl, ch = layer.clamp_lo, layer.clamp_hi
    return [p for p, ok in ((Phase.LOW, lo <= cl), (Phase.LINEAR, hi >= cl and lo <= ch),
                            (Phase.HIGH, hi >= ch)) if ok]
