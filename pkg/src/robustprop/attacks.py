"""Gradient attacks (FGSM, PGD, property-targeted PGD) and uniform ball sampling.

All routines are batched over rows of ``x``. Randomness is drawn from one
generator per point, seeded from ``(seed, point_index)``, so results do not
depend on batch composition or evaluation order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Network, backward, cross_entropy_per_sample, forward, log_softmax
from .properties import Metric, PropertySpec, margin_and_input_grad


@dataclass(frozen=True)
class AttackParams:
    epsilon: float
    steps: int = 20
    step_size: float | None = None  # defaults to epsilon / 10
    random_start: bool = True
    restarts: int = 1
    domain: tuple[float, float] | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be > 0")

    @property
    def step(self) -> float:
        return self.epsilon / 10.0 if self.step_size is None else self.step_size

    def with_epsilon(self, epsilon: float) -> AttackParams:
        return AttackParams(epsilon, self.steps, None if self.step_size is None else self.step_size,
                            self.random_start, self.restarts, self.domain)


def point_rngs(seed, indices) -> list[np.random.Generator]:
    """One generator per point index; ``seed`` is an int or a tuple of ints."""
    base = [int(s) for s in np.atleast_1d(seed)]
    return [np.random.default_rng(base + [int(i)]) for i in indices]


def _rows(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def _indices(indices, n):
    return np.arange(n) if indices is None else np.asarray(indices)


def clip_domain(x, domain):
    if domain is None:
        return x
    return np.clip(x, domain[0], domain[1])


def _project_l1(d, eps):
    """Project each row of ``d`` onto the L1 ball of radius ``eps``."""
    out = d.copy()
    norms = np.abs(d).sum(axis=1)
    for r in np.flatnonzero(norms > eps):
        u = np.sort(np.abs(d[r]))[::-1]
        css = np.cumsum(u)
        k = np.arange(1, u.size + 1)
        rho = np.flatnonzero(u - (css - eps) / k > 0)[-1]
        theta = (css[rho] - eps) / (rho + 1)
        out[r] = np.sign(d[r]) * np.maximum(np.abs(d[r]) - theta, 0.0)
    return out


def project(x, center, epsilon, metric=Metric.LINF, domain=None):
    """Project rows of ``x`` onto the ``metric`` ball around ``center``, then the domain."""
    metric = Metric(metric)
    if metric is Metric.LINF:
        return clip_domain(np.clip(x, center - epsilon, center + epsilon), domain)
    d = x - center
    if metric is Metric.L2:
        norm = np.sqrt((d * d).sum(axis=1, keepdims=True))
        d = d * np.minimum(1.0, epsilon / np.where(norm > 0, norm, 1.0))
    else:
        d = _project_l1(d, epsilon)
    return clip_domain(center + d, domain)


def _ascent_direction(g, metric):
    if Metric(metric) is Metric.L2:
        norm = np.sqrt((g * g).sum(axis=1, keepdims=True))
        return g / np.where(norm > 0, norm, 1.0)
    return np.sign(g)


def sample_ball(center, epsilon, n, rng, metric=Metric.LINF, domain=None) -> np.ndarray:
    """``n`` i.i.d. points uniform in the ``metric`` ball around ``center``.

    Under L-inf each coordinate is uniform on ``[c - eps, c + eps]``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    center = np.asarray(center, dtype=float)
    dim = center.shape[0]
    metric = Metric(metric)
    if metric is Metric.LINF:
        pts = center + rng.uniform(-epsilon, epsilon, size=(n, dim))
    elif metric is Metric.L2:
        g = rng.standard_normal((n, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = epsilon * rng.uniform(size=(n, 1)) ** (1.0 / dim)
        pts = center + g * r
    else:
        # uniform in the L1 ball: Dirichlet radii via exponentials, random signs
        e = rng.exponential(size=(n, dim + 1))
        w = e[:, :dim] / e.sum(axis=1, keepdims=True)
        s = rng.choice([-1.0, 1.0], size=(n, dim))
        pts = center + epsilon * w * s
    return clip_domain(pts, domain)


def _ce_grad(net, x, labels):
    out, tape = forward(net, x)
    logp = log_softmax(out)
    rows = np.arange(x.shape[0])
    g = np.exp(logp)
    g[rows, labels] -= 1.0
    _, gx = backward(net, tape, g)
    return -logp[rows, labels], gx


def fgsm(net: Network, x, label, epsilon: float, domain=None):
    """``x + epsilon * sign(grad_x CE(f(x), label))``, clipped to the domain."""
    xb, single = _rows(x)
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (xb.shape[0],))
    _, g = _ce_grad(net, xb, labels)
    adv = clip_domain(xb + epsilon * np.sign(g), domain)
    return adv[0] if single else adv


def _random_starts(xb, params, rngs, metric):
    starts = np.empty_like(xb)
    for r, rng in enumerate(rngs):
        starts[r] = sample_ball(xb[r], params.epsilon, 1, rng, metric, params.domain)[0]
    return starts


def _iterate(objective, xb, params, rngs, metric=Metric.LINF):
    """Signed-gradient ascent on ``objective`` (returns values, input grads).

    Keeps, per row, the iterate with the largest objective among all steps of
    all restarts (the unperturbed start is never returned).
    """
    best = xb.copy()
    best_val = np.full(xb.shape[0], -np.inf)
    for _ in range(params.restarts):
        cur = _random_starts(xb, params, rngs, metric) if params.random_start else xb.copy()
        _, g = objective(cur)
        for t in range(params.steps):
            cur = project(cur + params.step * _ascent_direction(g, metric), xb, params.epsilon,
                          metric, params.domain)
            val, g = objective(cur)
            better = val > best_val
            best[better] = cur[better]
            best_val[better] = val[better]
    return best, best_val


def pgd(net: Network, x, label, params: AttackParams, seed: int = 0, indices=None):
    """Projected gradient ascent on cross-entropy inside the L-inf ball."""
    xb, single = _rows(x)
    if params.epsilon == 0:
        return xb[0].copy() if single else xb.copy()
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (xb.shape[0],))
    rngs = point_rngs(seed, _indices(indices, xb.shape[0]))
    best, _ = _iterate(lambda c: _ce_grad(net, c, labels), xb, params, rngs)
    return best[0] if single else best


def property_pgd(spec: PropertySpec, net: Network, center, label, params: AttackParams,
                 seed: int = 0, indices=None, return_margin: bool = False):
    """PGD ascent on the property's violation margin instead of the loss.

    The search ball uses the property's input metric with radius
    ``params.epsilon``. Returns the most-violating iterate per row (and its
    margin when ``return_margin``).
    """
    xb, single = _rows(center)
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (xb.shape[0],))
    center_out = forward(net, xb)[0]

    def objective(c):
        return margin_and_input_grad(spec, net, xb, labels, c, center_out=center_out)

    if params.epsilon == 0:
        best, val = xb.copy(), objective(xb)[0]
    else:
        rngs = point_rngs(seed, _indices(indices, xb.shape[0]))
        best, val = _iterate(objective, xb, params, rngs, spec.in_metric)
    if single:
        best, val = best[0], float(val[0])
    return (best, val) if return_margin else best


def loss_per_sample(net, x, labels):
    return cross_entropy_per_sample(forward(net, np.atleast_2d(x))[0], labels)
