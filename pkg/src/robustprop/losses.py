"""Constraint losses and the combined training objective.

The combined loss of a batch is::

    alpha * CE(f(x), y) + beta * L_C(x, y)

where ``L_C`` is the translated property loss at the worst of the sampled
candidates around each point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackParams, point_rngs, property_pgd, sample_ball
from .nn import Network, backward, cross_entropy, forward, softmax
from .properties import Kind, PropertySpec, rhs_formula


class UnsupportedLossError(ValueError):
    """The property has no differentiable loss (CR uses argmax)."""


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 0.2
    samples_per_point: int = 1
    sampler: str = "pgd"            # "pgd" or "uniform"
    reduction: str = "max"          # over sampled candidates: "max" or "mean"
    attack: AttackParams | None = None   # defaults to PGD at the property's epsilon

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("alpha, beta must be >= 0 with alpha + beta > 0")
        if self.samples_per_point < 1:
            raise ValueError("samples_per_point must be >= 1")
        if self.sampler not in ("pgd", "uniform"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.reduction not in ("max", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


def _rows_loss_grads(spec: PropertySpec, net: Network, centers, labels, cands, weights):
    """Per-row constraint losses and the parameter gradient of ``sum(weights * loss)``."""
    if spec.kind is Kind.CR:
        raise UnsupportedLossError("argmax is not differentiable; CR has no constraint loss")
    out, tape = forward(net, cands)
    center_out, center_tape = forward(net, centers)
    y = softmax(out) if spec.probability else out
    formula = rhs_formula(spec, centers, center_out, labels)
    loss, _, gy = formula.loss_grad(cands, y)
    gy = gy * weights[:, None]
    if spec.probability:
        g_out = y * (gy - (gy * y).sum(axis=1, keepdims=True))
    else:
        g_out = gy
    grads, _ = backward(net, tape, g_out)
    if spec.kind in (Kind.SR, Kind.LR):
        # the formula depends on f(center) only through y - f(center)
        g_center, _ = backward(net, center_tape, -gy)
        grads = [a + b for a, b in zip(grads, g_center)]
    return loss, grads


def constraint_loss(spec: PropertySpec, net: Network, center, label, candidate):
    """Translated property loss at ``candidate`` and its parameter gradient.

    Zero exactly when the property's right-hand side holds at the candidate.
    For a batch (rows of ``center``/``candidate``) the loss is the mean.
    """
    cand = np.asarray(candidate, dtype=float)
    single = cand.ndim == 1
    cands = np.atleast_2d(cand)
    centers = np.broadcast_to(np.asarray(center, dtype=float), cands.shape)
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (cands.shape[0],))
    if not single:
        labels = labels.copy()
    w = np.full(cands.shape[0], 1.0 / cands.shape[0])
    loss, grads = _rows_loss_grads(spec, net, centers, labels if not single else int(labels[0]), cands, w)
    return float(loss.mean()), grads


def sample_candidates(cfg: LossConfig, spec: PropertySpec, net: Network, X, labels,
                      seed=0, indices=None) -> list[np.ndarray]:
    """``samples_per_point`` candidate batches around the rows of ``X``."""
    indices = np.arange(X.shape[0]) if indices is None else np.asarray(indices)
    seed = tuple(np.atleast_1d(seed).tolist())
    batches = []
    for k in range(cfg.samples_per_point):
        if cfg.sampler == "pgd":
            params = cfg.attack or AttackParams(spec.epsilon)
            batches.append(property_pgd(spec, net, X, labels, params, seed=seed + (k,),
                                        indices=indices))
        else:
            domain = cfg.attack.domain if cfg.attack else None
            rngs = point_rngs(seed + (k,), indices)
            batches.append(np.stack([
                sample_ball(x, spec.epsilon, 1, rng, spec.in_metric, domain)[0]
                for x, rng in zip(X, rngs)
            ]))
    return batches


@dataclass
class LossBreakdown:
    total: float
    cross_entropy: float
    constraint: float
    grads: list = field(repr=False, default_factory=list)


def combined_loss(cfg: LossConfig, spec: PropertySpec, net: Network, X, labels,
                  seed=0, indices=None, candidates=None) -> LossBreakdown:
    """Mean over the batch of ``alpha * CE + beta * constraint loss``.

    The constraint part uses, per point, the maximum (or mean) loss over the
    sampled candidates. Pass ``candidates`` to skip sampling.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if spec.kind is Kind.CR:
        raise UnsupportedLossError("argmax is not differentiable; train CR via data augmentation")
    B = X.shape[0]
    out, tape = forward(net, X)
    ce, g_ce = cross_entropy(out, labels)
    grads, _ = backward(net, tape, cfg.alpha * g_ce)

    if candidates is None:
        candidates = sample_candidates(cfg, spec, net, X, labels, seed, indices)
    per_sample = []
    for cands in candidates:
        l, _ = _rows_loss_grads(spec, net, X, labels, cands, np.zeros(B))
        per_sample.append(l)
    per_sample = np.array(per_sample)
    if cfg.reduction == "max":
        pick = per_sample.argmax(axis=0)
        rows = np.arange(B)
        chosen = np.stack(candidates)[pick, rows]
        row_loss = per_sample[pick, rows]
        _, cgrads = _rows_loss_grads(spec, net, X, labels, chosen, np.full(B, cfg.beta / B))
    else:
        row_loss = per_sample.mean(axis=0)
        cgrads = None
        K = len(candidates)
        for cands in candidates:
            _, g = _rows_loss_grads(spec, net, X, labels, cands, np.full(B, cfg.beta / (B * K)))
            cgrads = g if cgrads is None else [a + b for a, b in zip(cgrads, g)]
    grads = [a + b for a, b in zip(grads, cgrads)]
    constraint = float(row_loss.mean())
    return LossBreakdown(cfg.alpha * ce + cfg.beta * constraint, ce, constraint, grads)
