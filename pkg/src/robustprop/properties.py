"""The four local robustness properties and their pointwise evaluation.

For a center ``x0`` with label ``y`` and every candidate ``x`` in the
``epsilon``-ball around ``x0``, each property constrains the network output:

* SR  (standard):        dist_out(f(x), f(x0)) <= delta
* CR  (classification):  argmax f(x) == y            (ties are violations)
* SCR (strong class.):   f(x)[y] >= eta
* LR  (Lipschitz):       dist_out(f(x), f(x0)) <= L * dist_in(x, x0)
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import logic
from .nn import Network, backward, forward, softmax

BALL_TOL = 1e-12


class Metric(str, Enum):
    LINF = "linf"
    L1 = "l1"
    L2 = "l2"


class Kind(str, Enum):
    SR = "SR"
    CR = "CR"
    SCR = "SCR"
    LR = "LR"


class PropertyError(ValueError):
    pass


class OutsideBallError(PropertyError):
    """A candidate lies outside the epsilon-ball of its center."""


class UnsupportedEncodingError(PropertyError):
    """The property cannot be written as a disjunction of linear constraints."""


_PARAMS = {
    Kind.SR: {"delta"},
    Kind.CR: set(),
    Kind.SCR: {"eta"},
    Kind.LR: {"lipschitz"},
}


@dataclass(frozen=True)
class PropertySpec:
    kind: Kind
    epsilon: float
    delta: float | None = None
    eta: float | None = None
    lipschitz: float | None = None
    in_metric: Metric = Metric.LINF
    out_metric: Metric = Metric.LINF
    # SCR only: compare softmax(f(x))[y] instead of the raw logit against eta
    probability: bool = False

    def with_epsilon(self, epsilon: float) -> PropertySpec:
        d = self.to_dict()
        d["epsilon"] = epsilon
        return PropertySpec.from_dict(d)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        d["kind"] = self.kind.value
        d["in_metric"] = self.in_metric.value
        d["out_metric"] = self.out_metric.value
        if "lipschitz" in d:
            d["L"] = d.pop("lipschitz")
        if not self.probability:
            d.pop("probability")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PropertySpec:
        d = dict(d)
        kind = d.pop("kind")
        if "L" in d:
            d["lipschitz"] = d.pop("L")
        return make_property(kind, **d)

    def label(self) -> str:
        parts = [f"eps={self.epsilon:g}"]
        if self.kind is Kind.SR:
            parts.append(f"delta={self.delta:g}")
        elif self.kind is Kind.SCR:
            parts.append(f"eta={self.eta:g}" + (", prob" if self.probability else ""))
        elif self.kind is Kind.LR:
            parts.append(f"L={self.lipschitz:g}")
        if self.in_metric is not Metric.LINF or self.out_metric is not Metric.LINF:
            parts.append(f"{self.in_metric.value}->{self.out_metric.value}")
        return f"{self.kind.value}({', '.join(parts)})"


def make_property(kind, epsilon=0.1, *, delta=None, eta=None, lipschitz=None,
                  in_metric=Metric.LINF, out_metric=Metric.LINF,
                  probability=False) -> PropertySpec:
    """Validate and build a :class:`PropertySpec`.

    ``epsilon`` may be 0 (a degenerate ball, useful for sanity checks);
    negative radii are rejected.
    """
    try:
        kind = Kind(kind)
        in_metric, out_metric = Metric(in_metric), Metric(out_metric)
    except ValueError as exc:
        raise PropertyError(str(exc)) from None
    given = {k for k, v in {"delta": delta, "eta": eta, "lipschitz": lipschitz}.items()
             if v is not None}
    needed = _PARAMS[kind]
    if given != needed:
        missing, extra = needed - given, given - needed
        raise PropertyError(
            f"{kind.value} takes parameters {sorted(needed) or 'none'}"
            + (f"; missing {sorted(missing)}" if missing else "")
            + (f"; unexpected {sorted(extra)}" if extra else "")
        )
    if epsilon is None or not np.isfinite(epsilon) or epsilon < 0:
        raise PropertyError("epsilon must be a finite number >= 0")
    if kind is Kind.SR and not delta > 0:
        raise PropertyError("delta must be > 0")
    if kind is Kind.LR and not lipschitz > 0:
        raise PropertyError("L must be > 0")
    if kind is Kind.SCR and eta <= 0.5:
        warnings.warn(
            f"eta={eta} <= 0.5: strong classification robustness no longer implies "
            "classification robustness", stacklevel=2,
        )
    if probability and kind is not Kind.SCR:
        raise PropertyError("probability semantics only apply to SCR")
    return PropertySpec(kind, float(epsilon),
                        None if delta is None else float(delta),
                        None if eta is None else float(eta),
                        None if lipschitz is None else float(lipschitz),
                        in_metric, out_metric, bool(probability))


def distance(a, b, metric) -> np.ndarray:
    """Row-wise distance between batches (or vectors) ``a`` and ``b``."""
    d = np.atleast_2d(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    metric = Metric(metric)
    if metric is Metric.LINF:
        return np.abs(d).max(axis=1)
    if metric is Metric.L1:
        return np.abs(d).sum(axis=1)
    return np.sqrt((d * d).sum(axis=1))


def _distance_grad(a, b, metric) -> np.ndarray:
    """Subgradient of ``distance(a, b)`` with respect to ``a``."""
    d = np.atleast_2d(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    metric = Metric(metric)
    if metric is Metric.LINF:
        g = np.zeros_like(d)
        idx = np.abs(d).argmax(axis=1)
        rows = np.arange(d.shape[0])
        g[rows, idx] = np.sign(d[rows, idx])
        return g
    if metric is Metric.L1:
        return np.sign(d)
    norm = np.sqrt((d * d).sum(axis=1, keepdims=True))
    return d / np.where(norm > 0, norm, 1.0)


def check_in_ball(spec: PropertySpec, center, candidates):
    d = distance(candidates, center, spec.in_metric)
    if np.any(d > spec.epsilon + BALL_TOL):
        worst = float(d.max())
        raise OutsideBallError(
            f"candidate at distance {worst:.6g} lies outside the "
            f"{spec.in_metric.value} ball of radius {spec.epsilon:g}"
        )


def _margins_from_outputs(spec, out, center_out, labels, dist_in):
    rows = np.arange(out.shape[0])
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), rows.shape)
    if spec.kind is Kind.CR:
        others = out.copy()
        others[rows, labels] = -np.inf
        return others.max(axis=1) - out[rows, labels]
    if spec.kind is Kind.SCR:
        score = softmax(out)[rows, labels] if spec.probability else out[rows, labels]
        return spec.eta - score
    dist_out = distance(out, center_out, spec.out_metric)
    if spec.kind is Kind.SR:
        return dist_out - spec.delta
    return dist_out - spec.lipschitz * dist_in


def violation_margin(spec: PropertySpec, net: Network, center, label: int, candidate,
                     check_ball: bool = True):
    """Signed violation margin; positive exactly when the property fails at ``candidate``.

    For CR a tie (margin 0) also counts as a violation. Accepts one candidate or
    a batch and returns a float or an array accordingly.
    """
    cand = np.asarray(candidate, dtype=float)
    single = cand.ndim == 1
    cand = np.atleast_2d(cand)
    if check_ball:
        check_in_ball(spec, center, cand)
    out = np.atleast_2d(forward(net, cand)[0])
    center_out = forward(net, center)[0]
    label = np.asarray(label, dtype=np.int64)
    dist_in = distance(cand, center, spec.in_metric)
    margins = _margins_from_outputs(spec, out, center_out, label, dist_in)
    return float(margins[0]) if single else margins


def is_violation(spec: PropertySpec, margin):
    """Map margins to violation flags under the kind's boundary convention."""
    margin = np.asarray(margin)
    return margin >= 0 if spec.kind is Kind.CR else margin > 0


def rhs_holds(spec: PropertySpec, net: Network, center, label: int, candidate,
              check_ball: bool = True):
    m = violation_margin(spec, net, center, label, candidate, check_ball)
    holds = ~is_violation(spec, m)
    return bool(holds) if np.ndim(holds) == 0 else holds


def margin_and_input_grad(spec: PropertySpec, net: Network, center, label,
                          candidates: np.ndarray, center_out=None):
    """Violation margins for a batch of candidates and their gradients w.r.t. the candidates.

    ``center`` and ``label`` may be a single point/label shared by every row or
    one per row.
    """
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    out, tape = forward(net, cand)
    if center_out is None:
        center_out = forward(net, center)[0]
    rows = np.arange(out.shape[0])
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), rows.shape)
    dist_in = distance(cand, center, spec.in_metric)
    margins = _margins_from_outputs(spec, out, center_out, labels, dist_in)
    g_out = np.zeros_like(out)
    g_in_direct = np.zeros_like(cand)
    if spec.kind is Kind.CR:
        others = out.copy()
        others[rows, labels] = -np.inf
        g_out[rows, others.argmax(axis=1)] = 1.0
        g_out[rows, labels] -= 1.0
    elif spec.kind is Kind.SCR:
        if spec.probability:
            p = softmax(out)
            py = p[rows, labels][:, None]
            # d(-p_y)/dz = -p_y (e_y - p)
            g_out = py * p
            g_out[rows, labels] -= py[:, 0]
        else:
            g_out[rows, labels] = -1.0
    else:
        g_out = _distance_grad(out, center_out, spec.out_metric)
        if spec.kind is Kind.LR:
            g_in_direct = -spec.lipschitz * _distance_grad(cand, center, spec.in_metric)
    _, g_in = backward(net, tape, g_out)
    return margins, np.atleast_2d(g_in) + g_in_direct


# -- formula views ----------------------------------------------------------

def rhs_formula(spec: PropertySpec, center, center_out, label: int) -> logic.Formula:
    """The property's right-hand side as a formula over (candidate, output).

    ``center``/``center_out``/``label`` may be batched (one row per candidate).
    With probability semantics the ``y`` variables stand for softmax outputs.
    """
    n, m = np.shape(center)[-1], np.shape(center_out)[-1]
    if spec.kind is Kind.CR:
        if np.ndim(label) != 0:
            raise PropertyError("CR formulas take a single label")
        return logic.And(tuple(
            logic.Lt(logic.output_var(j, m), logic.output_var(label, m))
            for j in range(m) if j != label
        ))
    if spec.kind is Kind.SCR:
        return logic.Leq(logic.const(spec.eta), logic.output_var(label, m))
    dist_out = logic.distance_term("y", center_out, spec.out_metric.value, m)
    if spec.kind is Kind.SR:
        return logic.Leq(dist_out, logic.const(spec.delta))
    dist_in = logic.distance_term("x", center, spec.in_metric.value, n)
    return logic.Leq(dist_out, logic.Scale(spec.lipschitz, dist_in))


def _signed_output_deviations(spec, center_out):
    """Linear terms whose maximum is dist_out(y, center_out) for L-inf / L1 outputs."""
    m = len(center_out)
    c = np.asarray(center_out, dtype=float)
    if spec.out_metric is Metric.LINF:
        terms = []
        for j in range(m):
            for s in (1.0, -1.0):
                terms.append(logic.output_var(j, m, scale=s, offset=-s * c[j]))
        return terms
    if spec.out_metric is Metric.L1:
        terms = []
        for signs in itertools.product((1.0, -1.0), repeat=m):
            s = np.array(signs)
            terms.append(logic.Linear(y_coef=s, const=-float(s @ c)))
        return terms
    raise UnsupportedEncodingError("L2 output distance has no linear encoding")


def to_constraint(spec: PropertySpec, net: Network, center, label: int) -> logic.Or:
    """The VIOLATION of the property as an Or of And-clauses of linear comparisons.

    ``f(center)`` is folded in as constants. Strict comparisons mark the
    violation side of non-strict property bounds.
    """
    center = np.asarray(center, dtype=float)
    center_out = forward(net, center)[0]
    n, m = net.input_dim, net.output_dim
    label = int(label)
    if spec.kind is Kind.CR:
        return logic.Or(tuple(
            logic.And((logic.Leq(logic.output_var(label, m), logic.output_var(j, m)),))
            for j in range(m) if j != label
        ))
    if spec.kind is Kind.SCR:
        if spec.probability:
            raise UnsupportedEncodingError("softmax outputs are not piecewise-linear")
        return logic.Or((logic.And((logic.Lt(logic.output_var(label, m), logic.const(spec.eta)),)),))
    deviations = _signed_output_deviations(spec, center_out)
    if spec.kind is Kind.SR:
        return logic.Or(tuple(
            logic.And((logic.Lt(logic.const(spec.delta), dev),)) for dev in deviations
        ))
    if spec.in_metric is not Metric.LINF:
        raise UnsupportedEncodingError("Lipschitz encoding needs an L-inf input metric")
    L = spec.lipschitz
    clauses = []
    for dev in deviations:
        comps = []
        for i in range(n):
            comps.append(logic.Lt(logic.input_var(i, n, scale=L, offset=-L * center[i]), dev))
            comps.append(logic.Lt(logic.input_var(i, n, scale=-L, offset=L * center[i]), dev))
        clauses.append(logic.And(tuple(comps)))
    return logic.Or(tuple(clauses))
