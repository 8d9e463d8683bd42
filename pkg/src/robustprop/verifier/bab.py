"""Complete verification of property violations by branch-and-bound.

A violation query is a disjunction of clauses, each a conjunction of linear
comparisons over inputs and outputs. Nodes of the search tree fix the phase
of some ReLU/clamp units; interval bounds prune nodes where no clause can be
met, and once every unit has a known phase the network is affine over the
node and each clause reduces to an LP over the input box.
"""
from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from ..attacks import AttackParams, property_pgd
from ..nn import CLAMP, IDENTITY, RELU, Network, forward
from ..properties import (
    Kind, Metric, PropertySpec, UnsupportedEncodingError, is_violation, to_constraint,
    violation_margin,
)
from .bounds import Box, Phase, candidate_phases, ibp, stable_phases
from .lp import LinearProgram, LPIterationLimit, lp_feasible

TAU = 1e-6
# extra room so an LP vertex still clears TAU after round-off
_GUARD = 1e-8
_MIN_WIDTH = 1e-10


class Status(str, Enum):
    HOLDS = "HOLDS"
    VIOLATED = "VIOLATED"
    TIMEOUT = "TIMEOUT"


@dataclass(frozen=True)
class Budget:
    max_nodes: int = 100_000
    max_seconds: float = 30.0


@dataclass
class VerifierStats:
    nodes: int = 0
    lps: int = 0
    max_depth: int = 0
    bisections: int = 0
    seconds: float = 0.0


@dataclass
class VerifierVerdict:
    status: Status
    witness: np.ndarray | None = None
    margin: float | None = None
    stats: VerifierStats = field(default_factory=VerifierStats)

    @property
    def holds(self) -> bool:
        return self.status is Status.HOLDS

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "witness": None if self.witness is None else [float(v) for v in self.witness],
            "margin": self.margin,
            "stats": asdict(self.stats),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


@dataclass
class Clause:
    """Rows ``ax . x + ay . y + c <= -slack`` that must all hold."""

    ax: np.ndarray
    ay: np.ndarray
    c: np.ndarray
    slack: np.ndarray


def compile_clauses(spec, net, center, label, tau=TAU) -> list[Clause]:
    """Linear row form of every violation clause.

    Every row must hold with slack ``tau``: strict comparisons become ``<= -tau``
    and so do the non-strict CR ones, so any LP solution is a violation by a
    margin of at least ``tau``.
    """
    n, m = net.input_dim, net.output_dim
    clauses = []
    for conj in to_constraint(spec, net, center, label).children:
        rows = [cmp.as_row(n, m) for cmp in conj.children]
        slack = np.full(len(rows), tau + _GUARD)
        clauses.append(Clause(
            np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
            np.array([r[2] for r in rows]), slack,
        ))
    return clauses


def _clause_lower(clause: Clause, box: Box, ylo, yhi):
    """Interval lower bound of each row's left-hand side over the node."""
    ax, ay = clause.ax, clause.ay
    return (np.minimum(ax * box.lo, ax * box.hi).sum(axis=1)
            + np.minimum(ay * ylo, ay * yhi).sum(axis=1) + clause.c)


def _clause_score(clause, box, ylo, yhi):
    """Largest bound-overlap first; -inf when interval bounds refute the clause."""
    gap = -clause.slack - _clause_lower(clause, box, ylo, yhi)
    return -np.inf if np.any(gap < 0) else float(gap.min())


def affine_pieces(net: Network, pattern: list[np.ndarray]):
    """Per-layer affine maps ``pre = A x + a`` under a fully fixed pattern, plus the output map."""
    n = net.input_dim
    P, p = np.eye(n), np.zeros(n)
    pres = []
    for k, layer in enumerate(net.layers):
        A = layer.weights @ P
        a = layer.weights @ p + layer.bias
        pres.append((A, a))
        if layer.activation == IDENTITY:
            P, p = A, a
            continue
        ph = pattern[k]
        linear = (ph == Phase.ACTIVE) | (ph == Phase.LINEAR)
        P = np.where(linear[:, None], A, 0.0)
        p = np.where(linear, a, 0.0)
        if layer.activation == CLAMP:
            p = np.where(ph == Phase.LOW, layer.clamp_lo, p)
            p = np.where(ph == Phase.HIGH, layer.clamp_hi, p)
    return pres, (P, p)


def encode_leaf(net: Network, box: Box, pattern: list[np.ndarray], clause: Clause) -> LinearProgram:
    """LP over the inputs whose feasible set is exactly the points of ``box``
    that realise ``pattern`` and satisfy ``clause``.

    Hidden variables are eliminated: under a fixed pattern every activation is
    an affine function of the input.
    """
    rows, rhs = [], []
    pres, (P, p) = affine_pieces(net, pattern)
    for k, layer in enumerate(net.layers):
        if layer.activation == IDENTITY:
            continue
        ph = pattern[k]
        if np.any(ph == Phase.UNKNOWN):
            raise ValueError("encode_leaf needs a fully fixed activation pattern")
        A, a = pres[k]
        for i, phase in enumerate(ph):
            if phase == Phase.ACTIVE:
                rows.append(-A[i]); rhs.append(a[i])
            elif phase == Phase.INACTIVE:
                rows.append(A[i]); rhs.append(-a[i])
            elif phase == Phase.LOW:
                rows.append(A[i]); rhs.append(layer.clamp_lo - a[i])
            elif phase == Phase.HIGH:
                rows.append(-A[i]); rhs.append(a[i] - layer.clamp_hi)
            else:
                rows.append(-A[i]); rhs.append(a[i] - layer.clamp_lo)
                rows.append(A[i]); rhs.append(layer.clamp_hi - a[i])
    # clause rows: ax.x + ay.(P x + p) + c <= -slack
    for ax, ay, c, s in zip(clause.ax, clause.ay, clause.c, clause.slack):
        rows.append(ax + ay @ P)
        rhs.append(-s - c - ay @ p)
    n = net.input_dim
    A_ub = np.array(rows).reshape(-1, n)
    return LinearProgram(n, A_ub, np.array(rhs), lo=box.lo, hi=box.hi)


def _check_encodable(spec: PropertySpec, net: Network):
    if spec.in_metric is not Metric.LINF:
        raise UnsupportedEncodingError("verification needs an L-inf input ball")
    for layer in net.layers:
        if layer.activation not in (RELU, CLAMP, IDENTITY):
            raise UnsupportedEncodingError(f"unsupported activation {layer.activation}")


class _Search:
    def __init__(self, spec, net, center, label, budget, domain, tau, attack_warmstart):
        _check_encodable(spec, net)
        self.spec, self.net, self.label = spec, net, int(label)
        self.center = np.asarray(center, dtype=float)
        self.budget, self.tau = budget, tau
        self.root = Box.ball(self.center, spec.epsilon, domain)
        self.clauses = compile_clauses(spec, net, self.center, label, tau)
        self.stats = VerifierStats()
        self.start = time.perf_counter()
        self.attack_warmstart = attack_warmstart
        self.domain = domain
        self.unresolved = False

    # -- witnesses ---------------------------------------------------------
    def accept(self, x):
        """Return the witness margin if ``x`` is a checked violation of at least tau."""
        x = np.clip(x, self.root.lo, self.root.hi)
        m = violation_margin(self.spec, self.net, self.center, self.label, x)
        if m >= self.tau and is_violation(self.spec, m):
            return x, m
        return None

    def warm_start(self):
        eps = self.spec.epsilon
        if eps == 0:
            return self.accept(self.center)
        # LR violations often sit close to the center, where a full-radius
        # attack rarely looks; sub-balls are inside the ball, so their hits count
        scales = (1.0, 0.1, 0.01) if self.spec.kind is Kind.LR else (1.0,)
        for s in scales:
            params = AttackParams(eps * s, steps=20, restarts=2, domain=self.domain)
            x, _ = property_pgd(self.spec.with_epsilon(eps * s), self.net, self.center,
                                self.label, params, seed=0, return_margin=True)
            hit = self.accept(x)
            if hit is not None:
                return hit
        return None

    # -- search ------------------------------------------------------------
    def out_of_budget(self) -> bool:
        return (self.stats.nodes >= self.budget.max_nodes
                or time.perf_counter() - self.start > self.budget.max_seconds)

    def initial_phases(self):
        return [np.full(layer.out_dim, Phase.UNKNOWN, dtype=np.int64) for layer in self.net.layers]

    def solve_leaf(self, box, pattern, order):
        for ci in order:
            self.stats.lps += 1
            try:
                res = lp_feasible(encode_leaf(self.net, box, pattern, self.clauses[ci]))
            except LPIterationLimit:
                return "bisect"
            if res.feasible:
                hit = self.accept(res.point)
                if hit is not None:
                    return hit
                return "bisect"
        return None

    def run(self) -> VerifierVerdict:
        if self.attack_warmstart:
            hit = self.warm_start()
            if hit is not None:
                return self.verdict(Status.VIOLATED, hit)
        stack = [(self.root, self.initial_phases(), 0)]
        while stack:
            if self.out_of_budget():
                return self.verdict(Status.TIMEOUT)
            box, phases, depth = stack.pop()
            self.stats.nodes += 1
            self.stats.max_depth = max(self.stats.max_depth, depth)
            bounds = ibp(self.net, box, phases)
            if bounds is None:
                continue
            ylo, yhi = bounds[-1].post_lo, bounds[-1].post_hi
            scores = [_clause_score(c, box, ylo, yhi) for c in self.clauses]
            alive = [i for i in np.argsort(scores)[::-1] if scores[i] > -np.inf]
            if not alive:
                continue
            hit = self.accept(box.mid)
            if hit is not None:
                return self.verdict(Status.VIOLATED, hit)

            pattern, pick = [], None
            for k, layer in enumerate(self.net.layers):
                if layer.activation == IDENTITY:
                    pattern.append(phases[k])
                    continue
                b = bounds[k]
                ph = phases[k].copy()
                free = ph == Phase.UNKNOWN
                ph[free] = stable_phases(layer, b.pre_lo, b.pre_hi)[free]
                pattern.append(ph)
                width = np.where(ph == Phase.UNKNOWN, b.pre_hi - b.pre_lo, -np.inf)
                if width.size and width.max() > -np.inf:
                    i = int(width.argmax())
                    if pick is None or width[i] > pick[0]:
                        pick = (width[i], k, i)

            if pick is None:
                res = self.solve_leaf(box, pattern, alive)
                if res is None:
                    continue
                if res == "bisect":
                    self.bisect(stack, box, phases, depth)
                    continue
                return self.verdict(Status.VIOLATED, res)

            _, k, i = pick
            b = bounds[k]
            children = candidate_phases(self.net.layers[k], b.pre_lo[i], b.pre_hi[i])
            for phase in reversed(children):
                child = [p.copy() for p in phases]
                child[k][i] = phase
                stack.append((box, child, depth + 1))
        if self.unresolved:
            return self.verdict(Status.TIMEOUT)
        return self.verdict(Status.HOLDS)

    def bisect(self, stack, box, phases, depth):
        # fallback for numerically suspect LPs: shrink the input box instead
        width = box.hi - box.lo
        d = int(width.argmax())
        if width[d] < _MIN_WIDTH:
            self.unresolved = True
            return
        self.stats.bisections += 1
        mid = 0.5 * (box.lo[d] + box.hi[d])
        lo_hi, hi_lo = box.hi.copy(), box.lo.copy()
        lo_hi[d], hi_lo[d] = mid, mid
        stack.append((Box(hi_lo, box.hi.copy()), [p.copy() for p in phases], depth + 1))
        stack.append((Box(box.lo.copy(), lo_hi), [p.copy() for p in phases], depth + 1))

    def verdict(self, status, hit=None) -> VerifierVerdict:
        self.stats.seconds = time.perf_counter() - self.start
        if hit is None:
            return VerifierVerdict(status, stats=self.stats)
        x, m = hit
        # witnesses are always re-checked against the exact forward pass
        assert self.root.contains(x) and m >= self.tau
        return VerifierVerdict(status, np.asarray(x), float(m), self.stats)


def verify(spec: PropertySpec, net: Network, center, label: int, budget: Budget = Budget(),
           domain=None, tau: float = TAU, attack_warmstart: bool = True) -> VerifierVerdict:
    """Decide whether ``spec`` holds on the whole L-inf ball around ``center``.

    HOLDS means no point of the ball violates the property by a margin of
    ``tau`` or more; VIOLATED carries a witness that was re-checked by forward
    evaluation. ``domain=(lo, hi)`` intersects the ball with an input domain.
    """
    return _Search(spec, net, center, label, budget, domain, tau, attack_warmstart).run()


def verify_by_enumeration(spec: PropertySpec, net: Network, center, label: int,
                          domain=None, tau: float = TAU, max_patterns: int = 1 << 12):
    """Reference decision procedure: try every phase combination of the units
    whose phase is not fixed by interval bounds over the whole ball."""
    _check_encodable(spec, net)
    center = np.asarray(center, dtype=float)
    box = Box.ball(center, spec.epsilon, domain)
    clauses = compile_clauses(spec, net, center, label, tau)
    bounds = ibp(net, box)
    base, free = [], []
    for k, layer in enumerate(net.layers):
        if layer.activation == IDENTITY:
            base.append(np.full(layer.out_dim, Phase.UNKNOWN, dtype=np.int64))
            continue
        ph = stable_phases(layer, bounds[k].pre_lo, bounds[k].pre_hi)
        base.append(ph)
        for i in np.flatnonzero(ph == Phase.UNKNOWN):
            free.append((k, int(i), candidate_phases(layer, bounds[k].pre_lo[i], bounds[k].pre_hi[i])))
    combos = itertools.product(*[opts for _, _, opts in free])
    count = 0
    for combo in combos:
        count += 1
        if count > max_patterns:
            raise RuntimeError(f"more than {max_patterns} activation patterns")
        pattern = [p.copy() for p in base]
        for (k, i, _), phase in zip(free, combo):
            pattern[k][i] = phase
        for clause in clauses:
            res = lp_feasible(encode_leaf(net, box, pattern, clause))
            if res.feasible:
                x = np.clip(res.point, box.lo, box.hi)
                m = violation_margin(spec, net, center, label, x)
                if m >= tau:
                    return VerifierVerdict(Status.VIOLATED, x, float(m))
    return VerifierVerdict(Status.HOLDS)
