"""Training regimes: baseline, data augmentation, adversarial and constraint-loss training.

Randomness is split into independent streams derived from the seed:

* ``[seed, 0]`` initialises the weights,
* ``[seed, 1]`` shuffles the batches,
* ``(seed, 2, epoch)`` seeds the per-point samplers (augmentation, PGD,
  constraint candidates).

Because the shuffle stream never feeds the samplers, changing the training
regime leaves the batch order untouched.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .attacks import AttackParams, clip_domain, fgsm, pgd, point_rngs, project, sample_ball
from .data import Dataset, batch_indices
from .losses import LossConfig, combined_loss
from .nn import (
    AdamState, Network, adam_step, backward, cross_entropy, forward, init_network,
)
from .properties import Kind, PropertySpec, make_property

log = logging.getLogger(__name__)

INIT_STREAM, SHUFFLE_STREAM, SAMPLER_STREAM = 0, 1, 2
AUG_COPIES = 2


class Mode(str, Enum):
    BASELINE = "baseline"
    DATA_AUG_RU = "data_aug_ru"
    DATA_AUG_FGSM = "data_aug_fgsm"
    ADVERSARIAL = "adversarial"
    CONSTRAINT_SR = "constraint_sr"
    CONSTRAINT_SCR = "constraint_scr"
    CONSTRAINT_LR = "constraint_lr"


CONSTRAINT_KINDS = {Mode.CONSTRAINT_SR: Kind.SR, Mode.CONSTRAINT_SCR: Kind.SCR,
                    Mode.CONSTRAINT_LR: Kind.LR}


class TrainingError(ValueError):
    pass


def parse_mode(mode) -> Mode:
    if isinstance(mode, Mode):
        return mode
    key = str(mode).strip().lower().replace("-", "_")
    aliases = {"dataaugru": "data_aug_ru", "dataaugfgsm": "data_aug_fgsm",
               "constraintsr": "constraint_sr", "constraintscr": "constraint_scr",
               "constraintlr": "constraint_lr", "constraintcr": "constraint_cr"}
    key = aliases.get(key, key)
    if key == "constraint_cr":
        raise TrainingError("constraint_cr is refused: argmax is not differentiable, so CR has "
                            "no constraint loss; train for CR with data augmentation instead")
    try:
        return Mode(key)
    except ValueError:
        raise TrainingError(f"unknown training mode {mode!r}; expected one of "
                            f"{[m.value for m in Mode]}") from None


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (16,)
    mode: Mode = Mode.BASELINE
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-4
    epsilon: float = 0.1                       # perturbation radius for aug/adversarial modes
    loss: LossConfig = LossConfig()
    prop: PropertySpec | None = None           # required for constraint modes
    attack: AttackParams | None = None         # PGD for adversarial mode
    domain: tuple[float, float] | None = None
    output_clamp: tuple[float, float] | None = (-100.0, 100.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", parse_mode(self.mode))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise TrainingError("epochs, batch_size and lr must be positive")
        if any(h < 1 for h in self.hidden):
            raise TrainingError("hidden widths must be positive")
        kind = CONSTRAINT_KINDS.get(self.mode)
        if kind is not None:
            if self.prop is None:
                raise TrainingError(f"mode {self.mode.value} needs a property")
            if self.prop.kind is not kind:
                raise TrainingError(f"mode {self.mode.value} needs a {kind.value} property, "
                                    f"got {self.prop.kind.value}")

    def attack_params(self) -> AttackParams:
        base = self.attack or AttackParams(self.epsilon)
        return replace(base.with_epsilon(self.epsilon), domain=self.domain)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    constraint: float | None = None


@dataclass
class TrainingLog:
    mode: str
    seed: int
    epochs: list[EpochRecord] = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([e.loss for e in self.epochs])

    def to_dict(self) -> dict:
        return {"mode": self.mode, "seed": self.seed,
                "epochs": [vars(e).copy() for e in self.epochs]}


def _augment_ru(X, eps, seed, domain):
    rngs = point_rngs((seed, SAMPLER_STREAM), np.arange(X.shape[0]))
    return np.concatenate([sample_ball(x, eps, AUG_COPIES, r, domain=domain)
                           for x, r in zip(X, rngs)])


def _augment_fgsm(net, X, y, eps, seed, epoch, domain):
    """Two FGSM steps per point, each from its own uniform random start in the ball."""
    rngs = point_rngs((seed, SAMPLER_STREAM, epoch), np.arange(X.shape[0]))
    starts = np.stack([sample_ball(x, eps, AUG_COPIES, r, domain=domain) for x, r in zip(X, rngs)])
    starts = starts.reshape(-1, X.shape[1])
    centers = np.repeat(X, AUG_COPIES, axis=0)
    labels = np.repeat(y, AUG_COPIES)
    adv = fgsm(net, starts, labels, eps, domain)
    return clip_domain(project(adv, centers, eps), domain), labels


def train_network(dataset: Dataset, cfg: TrainConfig) -> tuple[Network, TrainingLog]:
    """Train a fresh network on ``dataset`` under ``cfg``; deterministic per seed."""
    X, y = dataset.inputs, dataset.labels
    sizes = [dataset.n_features, *cfg.hidden, dataset.n_classes]
    net = init_network(sizes, np.random.default_rng([cfg.seed, INIT_STREAM]),
                       output_clamp=cfg.output_clamp)
    params = net.parameters()
    opt = AdamState.for_network(net, lr=cfg.lr)
    shuffle = np.random.default_rng([cfg.seed, SHUFFLE_STREAM])
    history = TrainingLog(cfg.mode.value, cfg.seed)
    mode = cfg.mode
    attack = cfg.attack_params()

    static_aug = None
    if mode is Mode.DATA_AUG_RU:
        static_aug = (_augment_ru(X, cfg.epsilon, cfg.seed, cfg.domain), np.repeat(y, AUG_COPIES))

    for epoch in range(cfg.epochs):
        if mode is Mode.DATA_AUG_RU:
            TX, Ty = np.concatenate([X, static_aug[0]]), np.concatenate([y, static_aug[1]])
        elif mode is Mode.DATA_AUG_FGSM:
            ax, ay = _augment_fgsm(net, X, y, cfg.epsilon, cfg.seed, epoch, cfg.domain)
            TX, Ty = np.concatenate([X, ax]), np.concatenate([y, ay])
        else:
            TX, Ty = X, y
        total, cons_total, count = 0.0, 0.0, 0
        for idx in batch_indices(TX.shape[0], cfg.batch_size, shuffle):
            xb, yb = TX[idx], Ty[idx]
            cons = None
            if mode in CONSTRAINT_KINDS:
                res = combined_loss(cfg.loss, cfg.prop, net, xb, yb,
                                    seed=(cfg.seed, SAMPLER_STREAM, epoch), indices=idx)
                loss, grads, cons = res.total, res.grads, res.constraint
            else:
                if mode is Mode.ADVERSARIAL:
                    xb = pgd(net, xb, yb, attack, seed=(cfg.seed, SAMPLER_STREAM, epoch), indices=idx)
                out, tape = forward(net, xb)
                loss, g = cross_entropy(out, yb)
                grads, _ = backward(net, tape, g)
            adam_step(opt, params, grads)
            net.mark_updated()
            total += loss * len(idx)
            if cons is not None:
                cons_total += cons * len(idx)
            count += len(idx)
        acc = float((forward(net, X)[0].argmax(axis=1) == y).mean())
        rec = EpochRecord(epoch, total / count, acc,
                          cons_total / count if mode in CONSTRAINT_KINDS else None)
        history.epochs.append(rec)
        log.debug("epoch %d loss %.6f acc %.4f", epoch, rec.loss, acc)
    return net, history


def default_property(mode: Mode, epsilon: float, delta=10.0, eta=0.52, lipschitz=10.0):
    """Property used by a constraint mode when none is given explicitly."""
    kind = CONSTRAINT_KINDS.get(parse_mode(mode))
    if kind is None:
        return None
    kw = {Kind.SR: {"delta": delta}, Kind.SCR: {"eta": eta}, Kind.LR: {"lipschitz": lipschitz}}[kind]
    return make_property(kind, epsilon, **kw)
