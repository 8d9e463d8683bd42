"""scikit-learn compatible classifier wrapping the training regimes."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .attacks import AttackParams
from .data import Dataset
from .losses import LossConfig
from .nn import forward, softmax
from .properties import Kind, make_property
from .training import CONSTRAINT_KINDS, TrainConfig, parse_mode, train_network


class RobustMLPClassifier(ClassifierMixin, BaseEstimator):
    """One-hidden-layer (or deeper) ReLU classifier trained under a robustness regime.

    ``mode`` selects the regime (``"baseline"``, ``"data_aug_ru"``,
    ``"data_aug_fgsm"``, ``"adversarial"``, ``"constraint_sr"``,
    ``"constraint_scr"``, ``"constraint_lr"``). Constraint modes build their
    property from ``epsilon`` and ``delta`` / ``eta`` / ``lipschitz``.
    """

    def __init__(self, hidden=(16,), mode="baseline", epochs=100, batch_size=128,
                 learning_rate=1e-4, epsilon=0.1, delta=10.0, eta=0.52, lipschitz=10.0,
                 alpha=1.0, beta=0.2, samples_per_point=1, sampler="pgd",
                 attack_steps=20, attack_restarts=1, domain=None,
                 output_clamp=(-100.0, 100.0), random_state=0):
        self.hidden = hidden
        self.mode = mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epsilon = epsilon
        self.delta = delta
        self.eta = eta
        self.lipschitz = lipschitz
        self.alpha = alpha
        self.beta = beta
        self.samples_per_point = samples_per_point
        self.sampler = sampler
        self.attack_steps = attack_steps
        self.attack_restarts = attack_restarts
        self.domain = domain
        self.output_clamp = output_clamp
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        mode = parse_mode(self.mode)
        prop = None
        kind = CONSTRAINT_KINDS.get(mode)
        if kind is not None:
            kw = {Kind.SR: {"delta": self.delta}, Kind.SCR: {"eta": self.eta},
                  Kind.LR: {"lipschitz": self.lipschitz}}[kind]
            prop = make_property(kind, self.epsilon, **kw)
        domain = None if self.domain is None else tuple(self.domain)
        attack = AttackParams(self.epsilon, steps=self.attack_steps,
                              restarts=self.attack_restarts, domain=domain)
        loss = LossConfig(self.alpha, self.beta, self.samples_per_point, self.sampler,
                          attack=attack)
        seed = 0 if self.random_state is None else int(self.random_state)
        return TrainConfig(tuple(self.hidden), mode, self.epochs, self.batch_size,
                           self.learning_rate, self.epsilon, loss, prop, attack, domain,
                           None if self.output_clamp is None else tuple(self.output_clamp), seed)

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError(f"need samples of at least two classes; got {self.classes_.size} class")
        ds = Dataset(X, encoded, "fit", self.classes_.size)
        self.network_, self.history_ = train_network(ds, self._train_config())
        return self

    def logits(self, X):
        """Clamped network outputs, one column per class."""
        check_is_fitted(self, "network_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return forward(self.network_, X)[0]

    def decision_function(self, X):
        """Logits; for two classes the margin of the second class over the first."""
        out = self.logits(X)
        return out[:, 1] - out[:, 0] if out.shape[1] == 2 else out

    def predict_proba(self, X):
        return softmax(self.logits(X))

    def predict(self, X):
        out = self.logits(X)
        return self.classes_[out.argmax(axis=1)]
