"""Scikit-learn style wrappers around the patch classifier and the vote rule.

DenseNetPatchClassifier fits one DenseNet on arrays of preprocessed patches;
MajorityVoteEnsemble combines three fitted members with the same hard-vote
rule the pipeline uses. Both follow the estimator conventions (constructor
stores parameters verbatim, fit validates, fitted state carries a trailing
underscore) so get_params/set_params/clone work.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from adens.labels import NUM_CLASSES
from adens.models import CANONICAL_BLOCKS, DenseNetConfig, build_densenet
from adens.training import TrainConfig, class_weights, fit_arrays, softmax


def _check_patch_array(X, side: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"X must have shape (n_samples, 3, side, side), got {X.shape}")
    if X.shape[2] != X.shape[3]:
        raise ValueError(f"patches must be square, got {X.shape[2]}x{X.shape[3]}")
    if side is not None and X.shape[2] != side:
        raise ValueError(f"expected side {side}, got {X.shape[2]}")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    return X


def _check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).ravel()
    if len(y) != n_samples:
        raise ValueError(f"X has {n_samples} samples but y has {len(y)}")
    if ((y < 0) | (y >= NUM_CLASSES)).any():
        raise ValueError(f"labels must be in 0..{NUM_CLASSES - 1}")
    return y


class DenseNetPatchClassifier(ClassifierMixin, BaseEstimator):
    """One DenseNet member trained on (n, 3, side, side) patch arrays.

    `variant_name` may be a canonical name (block configuration implied) or a
    free name, in which case `block_layers`, `growth_rate`, and
    `init_features` describe the network.
    """

    def __init__(
        self,
        variant_name: str = "densenet121",
        block_layers: tuple[int, int, int, int] | None = None,
        growth_rate: int = 32,
        init_features: int = 64,
        pretrained: bool = False,
        learning_rate: float = 0.001,
        momentum: float = 0.9,
        batch_size: int = 32,
        max_epochs: int = 100,
        patience: int = 10,
        balance_classes: bool = True,
        validation_fraction: float = 0.1,
        random_state: int = 0,
    ):
        self.variant_name = variant_name
        self.block_layers = block_layers
        self.growth_rate = growth_rate
        self.init_features = init_features
        self.pretrained = pretrained
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.balance_classes = balance_classes
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _build_config(self) -> DenseNetConfig:
        if self.variant_name in CANONICAL_BLOCKS:
            blocks, growth, init = CANONICAL_BLOCKS[self.variant_name]
        else:
            if self.block_layers is None:
                raise ValueError(
                    f"variant {self.variant_name!r} is not canonical; pass block_layers"
                )
            blocks, growth, init = tuple(self.block_layers), self.growth_rate, self.init_features
        return DenseNetConfig(
            self.variant_name, blocks, growth, init, NUM_CLASSES, self.pretrained
        )

    def _carve_validation(self, X, y, rng) -> tuple[np.ndarray, ...]:
        n_val = int(np.floor(self.validation_fraction * len(X) + 0.5))
        if n_val == 0 or n_val >= len(X):
            return X, y, X, y
        perm = rng.permutation(len(X))
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        return X[train_idx], y[train_idx], X[val_idx], y[val_idx]

    def fit(self, X, y, X_val=None, y_val=None):
        X = _check_patch_array(X)
        y = _check_labels(y, len(X))
        rng = np.random.default_rng(self.random_state)
        if X_val is None:
            X, y, X_val, y_val = self._carve_validation(X, y, rng)
        else:
            X_val = _check_patch_array(X_val, side=X.shape[2])
            y_val = _check_labels(y_val, len(X_val))

        counts = np.bincount(y, minlength=NUM_CLASSES)
        if self.balance_classes and counts.min() >= 1:
            weights = tuple(float(w) for w in class_weights(counts))
        else:
            weights = (1.0,) * NUM_CLASSES

        torch.manual_seed(self.random_state)
        handle = build_densenet(self._build_config())
        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.random_state,
            class_weights=weights,
        )
        record = fit_arrays(
            handle,
            torch.from_numpy(X),
            torch.from_numpy(y),
            torch.from_numpy(np.asarray(X_val, dtype=np.float32)),
            torch.from_numpy(np.asarray(y_val, dtype=np.int64)),
            cfg,
        )
        self.handle_ = handle
        self.history_ = record.history
        self.best_epoch_ = record.best_epoch
        self.classes_ = np.arange(NUM_CLASSES)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.input_side_ = X.shape[2]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "handle_")
        X = _check_patch_array(X, side=self.input_side_)
        network = self.handle_.network
        network.eval()
        outputs = []
        with torch.no_grad():
            for start in range(0, len(X), max(self.batch_size, 1)):
                batch = torch.from_numpy(X[start : start + self.batch_size])
                outputs.append(network(batch).numpy())
        return np.concatenate(outputs)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X).astype(np.float64))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


class MajorityVoteEnsemble(ClassifierMixin, BaseEstimator):
    """Hard-vote combination of member classifiers.

    A label with a unique top vote count wins; on ties the mean posterior
    decides, lowest class index on exact ties. With `voting="soft"` the mean
    posterior decides directly.
    """

    def __init__(self, estimators: list[tuple[str, BaseEstimator]], voting: str = "hard"):
        self.estimators = estimators
        self.voting = voting

    def fit(self, X, y, X_val=None, y_val=None):
        if not self.estimators:
            raise ValueError("estimators must be a nonempty list of (name, estimator)")
        if self.voting not in ("hard", "soft"):
            raise ValueError(f"voting must be 'hard' or 'soft', got {self.voting!r}")
        self.estimators_ = []
        self.names_ = []
        for name, estimator in self.estimators:
            member = clone(estimator)
            member.fit(X, y, X_val=X_val, y_val=y_val)
            self.estimators_.append(member)
            self.names_.append(name)
        self.classes_ = np.arange(NUM_CLASSES)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        probas = [member.predict_proba(X) for member in self.estimators_]
        return np.mean(probas, axis=0)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        mean_proba = self.predict_proba(X)
        if self.voting == "soft":
            return np.argmax(mean_proba, axis=1)
        votes = np.stack([member.predict(X) for member in self.estimators_], axis=1)
        out = np.empty(len(votes), dtype=np.int64)
        for i, row in enumerate(votes):
            counts = np.bincount(row, minlength=NUM_CLASSES)
            top = counts.max()
            tied = np.flatnonzero(counts == top)
            if len(tied) == 1:
                out[i] = tied[0]
            else:
                out[i] = int(np.argmax(mean_proba[i]))
        return out
