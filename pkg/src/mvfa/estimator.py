"""scikit-learn style estimator facade over the training pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .backbone import BackboneConfig
from .config import TrainConfig
from .data import Split
from .errors import MvfaError
from .model import _softmax_rows
from .trainer import train


class MVFeaAugClassifier(BaseEstimator, ClassifierMixin):
    """Image classifier with attention-guided multi-view feature augmentation.

    ``X`` is an ``(n, side, side, 3)`` float array with values in [0, 1]
    (``side`` must match ``input_side``); ``y`` holds integer class labels.
    Hyperparameters mirror the run configuration, so the estimator slots
    into sklearn model selection utilities via ``get_params``/``set_params``.
    """

    def __init__(self, mode="MFA", head="single_fc", k=50,
                 region_sizes=(3, 5, 7, 9), batch_size=64, lr=1e-4,
                 iterations=2000, seed=0, eta=10.0, grid_side=7,
                 proto_dim=64, stages=((16, 3, 2), (32, 3, 2)),
                 input_side=64, validation_fraction=0.1):
        self.mode = mode
        self.head = head
        self.k = k
        self.region_sizes = region_sizes
        self.batch_size = batch_size
        self.lr = lr
        self.iterations = iterations
        self.seed = seed
        self.eta = eta
        self.grid_side = grid_side
        self.proto_dim = proto_dim
        self.stages = stages
        self.input_side = input_side
        self.validation_fraction = validation_fraction

    def _check_images(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4 or X.shape[3] != 3:
            raise ValueError(f"X must be (n, side, side, 3), got {X.shape}")
        if X.shape[1] != self.input_side or X.shape[2] != self.input_side:
            raise ValueError(f"images must be {self.input_side}x"
                             f"{self.input_side}, got {X.shape[1:3]}")
        return X

    def fit(self, X, y):
        X = self._check_images(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y must be one label per image")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least 2 classes")

        config = TrainConfig(mode=self.mode, head=self.head, k=self.k,
                             region_sizes=tuple(self.region_sizes),
                             batch_size=self.batch_size, lr=self.lr,
                             iterations=self.iterations, seed=self.seed,
                             eta=self.eta, grid_side=self.grid_side,
                             proto_dim=self.proto_dim)
        backbone = BackboneConfig(stages=tuple(tuple(s) for s in self.stages),
                                  input_side=self.input_side)

        # deterministic holdout used for the periodic accuracy log
        n_val = max(1, int(round(self.validation_fraction * X.shape[0])))
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(X.shape[0])
        val_idx, train_idx = order[:n_val], order[n_val:]
        if train_idx.size == 0:
            raise ValueError("not enough samples to split off validation data")
        train_split = Split(images=X[train_idx], labels=encoded[train_idx])
        val_split = Split(images=X[val_idx], labels=encoded[val_idx])
        self.model_, self.metrics_ = train(config, backbone,
                                           train_split, val_split)
        return self

    def _scores(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise MvfaError("estimator is not fitted")
        X = self._check_images(X)
        chunks = [self.model_.predict(X[i:i + 64])[1]
                  for i in range(0, X.shape[0], 64)]
        return np.concatenate(chunks)

    def decision_function(self, X) -> np.ndarray:
        return self._scores(X)

    def predict_proba(self, X) -> np.ndarray:
        return _softmax_rows(self._scores(X))

    def predict(self, X):
        scores = self._scores(X)
        return self.classes_[np.argmax(scores, axis=1)]
