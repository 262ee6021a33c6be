"""scikit-learn style wrapper around the forecaster, trainer and ensemble."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .forecaster import ModelParams, init_params, predict_logits
from .losses import LossConfig
from .metrics import evaluate_predictions
from .tensor_core import GridLayout
from .trainer import TrainConfig, train
from .tta import ensemble_predict


def _check_inputs(X, layout=None):
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True)
    if X.ndim != 5:
        raise ValueError(f"expected inputs of shape (n, C, T_in, H, W), got {X.shape}")
    if layout is not None and X.shape[1:] != layout.input_shape:
        raise ValueError(f"inputs {X.shape[1:]} do not match the fitted layout {layout.input_shape}")
    return X


def _check_labels(y, n):
    y = check_array(y, allow_nd=True, dtype=np.float64, ensure_all_finite=True)
    if y.ndim != 5 or y.shape[0] != n or y.shape[1] != 1:
        raise ValueError(f"expected labels of shape ({n}, 1, T_out, h, w), got {y.shape}")
    return y


class NowcastSegmenter(ClassifierMixin, BaseEstimator):
    """Rain / no-rain nowcaster.

    ``X`` is ``(n, C, T_in, H, W)`` and ``y`` the binary future masks
    ``(n, 1, T_out, h, w)``.  ``ensemble`` names the test-time transform set
    used by ``predict_proba`` (``identity``, ``paper_main`` or ``paper_full``).
    """

    def __init__(self, features=16, epochs=15, lr=1e-4, weight_decay=0.1, batch_size=16,
                 lr_decay_factor=0.9, aug_policy="paper", alpha=0.1, beta=0.1, pos_weight=4.0,
                 dropout_rate=0.4, ensemble="identity", prob_threshold=0.5, random_state=0):
        self.features = features
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.lr_decay_factor = lr_decay_factor
        self.aug_policy = aug_policy
        self.alpha = alpha
        self.beta = beta
        self.pos_weight = pos_weight
        self.dropout_rate = dropout_rate
        self.ensemble = ensemble
        self.prob_threshold = prob_threshold
        self.random_state = random_state

    def train_config(self):
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
                           epochs=self.epochs, lr_decay_factor=self.lr_decay_factor,
                           aug_policy=self.aug_policy,
                           loss=LossConfig(alpha=self.alpha, beta=self.beta, pos_weight=self.pos_weight),
                           seed=self.random_state, features=self.features, dropout_rate=self.dropout_rate)

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_val, y_val)`` drives the step-size
        decay (the training data is used when it is omitted)."""
        X = _check_inputs(X)
        y = _check_labels(y, len(X))
        C, T_in, H, W = X.shape[1:]
        _, T_out, h, w = y.shape[1:]
        layout = GridLayout(C, T_in, T_out, H, W, h, w)
        if eval_set is None:
            Xv, yv = X, y
        else:
            Xv = _check_inputs(eval_set[0], layout)
            yv = _check_labels(eval_set[1], len(Xv))
        cfg = self.train_config()
        params = init_params(layout, self.features, seed=self.random_state, dropout_rate=self.dropout_rate)
        self.params_, self.train_log_ = train(params, (X, y), (Xv, yv), cfg)
        self.layout_ = layout
        self.classes_ = np.array([0, 1])
        return self

    @classmethod
    def from_params(cls, params: ModelParams, **kwargs):
        est = cls(features=params.features, dropout_rate=params.dropout_rate, **kwargs)
        est.params_ = params
        est.layout_ = params.layout
        est.classes_ = np.array([0, 1])
        return est

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        return predict_logits(self.params_)(_check_inputs(X, self.layout_))

    def predict_proba(self, X):
        """Rain probability per output pixel (ensemble-averaged)."""
        check_is_fitted(self, "params_")
        X = _check_inputs(X, self.layout_)
        return ensemble_predict(predict_logits(self.params_), X, self.ensemble)

    def predict(self, X):
        return (self.predict_proba(X) >= self.prob_threshold).astype(np.int8)

    def score(self, X, y, sample_weight=None):
        """mIoU over lead times (all samples pooled as one region)."""
        y = _check_labels(y, len(X))
        report = evaluate_predictions(self.predict_proba(X), y, ["all"] * len(y), self.prob_threshold)
        miou = report.miou
        return 0.0 if miou is None else miou
