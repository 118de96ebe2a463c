"""scikit-learn style front end for a bank of component-wise MLPs."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_trials
from .exceptions import ConfigurationError
from .model import TrainConfig, bank_predictions, r2_score, train_bank
from .ngc import aggregate_matrix, extract_tensor, ngc_threshold, variable_usage_rate

__all__ = ["NeuralGrangerCausality", "tune_lambda"]


class NeuralGrangerCausality(BaseEstimator):
    """Fit one sparse MLP per channel and read causal strengths off its weights.

    Parameters
    ----------
    max_lag : int
        Number of past frames K fed to every model.
    hidden_units : int
    learning_rate : float
        Fixed ISTA step size.
    lam : float
        Weight of the hierarchical group penalty on the first layer.
    iterations : int
    random_state : int
    sampling_rate : float
        Used only to express lags in seconds.
    agent_split : int, optional
        Index of the first channel of the second agent.
    norm : {"l2", "l1"}
        Norm over hidden units that turns a weight group into a strength.
    threads : int
        Worker threads; results do not depend on it.

    Attributes
    ----------
    bank_ : CmlpBank
    ngc_tensor_ : NgcTensor
    ngc_matrix_ : NgcMatrix
    usage_rate_ : float
    threshold_ : float
    """

    def __init__(self, max_lag=50, hidden_units=32, learning_rate=0.05, lam=0.003,
                 iterations=2000, random_state=0, sampling_rate=1.0, agent_split=None,
                 norm="l2", threads=1):
        self.max_lag = max_lag
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.lam = lam
        self.iterations = iterations
        self.random_state = random_state
        self.sampling_rate = sampling_rate
        self.agent_split = agent_split
        self.norm = norm
        self.threads = threads

    def _train_config(self):
        return TrainConfig(max_lag=self.max_lag, hidden_units=self.hidden_units,
                           learning_rate=self.learning_rate, lam=self.lam,
                           iterations=self.iterations, seed=self.random_state)

    def fit(self, X, y=None):
        """Train on ``X`` of shape (n_trials, T, p) or (T, p); ``y`` is ignored."""
        labels = list(getattr(X, "labels", []) or [])
        split = self.agent_split if self.agent_split is not None else getattr(X, "agent_split", None)
        data = check_trials(X, min_frames=int(self.max_lag) + 1)
        self.bank_ = train_bank(data, self._train_config(), threads=self.threads)
        self.ngc_tensor_ = extract_tensor(self.bank_, self.sampling_rate, split, labels, self.norm)
        self.ngc_matrix_ = aggregate_matrix(self.ngc_tensor_)
        self.usage_rate_ = variable_usage_rate(self.ngc_matrix_)
        self.threshold_ = ngc_threshold(self.ngc_matrix_)
        self.n_features_in_ = data.shape[2]
        return self

    def predict(self, X):
        """One-step-ahead predictions, shape (n_samples, p), for every t >= K."""
        check_is_fitted(self, "bank_")
        data = self._check_input(X)
        return bank_predictions(self.bank_, data)[0]

    def score(self, X, y=None):
        """Mean coefficient of determination over channels."""
        check_is_fitted(self, "bank_")
        return r2_score(self.bank_, self._check_input(X))[1]

    def _check_input(self, X):
        data = check_trials(X, min_frames=self.bank_.max_lag + 1)
        if data.shape[2] != self.n_features_in_:
            raise ConfigurationError(f"X has {data.shape[2]} channels, the model was fit on {self.n_features_in_}")
        return data


def tune_lambda(X, lams, usage_range=(0.25, 0.5), **params):
    """Fit with each penalty weight in turn until the usage rate lands in range.

    ``lams`` are tried in the given order. Returns ``(estimator, history)``,
    where ``history`` lists ``(lam, usage_rate)`` for every fit. When no value
    qualifies, the fit whose usage rate is closest to the range is returned.
    """
    lo, hi = usage_range
    history, best, best_gap = [], None, np.inf
    for lam in lams:
        est = NeuralGrangerCausality(lam=lam, **params).fit(X)
        usage = est.usage_rate_
        history.append((float(lam), usage))
        if lo <= usage <= hi:
            return est, history
        gap = lo - usage if usage < lo else usage - hi
        if gap < best_gap:
            best, best_gap = est, gap
    return best, history
