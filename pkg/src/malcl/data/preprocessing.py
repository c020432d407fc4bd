"""Feature preprocessing: low-variance filtering and incremental standardization."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted

from malcl.data.datasets import LabeledDataset
from malcl.errors import ConfigurationError


class VarianceFilter(TransformerMixin, BaseEstimator):
    """Drop features whose training-set variance is below ``threshold``.

    Unlike :class:`sklearn.feature_selection.VarianceThreshold`, a feature with
    variance exactly equal to the threshold is kept.
    """

    def __init__(self, threshold: float = 0.001):
        self.threshold = threshold

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a variance filter on zero samples")
        self.variances_ = X.var(axis=0)
        self.kept_mask_ = self.variances_ >= self.threshold
        if not self.kept_mask_.any():
            raise ConfigurationError(
                f"variance threshold {self.threshold} drops all {X.shape[1]} features")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "kept_mask_")
        X = np.asarray(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X[:, self.kept_mask_]

    @property
    def n_kept(self) -> int:
        return int(self.kept_mask_.sum())


def fit_variance_filter(train: LabeledDataset, threshold: float = 0.001) -> VarianceFilter:
    return VarianceFilter(threshold).fit(train.features)


class IncrementalStandardizer(TransformerMixin, BaseEstimator):
    """Running mean/variance standardizer updated chunk by chunk.

    Moments are merged with the count-weighted parallel update implemented by
    scikit-learn's ``StandardScaler.partial_fit``; ``transform`` divides by
    ``sqrt(var + epsilon)`` so constant columns map to zero instead of
    blowing up.
    """

    def __init__(self, epsilon: float = 1e-8):
        self.epsilon = epsilon

    def partial_fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if hasattr(self, "_scaler") and X.shape[1] != self.n_features_in_:
            raise ValueError(f"chunk has {X.shape[1]} columns, state has {self.n_features_in_}")
        if not hasattr(self, "_scaler"):
            self._scaler = StandardScaler()
            self.n_features_in_ = X.shape[1]
        if X.shape[0]:
            self._scaler.partial_fit(X)
        return self

    def fit(self, X, y=None):
        if hasattr(self, "_scaler"):
            del self._scaler
        return self.partial_fit(X)

    @property
    def count(self) -> int:
        if not hasattr(self, "_scaler") or not hasattr(self._scaler, "n_samples_seen_"):
            return 0
        return int(np.max(self._scaler.n_samples_seen_))

    @property
    def running_mean(self) -> np.ndarray:
        check_is_fitted(self._scaler, "mean_")
        return self._scaler.mean_

    @property
    def running_var(self) -> np.ndarray:
        check_is_fitted(self._scaler, "var_")
        return self._scaler.var_

    def transform(self, X):
        if self.count == 0:
            raise ValueError("standardizer has seen no data")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = (X - self.running_mean) / np.sqrt(self.running_var + self.epsilon)
        return out.astype(np.float32)


def standardizer_partial_update(s: IncrementalStandardizer, chunk) -> IncrementalStandardizer:
    return s.partial_fit(chunk)
