"""Scikit-learn style wrappers around the combiner and ML detector.

These estimators follow the fit/predict convention so they compose with
pipelines, grid search, and friends.  Fitting computes the combiner from
the analytical channel statistics (no training data is consumed; X and y
are accepted and ignored for API compatibility).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .channel import ChannelParams, Modulation
from .estimator import (
    AugmentSpec,
    analytical_mse_block,
    analytical_mse_linear,
    assemble_blocks,
    augment_measurements,
    build_estimator,
)
from .simulation import ExperimentConfig, _ml_llr

__all__ = ["LmmseReceiver", "MaximumLikelihoodReceiver"]


def _check_measurements(X, k_receivers: int) -> np.ndarray:
    X = check_array(X, dtype=float, ensure_2d=True)
    if X.shape[1] != k_receivers:
        raise ValueError(f"expected {k_receivers} receiver columns, got {X.shape[1]}")
    return X


class LmmseReceiver(BaseEstimator):
    """Affine bit estimator over power-augmented SIMO measurements.

    Parameters
    ----------
    channel : ChannelParams
        Per-slot photon statistics of the K receivers.
    modulation : str or Modulation, default="ook"
        "ook" or "ppm<M>"; sets the slot prior 1/M.
    factors : tuple of int, default=(1, 2)
        Measurement powers. A pair (m, n) builds the augmented combiner;
        a single (m,) builds the conventional one.
    augmented : bool, default=True
        If False only the first factor is used.
    threshold : float, default=0.5
        Hard-decision threshold used by predict (OOK convention).

    Attributes
    ----------
    coef_ : ndarray
        Combining weights over the augmented features.
    intercept_ : float
        Affine offset; the estimate is unbiased for the slot prior.
    mse_ : float
        Analytical bit MSE of the fitted combiner.
    mse_linear_ : float
        Analytical bit MSE of the conventional combiner on the same channel.
    """

    def __init__(self, channel=None, modulation="ook", factors=(1, 2), augmented=True,
                 threshold=0.5):
        self.channel = channel
        self.modulation = modulation
        self.factors = factors
        self.augmented = augmented
        self.threshold = threshold

    def _spec(self) -> AugmentSpec:
        factors = self.factors
        if np.isscalar(factors):
            factors = (int(factors),)
        factors = tuple(int(f) for f in factors)
        if self.augmented and len(factors) == 2:
            return AugmentSpec.pair(*factors)
        return AugmentSpec.single(factors[0])

    def fit(self, X=None, y=None):
        """Compute combiner weights from the channel statistics; X and y are ignored."""
        if not isinstance(self.channel, ChannelParams):
            raise ValueError("channel must be a ChannelParams instance")
        spec = self._spec()
        cfg = ExperimentConfig(
            channel=self.channel,
            modulation=Modulation.parse(self.modulation),
            augment=spec,
            trials=1,
        )
        blocks = assemble_blocks(cfg)
        coeffs = build_estimator(blocks)
        self.augment_spec_ = spec
        self.blocks_ = blocks
        self.coef_ = coeffs.weights
        self.intercept_ = coeffs.intercept
        self.regularized_ = coeffs.regularized
        self.mse_ = analytical_mse_block(blocks)
        self.mse_linear_ = analytical_mse_linear(blocks)
        self.n_receivers_ = self.channel.k_receivers
        return self

    def decision_function(self, X) -> np.ndarray:
        """Soft bit estimates for an (n_samples, K) measurement array."""
        check_is_fitted(self, "coef_")
        X = _check_measurements(X, self.n_receivers_)
        feats = augment_measurements(X, self.augment_spec_)
        return feats @ self.coef_ + self.intercept_

    def predict(self, X) -> np.ndarray:
        """Hard bit decisions at the configured threshold."""
        soft = self.decision_function(X)
        return (soft >= self.threshold).astype(int)


class MaximumLikelihoodReceiver(BaseEstimator):
    """OOK maximum-likelihood detector (exact for PC, truncated mixture for PMT/APD).

    Parameters
    ----------
    channel : ChannelParams
    terms : int, default=50
        Poisson branches kept in the PMT/APD mixture likelihood.
    """

    def __init__(self, channel=None, terms=50):
        self.channel = channel
        self.terms = terms

    def fit(self, X=None, y=None):
        if not isinstance(self.channel, ChannelParams):
            raise ValueError("channel must be a ChannelParams instance")
        if self.terms < 1:
            raise ValueError("terms must be >= 1")
        self.n_receivers_ = self.channel.k_receivers
        return self

    def decision_function(self, X) -> np.ndarray:
        """Joint log-likelihood ratio pulse vs no pulse."""
        check_is_fitted(self, "n_receivers_")
        X = _check_measurements(X, self.n_receivers_)
        return _ml_llr(X, self.channel, self.terms)

    def predict(self, X) -> np.ndarray:
        """Hard decisions; a tied likelihood decides 0."""
        return (self.decision_function(X) > 0).astype(int)
