"""Shared agent plumbing: input validation and the common act/learn surface."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

__all__ = ["BaseAgent", "check_observations"]


def check_observations(X, obs_dim):
    """Validate a batch of observations and return it as a 2-D float array."""
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != obs_dim:
        raise ValueError(f"observations have {X.shape[1]} features, expected {obs_dim}")
    return X


class BaseAgent(BaseEstimator):
    """Per-user decision maker.

    Subclasses keep only hyperparameters in ``__init__`` (so ``get_params`` and
    ``sklearn.base.clone`` work); learned state is created by :meth:`setup`
    and lives in trailing-underscore attributes.  An agent only ever sees its
    own observation vector.
    """

    learns = False

    def setup(self):
        return self

    def fit(self, X=None, y=None):
        """Allocate internal state; kept for pipeline compatibility."""
        return self.setup()

    def begin_episode(self):
        pass

    def act(self, obs, explore=False):
        raise NotImplementedError

    def predict(self, X):
        """Deterministic powers ``(p_local, p_offload)`` for each row of ``X``."""
        check_is_fitted(self)
        X = check_observations(X, self.obs_dim)
        return np.stack([self.act(x, explore=False) for x in X])

    def remember(self, s, a, r, s_next):
        pass

    def learn(self):
        return None

    def __sklearn_is_fitted__(self):
        return True
