"""scikit-learn style wrappers around the plug-in transfer-entropy estimators."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .comb import CombGrid
from .dte import as_pair_ensemble, te_comb_sum, te_sequences
from .exceptions import ContractError


class PluginTransferEntropy(BaseEstimator):
    """Plug-in TE from ``Y`` to ``X`` at the last column of discrete sequences.

    ``fit(X, Y)`` takes two ``(n_sequences, n_times)`` integer arrays.  After
    fitting, ``te_`` holds the estimate in nats and ``stderr_`` its standard
    error.
    """

    def __init__(self, k=1, l=1, relative=False):  # noqa: E741
        self.k = k
        self.l = l
        self.relative = relative

    def fit(self, X, Y):
        X = check_array(X, dtype=np.int64)
        Y = check_array(Y, dtype=np.int64)
        if X.shape != Y.shape:
            raise ContractError(f"X has shape {X.shape} but Y has {Y.shape}")
        est = te_sequences(X, Y, k=self.k, l=self.l, relative=self.relative)
        self.estimate_ = est
        self.te_ = est.value
        self.stderr_ = est.stderr
        self.n_samples_ = X.shape[0]
        return self

    def score(self, X=None, Y=None):
        check_is_fitted(self, "te_")
        return self.te_


class CombTransferEntropy(BaseEstimator):
    """Plug-in comb TE sum over ``[t0, T)`` from an ensemble of path pairs."""

    def __init__(self, t0=0.0, T=1.0, s=0.1, r=0.1, dt=0.01, x_len=None, y_len=None,
                 relative=False):
        self.t0 = t0
        self.T = T
        self.s = s
        self.r = r
        self.dt = dt
        self.x_len = x_len
        self.y_len = y_len
        self.relative = relative

    def fit(self, ensemble, y=None):
        grid = CombGrid(self.t0, self.T, self.s, self.r, self.dt)
        est = te_comb_sum(as_pair_ensemble(ensemble), grid, x_len=self.x_len,
                          y_len=self.y_len, relative=self.relative)
        self.grid_ = grid
        self.estimate_ = est
        self.te_ = est.value
        self.stderr_ = est.stderr
        self.per_step_ = np.array([v for _, v in est.per_step])
        return self

    def score(self, X=None, y=None):
        check_is_fitted(self, "te_")
        return self.te_
