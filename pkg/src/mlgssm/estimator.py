"""Scikit-learn style front end for mixture-of-LGSSM clustering."""

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .data import check_panel
from .initializer import InitConfig, best_params_per_series, init_from_params
from .lgssm_em import EmConfig
from .mixture_em import fit_mixture, log_marginal_likelihood, predict_proba
from .model_selection import bic


class MLGSSMClustering(ClusterMixin, BaseEstimator):
    """Cluster time series with a finite mixture of linear Gaussian state space models.

    Parameters
    ----------
    n_clusters : int, default=3
        Number of mixture components ``M``.
    state_dim : int, default=2
        State dimension ``d_x`` shared by all components.
    n_restarts : int, default=10
        Random restarts per series in the single-model initialization stage.
    max_iter : int, default=100
        Iteration cap of the mixture EM.
    epsilon : float, default=1e-4
        Convergence threshold on the L1 norm of the parameter change.
    single_max_iter : int, default=200
        Iteration cap of each single-series EM in the initialization stage.
    kmeans_restarts : int, default=10
        k-means++ restarts when clustering the per-series parameters.
    constrain_c : bool, default=True
        Fix the first row of every observation matrix to ones.
    random_state : int, default=0
        Seed for all randomness.

    Attributes
    ----------
    params_ : MixtureParams
        Fitted components and mixing weights.
    labels_ : ndarray of shape (n_series,)
        Hard cluster assignment of the training series (0-based).
    responsibilities_ : ndarray of shape (n_series, n_clusters)
    log_marginal_trace_ : list of float
    n_iter_ : int
    converged_ : bool
    init_params_ : MixtureParams
        Mixture parameters the EM started from.
    """

    def __init__(self, n_clusters=3, state_dim=2, n_restarts=10, max_iter=100, epsilon=1e-4,
                 single_max_iter=200, kmeans_restarts=10, constrain_c=True, random_state=0):
        self.n_clusters = n_clusters
        self.state_dim = state_dim
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.epsilon = epsilon
        self.single_max_iter = single_max_iter
        self.kmeans_restarts = kmeans_restarts
        self.constrain_c = constrain_c
        self.random_state = random_state

    def _em_config(self):
        return EmConfig(max_iter=self.max_iter, epsilon=self.epsilon,
                        constrain_c_first_row=self.constrain_c)

    def _init_config(self):
        single = EmConfig(max_iter=self.single_max_iter, epsilon=self.epsilon,
                          constrain_c_first_row=self.constrain_c)
        seed = 0 if self.random_state is None else int(self.random_state)
        return InitConfig(m=self.n_restarts, dx=self.state_dim, M=self.n_clusters,
                          kmeans_restarts=self.kmeans_restarts, seed=seed, single=single)

    def fit(self, X, y=None, init=None):
        """Fit the mixture.

        Parameters
        ----------
        X : array-like of shape (n_series, T) or (n_series, T, d_y)
        y : ignored
        init : MixtureParams, optional
            Skip the two-stage initialization and start EM here.

        Returns
        -------
        self
        """
        Y = check_panel(X, min_length=2)
        if Y.shape[0] < self.n_clusters:
            raise ValueError(f"{Y.shape[0]} series cannot fill {self.n_clusters} clusters")
        if init is None:
            cfg = self._init_config()
            fits = best_params_per_series(Y, cfg)
            init = init_from_params(fits.params, cfg.M, cfg.dx, Y.shape[2],
                                    constrain=self.constrain_c, n_init=cfg.kmeans_restarts,
                                    max_iter=cfg.kmeans_max_iter, seed=cfg.seed)
        res = fit_mixture(Y, init, self._em_config())
        self.init_params_ = init
        self.params_ = res.params
        self.labels_ = res.labels
        self.responsibilities_ = res.responsibilities
        self.log_marginal_trace_ = res.log_marginal_trace
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        self.result_ = res
        self.n_channels_ = Y.shape[2]
        return self

    def _check_data(self, X):
        check_is_fitted(self, "params_")
        Y = check_panel(X)
        if Y.shape[2] != self.n_channels_:
            raise ValueError(f"X has {Y.shape[2]} channels, the model was fitted on "
                             f"{self.n_channels_}")
        return Y

    def predict_proba(self, X):
        """Posterior cluster probabilities, shape ``(n_series, n_clusters)``."""
        return predict_proba(self._check_data(X), self.params_, self._em_config())

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def score_samples(self, X):
        """Log marginal likelihood of every series."""
        return log_marginal_likelihood(self._check_data(X), self.params_, self._em_config())

    def score(self, X, y=None):
        """Total log marginal likelihood of ``X``."""
        return float(np.sum(self.score_samples(X)))

    def bic(self, X, free_only=False):
        """Penalized log-likelihood; larger is better."""
        return bic(self._check_data(X), self.params_, free_only=free_only,
                   constrain=self.constrain_c, config=self._em_config())
