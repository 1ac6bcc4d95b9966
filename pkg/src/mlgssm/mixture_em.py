"""EM for finite mixtures of linear Gaussian state space models.

Each series is generated by one of ``M`` LGSSMs. The E-step runs the Kalman
smoother for every (series, component) pair and turns the per-component
log-likelihoods into posterior cluster probabilities in log space; the M-step
applies the single-model closed forms with the posteriors as series weights.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import check_panel
from .exceptions import AllComponentsFailed, EmptyCluster, NonFinite
from .kalman import LgssmParams, ParamStack, estep_stack, log_likelihood_stack
from .lgssm_em import EmConfig, expected_complete_loglik, weighted_m_step

logger = logging.getLogger(__name__)

EMPTY_CLUSTER_THRESHOLD = 1e-8


@dataclass
class MixtureParams:
    """Component parameter sets and mixing weights."""

    components: list
    weights: np.ndarray

    def __post_init__(self):
        self.components = list(self.components)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if not self.components:
            raise ValueError("a mixture needs at least one component")
        if self.weights.shape != (len(self.components),):
            raise ValueError(f"{self.weights.size} weights for {len(self.components)} components")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights must lie on the simplex, got {self.weights}")
        dims = {(c.dx, c.dy) for c in self.components}
        if len(dims) != 1:
            raise ValueError(f"components disagree on (d_x, d_y): {sorted(dims)}")

    @property
    def n_components(self):
        return len(self.components)

    @property
    def dx(self):
        return self.components[0].dx

    @property
    def dy(self):
        return self.components[0].dy

    @property
    def stack(self):
        return ParamStack.from_params(self.components)

    @classmethod
    def from_stack(cls, ps, weights):
        return cls(ps.to_params(), weights)

    def as_vector(self):
        """Every component's entries followed by the weights."""
        return np.concatenate([c.as_vector() for c in self.components] + [self.weights])

    def permuted(self, order):
        order = list(order)
        return MixtureParams([self.components[k].copy() for k in order], self.weights[order])

    def to_dict(self):
        return {"weights": self.weights.tolist(),
                "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d):
        return cls([LgssmParams.from_dict(c) for c in d["components"]], d["weights"])


@dataclass
class EStepOutput:
    responsibilities: np.ndarray  # (N, M)
    component_loglik: np.ndarray  # (N, M), log p(Y_i | component k)
    log_marginal: np.ndarray      # (N,)
    stats: object                 # SummedStats with leading axes (M, N)
    theta: MixtureParams

    @property
    def total_log_marginal(self):
        return float(np.sum(self.log_marginal))


@dataclass
class MixtureFitResult:
    params: MixtureParams
    log_marginal_trace: list
    n_iter: int
    converged: bool
    responsibilities: np.ndarray
    labels: np.ndarray
    reinitialized: list = field(default_factory=list)

    @property
    def log_marginal(self):
        return self.log_marginal_trace[-1]


def posterior(component_loglik, weights):
    """Posterior cluster probabilities and per-series log marginal likelihood.

    Never forms ``exp(loglik)``: normalization is a log-sum-exp over
    ``loglik + log(weight)``, so rows stay stochastic however large the
    likelihood ratios are.
    """
    with np.errstate(divide="ignore"):
        log_joint = component_loglik + np.log(weights)[None, :]
    log_marginal = logsumexp(log_joint, axis=1)
    resp = np.exp(log_joint - log_marginal[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, log_marginal


def _component_loglik(theta, Y, config, with_stats):
    ps = theta.stack
    if with_stats:
        loglik, stats, status = estep_stack(ps, Y, config.jitter_levels)
    else:
        (loglik, status), stats = log_likelihood_stack(ps, Y, config.jitter_levels), None
    loglik = loglik.T.copy()
    loglik[~np.isfinite(loglik)] = -np.inf
    if np.any(status != 0):
        logger.warning("components %s failed numerically", np.flatnonzero(status).tolist())
    dead = np.all(np.isneginf(loglik) | (theta.weights[None, :] == 0), axis=1)
    if np.any(dead):
        raise AllComponentsFailed(int(np.flatnonzero(dead)[0]))
    return loglik, stats


def e_step(X, theta, config=None):
    """Smoothed expectations under every component and cluster posteriors."""
    config = config or EmConfig()
    Y = check_panel(X)
    loglik, stats = _component_loglik(theta, Y, config, with_stats=True)
    resp, log_marginal = posterior(loglik, theta.weights)
    # failed components carry NaN stats and zero responsibility
    for name in ("x1", "xx1", "xx_all", "xx_last", "cross", "yx", "yy"):
        arr = getattr(stats, name)
        np.nan_to_num(arr, copy=False, nan=0.0)
    return EStepOutput(resp, loglik, log_marginal, stats, theta)


def ecdll(es, theta):
    """Expected complete-data log-likelihood of ``theta`` under the posterior in ``es``.

    ``sum_i sum_k r_ik (log p_k + E[log p(Y_i, X_i | theta_k)])`` with the
    expectations taken under the components that produced ``es``.
    """
    resp = es.responsibilities
    N, M = resp.shape
    with np.errstate(divide="ignore"):
        logw = np.log(theta.weights)
    total = 0.0
    for k in range(M):
        for i in range(N):
            if resp[i, k] == 0.0:
                continue
            q = expected_complete_loglik(theta.components[k], es.stats.take((k, i)))
            total += resp[i, k] * (logw[k] + q)
    return total


def mixing_weights(resp):
    """Mixing weights maximizing the expected log-likelihood: column means."""
    return resp.sum(axis=0) / resp.shape[0]


def _m_step_from(resp, es, config):
    counts = resp.sum(axis=0)
    for k, c in enumerate(counts):
        if c < EMPTY_CLUSTER_THRESHOLD:
            raise EmptyCluster(k, c)
    new = weighted_m_step(es.stats, resp.T, es.theta.stack, config)
    weights = mixing_weights(resp)
    return MixtureParams.from_stack(new, weights / weights.sum())


def m_step(es, X=None, config=None):
    """Responsibility-weighted closed-form update of every component.

    ``X`` is accepted for symmetry with :func:`e_step`; the sufficient
    statistics in ``es`` already contain everything the update needs.

    Raises
    ------
    EmptyCluster
        If some component's total responsibility is below 1e-8.
    """
    config = config or EmConfig()
    return _m_step_from(es.responsibilities, es, config)


def _reassign_empty(resp):
    """Move the least confidently assigned series into each empty component."""
    resp = resp.copy()
    moved = []
    for k in np.flatnonzero(resp.sum(axis=0) < EMPTY_CLUSTER_THRESHOLD):
        # a donor must not be what keeps another component alive
        counts = resp.sum(axis=0)
        after = counts - resp
        after[:, counts < EMPTY_CLUSTER_THRESHOLD] = np.inf
        confidence = resp.max(axis=1)
        confidence[np.any(after < EMPTY_CLUSTER_THRESHOLD, axis=1)] = np.inf
        if moved:
            confidence[moved] = np.inf
        i = int(np.argmin(confidence))
        if not np.isfinite(confidence[i]):
            raise EmptyCluster(int(k), float(resp[:, k].sum()))
        resp[i] = 0.0
        resp[i, k] = 1.0
        moved.append(i)
    return resp


def fit_mixture(X, init, config=None):
    """Alternate E- and M-steps from ``init``.

    Stops when the L1 norm of the change of all component entries and
    weights drops below ``config.epsilon`` or after ``config.max_iter``
    iterations. Non-convergence is reported in the result, not raised.
    A component left with (numerically) no members is re-seeded from the
    series with the lowest maximum posterior; such events are listed in
    ``reinitialized`` as ``(iteration, component)``.
    """
    config = config or EmConfig(max_iter=100)
    Y = check_panel(X)
    theta = init
    trace = []
    reinitialized = []
    converged = False
    n_iter = 0
    for it in range(config.max_iter):
        es = e_step(Y, theta, config)
        total = es.total_log_marginal
        if not np.isfinite(total):
            raise NonFinite(f"log marginal likelihood became non-finite at iteration {it}")
        trace.append(total)
        try:
            new = _m_step_from(es.responsibilities, es, config)
        except EmptyCluster:
            resp = _reassign_empty(es.responsibilities)
            empty = np.flatnonzero(es.responsibilities.sum(axis=0) < EMPTY_CLUSTER_THRESHOLD)
            reinitialized.extend((it, int(k)) for k in empty)
            logger.warning("re-seeding empty components %s at iteration %d", empty.tolist(), it)
            new = _m_step_from(resp, es, config)
        delta = float(np.sum(np.abs(new.as_vector() - theta.as_vector())))
        theta = new
        n_iter = it + 1
        if delta < config.epsilon:
            converged = True
            break
    loglik, _ = _component_loglik(theta, Y, config, with_stats=False)
    resp, log_marginal = posterior(loglik, theta.weights)
    trace.append(float(log_marginal.sum()))
    return MixtureFitResult(
        params=theta,
        log_marginal_trace=trace,
        n_iter=n_iter,
        converged=converged,
        responsibilities=resp,
        labels=hard_labels(resp),
        reinitialized=reinitialized,
    )


def hard_labels(resp):
    """Row-wise argmax; ``np.argmax`` already breaks ties toward index 0."""
    return np.argmax(resp, axis=1)


def predict_proba(X, theta, config=None):
    config = config or EmConfig()
    loglik, _ = _component_loglik(theta, check_panel(X), config, with_stats=False)
    return posterior(loglik, theta.weights)[0]


def assign_clusters(X, theta, config=None):
    """Most probable component of every series (0-based)."""
    return hard_labels(predict_proba(X, theta, config))


def log_marginal_likelihood(X, theta, config=None):
    """Per-series ``log sum_k p(Y_i | k) p_k``."""
    config = config or EmConfig()
    loglik, _ = _component_loglik(theta, check_panel(X), config, with_stats=False)
    return posterior(loglik, theta.weights)[1]
