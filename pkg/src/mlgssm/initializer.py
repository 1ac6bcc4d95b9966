"""Two-stage initialization of the mixture.

1. Every series is fitted ``m`` times as a single LGSSM from random starting
   points; the fit with the highest log-likelihood is kept.
2. The kept parameter sets are flattened and clustered with k-means; cluster
   centers become the initial components and cluster sizes the weights.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .data import check_panel
from .exceptions import AllRestartsFailed, DegenerateInput
from .kalman import LgssmParams, ParamStack
from .lgssm_em import EmConfig, fit_lgssm_batch
from .mixture_em import MixtureParams
from .numerics import project_spd, qr_orthogonal


@dataclass
class InitConfig:
    m: int = 10
    dx: int = 2
    M: int = 3
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 300
    seed: int = 0
    single: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        if self.m < 1 or self.M < 1 or self.dx < 1:
            raise ValueError("m, M and dx must all be >= 1")


def default_single_init(dx, dy, rng):
    """Starting point of a single-LGSSM fit.

    Noise covariances 0.05 I, a vague initial state (mean 0, covariance
    1e4 I), a random orthogonal state matrix, and an observation matrix
    whose first row is ones (other rows standard normal).
    """
    rng = np.random.default_rng(rng)
    A = qr_orthogonal(rng.standard_normal((dx, dx)))
    C = np.ones((dy, dx))
    if dy > 1:
        C[1:] = rng.standard_normal((dy - 1, dx))
    return LgssmParams(A=A, Gamma=0.05 * np.eye(dx), C=C, Sigma=0.05 * np.eye(dy),
                       mu=np.zeros(dx), P=1e4 * np.eye(dx))


@dataclass
class SeriesFits:
    params: list          # best parameter set per series
    log_likelihood: np.ndarray   # (N,) of the best fit
    restart_loglik: np.ndarray   # (N, m), NaN for failed restarts


def best_params_per_series(X, config=None, rng=None):
    """Fit every series ``config.m`` times and keep the most likely fit.

    Starting points are drawn series by series, restart by restart, from
    ``rng`` (default: a generator seeded with ``config.seed``).
    """
    config = config or InitConfig()
    Y = check_panel(X)
    N, _, dy = Y.shape
    rng = np.random.default_rng(config.seed if rng is None else rng)
    inits = [default_single_init(config.dx, dy, rng) for _ in range(N * config.m)]
    result = fit_lgssm_batch(np.repeat(Y, config.m, axis=0), ParamStack.from_params(inits),
                             config.single)
    ll = result.log_likelihood.reshape(N, config.m)
    best = []
    for i in range(N):
        if np.all(np.isnan(ll[i])):
            raise AllRestartsFailed(i)
        j = int(np.nanargmax(ll[i]))
        best.append(result.params[i * config.m + j])
    best_ll = np.array([np.nanmax(row) for row in ll])
    return SeriesFits(best, best_ll, ll)


def flatten(params, constrain=True):
    """A, Gamma, C (rows 2.. only when constrained), Sigma, mu, P."""
    C = params.C[1:] if constrain else params.C
    return np.concatenate([params.A.ravel(), params.Gamma.ravel(), C.ravel(),
                           params.Sigma.ravel(), params.mu, params.P.ravel()])


def flat_length(dx, dy, constrain=True):
    rows = dy - 1 if constrain else dy
    return 3 * dx * dx + rows * dx + dy * dy + dx


def unflatten(vec, dx, dy, constrain=True, project=True):
    """Inverse of :func:`flatten`.

    With ``project`` the covariance blocks are symmetrized and their
    eigenvalues clipped at 1e-8 of the largest (or 1e-8 absolute), since
    averaged entries need not form a positive definite matrix.
    """
    vec = np.asarray(vec, dtype=float)
    if vec.size != flat_length(dx, dy, constrain):
        raise ValueError(f"vector has {vec.size} entries, expected "
                         f"{flat_length(dx, dy, constrain)}")
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = vec[pos:pos + size].reshape(shape)
        pos += size
        return out

    A = take((dx, dx))
    Gamma = take((dx, dx))
    if constrain:
        C = np.vstack([np.ones((1, dx)), take((dy - 1, dx))])
    else:
        C = take((dy, dx))
    Sigma = take((dy, dy))
    mu = take((dx,))
    P = take((dx, dx))
    if project:
        Gamma, Sigma, P = project_spd(Gamma), project_spd(Sigma), project_spd(P)
    return LgssmParams(A=A, Gamma=Gamma, C=C, Sigma=Sigma, mu=mu, P=P)


def kmeans(vectors, M, n_init=10, max_iter=300, seed=0):
    """k-means++ seeded Lloyd iterations, best of ``n_init`` by inertia.

    Returns ``(centers, proportions, labels)``.
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2 or X.shape[0] < M:
        raise DegenerateInput(f"need at least {M} vectors, got {X.shape[0]}")
    if np.unique(X, axis=0).shape[0] < M:
        raise DegenerateInput(f"fewer than {M} distinct vectors")
    km = KMeans(n_clusters=M, init="k-means++", n_init=n_init, max_iter=max_iter,
                tol=0.0, random_state=seed)
    labels = km.fit_predict(X)
    counts = np.bincount(labels, minlength=M)
    return km.cluster_centers_, counts / X.shape[0], labels


def init_from_params(params, M, dx, dy, constrain=True, n_init=10, max_iter=300, seed=0):
    vectors = np.stack([flatten(p, constrain) for p in params])
    centers, proportions, _ = kmeans(vectors, M, n_init, max_iter, seed)
    components = [unflatten(c, dx, dy, constrain) for c in centers]
    return MixtureParams(components, proportions / proportions.sum())


def init_mixture(X, config=None, fits=None):
    """Initial mixture parameters; ``fits`` reuses a finished first stage."""
    config = config or InitConfig()
    Y = check_panel(X)
    if fits is None:
        fits = best_params_per_series(Y, config)
    return init_from_params(
        fits.params, config.M, config.dx, Y.shape[2],
        constrain=config.single.constrain_c_first_row,
        n_init=config.kmeans_restarts, max_iter=config.kmeans_max_iter, seed=config.seed,
    )
