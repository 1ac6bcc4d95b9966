"""EM for a single LGSSM and the closed-form M-step shared with the mixture.

The M-step is written once, for responsibility-weighted sums over series
(:func:`weighted_m_step`). A single-model fit is the special case where every
series has weight one, which keeps the mixture code and the single-model code
on the same arithmetic path.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import MlgssmError, NonFinite
from .kalman import LgssmParams, ParamStack, SummedStats, estep_stack, log_likelihood_stack
from .numerics import JITTER_LEVELS, clip_covariance, solve_spd, symmetrize

logger = logging.getLogger(__name__)


@dataclass
class EmConfig:
    """Stopping rule and numerical options for EM.

    Iteration stops once the L1 norm of the change of every parameter entry
    (concatenated) drops below ``epsilon`` or after ``max_iter`` iterations.
    """

    max_iter: int = 200
    epsilon: float = 1e-4
    constrain_c_first_row: bool = True
    jitter_levels: tuple = JITTER_LEVELS
    eig_floor: float = 1e-12

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


@dataclass
class FitTrace:
    """Log-likelihood before each M-step, followed by that of the returned
    parameters (so ``len(log_likelihood) == n_iter + 1``)."""

    log_likelihood: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def _tr(m):
    return np.swapaxes(m, -1, -2)


def _wsum(weights, arr):
    """Sum over the series axis (axis 1) with per-(b, series) weights."""
    w = weights.reshape(weights.shape + (1,) * (arr.ndim - 2))
    return np.sum(w * arr, axis=1)


def _update_c(Syx, Syy, Sall, prev_C, constrain, jitter_levels):
    """Observation matrix update.

    Unconstrained this is ``(sum y E[x]^T)(sum E[x x^T])^-1``. With the first
    row pinned to ones, maximizing jointly over the free rows and a full
    ``Sigma`` amounts to regressing channels 2.. on ``(y_1, x)``: if
    ``[beta, D]`` are the expected least-squares coefficients then the free
    rows are ``D + beta 1^T``. For diagonal noise this reduces to the
    row-wise formula.
    """
    dy, dx = Syx.shape[-2], Syx.shape[-1]
    if not constrain:
        return _tr(solve_spd(Sall, _tr(Syx), jitter_levels))
    C = np.array(prev_C, dtype=float, copy=True)
    C[:, 0, :] = 1.0
    if dy == 1:
        return C
    B = Syx.shape[0]
    gram = np.empty((B, dx + 1, dx + 1))
    gram[:, 0, 0] = Syy[:, 0, 0]
    gram[:, 0, 1:] = Syx[:, 0, :]
    gram[:, 1:, 0] = Syx[:, 0, :]
    gram[:, 1:, 1:] = Sall
    rhs = np.concatenate([Syy[:, 1:, :1], Syx[:, 1:, :]], axis=2)
    coef = _tr(solve_spd(gram, _tr(rhs), jitter_levels))
    C[:, 1:, :] = coef[:, :, :1] + coef[:, :, 1:]
    return C


def weighted_m_step(stats, weights, previous, config=None):
    """Closed-form parameter update from weighted expectations.

    Parameters
    ----------
    stats : SummedStats
        Time-summed expectations with leading axes ``(B, n)``.
    weights : ndarray of shape (B, n)
        Weight of series ``i`` in parameter set ``b`` (responsibilities for a
        mixture, ones for a plain fit).
    previous : ParamStack
        Current parameters; supplies the values kept when T < 2.
    config : EmConfig, optional

    Returns
    -------
    ParamStack
    """
    config = config or EmConfig()
    jl = config.jitter_levels
    weights = np.asarray(weights, dtype=float)
    T = stats.T
    W = weights.sum(axis=1)
    Wm = W[:, None, None]

    Ex1 = _wsum(weights, stats.x1)
    mu = Ex1 / W[:, None]
    x1 = stats.x1
    mu_b = mu[:, None, :]
    p_terms = (stats.xx1 - mu_b[..., :, None] * x1[..., None, :]
               - x1[..., :, None] * mu_b[..., None, :] + mu_b[..., :, None] * mu_b[..., None, :])
    P = clip_covariance(_wsum(weights, p_terms) / Wm, config.eig_floor)

    if T >= 2:
        cross = _wsum(weights, stats.cross)
        prev = _wsum(weights, stats.xx_prev)
        nxt = _wsum(weights, stats.xx_next)
        A = _tr(solve_spd(prev, _tr(cross), jl))
        gamma_sum = nxt - A @ _tr(cross) - cross @ _tr(A) + A @ prev @ _tr(A)
        Gamma = clip_covariance(gamma_sum / (Wm * (T - 1)), config.eig_floor)
    else:
        A, Gamma = previous.A.copy(), previous.Gamma.copy()

    Syx = _wsum(weights, stats.yx)
    Syy = _wsum(weights, stats.yy)
    Sall = _wsum(weights, stats.xx_all)
    C = _update_c(Syx, Syy, Sall, previous.C, config.constrain_c_first_row, jl)
    sigma_sum = Syy - Syx @ _tr(C) - C @ _tr(Syx) + C @ Sall @ _tr(C)
    Sigma = clip_covariance(sigma_sum / (Wm * T), config.eig_floor)

    return ParamStack(A=A, Gamma=symmetrize(Gamma), C=C, Sigma=symmetrize(Sigma), mu=mu,
                      P=symmetrize(P))


def expected_complete_loglik(params, stats):
    """Expected complete-data log-likelihood ``E[log p(Y, X | params)]``.

    ``stats`` holds time sums (a :class:`SummedStats` without batch axes)
    taken under the posterior of some possibly different parameter set.
    """
    A, G, C, S, mu, P = params.A, params.Gamma, params.C, params.Sigma, params.mu, params.P
    T, dx, dy = stats.T, params.dx, params.dy
    x1 = stats.x1
    e1 = stats.xx1 - np.outer(mu, x1) - np.outer(x1, mu) + np.outer(mu, mu)
    out = -0.5 * (np.linalg.slogdet(P)[1] + np.trace(np.linalg.solve(P, e1)))
    if T >= 2:
        et = stats.xx_next - A @ stats.cross.T - stats.cross @ A.T + A @ stats.xx_prev @ A.T
        out -= 0.5 * ((T - 1) * np.linalg.slogdet(G)[1] + np.trace(np.linalg.solve(G, et)))
    ev = stats.yy - stats.yx @ C.T - C @ stats.yx.T + C @ stats.xx_all @ C.T
    out -= 0.5 * (T * np.linalg.slogdet(S)[1] + np.trace(np.linalg.solve(S, ev)))
    return float(out - 0.5 * T * (dx + dy) * np.log(2 * np.pi))


def m_step_single(stats, y, config=None, previous=None):
    """M-step for one series from its per-step :class:`SufficientStats`.

    ``previous`` supplies A and Gamma when the series has a single step.
    """
    config = config or EmConfig()
    summed = stats.summed(y)
    batched = SummedStats(
        x1=summed.x1[None, None], xx1=summed.xx1[None, None],
        xx_all=summed.xx_all[None, None], xx_last=summed.xx_last[None, None],
        cross=summed.cross[None, None], yx=summed.yx[None, None],
        yy=summed.yy[None, None], T=summed.T,
    )
    dx, dy = summed.x1.shape[0], summed.yy.shape[0]
    if previous is None:
        previous = LgssmParams(
            A=np.eye(dx), Gamma=np.eye(dx), C=np.ones((dy, dx)), Sigma=np.eye(dy),
            mu=np.zeros(dx), P=np.eye(dx),
        )
    new = weighted_m_step(batched, np.ones((1, 1)), ParamStack.from_params([previous]), config)
    return new[0]


def param_distance(a, b):
    """L1 distance between all entries, per parameter set of two stacks."""
    return np.sum(np.abs(a.as_matrix() - b.as_matrix()), axis=1)


def as_panel(y):
    """Coerce one series ``(T,)``/``(T, d_y)`` or several ``(n, T, d_y)``."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3:
        raise ValueError(f"expected 1-D, 2-D or 3-D observations, got shape {y.shape}")
    return y


def fit_lgssm(y, init, config=None):
    """Fit one LGSSM by EM.

    ``y`` is a single series or an ``(n, T, d_y)`` panel of series sharing
    the parameters. Returns ``(params, FitTrace)``.
    """
    config = config or EmConfig()
    Y = as_panel(y)
    ps = ParamStack.from_params([init])
    weights = np.ones((1, Y.shape[0]))
    trace = FitTrace()
    for it in range(config.max_iter):
        loglik, stats, status = estep_stack(ps, Y, config.jitter_levels)
        if status[0]:
            raise_status(status[0])
        total = float(loglik.sum())
        if not np.isfinite(total):
            raise NonFinite(f"log-likelihood became non-finite at iteration {it}")
        trace.log_likelihood.append(total)
        new = weighted_m_step(stats, weights, ps, config)
        delta = param_distance(new, ps)[0]
        ps = new
        trace.n_iter = it + 1
        if delta < config.epsilon:
            trace.converged = True
            break
    loglik, status = log_likelihood_stack(ps, Y, config.jitter_levels)
    if status[0]:
        raise_status(status[0])
    trace.log_likelihood.append(float(loglik.sum()))
    return ps[0], trace


def raise_status(code):
    from .exceptions import NotPositiveDefinite
    from .kalman import _STATUS_MESSAGES

    raise NotPositiveDefinite(_STATUS_MESSAGES.get(int(code), "numerical failure"))


@dataclass
class BatchFitResult:
    params: ParamStack
    log_likelihood: np.ndarray
    n_iter: np.ndarray
    converged: np.ndarray
    failed: np.ndarray


def fit_lgssm_batch(Y, inits, config=None):
    """Independent single-LGSSM fits, one per row of ``Y`` ``(B, T, d_y)``.

    All fits advance together through the compiled kernels; each stops on
    its own convergence test. A fit that fails numerically is marked in
    ``failed`` and frozen with NaN log-likelihood instead of raising.
    """
    config = config or EmConfig()
    Y = np.asarray(Y, dtype=float)
    B = Y.shape[0]
    ps = ParamStack(**{k: np.array(v, copy=True) for k, v in vars(inits).items()})
    n_iter = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    failed = np.zeros(B, dtype=bool)
    active = np.arange(B)
    for it in range(config.max_iter):
        if active.size == 0:
            break
        sub = _take(ps, active)
        loglik, stats, status = estep_stack(sub, Y[active, None], config.jitter_levels)
        bad = (status != 0) | ~np.isfinite(loglik[:, 0])
        if np.any(bad):
            failed[active[bad]] = True
            keep = ~bad
            active, sub = active[keep], _take(sub, np.flatnonzero(keep))
            stats = stats.take(keep)
            if active.size == 0:
                break
        try:
            new = weighted_m_step(stats, np.ones((active.size, 1)), sub, config)
        except MlgssmError:
            new = _m_step_each(stats, sub, config, failed, active)
        delta = param_distance(new, sub)
        _put(ps, active, new)
        n_iter[active] = it + 1
        done = delta < config.epsilon
        converged[active[done]] = True
        active = active[~done & np.all(np.isfinite(new.as_matrix()), axis=1)]
        active = active[~failed[active]]
    loglik = np.full(B, np.nan)
    ok = np.flatnonzero(~failed)
    if ok.size:
        ll, status = log_likelihood_stack(_take(ps, ok), Y[ok, None], config.jitter_levels)
        ll = ll[:, 0]
        ll[status != 0] = np.nan
        loglik[ok] = ll
        failed[ok[~np.isfinite(ll)]] = True
    return BatchFitResult(ps, loglik, n_iter, converged, failed)


def _m_step_each(stats, sub, config, failed, active):
    """Per-fit M-step fallback isolating numerical failures."""
    out = _take(sub, np.arange(len(sub)))
    for j in range(len(sub)):
        try:
            new = weighted_m_step(stats.take(slice(j, j + 1)), np.ones((1, 1)),
                                  _take(sub, [j]), config)
            _put(out, [j], new)
        except MlgssmError:
            failed[active[j]] = True
    return out


def _take(ps, index):
    return ParamStack(**{k: np.array(v[index], copy=True) for k, v in vars(ps).items()})


def _put(ps, index, values):
    for k, v in vars(values).items():
        getattr(ps, k)[index] = v
