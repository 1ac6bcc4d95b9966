"""Kalman filter, RTS smoother and the smoothed moments EM needs.

The stacked entry points take a :class:`ParamStack` of ``B`` parameter sets
and observations of shape ``(n, T, d_y)`` (shared by every set) or
``(B, n, T, d_y)``. Covariance recursions do not depend on the data, so they
run once per parameter set and are shared by the ``n`` series filtered under
it; only the means are per series. The loops live in :mod:`mlgssm._kernels`.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from . import _kernels
from .exceptions import NonFinite, NotPositiveDefinite
from .numerics import JITTER_LEVELS


@dataclass
class LgssmParams:
    """Parameters of one linear Gaussian state space model.

    ``x[1] ~ N(mu, P)``, ``x[t] = A x[t-1] + N(0, Gamma)``,
    ``y[t] = C x[t] + N(0, Sigma)``.
    """

    A: np.ndarray
    Gamma: np.ndarray
    C: np.ndarray
    Sigma: np.ndarray
    mu: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.Gamma = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        dx, dy = self.dx, self.dy
        expected = {
            "A": (dx, dx),
            "Gamma": (dx, dx),
            "C": (dy, dx),
            "Sigma": (dy, dy),
            "mu": (dx,),
            "P": (dx, dx),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )

    @property
    def dx(self):
        return self.A.shape[0]

    @property
    def dy(self):
        return self.C.shape[0]

    @property
    def n_entries(self):
        """Number of scalar entries in all six parameter arrays."""
        return self.as_vector().size

    def as_vector(self):
        """All entries concatenated in the order A, Gamma, C, Sigma, mu, P."""
        return np.concatenate([getattr(self, f.name).ravel() for f in fields(self)])

    def copy(self):
        return LgssmParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def to_dict(self):
        return {f.name: getattr(self, f.name).tolist() for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: np.asarray(d[f.name], dtype=float) for f in fields(cls)})


@dataclass
class ParamStack:
    """``B`` parameter sets stored as arrays with a leading batch axis."""

    A: np.ndarray
    Gamma: np.ndarray
    C: np.ndarray
    Sigma: np.ndarray
    mu: np.ndarray
    P: np.ndarray

    @classmethod
    def from_params(cls, params):
        params = list(params)
        return cls(**{f.name: np.stack([getattr(p, f.name) for p in params])
                      for f in fields(cls)})

    def __len__(self):
        return self.A.shape[0]

    def __getitem__(self, b):
        return LgssmParams(**{f.name: getattr(self, f.name)[b].copy() for f in fields(self)})

    def to_params(self):
        return [self[b] for b in range(len(self))]

    def as_matrix(self):
        """``(B, n_entries)`` matrix of concatenated parameter vectors."""
        B = len(self)
        return np.concatenate(
            [getattr(self, f.name).reshape(B, -1) for f in fields(self)], axis=1
        )


@dataclass
class FilterResult:
    """Forward pass over one series; arrays are indexed by time first."""

    mean_pred: np.ndarray
    cov_pred: np.ndarray
    mean_filt: np.ndarray
    cov_filt: np.ndarray
    gain: np.ndarray
    log_likelihood: float


@dataclass
class SmoothedMoments:
    mean: np.ndarray
    cov: np.ndarray
    gain: np.ndarray  # J[t], t = 1..T-1


@dataclass
class SufficientStats:
    """Per-step posterior expectations for one series.

    ``Ex[t] = E[x_t]``, ``Exx[t] = E[x_t x_t^T]`` for t = 1..T and
    ``Exx1[t] = E[x_t x_{t-1}^T]`` for t = 2..T (so ``Exx1`` has T - 1 rows).
    """

    Ex: np.ndarray
    Exx: np.ndarray
    Exx1: np.ndarray

    @property
    def T(self):
        return self.Ex.shape[0]

    def summed(self, y):
        """Collapse to the time sums consumed by the M-step."""
        y = _as_series(y)
        xx_all = self.Exx.sum(axis=0)
        return SummedStats(
            x1=self.Ex[0],
            xx1=self.Exx[0],
            xx_all=xx_all,
            xx_last=self.Exx[-1],
            cross=self.Exx1.sum(axis=0),
            yx=y.T @ self.Ex,
            yy=y.T @ y,
            T=self.T,
        )


@dataclass
class SummedStats:
    """Time-summed expectations; every array may carry leading batch axes.

    ``xx_all``, ``yx`` and ``yy`` sum over t = 1..T and ``cross`` sums
    ``E[x_t x_{t-1}^T]`` over t = 2..T. ``x1``, ``xx1`` and ``xx_last`` are
    the first and second moments at t = 1 and the second moment at t = T.
    """

    x1: np.ndarray
    xx1: np.ndarray
    xx_all: np.ndarray
    xx_last: np.ndarray
    cross: np.ndarray
    yx: np.ndarray
    yy: np.ndarray
    T: int = field(default=0)

    @property
    def xx_prev(self):
        """Sum of ``E[x_t x_t^T]`` over t = 1..T-1."""
        return self.xx_all - self.xx_last

    @property
    def xx_next(self):
        """Sum of ``E[x_t x_t^T]`` over t = 2..T."""
        return self.xx_all - self.xx1

    def take(self, index):
        return SummedStats(
            **{f.name: getattr(self, f.name)[index] for f in fields(self) if f.name != "T"},
            T=self.T,
        )


def _as_series(y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise ValueError(f"series must be 1-D or 2-D, got shape {y.shape}")
    return y


def _tr(m):
    return np.swapaxes(m, -1, -2)


def _jitter_array(jitter_levels):
    return np.asarray(jitter_levels, dtype=float)


def _stack_args(ps):
    return tuple(np.ascontiguousarray(getattr(ps, f.name)) for f in fields(ps))


def _check_stack_data(ps, Y):
    Y = np.ascontiguousarray(Y, dtype=float)
    if Y.ndim == 3:
        Y = Y[None]
    if Y.ndim != 4 or Y.shape[0] not in (1, len(ps)):
        raise ValueError(f"observations have shape {Y.shape}, expected (n, T, d_y) "
                         f"or ({len(ps)}, n, T, d_y)")
    if Y.shape[-1] != ps.C.shape[1]:
        raise ValueError(f"observations have {Y.shape[-1]} channels, "
                         f"params expect {ps.C.shape[1]}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("observations contain non-finite values")
    return Y


_STATUS_MESSAGES = {
    1: "innovation covariance is not positive definite",
    2: "predicted state covariance is not positive definite",
}


def estep_stack(ps, Y, jitter_levels=JITTER_LEVELS):
    """Filter, smooth and sum expectations for every (parameter set, series).

    Returns ``(loglik, stats, status)`` with ``loglik`` of shape ``(B, n)``,
    ``stats`` a :class:`SummedStats` with leading axes ``(B, n)`` and
    ``status`` a ``(B,)`` integer array, nonzero where a parameter set failed
    numerically (its rows are NaN).
    """
    Y = _check_stack_data(ps, Y)
    B, dx, dy = len(ps), ps.A.shape[-1], ps.C.shape[1]
    n, T = Y.shape[1], Y.shape[2]
    loglik = np.full((B, n), np.nan)
    x1 = np.full((B, n, dx), np.nan)
    xx1, xx_all, xx_last, cross = (np.full((B, n, dx, dx), np.nan) for _ in range(4))
    yx = np.full((B, n, dy, dx), np.nan)
    yy = np.full((B, n, dy, dy), np.nan)
    status = np.zeros(B, dtype=np.int64)
    _kernels.estep_sums(*_stack_args(ps), Y, _jitter_array(jitter_levels), loglik, x1,
                        xx1, xx_all, xx_last, cross, yx, yy, status)
    stats = SummedStats(x1=x1, xx1=xx1, xx_all=xx_all, xx_last=xx_last, cross=cross,
                        yx=yx, yy=yy, T=T)
    return loglik, stats, status


def log_likelihood_stack(ps, Y, jitter_levels=JITTER_LEVELS):
    """``(B, n)`` log-likelihoods and a ``(B,)`` failure status array."""
    Y = _check_stack_data(ps, Y)
    loglik = np.full((len(ps), Y.shape[1]), np.nan)
    status = np.zeros(len(ps), dtype=np.int64)
    _kernels.loglik_only(*_stack_args(ps), Y, _jitter_array(jitter_levels), loglik, status)
    return loglik, status


def _check_single(params, y):
    y = _as_series(y)
    if y.shape[1] != params.dy:
        raise ValueError(f"series has {y.shape[1]} channels, params expect {params.dy}")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    return np.ascontiguousarray(y)


def _raise_status(status):
    if status:
        raise NotPositiveDefinite(_STATUS_MESSAGES[status])


def filter(params, y, jitter_levels=JITTER_LEVELS):  # noqa: A001
    """Kalman filter over one ``(T, d_y)`` series (1-D input means d_y = 1).

    The log-likelihood is the sum over t of the log innovation densities
    ``N(y[t] | C mu[t|t-1], C V[t|t-1] C^T + Sigma)``, accumulated in log
    space.
    """
    y = _check_single(params, y)
    T, dx, dy = y.shape[0], params.dx, params.dy
    Vp, Vf = np.empty((T, dx, dx)), np.empty((T, dx, dx))
    K = np.empty((T, dx, dy))
    Linv = np.empty((T, dy, dy))
    logdet = np.empty(T)
    jit = _jitter_array(jitter_levels)
    _raise_status(_kernels.cov_filter(params.A, params.Gamma, params.C, params.Sigma,
                                      params.P, jit, Vp, Vf, K, Linv, logdet))
    mp, mf = np.empty((T, dx)), np.empty((T, dx))
    ll = _kernels.mean_filter(params.A, params.C, params.mu, K, Linv, logdet, y, mp, mf)
    if not np.isfinite(ll):
        raise NonFinite("filter log-likelihood is not finite")
    return FilterResult(mp, Vp, mf, Vf, K, float(ll))


def smooth(params, fr, jitter_levels=JITTER_LEVELS):
    """RTS smoother for the output of :func:`filter` under the same params."""
    T, dx = fr.mean_filt.shape
    J = np.empty((max(T - 1, 0), dx, dx))
    Vs = np.empty((T, dx, dx))
    _raise_status(_kernels.cov_smooth(params.A, fr.cov_pred, fr.cov_filt,
                                      _jitter_array(jitter_levels), J, Vs))
    ms = np.empty((T, dx))
    _kernels.mean_smooth(J, fr.mean_pred, fr.mean_filt, ms)
    return SmoothedMoments(ms, Vs, J)


def sufficient_stats(sm):
    """Per-step expectations E[x_t], E[x_t x_t^T] and E[x_t x_{t-1}^T]."""
    m, V, J = sm.mean, sm.cov, sm.gain
    Exx = V + np.einsum("ti,tj->tij", m, m)
    Exx1 = V[1:] @ _tr(J) + np.einsum("ti,tj->tij", m[1:], m[:-1])
    return SufficientStats(Ex=m.copy(), Exx=Exx, Exx1=Exx1)


def log_likelihood(params, y, jitter_levels=JITTER_LEVELS):
    return filter(params, y, jitter_levels).log_likelihood
