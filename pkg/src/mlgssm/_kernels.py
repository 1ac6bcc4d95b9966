"""Compiled inner loops for the Kalman filter and RTS smoother.

The matrices involved are tiny (d_x, d_y of a few units), so LAPACK call
overhead dominates a numpy implementation. These kernels use explicit loops
and mirror the jitter policy of :mod:`mlgssm.numerics`.

Status codes: 0 ok, 1 innovation covariance not PD, 2 predicted state
covariance not PD (smoother).
"""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def _chol_plain(S, L):
    n = S.shape[0]
    for i in range(n):
        for j in range(n):
            L[i, j] = 0.0
    for j in range(n):
        s = S[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 0.0) or not math.isfinite(s):
            return False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s = S[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d
    return True


@njit(cache=True)
def chol_jitter(S, L, jitter, work):
    """Cholesky with escalating diagonal jitter; returns success."""
    if _chol_plain(S, L):
        return True
    n = S.shape[0]
    scale = 0.0
    for i in range(n):
        scale = max(scale, abs(S[i, i]))
    if not (scale > 0.0) or not math.isfinite(scale):
        return False
    for eps in jitter:
        for i in range(n):
            for j in range(n):
                work[i, j] = S[i, j]
            work[i, i] += eps * scale
        if _chol_plain(work, L):
            return True
    return False


@njit(cache=True)
def _tri_inverse(L, Linv):
    n = L.shape[0]
    for i in range(n):
        for j in range(n):
            Linv[i, j] = 0.0
    for i in range(n):
        Linv[i, i] = 1.0 / L[i, i]
        for j in range(i):
            s = 0.0
            for k in range(j, i):
                s -= L[i, k] * Linv[k, j]
            Linv[i, j] = s / L[i, i]


@njit(cache=True)
def _inv_from_linv(Linv, out):
    # (L L^T)^-1 = L^-T L^-1
    n = Linv.shape[0]
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for k in range(j, n):
                s += Linv[k, i] * Linv[k, j]
            out[i, j] = s
            out[j, i] = s


@njit(cache=True)
def _logdet_from_chol(L):
    s = 0.0
    for i in range(L.shape[0]):
        s += math.log(L[i, i])
    return 2.0 * s


@njit(cache=True)
def cov_filter(A, G, C, Sig, P, jitter, Vp, Vf, K, Linv, logdet):
    """Data-independent covariance recursion of the forward pass."""
    T = Vp.shape[0]
    dx = A.shape[0]
    dy = C.shape[0]
    V = P.copy()
    VCt = np.empty((dx, dy))
    S = np.empty((dy, dy))
    Ly = np.empty((dy, dy))
    wy = np.empty((dy, dy))
    Sinv = np.empty((dy, dy))
    AV = np.empty((dx, dx))
    for i in range(dx):
        for j in range(i):
            s = 0.5 * (V[i, j] + V[j, i])
            V[i, j] = s
            V[j, i] = s
    for t in range(T):
        Vp[t] = V
        for i in range(dx):
            for r in range(dy):
                s = 0.0
                for k in range(dx):
                    s += V[i, k] * C[r, k]
                VCt[i, r] = s
        for r in range(dy):
            for q in range(dy):
                s = Sig[r, q]
                for k in range(dx):
                    s += C[r, k] * VCt[k, q]
                S[r, q] = s
        for r in range(dy):
            for q in range(r):
                s = 0.5 * (S[r, q] + S[q, r])
                S[r, q] = s
                S[q, r] = s
        if not chol_jitter(S, Ly, jitter, wy):
            return 1
        logdet[t] = _logdet_from_chol(Ly)
        _tri_inverse(Ly, Linv[t])
        _inv_from_linv(Linv[t], Sinv)
        for i in range(dx):
            for q in range(dy):
                s = 0.0
                for r in range(dy):
                    s += VCt[i, r] * Sinv[r, q]
                K[t, i, q] = s
        # V[t|t] = V - K (V C^T)^T
        for i in range(dx):
            for j in range(dx):
                s = V[i, j]
                for r in range(dy):
                    s -= K[t, i, r] * VCt[j, r]
                Vf[t, i, j] = s
        for i in range(dx):
            for j in range(i):
                s = 0.5 * (Vf[t, i, j] + Vf[t, j, i])
                Vf[t, i, j] = s
                Vf[t, j, i] = s
        if t < T - 1:
            for i in range(dx):
                for j in range(dx):
                    s = 0.0
                    for k in range(dx):
                        s += A[i, k] * Vf[t, k, j]
                    AV[i, j] = s
            for i in range(dx):
                for j in range(dx):
                    s = G[i, j]
                    for k in range(dx):
                        s += AV[i, k] * A[j, k]
                    V[i, j] = s
            for i in range(dx):
                for j in range(i):
                    s = 0.5 * (V[i, j] + V[j, i])
                    V[i, j] = s
                    V[j, i] = s
    return 0


@njit(cache=True)
def cov_smooth(A, Vp, Vf, jitter, J, Vs):
    """Backward covariance recursion; fills the smoother gains ``J``."""
    T = Vp.shape[0]
    dx = A.shape[0]
    Lx = np.empty((dx, dx))
    Lxi = np.empty((dx, dx))
    wx = np.empty((dx, dx))
    Vpinv = np.empty((dx, dx))
    VfAt = np.empty((dx, dx))
    D = np.empty((dx, dx))
    JD = np.empty((dx, dx))
    Vs[T - 1] = Vf[T - 1]
    for t in range(T - 2, -1, -1):
        if not chol_jitter(Vp[t + 1], Lx, jitter, wx):
            return 2
        _tri_inverse(Lx, Lxi)
        _inv_from_linv(Lxi, Vpinv)
        for i in range(dx):
            for j in range(dx):
                s = 0.0
                for k in range(dx):
                    s += Vf[t, i, k] * A[j, k]
                VfAt[i, j] = s
        for i in range(dx):
            for j in range(dx):
                s = 0.0
                for k in range(dx):
                    s += VfAt[i, k] * Vpinv[k, j]
                J[t, i, j] = s
        for i in range(dx):
            for j in range(dx):
                D[i, j] = Vs[t + 1, i, j] - Vp[t + 1, i, j]
        for i in range(dx):
            for j in range(dx):
                s = 0.0
                for k in range(dx):
                    s += J[t, i, k] * D[k, j]
                JD[i, j] = s
        for i in range(dx):
            for j in range(dx):
                s = Vf[t, i, j]
                for k in range(dx):
                    s += JD[i, k] * J[t, j, k]
                Vs[t, i, j] = s
        for i in range(dx):
            for j in range(i):
                s = 0.5 * (Vs[t, i, j] + Vs[t, j, i])
                Vs[t, i, j] = s
                Vs[t, j, i] = s
    return 0


@njit(cache=True)
def mean_filter(A, C, mu, K, Linv, logdet, y, mp, mf):
    """Filtered means for one series; returns the log-likelihood."""
    T = y.shape[0]
    dx = A.shape[0]
    dy = C.shape[0]
    m = mu.copy()
    e = np.empty(dy)
    ll = 0.0
    for t in range(T):
        for i in range(dx):
            mp[t, i] = m[i]
        for r in range(dy):
            s = y[t, r]
            for k in range(dx):
                s -= C[r, k] * m[k]
            e[r] = s
        quad = 0.0
        for r in range(dy):
            s = 0.0
            for q in range(r + 1):
                s += Linv[t, r, q] * e[q]
            quad += s * s
        ll -= 0.5 * (dy * LOG_2PI + logdet[t] + quad)
        for i in range(dx):
            s = m[i]
            for r in range(dy):
                s += K[t, i, r] * e[r]
            mf[t, i] = s
        if t < T - 1:
            for i in range(dx):
                s = 0.0
                for k in range(dx):
                    s += A[i, k] * mf[t, k]
                m[i] = s
    return ll


@njit(cache=True)
def mean_smooth(J, mp, mf, ms):
    T, dx = mf.shape
    for i in range(dx):
        ms[T - 1, i] = mf[T - 1, i]
    for t in range(T - 2, -1, -1):
        for i in range(dx):
            s = mf[t, i]
            for k in range(dx):
                s += J[t, i, k] * (ms[t + 1, k] - mp[t + 1, k])
            ms[t, i] = s


@njit(cache=True)
def estep_sums(A, G, C, Sig, mu, P, Y, jitter, loglik, x1, xx1, xx_all, xx_last,
               cross, yx, yy, status):
    """Filter + smoother + time-summed expectations for a parameter stack.

    Shapes: params ``(B, ...)``, ``Y`` ``(n, T, dy)`` shared by every ``b``
    (or ``(B, n, T, dy)`` flattened by the caller to one b per series).
    Outputs are ``(B, n, ...)``. ``status[b]`` is nonzero where the
    covariance pass failed; those rows are left untouched.
    """
    B = A.shape[0]
    dx = A.shape[1]
    dy = C.shape[1]
    n, T = Y.shape[1], Y.shape[2]
    Vp = np.empty((T, dx, dx))
    Vf = np.empty((T, dx, dx))
    K = np.empty((T, dx, dy))
    Linv = np.empty((T, dy, dy))
    logdet = np.empty(T)
    J = np.empty((max(T - 1, 1), dx, dx))
    Vs = np.empty((T, dx, dx))
    mp = np.empty((T, dx))
    mf = np.empty((T, dx))
    ms = np.empty((T, dx))
    Vsum = np.empty((dx, dx))
    Vcross = np.empty((dx, dx))
    for b in range(B):
        st = cov_filter(A[b], G[b], C[b], Sig[b], P[b], jitter, Vp, Vf, K, Linv, logdet)
        if st == 0:
            st = cov_smooth(A[b], Vp, Vf, jitter, J, Vs)
        status[b] = st
        if st != 0:
            continue
        for i in range(dx):
            for j in range(dx):
                s = 0.0
                for t in range(T):
                    s += Vs[t, i, j]
                Vsum[i, j] = s
                s = 0.0
                for t in range(1, T):
                    for k in range(dx):
                        s += Vs[t, i, k] * J[t - 1, j, k]
                Vcross[i, j] = s
        for nn in range(n):
            y = Y[b if Y.shape[0] > 1 else 0, nn]
            loglik[b, nn] = mean_filter(A[b], C[b], mu[b], K, Linv, logdet, y, mp, mf)
            mean_smooth(J, mp, mf, ms)
            for i in range(dx):
                x1[b, nn, i] = ms[0, i]
                for j in range(dx):
                    xx1[b, nn, i, j] = Vs[0, i, j] + ms[0, i] * ms[0, j]
                    xx_last[b, nn, i, j] = Vs[T - 1, i, j] + ms[T - 1, i] * ms[T - 1, j]
                    s = 0.0
                    c = 0.0
                    for t in range(T):
                        s += ms[t, i] * ms[t, j]
                    for t in range(1, T):
                        c += ms[t, i] * ms[t - 1, j]
                    xx_all[b, nn, i, j] = Vsum[i, j] + s
                    cross[b, nn, i, j] = Vcross[i, j] + c
            for r in range(dy):
                for i in range(dx):
                    s = 0.0
                    for t in range(T):
                        s += y[t, r] * ms[t, i]
                    yx[b, nn, r, i] = s
                for q in range(dy):
                    s = 0.0
                    for t in range(T):
                        s += y[t, r] * y[t, q]
                    yy[b, nn, r, q] = s
    return 0


@njit(cache=True)
def loglik_only(A, G, C, Sig, mu, P, Y, jitter, loglik, status):
    """Forward pass only; same shape conventions as :func:`estep_sums`."""
    B = A.shape[0]
    dx = A.shape[1]
    dy = C.shape[1]
    n, T = Y.shape[1], Y.shape[2]
    Vp = np.empty((T, dx, dx))
    Vf = np.empty((T, dx, dx))
    K = np.empty((T, dx, dy))
    Linv = np.empty((T, dy, dy))
    logdet = np.empty(T)
    mp = np.empty((T, dx))
    mf = np.empty((T, dx))
    for b in range(B):
        st = cov_filter(A[b], G[b], C[b], Sig[b], P[b], jitter, Vp, Vf, K, Linv, logdet)
        status[b] = st
        if st != 0:
            continue
        for nn in range(n):
            y = Y[b if Y.shape[0] > 1 else 0, nn]
            loglik[b, nn] = mean_filter(A[b], C[b], mu[b], K, Linv, logdet, y, mp, mf)
    return 0
