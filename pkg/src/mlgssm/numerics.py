"""Small dense matrix kernels with the stability policies used by the EM code.

All functions accept either a single matrix or a stack of matrices with the
matrix dimensions last. Covariance-valued outputs are symmetrized.
"""

import numpy as np

from .exceptions import NotPositiveDefinite, RankDeficient

JITTER_LEVELS = (1e-12, 1e-10, 1e-8)


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _cholesky_one(s, jitter_levels):
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        pass
    scale = np.max(np.abs(np.diag(s)))
    if not np.isfinite(scale) or scale == 0.0:
        raise NotPositiveDefinite("matrix has no positive diagonal scale")
    eye = np.eye(s.shape[-1])
    for eps in jitter_levels:
        try:
            return np.linalg.cholesky(s + eps * scale * eye)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"Cholesky failed after jitter up to {jitter_levels[-1]:g} x max diagonal"
    )


def cholesky(s, jitter_levels=JITTER_LEVELS):
    """Lower Cholesky factor of a (stack of) SPD matrices.

    The fast path factors the whole stack at once. If any member fails, each
    member is retried with ``eps * max(diag) * I`` added, escalating through
    ``jitter_levels``.

    Raises
    ------
    NotPositiveDefinite
        If some member still fails at the largest jitter level.
    """
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        pass
    if s.ndim == 2:
        return _cholesky_one(s, jitter_levels)
    flat = s.reshape((-1,) + s.shape[-2:])
    out = np.empty_like(flat)
    for i, block in enumerate(flat):
        out[i] = _cholesky_one(block, jitter_levels)
    return out.reshape(s.shape)


def cholesky_logdet(s, jitter_levels=JITTER_LEVELS):
    """Return ``(L, log|s|)`` with ``L @ L.T == s``."""
    factor = cholesky(s, jitter_levels)
    diag = np.diagonal(factor, axis1=-2, axis2=-1)
    return factor, 2.0 * np.sum(np.log(diag), axis=-1)


def solve_spd(s, b, jitter_levels=JITTER_LEVELS):
    """Solve ``s @ x = b`` for SPD ``s`` (stacks allowed).

    ``s`` is checked by Cholesky before the solve so an indefinite matrix
    raises instead of returning garbage; when jitter was needed the solve uses
    the jittered matrix.
    """
    s = np.asarray(s, dtype=float)
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(s)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        factor = cholesky(s, jitter_levels)
        s = factor @ np.swapaxes(factor, -1, -2)
    return np.linalg.solve(s, b)


def qr_orthogonal(g):
    """Orthogonal factor Q of the QR decomposition of a square matrix."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {g.shape}")
    q, r = np.linalg.qr(g)
    if np.min(np.abs(np.diag(r))) < 1e-12:
        raise RankDeficient("QR diagonal entry below 1e-12")
    return q


def project_spd(m, rel_floor=1e-8, abs_floor=1e-8):
    """Symmetrize and clip eigenvalues from below.

    The floor is ``rel_floor`` times the largest eigenvalue, or ``abs_floor``
    when no eigenvalue is positive.
    """
    m = symmetrize(m)
    w, v = np.linalg.eigh(m)
    top = np.max(w, axis=-1, keepdims=True)
    floor = np.where(top > 0, rel_floor * top, abs_floor)
    w = np.maximum(w, floor)
    return symmetrize((v * w[..., None, :]) @ np.swapaxes(v, -1, -2))


def clip_covariance(m, rel_floor=1e-12):
    """Symmetrize; clip negative eigenvalues only when some are present."""
    m = symmetrize(m)
    w, v = np.linalg.eigh(m)
    top = np.max(w, axis=-1, keepdims=True)
    floor = rel_floor * np.abs(top)
    bad = np.any(w < floor, axis=-1)
    if not np.any(bad):
        return m
    fixed = symmetrize((v * np.maximum(w, floor)[..., None, :]) @ np.swapaxes(v, -1, -2))
    return np.where(bad[..., None, None], fixed, m)
