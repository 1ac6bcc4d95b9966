"""BIC scoring and grid search over (number of clusters, state dimension)."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import check_panel
from .exceptions import MlgssmError
from .initializer import InitConfig, best_params_per_series, init_mixture
from .lgssm_em import EmConfig
from .mixture_em import fit_mixture, log_marginal_likelihood

logger = logging.getLogger(__name__)


def n_component_params(dx, dy, free_only=False, constrain=True):
    """Size of one component's parameter set.

    By default every entry of A, Gamma, C, Sigma, mu and P is counted. With
    ``free_only`` the symmetric covariances count their upper triangles and
    a constrained first row of C is excluded.
    """
    if not free_only:
        return 3 * dx * dx + dy * dx + dy * dy + dx
    tri = dx * (dx + 1) // 2
    c_rows = dy - 1 if constrain else dy
    return dx * dx + 2 * tri + c_rows * dx + dy * (dy + 1) // 2 + dx


def bic_penalty(M, dx, dy, N, free_only=False, constrain=True):
    k = n_component_params(dx, dy, free_only, constrain)
    return 0.5 * (M * k + M - 1) * np.log(N)


def bic(X, theta, free_only=False, constrain=True, config=None):
    """Log marginal likelihood of the data minus the BIC penalty (larger is better)."""
    Y = check_panel(X)
    ll = float(np.sum(log_marginal_likelihood(Y, theta, config)))
    return ll - bic_penalty(theta.n_components, theta.dx, theta.dy, Y.shape[0],
                            free_only, constrain)


@dataclass
class GridCell:
    M: int
    dx: int
    bic: float = float("nan")
    log_marginal: float = float("nan")
    seed: int = None
    converged: bool = False
    n_iter: int = 0
    failed: bool = False
    error: str = ""
    seconds: float = 0.0
    result: object = field(default=None, repr=False)


@dataclass
class BicTable:
    cells: dict

    @property
    def best(self):
        """Cell with the largest BIC; ties go to smaller M, then smaller d_x."""
        ok = [c for c in self.cells.values() if not c.failed and np.isfinite(c.bic)]
        if not ok:
            raise MlgssmError("every grid cell failed")
        return max(ok, key=lambda c: (c.bic, -c.M, -c.dx))

    def M_values(self):
        return sorted({k[0] for k in self.cells})

    def dx_values(self):
        return sorted({k[1] for k in self.cells})

    def rows(self):
        for key in sorted(self.cells):
            c = self.cells[key]
            yield {"M": c.M, "dx": c.dx, "bic": c.bic, "log_marginal": c.log_marginal,
                   "seed": c.seed, "converged": c.converged, "n_iter": c.n_iter,
                   "failed": c.failed, "error": c.error}

    def to_text(self):
        Ms, dxs = self.M_values(), self.dx_values()
        best = self.best
        lines = ["dx\\M " + "".join(f"{m:>14d}" for m in Ms)]
        for dx in dxs:
            parts = []
            for m in Ms:
                c = self.cells.get((m, dx))
                if c is None or c.failed:
                    parts.append(f"{'failed':>14s}")
                else:
                    mark = "*" if (m, dx) == (best.M, best.dx) else " "
                    parts.append(f"{c.bic:>13.2f}{mark}")
            lines.append(f"{dx:<5d}" + "".join(parts))
        return "\n".join(lines)


def grid_search(X, M_range, dx_range, seeds=(0, 1, 2), init_config=None, em_config=None,
                free_only=False, fits_cache=None):
    """Fit every (M, d_x) cell from every seed and keep the best BIC per cell.

    The single-series stage of the initialization does not depend on M, so
    it runs once per (d_x, seed) and is shared across the M values.
    ``fits_cache``, a dict keyed by ``(d_x, seed)``, lets callers reuse
    those fits across calls on the same data and init settings. Cells that
    fail numerically are recorded as failed.
    """
    Y = check_panel(X)
    M_range, dx_range, seeds = list(M_range), list(dx_range), list(seeds)
    if not M_range or not dx_range or not seeds:
        raise ValueError("M_range, dx_range and seeds must be non-empty")
    base = init_config or InitConfig()
    em_config = em_config or EmConfig(max_iter=100)
    constrain = base.single.constrain_c_first_row
    cells = {(M, dx): GridCell(M, dx, failed=True, error="not run")
             for M in M_range for dx in dx_range}
    for dx in dx_range:
        for seed in seeds:
            cfg = InitConfig(m=base.m, dx=dx, M=base.M, kmeans_restarts=base.kmeans_restarts,
                             kmeans_max_iter=base.kmeans_max_iter, seed=seed,
                             single=base.single)
            try:
                if fits_cache is not None and (dx, seed) in fits_cache:
                    fits = fits_cache[(dx, seed)]
                else:
                    fits = best_params_per_series(Y, cfg)
                    if fits_cache is not None:
                        fits_cache[(dx, seed)] = fits
            except MlgssmError as exc:
                logger.warning("first stage failed for dx=%d seed=%d: %s", dx, seed, exc)
                for M in M_range:
                    if cells[(M, dx)].error == "not run":
                        cells[(M, dx)].error = str(exc)
                continue
            for M in M_range:
                start = time.perf_counter()
                cfg.M = M
                try:
                    theta0 = init_mixture(Y, cfg, fits=fits)
                    res = fit_mixture(Y, theta0, em_config)
                    score = bic(Y, res.params, free_only, constrain, em_config)
                except (MlgssmError, ValueError, np.linalg.LinAlgError) as exc:
                    logger.warning("cell M=%d dx=%d seed=%d failed: %s", M, dx, seed, exc)
                    if cells[(M, dx)].failed:
                        cells[(M, dx)].error = str(exc)
                    continue
                cell = cells[(M, dx)]
                if cell.failed or score > cell.bic:
                    cells[(M, dx)] = GridCell(
                        M, dx, bic=score, log_marginal=res.log_marginal, seed=seed,
                        converged=res.converged, n_iter=res.n_iter,
                        seconds=time.perf_counter() - start, result=res,
                    )
    return BicTable(cells)
