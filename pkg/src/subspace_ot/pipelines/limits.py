"""Convergence suites: weighted-cost maps towards MK, lifted empirical plans towards MI."""

from __future__ import annotations

import numpy as np

from ..discrete_ot import empirical_mi_cross_cov
from ..gauss_ot import as_gaussian, mi_cross_cov, mk_matrix, weighted_monge_map
from ..measures import Gaussian, Subspace, WeightedMetric

DEFAULT_EPS_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
DEFAULT_N_GRID = (100, 400, 1600, 6400)


def diagonal_instance() -> tuple[Gaussian, Gaussian, Subspace]:
    """``A = diag(4, 1)``, ``B = diag(9, 16)``, ``E = span(e1)``."""
    return (
        Gaussian.centered(np.diag([4.0, 1.0])),
        Gaussian.centered(np.diag([9.0, 16.0])),
        Subspace.canonical(2, 1),
    )


def mk_limit(mu, nu, subspace: Subspace, eps_grid=DEFAULT_EPS_GRID) -> np.ndarray:
    """Rows ``(eps, ||T_eps - T_MK||_F)``."""
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    t_mk = mk_matrix(mu.cov, nu.cov, subspace)
    rows = []
    for eps in eps_grid:
        t = weighted_monge_map(mu, nu, WeightedMetric(subspace, eps)).matrix
        rows.append((eps, np.linalg.norm(t - t_mk)))
    return np.array(rows)


def mi_limit(mu, nu, subspace: Subspace, n_grid=DEFAULT_N_GRID, seeds=range(10)) -> dict:
    """Errors ``||C_n - C||_F`` of the empirical lifted plan, per sample size and seed.

    Returns ``{"n": ..., "errors": (len(n_grid), n_seeds), "median": ...,
    "reference_norm": ||C||_F}``. Seed ``s`` at size ``n`` uses the
    generator seeded with ``(s, n)``.
    """
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    c = mi_cross_cov(mu.cov, nu.cov, subspace)
    seeds = list(seeds)
    errors = np.array(
        [[np.linalg.norm(empirical_mi_cross_cov(mu, nu, subspace, n, (s, n)) - c) for s in seeds] for n in n_grid]
    )
    return {
        "n": np.asarray(n_grid),
        "errors": errors,
        "median": np.median(errors, axis=1),
        "reference_norm": float(np.linalg.norm(c)),
    }
