"""Closed-form transport between Gaussian measures.

Maps are computed on centered covariances; means enter only through the
affine wrapper :class:`~subspace_ot.measures.LinearTransport` and add
``||m_mu - m_nu||^2`` to every cost.

Functions taking Gaussians also accept a bare covariance (array or
:class:`SpdMatrix`), which is read as a centered Gaussian.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatch, FactorizationFailed, SingularInput, SingularSource
from .measures import Gaussian, GaussianCoupling, LinearTransport, Subspace, WeightedMetric
from .psdlin import (
    JITTER_GROWTH,
    JITTER_MAX,
    JITTER_START,
    SpdMatrix,
    as_spd,
    cholesky_lower,
    inv_sqrtm,
    pseudo_inverse,
    schur_complement,
    spd_solve,
    sqrtm,
)

PUSH_FORWARD_WARN_TOL = 1e-6


def as_gaussian(x) -> Gaussian:
    return x if isinstance(x, Gaussian) else Gaussian.centered(x)


def _check_dims(*dims):
    if len(set(dims)) != 1:
        raise DimensionMismatch(f"dimensions differ: {dims}")


def _sym(m):
    return 0.5 * (m + m.T)


def _rotate(m, v):
    return _sym(v.T @ np.asarray(m, dtype=float) @ v)


def bures(a, b) -> float:
    """Squared Bures distance ``tr A + tr B - 2 tr (A^1/2 B A^1/2)^1/2``."""
    a, b = as_spd(a), as_spd(b)
    _check_dims(a.dim, b.dim)
    if np.array_equal(a.values, b.values):
        return 0.0
    ra = sqrtm(a).values
    w = np.linalg.eigvalsh(_sym(ra @ b.values @ ra))
    val = np.trace(a.values) + np.trace(b.values) - 2.0 * np.sqrt(np.clip(w, 0.0, None)).sum()
    return float(max(val, 0.0))


def wasserstein2_gaussian(mu, nu) -> float:
    """Squared 2-Wasserstein distance between Gaussians."""
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    _check_dims(mu.dim, nu.dim)
    dm = mu.mean - nu.mean
    return float(dm @ dm) + bures(mu.cov, nu.cov)


def _inv_sqrt_regularized(a: SpdMatrix, regularize: bool):
    """Return ``(A + r I)^{-1/2}`` and ``r``, escalating ``r`` only if A is singular."""
    try:
        return inv_sqrtm(a), 0.0
    except SingularInput:
        if not regularize:
            raise SingularSource("source covariance is singular") from None
    scale = max(float(np.mean(np.diag(a.values))), np.finfo(float).tiny)
    r = JITTER_START
    while r <= JITTER_MAX * (1 + 1e-9):
        try:
            return inv_sqrtm(a, reg=r * scale), r * scale
        except SingularInput:
            r *= JITTER_GROWTH
    raise SingularSource("source covariance is singular beyond the jitter budget")


def monge_matrix(a, b, regularize: bool = True) -> np.ndarray:
    """Matrix of the Monge map between centered Gaussians, ``A^-1/2 (A^1/2 B A^1/2)^1/2 A^-1/2``.

    A singular ``A`` is regularized to ``A + r I`` with the smallest jitter
    that makes it invertible, unless ``regularize`` is False.
    """
    a, b = as_spd(a), as_spd(b)
    _check_dims(a.dim, b.dim)
    ais, r = _inv_sqrt_regularized(a, regularize)
    ra = sqrtm(a).values if r == 0.0 else sqrtm(a.values + r * np.eye(a.dim)).values
    mid = sqrtm(_sym(ra @ b.values @ ra)).values
    ais = ais.values
    return _sym(ais @ mid @ ais)


def monge_map(mu, nu, regularize: bool = True) -> LinearTransport:
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    _check_dims(mu.dim, nu.dim)
    return LinearTransport(mu.mean, nu.mean, monge_matrix(mu.cov, nu.cov, regularize))


def transport_cost(t: LinearTransport, a, b=None, check: bool = True) -> float:
    """Expected squared displacement ``E||X - T(X)||^2`` for ``X ~ N(source_mean, A)``.

    With ``B`` given this is ``tr A + tr B - tr(TA + AT^T)`` plus the squared
    mean displacement; ``T`` is then expected to push ``A`` to ``B`` and a
    warning is emitted if it does not.
    """
    a = np.asarray(a, dtype=float)
    m = t.matrix
    _check_dims(t.dim, a.shape[0])
    pushed = t.push_forward_cov(a)
    if b is None:
        b = pushed
    else:
        b = np.asarray(b, dtype=float)
        _check_dims(t.dim, b.shape[0])
        if check:
            rel = np.linalg.norm(pushed - b) / max(np.linalg.norm(b), np.finfo(float).tiny)
            if rel > PUSH_FORWARD_WARN_TOL:
                warnings.warn(f"map does not push A to B (relative error {rel:.2e})", RuntimeWarning, stacklevel=2)
    dm = t.source_mean - t.target_mean
    cost = np.trace(a) + np.trace(b) - 2.0 * np.trace(m @ a)
    return float(max(cost, 0.0) + dm @ dm)


def _cholesky_source(a, regularize):
    try:
        return cholesky_lower(a, escalate=regularize)
    except FactorizationFailed as exc:
        raise SingularSource(str(exc)) from exc


def kr_matrix(a, b, regularize: bool = False) -> np.ndarray:
    """Knothe-Rosenblatt matrix ``L_B L_A^{-1}`` (lower triangular, x_1 first)."""
    a, b = as_spd(a), as_spd(b)
    _check_dims(a.dim, b.dim)
    la = _cholesky_source(a.values, regularize)
    lb = cholesky_lower(b.values)
    # T L_A = L_B  <=>  L_A^T T^T = L_B^T
    return sla.solve_triangular(la.T, lb.T, lower=False).T


def kr_map(mu, nu, regularize: bool = False) -> LinearTransport:
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    _check_dims(mu.dim, nu.dim)
    return LinearTransport(mu.mean, nu.mean, np.tril(kr_matrix(mu.cov, nu.cov, regularize)))


def kr_distance(a, b) -> float:
    """``||L_A - L_B||_F``, the square root of the Knothe-Rosenblatt cost."""
    a, b = as_spd(a), as_spd(b)
    _check_dims(a.dim, b.dim)
    return float(np.linalg.norm(cholesky_lower(a.values) - cholesky_lower(b.values)))


def _blocks(m, k):
    return m[:k, :k], m[:k, k:], m[k:, k:]


def mk_matrix(a, b, subspace: Subspace, regularize: bool = True) -> np.ndarray:
    """Monge-Knothe matrix through ``subspace``, in canonical coordinates.

    In the frame ``(V_E, V_perp)`` the map is lower block-triangular: the
    E block is the Monge map between the E-marginals, the complement block
    is the Monge map between the Schur complements (conditional
    covariances), and the off-diagonal block couples the conditional means.
    """
    a, b = as_spd(a), as_spd(b)
    _check_dims(a.dim, b.dim, subspace.dim)
    if subspace.is_full:
        return monge_matrix(a, b, regularize)
    v, k = subspace.basis_full, subspace.k
    ar, br = _rotate(a, v), _rotate(b, v)
    a_e, a_ep, _ = _blocks(ar, k)
    b_e, b_ep, _ = _blocks(br, k)
    t_e = monge_matrix(a_e, b_e, regularize)
    t_p = monge_matrix(
        schur_complement(ar, k, regularize), schur_complement(br, k, regularize), regularize
    )
    # [b_ep^T t_e^{-1} - t_p a_ep^T] a_e^{-1}, all factors symmetric except a_ep, b_ep
    left = spd_solve(t_e, b_ep, regularize).T - t_p @ a_ep.T
    lower = spd_solve(a_e, left.T, regularize).T
    t = np.zeros_like(ar)
    t[:k, :k] = t_e
    t[k:, :k] = lower
    t[k:, k:] = t_p
    return v @ t @ v.T


def mk_map(mu, nu, subspace: Subspace, regularize: bool = True) -> LinearTransport:
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    return LinearTransport(mu.mean, nu.mean, mk_matrix(mu.cov, nu.cov, subspace, regularize))


def mk_cost(mu, nu, subspace: Subspace, regularize: bool = True) -> float:
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    t = mk_map(mu, nu, subspace, regularize)
    return transport_cost(t, mu.cov.values, nu.cov.values, check=False)


def mi_cross_cov(a, b, subspace: Subspace, regularize: bool = True) -> np.ndarray:
    """Cross block ``C = E[X Y^T]`` of the Monge-Independent coupling."""
    a, b = as_spd(a), as_spd(b)
    _check_dims(a.dim, b.dim, subspace.dim)
    v_e, v_p, k = subspace.basis, subspace.complement, subspace.k
    a_e = _rotate(a, v_e)
    b_e = _rotate(b, v_e)
    a_ep = v_e.T @ a.values @ v_p
    b_ep = v_e.T @ b.values @ v_p
    t_e = monge_matrix(a_e, b_e, regularize)
    left = v_e @ a_e + v_p @ a_ep.T
    right = v_e.T + spd_solve(b_e, b_ep, regularize) @ v_p.T
    return left @ t_e @ right


def mi_coupling(mu, nu, subspace: Subspace, regularize: bool = True) -> GaussianCoupling:
    """Monge-Independent coupling ``N([m_mu, m_nu], [[A, C], [C^T, B]])``."""
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    a, b = mu.cov.values, nu.cov.values
    c = mi_cross_cov(mu.cov, nu.cov, subspace, regularize)
    sigma = np.block([[a, c], [c.T, b]])
    return GaussianCoupling(SpdMatrix(sigma), np.concatenate([mu.mean, nu.mean]))


def mi_cost(mu, nu, subspace: Subspace, regularize: bool = True) -> float:
    return mi_coupling(mu, nu, subspace, regularize).transport_cost()


def conditional_cov(coupling: GaussianCoupling, subspace: Subspace) -> np.ndarray:
    """Covariance of ``(X_perp, Y_perp)`` given ``(X_E, Y_E)`` under a coupling.

    Conditioning uses the pseudo-inverse, since the E x E block of a plan
    supported on a graph is singular. Returns a ``2(d-k)`` square matrix
    ordered ``[X_perp, Y_perp]``.
    """
    d, k = subspace.dim, subspace.k
    _check_dims(coupling.dim, d)
    v = subspace.basis_full
    rot = np.zeros((2 * d, 2 * d))
    rot[:d, :d] = v
    rot[d:, d:] = v
    s = _rotate(coupling.sigma.values, rot)
    cond = np.r_[0:k, d : d + k]
    rest = np.r_[k:d, d + k : 2 * d]
    s_cc = s[np.ix_(cond, cond)]
    s_rc = s[np.ix_(rest, cond)]
    return _sym(s[np.ix_(rest, rest)] - s_rc @ pseudo_inverse(s_cc).values @ s_rc.T)


def conditional_cross_block(coupling: GaussianCoupling, subspace: Subspace) -> np.ndarray:
    """Cov(X_perp, Y_perp | X_E, Y_E); zero for the Monge-Independent coupling."""
    m = subspace.dim - subspace.k
    return conditional_cov(coupling, subspace)[:m, m:]


def weighted_monge_map(
    mu, nu, metric: WeightedMetric, regularize: bool = True, method: str = "factored"
) -> LinearTransport:
    """Optimal map for the cost ``(x-y)^T P_eps (x-y)``.

    Changing variables to ``x' = P^1/2 x`` turns the cost into the squared
    Euclidean one, so ``T_eps = P^-1/2 T(P^1/2 A P^1/2, P^1/2 B P^1/2) P^1/2``.

    ``method="direct"`` evaluates that expression literally. It loses all
    accuracy once ``eps`` drops below ~1e-5, because the inner square root
    sees eigenvalues of order ``eps^2``. The default ``"factored"`` route
    uses the identity ``T(A', B') = F^-T (F^T B' F)^1/2 F^-1`` for any
    ``A' = F F^T``; with ``F = P^1/2 L_A`` this gives
    ``T_eps = P^-1 L_A^-T (R^T R)^1/2 L_A^-1`` with ``R = L_B^T P L_A``, and the
    root is taken from the SVD of ``R`` whose singular values only span
    ``[eps, 1]``.
    """
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    _check_dims(mu.dim, nu.dim, metric.basis.dim)
    if method == "direct":
        ps, pis = metric.sqrt(), metric.inv_sqrt()
        a = _sym(ps @ mu.cov.values @ ps)
        b = _sym(ps @ nu.cov.values @ ps)
        t = pis @ monge_matrix(a, b, regularize) @ ps
        return LinearTransport(mu.mean, nu.mean, t)
    if method != "factored":
        raise ValueError(f"unknown method {method!r}")
    v, k = metric.basis.basis_full, metric.basis.k
    la = _cholesky_source(_rotate(mu.cov, v), regularize)
    lb = cholesky_lower(_rotate(nu.cov, v))
    p_diag = np.ones(v.shape[0])
    p_diag[k:] = metric.epsilon
    _, s, wt = np.linalg.svd(lb.T @ (p_diag[:, None] * la))
    root = (wt.T * s) @ wt
    x = sla.solve_triangular(la.T, root, lower=False)
    x = sla.solve_triangular(la.T, x.T, lower=False).T
    t = v @ (x / p_diag[:, None]) @ v.T
    return LinearTransport(mu.mean, nu.mean, t)


def weighted_cost(t: LinearTransport, mu, metric: WeightedMetric) -> float:
    """``E[(X - T X)^T P (X - T X)]`` for ``X ~ mu``."""
    mu = as_gaussian(mu)
    p = metric.matrix()
    i_t = np.eye(t.dim) - t.matrix
    dm = t.source_mean - t.target_mean
    return float(np.trace(p @ i_t @ mu.cov.values @ i_t.T) + dm @ p @ dm)


def interpolate(t: LinearTransport, mu, time: float) -> Gaussian:
    """Push-forward of ``mu`` by ``(1 - time) Id + time T``."""
    mu = as_gaussian(mu)
    if not 0.0 <= time <= 1.0:
        raise ValueError("time must lie in [0, 1]")
    m_t = (1.0 - time) * np.eye(t.dim) + time * t.matrix
    mean = (1.0 - time) * mu.mean + time * t.apply(mu.mean)
    cov = _sym(m_t @ mu.cov.values @ m_t.T)
    return Gaussian(mean, SpdMatrix(cov))


__all__ = [
    "as_gaussian",
    "bures",
    "wasserstein2_gaussian",
    "monge_matrix",
    "monge_map",
    "transport_cost",
    "kr_matrix",
    "kr_map",
    "kr_distance",
    "mk_matrix",
    "mk_map",
    "mk_cost",
    "mi_cross_cov",
    "mi_coupling",
    "mi_cost",
    "conditional_cov",
    "conditional_cross_block",
    "weighted_monge_map",
    "weighted_cost",
    "interpolate",
]
