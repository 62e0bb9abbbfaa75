"""Gaussian marginals and disintegrations on a subspace, PCA priors, and
projected gradient descent for the subspace minimizing the Monge-Knothe cost.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateData, DimensionMismatch, NonFiniteLoss, SingularBlock
from .gauss_ot import as_gaussian, mk_cost
from .measures import DiscreteMeasure, Gaussian, Subspace
from .psdlin import SpdMatrix, as_spd, polar_unitary, schur_complement, spd_solve


def project_gaussian(mu, subspace: Subspace) -> Gaussian:
    """Marginal of ``mu`` on E, in the coordinates of ``V_E``."""
    mu = as_gaussian(mu)
    if mu.dim != subspace.dim:
        raise DimensionMismatch(f"Gaussian has dimension {mu.dim}, subspace lives in {subspace.dim}")
    v = subspace.basis
    cov = v.T @ mu.cov.values @ v
    return Gaussian(v.T @ mu.mean, SpdMatrix(0.5 * (cov + cov.T)))


@dataclass(frozen=True)
class GaussianDisintegration:
    """Conditional laws of ``X_perp`` given ``X_E`` for a Gaussian.

    ``X_perp | X_E = x`` is ``N(mean_perp + regression_matrix @ (x - mean_e), conditional_cov)``.
    """

    conditional_cov: SpdMatrix
    regression_matrix: np.ndarray
    mean_e: np.ndarray
    mean_perp: np.ndarray

    def conditional_mean(self, x_e) -> np.ndarray:
        x_e = np.asarray(x_e, dtype=float)
        return self.mean_perp + (x_e - self.mean_e) @ self.regression_matrix.T


def disintegrate_gaussian(mu, subspace: Subspace, regularize: bool = True) -> GaussianDisintegration:
    mu = as_gaussian(mu)
    if mu.dim != subspace.dim:
        raise DimensionMismatch(f"Gaussian has dimension {mu.dim}, subspace lives in {subspace.dim}")
    if subspace.is_full:
        raise DimensionMismatch("E is the whole space; there is nothing to condition")
    v, k = subspace.basis_full, subspace.k
    a = v.T @ mu.cov.values @ v
    a = 0.5 * (a + a.T)
    reg = spd_solve(a[:k, :k], a[:k, k:], regularize).T
    m = v.T @ mu.mean
    return GaussianDisintegration(schur_complement(a, k, regularize), reg, m[:k], m[k:])


# -- Monge-Knothe loss ------------------------------------------------------

def _t(m):
    return np.swapaxes(m, -1, -2)


def _sym(m):
    return 0.5 * (m + _t(m))


def _tr(m):
    return np.trace(m, axis1=-2, axis2=-1)


def _bures_batch(a, b):
    wa, qa = np.linalg.eigh(a)
    ra = (qa * np.sqrt(np.clip(wa, 0.0, None))[..., None, :]) @ _t(qa)
    wg = np.linalg.eigvalsh(_sym(ra @ b @ ra))
    return _tr(a) + _tr(b) - 2.0 * np.sqrt(np.clip(wg, 0.0, None)).sum(axis=-1)


def _mk_cost_rotated(a, b, k):
    """MK cost between stacks of covariances with E = first k axes.

    Uses the decomposition of the MK cost into the Bures cost of the
    E-marginals, the Bures cost of the conditional covariances, and the
    mismatch of the conditional means ``tr(M A_E M^T)`` with
    ``M = A_Ep^T A_E^-1 - B_Ep^T B_E^-1 T_E``.
    """
    d = a.shape[-1]
    if k == d:
        return _bures_batch(a, b)
    a_e, a_ep, a_p = a[..., :k, :k], a[..., :k, k:], a[..., k:, k:]
    b_e, b_ep, b_p = b[..., :k, :k], b[..., :k, k:], b[..., k:, k:]
    wa, qa = np.linalg.eigh(a_e)
    if np.any(wa[..., 0] <= 1e-12 * np.abs(wa[..., -1])):
        raise SingularBlock("E-marginal covariance is singular")
    sq = np.sqrt(wa)[..., None, :]
    ra = (qa * sq) @ _t(qa)
    ria = (qa / sq) @ _t(qa)
    wg, qg = np.linalg.eigh(_sym(ra @ b_e @ ra))
    rg = np.sqrt(np.clip(wg, 0.0, None))
    t_e = ria @ ((qg * rg[..., None, :]) @ _t(qg)) @ ria
    cost_e = _tr(a_e) + _tr(b_e) - 2.0 * rg.sum(axis=-1)
    xa = np.linalg.solve(a_e, a_ep)
    xb = np.linalg.solve(b_e, b_ep)
    s_a = _sym(a_p - _t(a_ep) @ xa)
    s_b = _sym(b_p - _t(b_ep) @ xb)
    m = _t(xa) - _t(xb) @ t_e
    return cost_e + _bures_batch(s_a, s_b) + _tr(m @ a_e @ _t(m))


def _loss_batch(a, b, vs, k):
    if np.array_equal(a, b):
        # MK(A, A) = 0 through any subspace; skip the rounding noise
        return np.zeros(vs.shape[:-2])
    ar = _sym(_t(vs) @ a @ vs)
    br = _sym(_t(vs) @ b @ vs)
    try:
        with np.errstate(all="ignore"):
            out = _mk_cost_rotated(ar, br, k)
        if np.all(np.isfinite(out)):
            return np.maximum(out, 0.0)
    except (np.linalg.LinAlgError, SingularBlock):
        pass
    # slow path regularizes singular blocks one matrix at a time
    flat_a = ar.reshape(-1, *ar.shape[-2:])
    flat_b = br.reshape(-1, *br.shape[-2:])
    d = ar.shape[-1]
    sub = Subspace.canonical(d, k)
    vals = []
    for x, y in zip(flat_a, flat_b):
        try:
            vals.append(mk_cost(x, y, sub))
        except (ValueError, ArithmeticError):
            vals.append(np.nan)
    return np.array(vals).reshape(ar.shape[:-2])


def mk_loss(a, b, v, k: int) -> float:
    """``MK(V^T A V, V^T B V; k)``: the MK cost through the span of V's first k columns."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    v = np.asarray(v, dtype=float)
    d = a.shape[0]
    if b.shape != (d, d) or v.shape != (d, d):
        raise DimensionMismatch(f"shapes {a.shape}, {b.shape}, {v.shape} do not agree")
    if not 1 <= k <= d:
        raise DimensionMismatch(f"need 1 <= k <= {d}, got {k}")
    return float(_loss_batch(a, b, v[None], k)[0])


def fd_gradient(a, b, v, k: int, step: float) -> np.ndarray:
    """Central finite-difference gradient of :func:`mk_loss` with respect to V."""
    d = v.shape[0]
    idx = np.arange(d * d)
    bump = np.zeros((d * d, d, d))
    bump[idx, idx // d, idx % d] = step
    vals = _loss_batch(a, b, np.concatenate([v + bump, v - bump]), k)
    return ((vals[: d * d] - vals[d * d :]) / (2.0 * step)).reshape(d, d)


# -- Algorithm: projected gradient descent on the orthogonal group ----------

@dataclass(frozen=True)
class SelectionConfig:
    """Options for :func:`select_subspace`.

    ``fd_step=None`` means ``1e-5 * (1 + ||V||_F)``. ``restarts`` counts all
    runs: run 0 starts from ``Polar(AB)``, runs 1.. from seeded random
    orthogonal matrices. ``gradient`` optionally replaces the
    finite-difference gradient with ``gradient(A, B, V, k) -> dL/dV``.
    """

    k: int
    eta: float = 0.1
    max_iters: int = 200
    rel_tol: float = 1e-9
    fd_step: Optional[float] = None
    seed: int = 0
    restarts: int = 1
    max_halvings: int = 30
    threads: int = 1
    gradient: Optional[Callable] = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.restarts < 1 or self.max_iters < 0:
            raise ValueError("restarts must be >= 1 and max_iters >= 0")


@dataclass
class DescentTrace:
    basis: np.ndarray
    loss_history: list
    restart: int
    ortho_errors: list


def _random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _descend(a, b, v0, cfg: SelectionConfig, restart: int) -> DescentTrace:
    k = cfg.k
    grad_fn = cfg.gradient
    v = polar_unitary(v0)
    loss = mk_loss(a, b, v, k)
    if not np.isfinite(loss):
        raise NonFiniteLoss(0, loss)
    history = [loss]
    ortho = [float(np.linalg.norm(v.T @ v - np.eye(len(v))))]
    for it in range(1, cfg.max_iters + 1):
        if grad_fn is None:
            h = cfg.fd_step if cfg.fd_step is not None else 1e-5 * (1.0 + np.linalg.norm(v))
            g = fd_gradient(a, b, v, k, h)
        else:
            g = np.asarray(grad_fn(a, b, v, k), dtype=float)
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(it, float("nan"))
        eta = cfg.eta
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            cand = polar_unitary(v - eta * g)
            new = mk_loss(a, b, cand, k)
            if not np.isfinite(new):
                raise NonFiniteLoss(it, new)
            if new <= loss:
                accepted = cand
                break
            eta *= 0.5
        if accepted is None:
            break
        v = accepted
        history.append(new)
        ortho.append(float(np.linalg.norm(v.T @ v - np.eye(len(v)))))
        done = abs(loss - new) <= cfg.rel_tol * (1.0 + loss)
        loss = new
        if done:
            break
    return DescentTrace(v, history, restart, ortho)


def select_subspace_trace(a, b, cfg: SelectionConfig) -> DescentTrace:
    """Like :func:`select_subspace` but returns the winning run's full trace."""
    a = as_spd(a).values
    b = as_spd(b).values
    d = a.shape[0]
    if b.shape[0] != d:
        raise DimensionMismatch(f"covariances have sizes {d} and {b.shape[0]}")
    if not 1 <= cfg.k <= d:
        raise DimensionMismatch(f"need 1 <= k <= {d}, got {cfg.k}")

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    starts = [a @ b] + [_random_orthogonal(d, np.random.default_rng(s)) for s in seeds[1:]]

    def run(r):
        return _descend(a, b, starts[r], cfg, r)

    if cfg.threads > 1 and cfg.restarts > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            traces = list(pool.map(run, range(cfg.restarts)))
    else:
        traces = [run(r) for r in range(cfg.restarts)]
    # min() keeps the first of equal losses, i.e. the lowest restart index
    return min(traces, key=lambda t: t.loss_history[-1])


def select_subspace(a, b, cfg: SelectionConfig) -> tuple[Subspace, list]:
    """Search for the k-dimensional subspace with the smallest MK cost.

    Starts from ``Polar(AB)`` and alternates a gradient step on V with a
    polar retraction onto the orthogonal group. Steps are halved (up to
    ``max_halvings`` times) until the retracted loss does not increase.

    Returns
    -------
    subspace : Subspace
        Span of the first ``k`` columns of the final V (the full V is kept as
        the subspace frame).
    loss_history : list of float
        Loss after each accepted retraction, starting with the initial loss.
    """
    trace = select_subspace_trace(a, b, cfg)
    return Subspace(trace.basis, cfg.k), trace.loss_history


# -- PCA prior --------------------------------------------------------------

def _canonical_eigvecs(w, q, rel_tol=1e-10):
    """Deterministic eigenvectors: descending eigenvalues, ties resolved by axis order.

    Inside a cluster of (numerically) equal eigenvalues the eigenspace basis
    is rebuilt by Gram-Schmidt on the projections of e_1, e_2, ... so the
    result does not depend on what ``eigh`` happened to return.
    """
    d = len(w)
    order = np.argsort(-w, kind="stable")
    w, q = w[order], q[:, order]
    scale = max(abs(w[0]), np.finfo(float).tiny)
    out = np.empty_like(q)
    i = 0
    while i < d:
        j = i + 1
        while j < d and abs(w[j] - w[i]) <= rel_tol * scale:
            j += 1
        block = q[:, i:j]
        if j - i > 1:
            proj = block @ block.T
            chosen = []
            for axis in range(d):
                vec = proj[:, axis].copy()
                for c in chosen:
                    vec -= (c @ vec) * c
                norm = np.linalg.norm(vec)
                if norm > 1e-8:
                    chosen.append(vec / norm)
                if len(chosen) == j - i:
                    break
            block = np.column_stack(chosen)
        out[:, i:j] = block
        i = j
    # sign: largest-magnitude entry positive (first such entry on ties)
    lead = np.argmax(np.abs(out), axis=0)
    signs = np.sign(out[lead, np.arange(d)])
    signs[signs == 0] = 1.0
    return w, out * signs


def pca_subspace(data, k: int) -> Subspace:
    """Subspace of the top-k principal directions.

    ``data`` is a covariance (:class:`SpdMatrix`), a :class:`DiscreteMeasure`,
    or an ``(n, d)`` array of samples.
    """
    if isinstance(data, SpdMatrix):
        cov = data.values
    else:
        meas = data if isinstance(data, DiscreteMeasure) else DiscreteMeasure(np.asarray(data, dtype=float))
        if meas.n < 2:
            raise DegenerateData("need at least two samples to estimate a covariance")
        cov = meas.cov()
    d = cov.shape[0]
    if not 1 <= k <= d:
        raise DimensionMismatch(f"need 1 <= k <= {d}, got {k}")
    if not np.any(np.abs(cov) > 0):
        raise DegenerateData("covariance is identically zero")
    w, q = np.linalg.eigh(0.5 * (cov + cov.T))
    _, q = _canonical_eigvecs(w, q)
    return Subspace(q, k)
