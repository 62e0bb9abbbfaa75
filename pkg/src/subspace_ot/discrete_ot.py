"""Discrete optimal transport and the discrete Monge-Knothe lifting.

The exact solver is POT's network simplex; its dual potentials are used to
certify every solution. One-dimensional problems are solved by sorting
(north-west corner rule on quantiles).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    DegenerateProjection,
    DimensionMismatch,
    EmptyInput,
    InfeasibleMarginals,
    SizeLimitExceeded,
    SolverFailed,
    UnassignedComponent,
)
from .gauss_ot import as_gaussian
from .measures import DiscreteMeasure, LinearTransport, Subspace

DEFAULT_SIZE_LIMIT = 4_000_000
MARGINAL_TOL = 1e-8

# POT probes every installed array backend on import; torch/tf/jax imports
# cost seconds and are never used here.
for _key in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_key}", "1")


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling between ``rows`` source and ``cols`` target atoms."""

    rows: int
    cols: int
    i: np.ndarray
    j: np.ndarray
    mass: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.intp)
        j = np.asarray(self.j, dtype=np.intp)
        mass = np.asarray(self.mass, dtype=float)
        if not (i.shape == j.shape == mass.shape):
            raise DimensionMismatch("plan index and mass arrays differ in length")
        if np.any(mass < 0):
            raise ValueError("plan masses must be nonnegative")
        if i.size and (i.min() < 0 or i.max() >= self.rows or j.min() < 0 or j.max() >= self.cols):
            raise DimensionMismatch("plan indices out of range")
        for name, arr in (("i", i), ("j", j), ("mass", mass)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_dense(cls, g, tol: float = 0.0, info=None) -> TransportPlan:
        g = np.asarray(g, dtype=float)
        i, j = np.nonzero(g > tol)
        return cls(g.shape[0], g.shape[1], i, j, g[i, j], info or {})

    @classmethod
    def from_entries(cls, rows, cols, i, j, mass, info=None) -> TransportPlan:
        """Build from possibly repeated ``(i, j)`` pairs, summing their masses."""
        i = np.asarray(i, dtype=np.intp)
        j = np.asarray(j, dtype=np.intp)
        mass = np.asarray(mass, dtype=float)
        if np.any(mass < 0):
            raise ValueError("plan masses must be nonnegative")
        keep = mass > 0
        key, inv = np.unique(i[keep] * cols + j[keep], return_inverse=True)
        total = np.bincount(inv, weights=mass[keep], minlength=key.size)
        return cls(rows, cols, key // cols, key % cols, total, info or {})

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.i.tolist(), self.j.tolist(), self.mass.tolist()))

    @property
    def support_size(self) -> int:
        return int(self.mass.size)

    def dense(self) -> np.ndarray:
        g = np.zeros((self.rows, self.cols))
        np.add.at(g, (self.i, self.j), self.mass)
        return g

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.i, weights=self.mass, minlength=self.rows)

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.j, weights=self.mass, minlength=self.cols)

    def cost(self, x, y) -> float:
        """Quadratic cost ``sum mass * ||x_i - y_j||^2`` for point arrays x, y."""
        x = np.asarray(x, dtype=float).reshape(self.rows, -1)
        y = np.asarray(y, dtype=float).reshape(self.cols, -1)
        diff = x[self.i] - y[self.j]
        return float(self.mass @ np.einsum("ij,ij->i", diff, diff))

    def barycentric_targets(self, y) -> np.ndarray:
        """Plan-weighted mean target of each source atom (rows without mass map to NaN)."""
        y = np.asarray(y, dtype=float).reshape(self.cols, -1)
        out = np.zeros((self.rows, y.shape[1]))
        np.add.at(out, self.i, self.mass[:, None] * y[self.j])
        rs = self.row_sums()
        with np.errstate(invalid="ignore", divide="ignore"):
            return out / rs[:, None]


def _as_measure(x, w=None) -> DiscreteMeasure:
    if isinstance(x, DiscreteMeasure):
        return x
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise EmptyInput("empty input")
    if w is not None:
        w = np.asarray(w, dtype=float)
        w = w / w.sum()
    return DiscreteMeasure(x, w)


def _sq_dists(x, y):
    xx = np.einsum("ij,ij->i", x, x)
    yy = np.einsum("ij,ij->i", y, y)
    return np.maximum(xx[:, None] + yy[None, :] - 2.0 * x @ y.T, 0.0)


# -- one dimension ----------------------------------------------------------

def _north_west(ca, cb):
    """Merge two cumulative mass sequences (both ending at 1) into plan segments."""
    ends = np.unique(np.concatenate([ca, cb]))
    mass = np.diff(np.concatenate([[0.0], ends]))
    i = np.minimum(np.searchsorted(ca, ends, side="left"), ca.size - 1)
    j = np.minimum(np.searchsorted(cb, ends, side="left"), cb.size - 1)
    keep = mass > 0
    return i[keep], j[keep], mass[keep]


def ot_1d(x, y, wx=None, wy=None) -> tuple[TransportPlan, float]:
    """Optimal plan between weighted point sets on the line (quadratic cost).

    Points are stably sorted by value (ties by original index) and matched
    quantile by quantile.
    """
    x = np.asarray(x.points if isinstance(x, DiscreteMeasure) else x, dtype=float).ravel()
    y = np.asarray(y.points if isinstance(y, DiscreteMeasure) else y, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise EmptyInput("ot_1d needs non-empty inputs")
    n, m = x.size, y.size
    wx = np.full(n, 1.0 / n) if wx is None else np.asarray(wx, dtype=float).ravel()
    wy = np.full(m, 1.0 / m) if wy is None else np.asarray(wy, dtype=float).ravel()
    if wx.size != n or wy.size != m:
        raise DimensionMismatch("weights and points differ in length")
    if abs(wx.sum() - 1.0) > 1e-10 or abs(wy.sum() - 1.0) > 1e-10 or (wx < 0).any() or (wy < 0).any():
        raise InfeasibleMarginals("weights must be nonnegative and sum to 1")
    ox = np.argsort(x, kind="stable")
    oy = np.argsort(y, kind="stable")
    if n == m and np.all(wx == wx[0]) and np.all(wy == wx[0]):
        i, j, mass = ox, oy, np.full(n, 1.0 / n)
    else:
        ca = np.cumsum(wx[ox])
        cb = np.cumsum(wy[oy])
        ca /= ca[-1]
        cb /= cb[-1]
        si, sj, mass = _north_west(ca, cb)
        i, j = ox[si], oy[sj]
    plan = TransportPlan(n, m, i, j, mass)
    return plan, float(mass @ (x[i] - y[j]) ** 2)


# -- exact solver -----------------------------------------------------------

def ot_exact(
    mu,
    nu,
    cost_matrix=None,
    size_limit: int = DEFAULT_SIZE_LIMIT,
    method: str = "simplex",
    certify: bool = True,
) -> tuple[TransportPlan, float]:
    """Exact minimizer of ``<P, C>`` over couplings of ``mu`` and ``nu``.

    ``cost_matrix`` defaults to squared Euclidean distances.
    ``method="simplex"`` runs the network simplex and checks the returned
    dual potentials (feasibility and duality gap, stored in ``plan.info``).
    ``method="assignment"`` solves uniform equal-size instances as a linear
    assignment problem.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    n, m = mu.n, nu.n
    if n * m > size_limit:
        raise SizeLimitExceeded(f"{n} x {m} problem exceeds the limit of {size_limit} variables")
    if cost_matrix is None:
        if mu.dim != nu.dim:
            raise DimensionMismatch("points live in different dimensions")
        c = _sq_dists(mu.points, nu.points)
    else:
        c = np.asarray(cost_matrix, dtype=float)
        if c.shape != (n, m):
            raise DimensionMismatch(f"cost matrix has shape {c.shape}, expected {(n, m)}")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost matrix has non-finite entries")
    a, b = mu.weights, nu.weights
    if abs(a.sum() - b.sum()) > MARGINAL_TOL:
        raise InfeasibleMarginals("source and target masses differ")

    if method == "assignment":
        if n != m or not (np.allclose(a, 1.0 / n) and np.allclose(b, 1.0 / m)):
            raise ValueError("assignment method needs uniform weights and equal sizes")
        rows, cols = linear_sum_assignment(c)
        plan = TransportPlan(n, m, rows, cols, np.full(n, 1.0 / n), {"method": "assignment"})
        return plan, float(c[rows, cols].sum() / n)
    if method != "simplex":
        raise ValueError(f"unknown method {method!r}")

    if n == 1 or m == 1:
        # the only coupling; duals follow directly
        g = np.outer(a, b)
        if n == 1:
            u, v = np.zeros(1), c[0].copy()
        else:
            u, v = c[:, 0].copy(), np.zeros(1)
        info = {"method": "simplex", "u": u, "v": v}
    else:
        import ot

        g, log = ot.emd(a, b, c, numItermax=max(100_000, 50 * (n + m) ** 2), log=True)
        if log.get("warning"):
            raise SolverFailed(f"network simplex did not converge: {log['warning']}")
        info = {"method": "simplex", "u": np.asarray(log["u"]), "v": np.asarray(log["v"])}
    cost = float(np.sum(g * c))
    if certify:
        u, v = info["u"], info["v"]
        slack = c - u[:, None] - v[None, :]
        scale = 1.0 + np.abs(c).max()
        info["dual_infeasibility"] = float(max(-slack.min(), 0.0))
        info["dual_gap"] = float(abs(cost - (a @ u + b @ v)))
        info["slackness"] = float(np.sum(g * np.abs(slack)))
        if info["dual_infeasibility"] > 1e-8 * scale or info["dual_gap"] > 1e-6 * (1.0 + abs(cost)):
            raise SolverFailed(f"solution not certified optimal: {info}")
    plan = TransportPlan.from_dense(g, info=info)
    return plan, cost


# -- sliced -----------------------------------------------------------------

def _directions(d, n_proj, seed):
    rng = np.random.default_rng(seed)
    th = rng.standard_normal((n_proj, d))
    return th / np.linalg.norm(th, axis=1, keepdims=True)


def sliced_w2(mu, nu, n_proj: int = 100, seed=0) -> float:
    """Mean squared 1D OT cost over ``n_proj`` random unit directions."""
    if n_proj < 1:
        raise ValueError("n_proj must be >= 1")
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim != nu.dim:
        raise DimensionMismatch("points live in different dimensions")
    costs = [
        ot_1d(mu.points @ th, nu.points @ th, mu.weights, nu.weights)[1]
        for th in _directions(mu.dim, n_proj, seed)
    ]
    return float(math.fsum(costs) / n_proj)


def sliced_plan(mu, nu, n_proj: int = 100, seed=0) -> TransportPlan:
    """Average of the 1D optimal plans over random directions (a coupling, not a map)."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    parts = [
        ot_1d(mu.points @ th, nu.points @ th, mu.weights, nu.weights)[0]
        for th in _directions(mu.dim, n_proj, seed)
    ]
    i = np.concatenate([p.i for p in parts])
    j = np.concatenate([p.j for p in parts])
    mass = np.concatenate([p.mass for p in parts]) / n_proj
    return TransportPlan.from_entries(mu.n, nu.n, i, j, mass, {"n_proj": n_proj})


# -- discrete Monge-Knothe --------------------------------------------------

@dataclass(frozen=True)
class FiberPartition:
    """Equal-mass bins of the E-marginal plan and the atoms each bin touches.

    ``mass_edges`` are cumulative-mass boundaries; ``source_range`` and
    ``target_range`` give the first E-coordinate span covered by each bin.
    """

    mass_edges: np.ndarray
    source_range: np.ndarray
    target_range: np.ndarray
    source_index: list
    target_index: list


@dataclass(frozen=True)
class DiscreteMKResult:
    plan: TransportPlan
    cost: float
    marginal_plan: TransportPlan
    partition: FiberPartition


def _bin_segments(cum_end, mass, bins):
    """Split plan entries (in order, with cumulative end masses) at ``q / bins``."""
    total = cum_end[-1]
    edges = total * np.arange(1, bins) / bins
    ends = np.unique(np.concatenate([cum_end, edges]))
    seg_mass = np.diff(np.concatenate([[0.0], ends]))
    entry = np.minimum(np.searchsorted(cum_end, ends, side="left"), cum_end.size - 1)
    mid = ends - 0.5 * seg_mass
    bin_id = np.minimum(np.searchsorted(edges, mid, side="right"), bins - 1)
    keep = seg_mass > 0
    return entry[keep], bin_id[keep], seg_mass[keep], np.concatenate([[0.0], edges, [total]])


def discrete_mk_details(
    mu,
    nu,
    subspace: Subspace,
    bins: int | None = None,
    fiber_cost: str = "complement",
    size_limit: int = DEFAULT_SIZE_LIMIT,
    threads: int = 1,
) -> DiscreteMKResult:
    """Discrete MK plan: optimal matching on E, then OT inside matched fibers.

    The optimal plan between the E-projections (sorting when ``k = 1``) is
    cut into ``bins`` consecutive groups of equal mass along the first
    E-coordinate, splitting entries at bin boundaries. Within each group
    the source and target atoms are recoupled by exact OT on their
    E-perp coordinates (``fiber_cost="complement"``) or on full
    coordinates (``fiber_cost="full"``). The reported cost is the
    full-space quadratic cost of the final plan.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if not (mu.dim == nu.dim == subspace.dim):
        raise DimensionMismatch("measures and subspace dimensions differ")
    if fiber_cost not in ("complement", "full"):
        raise ValueError("fiber_cost must be 'complement' or 'full'")
    bins = math.ceil(math.sqrt(mu.n)) if bins is None else int(bins)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    x_e, y_e = subspace.project(mu.points), subspace.project(nu.points)
    if subspace.k == 1:
        marginal, _ = ot_1d(x_e[:, 0], y_e[:, 0], mu.weights, nu.weights)
    else:
        marginal, _ = ot_exact(DiscreteMeasure(x_e, mu.weights), DiscreteMeasure(y_e, nu.weights), size_limit=size_limit)

    order = np.lexsort((marginal.j, marginal.i, y_e[marginal.j, 0], x_e[marginal.i, 0]))
    mi, mj, mm = marginal.i[order], marginal.j[order], marginal.mass[order]
    entry, bin_id, seg_mass, mass_edges = _bin_segments(np.cumsum(mm), mm, bins)
    seg_i, seg_j = mi[entry], mj[entry]

    if subspace.is_full:
        fib_x = fib_y = None
    elif fiber_cost == "complement":
        fib_x, fib_y = mu.points @ subspace.complement, nu.points @ subspace.complement
    else:
        fib_x, fib_y = mu.points, nu.points

    def couple(q):
        sel = bin_id == q
        if not sel.any():
            return None
        src, src_inv = np.unique(seg_i[sel], return_inverse=True)
        tgt, tgt_inv = np.unique(seg_j[sel], return_inverse=True)
        wa = np.bincount(src_inv, weights=seg_mass[sel])
        wb = np.bincount(tgt_inv, weights=seg_mass[sel])
        total = wa.sum()
        if fib_x is None:
            return seg_i[sel], seg_j[sel], seg_mass[sel], src, tgt
        if src.size * tgt.size > size_limit:
            raise SizeLimitExceeded(f"fiber {q} has a {src.size} x {tgt.size} problem")
        wb = wb * (total / wb.sum())
        p, _ = ot_exact(
            DiscreteMeasure(fib_x[src], wa / total),
            DiscreteMeasure(fib_y[tgt], wb / total),
            size_limit=size_limit,
        )
        return src[p.i], tgt[p.j], p.mass * total, src, tgt

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(couple, range(bins)))
    else:
        parts = [couple(q) for q in range(bins)]
    parts = [p for p in parts if p is not None]

    plan = TransportPlan.from_entries(
        mu.n,
        nu.n,
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        {"bins": bins, "fiber_cost": fiber_cost},
    )

    def coord_range(idx, pts):
        return (pts[idx, 0].min(), pts[idx, 0].max())

    partition = FiberPartition(
        mass_edges=mass_edges,
        source_range=np.array([coord_range(p[3], x_e) for p in parts]),
        target_range=np.array([coord_range(p[4], y_e) for p in parts]),
        source_index=[p[3] for p in parts],
        target_index=[p[4] for p in parts],
    )
    return DiscreteMKResult(plan, plan.cost(mu.points, nu.points), marginal, partition)


def discrete_mk(mu, nu, subspace: Subspace, bins: int | None = None, **kwargs) -> tuple[TransportPlan, float]:
    res = discrete_mk_details(mu, nu, subspace, bins, **kwargs)
    return res.plan, res.cost


def project_plan(plan: TransportPlan, bins_source, bins_target, n_bins: int) -> np.ndarray:
    """Aggregate plan mass by (source group, target group)."""
    out = np.zeros((n_bins, n_bins))
    np.add.at(out, (np.asarray(bins_source)[plan.i], np.asarray(bins_target)[plan.j]), plan.mass)
    return out


# -- barycentric projection -------------------------------------------------

class BarycentricMap:
    """Evaluates ``x -> sum_j (P_ij / sum_j' P_ij') T_ij(x)`` for x in component i.

    Rows of the plan with no mass map points to themselves; they are listed
    in ``zero_mass_rows``.
    """

    def __init__(self, plan, maps):
        g = plan.dense() if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
        self.plan = g
        rs = g.sum(axis=1)
        self.zero_mass_rows = np.flatnonzero(rs <= 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.weights = np.where(rs[:, None] > 0, g / rs[:, None], 0.0)
        self._maps = {}
        for i, j in zip(*np.nonzero(self.weights > 0)):
            try:
                t = maps[(i, j)] if isinstance(maps, Mapping) else maps[i][j]
            except (KeyError, IndexError, TypeError):
                t = None
            if t is None:
                raise UnassignedComponent(f"no map for component pair ({i}, {j}) carrying mass")
            self._maps[(int(i), int(j))] = t
        self._affine = {}
        if all(isinstance(t, LinearTransport) for t in self._maps.values()):
            for i in range(g.shape[0]):
                pairs = [(j, w) for j, w in enumerate(self.weights[i]) if w > 0]
                if not pairs:
                    continue
                mat = sum(w * self._maps[(i, j)].matrix for j, w in pairs)
                off = sum(
                    w * (self._maps[(i, j)].target_mean - self._maps[(i, j)].matrix @ self._maps[(i, j)].source_mean)
                    for j, w in pairs
                )
                self._affine[i] = (mat, off)

    def __call__(self, x, labels) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        labels = np.broadcast_to(np.asarray(labels), (x.shape[0],))
        out = x.copy()
        n_rows = self.plan.shape[0]
        for i in np.unique(labels):
            if not 0 <= int(i) < n_rows or i != int(i):
                raise UnassignedComponent(f"label {i!r} is not a source component")
            i = int(i)
            sel = labels == i
            if i in self._affine:
                mat, off = self._affine[i]
                out[sel] = x[sel] @ mat.T + off
            elif self.weights[i].sum() > 0:
                out[sel] = sum(w * np.asarray(self._maps[(i, j)](x[sel])) for j, w in enumerate(self.weights[i]) if w > 0)
        return out


def barycentric_projection(plan, maps) -> BarycentricMap:
    return BarycentricMap(plan, maps)


# -- empirical Monge-Independent estimator ----------------------------------

def lifted_matching(x, y, subspace: Subspace) -> np.ndarray:
    """Permutation ``s`` such that ``x[i] -> y[s[i]]`` is optimal between the E-projections."""
    x_e, y_e = subspace.project(x), subspace.project(y)
    n = x_e.shape[0]
    if y_e.shape[0] != n:
        raise DimensionMismatch("lifted matching needs equal sample counts")
    if subspace.k == 1:
        for p in (x_e[:, 0], y_e[:, 0]):
            if np.unique(p).size < n:
                raise DegenerateProjection("projected points collide")
        s = np.empty(n, dtype=np.intp)
        s[np.argsort(x_e[:, 0], kind="stable")] = np.argsort(y_e[:, 0], kind="stable")
        return s
    for p in (x_e, y_e):
        if np.unique(p, axis=0).shape[0] < n:
            raise DegenerateProjection("projected points collide")
    rows, cols = linear_sum_assignment(_sq_dists(x_e, y_e))
    s = np.empty(n, dtype=np.intp)
    s[rows] = cols
    return s


def empirical_mi_cross_cov(mu, nu, subspace: Subspace, n: int, seed=0) -> np.ndarray:
    """Cross-covariance of the lifted E-optimal matching between n samples of each Gaussian."""
    mu, nu = as_gaussian(mu), as_gaussian(nu)
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    x = mu.sample(n, rng)
    y = nu.sample(n, rng)
    s = lifted_matching(x, y, subspace)
    return (x - mu.mean).T @ (y[s] - nu.mean) / n


__all__ = [
    "TransportPlan",
    "DiscreteMeasure",
    "FiberPartition",
    "DiscreteMKResult",
    "SolverFailed",
    "ot_1d",
    "ot_exact",
    "sliced_w2",
    "sliced_plan",
    "discrete_mk",
    "discrete_mk_details",
    "project_plan",
    "BarycentricMap",
    "barycentric_projection",
    "lifted_matching",
    "empirical_mi_cross_cov",
]
