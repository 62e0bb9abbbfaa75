"""Nearest neighbours of a covariance under the MK cost through a context subspace."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch
from ..gauss_ot import as_gaussian, mk_cost
from ..measures import Gaussian
from ..psdlin import as_spd
from ..subspace_select import pca_subspace


def mk_knn(query, candidates, context, k_sub: int, k_nn: int) -> list[tuple[int, float]]:
    """The ``k_nn`` candidates closest to ``query``, as ``(index, cost)`` ascending.

    E is spanned by the top ``k_sub`` principal directions of ``context``.
    Only covariances enter the cost; means are ignored. Ties keep candidate
    order.
    """
    q = as_spd(query.cov if isinstance(query, Gaussian) else query)
    cands = [as_spd(c.cov if isinstance(c, Gaussian) else c) for c in candidates]
    ctx = as_spd(context.cov if isinstance(context, Gaussian) else context)
    if any(c.dim != q.dim for c in cands) or ctx.dim != q.dim:
        raise DimensionMismatch("query, candidates and context must share a dimension")
    if not 1 <= k_nn:
        raise ValueError("k_nn must be >= 1")
    sub = pca_subspace(ctx, k_sub)
    q = as_gaussian(q)
    costs = np.array([mk_cost(q, as_gaussian(c), sub) for c in cands])
    order = np.argsort(costs, kind="stable")[:k_nn]
    return [(int(i), float(costs[i])) for i in order]
