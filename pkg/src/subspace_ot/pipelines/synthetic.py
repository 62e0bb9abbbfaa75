"""Noisy low-rank covariances: MI and MK costs along the first k axes."""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..gauss_ot import bures, mi_cost, mk_cost
from ..measures import Subspace

PERCENTILES = (10, 25, 75, 90)
STATISTICS = ("mi_minus_bures", "mk_minus_bures", "bures")


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the noise experiment.

    The signal covariances live on the first ``d1`` of ``d2`` axes. Each has
    eigenvalues drawn uniformly from ``signal_spectrum`` in a random
    orientation and is scaled to unit trace. Noise is ``eps * G G^T`` with
    ``G`` a ``d2 x d2`` standard Gaussian matrix (Wishart with identity
    scale, ``d2`` degrees of freedom). Draw ``r`` uses the same noise
    matrices at every ``eps``.
    """

    d1: int = 4
    d2: int = 8
    eps_grid: tuple = (1e-3, 1e-2, 1e-1)
    n_noise: int = 100
    seed: int = 0
    signal_spectrum: tuple = (0.5, 1.5)
    threads: int = 1

    def __post_init__(self):
        if not 1 <= self.d1 <= self.d2:
            raise ValueError("need 1 <= d1 <= d2")
        if any(e < 0 for e in self.eps_grid) or not self.eps_grid:
            raise ValueError("eps_grid must be a non-empty list of nonnegative levels")
        if self.n_noise < 1:
            raise ValueError("n_noise must be >= 1")
        lo, hi = self.signal_spectrum
        if not 0 < lo <= hi:
            raise ValueError("signal_spectrum must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class CurveTable:
    """Plot-ready table plus the raw per-draw values.

    ``raw[stat]`` has shape ``(len(eps_grid), n_noise, d2)``, indexed by
    noise level, draw and ``k - 1``.
    """

    columns: tuple
    rows: np.ndarray
    raw: dict

    def column(self, name) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    def select(self, **where) -> np.ndarray:
        mask = np.ones(len(self.rows), dtype=bool)
        for name, value in where.items():
            mask &= np.isclose(self.column(name), value, rtol=1e-12, atol=0)
        return self.rows[mask]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()


def _random_signal(rng, d1, spectrum):
    q, r = np.linalg.qr(rng.standard_normal((d1, d1)))
    q = q * np.sign(np.diag(r))
    a = (q * rng.uniform(*spectrum, size=d1)) @ q.T
    a = 0.5 * (a + a.T)
    return a / np.trace(a)


def signal_pair(cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    return _random_signal(rng, cfg.d1, cfg.signal_spectrum), _random_signal(rng, cfg.d1, cfg.signal_spectrum)


def _embed(a, d2):
    out = np.zeros((d2, d2))
    out[: a.shape[0], : a.shape[0]] = a
    return out


def _draw_costs(a, b, g1, g2, eps_grid, d2):
    subspaces = [Subspace.canonical(d2, k) for k in range(1, d2 + 1)]
    out = np.empty((len(eps_grid), 3, d2))
    for e, eps in enumerate(eps_grid):
        ae = a + eps * (g1 @ g1.T)
        be = b + eps * (g2 @ g2.T)
        bw = bures(ae, be)
        for k, sub in enumerate(subspaces):
            out[e, 0, k] = mi_cost(ae, be, sub) - bw
            out[e, 1, k] = mk_cost(ae, be, sub) - bw
            out[e, 2, k] = bw
    return out


def synthetic_noise_curves(cfg: SyntheticConfig) -> CurveTable:
    """MI - Bures, MK - Bures and Bures for E = first k axes, k = 1..d2.

    One row per ``(eps, k)`` holding the mean and the 10/25/75/90
    percentiles over noise draws of each statistic.
    """
    a, b = (_embed(m, cfg.d2) for m in signal_pair(cfg))
    seqs = np.random.SeedSequence(cfg.seed).spawn(1 + cfg.n_noise)[1:]

    def run(r):
        rng = np.random.default_rng(seqs[r])
        g1 = rng.standard_normal((cfg.d2, cfg.d2))
        g2 = rng.standard_normal((cfg.d2, cfg.d2))
        with warnings.catch_warnings():
            # singular blocks at eps = 0 are regularized on purpose
            warnings.simplefilter("ignore", RuntimeWarning)
            return _draw_costs(a, b, g1, g2, cfg.eps_grid, cfg.d2)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            draws = list(pool.map(run, range(cfg.n_noise)))
    else:
        draws = [run(r) for r in range(cfg.n_noise)]
    vals = np.stack(draws, axis=1)  # (eps, draw, stat, k)
    raw = {name: vals[:, :, s, :] for s, name in enumerate(STATISTICS)}

    columns = ["eps", "k"]
    for name in STATISTICS:
        columns += [f"{name}_mean"] + [f"{name}_p{p}" for p in PERCENTILES]
    rows = []
    for e, eps in enumerate(cfg.eps_grid):
        for k in range(cfg.d2):
            row = [eps, k + 1]
            for name in STATISTICS:
                x = raw[name][e, :, k]
                row += [x.mean(), *np.percentile(x, PERCENTILES)]
            rows.append(row)
    return CurveTable(tuple(columns), np.array(rows, dtype=float), raw)


def elbow_index(curve) -> int:
    """k (1-based) maximizing the discrete second difference ``f(k-1) - 2 f(k) + f(k+1)``."""
    f = np.asarray(curve, dtype=float)
    if f.size < 3:
        raise ValueError("need at least three points")
    second = f[:-2] - 2.0 * f[1:-1] + f[2:]
    return int(np.argmax(second)) + 2
