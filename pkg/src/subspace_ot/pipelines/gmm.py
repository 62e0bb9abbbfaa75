"""Gaussian-mixture domain adaptation with component-wise transport maps."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..discrete_ot import TransportPlan, barycentric_projection, ot_exact
from ..errors import DimensionMismatch, EmptyCluster, TooFewSamples, UnassignedComponent
from ..gauss_ot import mk_cost, mk_map, monge_map, wasserstein2_gaussian
from ..measures import DiscreteMeasure, Gaussian, Subspace
from ..psdlin import SpdMatrix
from ..subspace_select import project_gaussian

SHRINKAGE = 1e-3
# fallback scale, relative to the pooled per-axis variance, for components
# whose own covariance is (near) zero
SHRINKAGE_FLOOR = 1e-3
KMEANS_MAX_ITER = 300
KMEANS_RETRIES = 5


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.array(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] == 0:
            raise DimensionMismatch("features must be a non-empty (n, d) matrix")
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels).ravel()
            if y.shape[0] != x.shape[0]:
                raise DimensionMismatch(f"{x.shape[0]} rows but {y.shape[0]} labels")
            object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Gmm:
    """Mixture of Gaussians; ``labels[i]`` optionally tags component i with a class."""

    weights: np.ndarray
    components: tuple
    labels: Optional[tuple] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        comps = tuple(self.components)
        if w.shape[0] != len(comps) or not comps:
            raise DimensionMismatch("need one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if len({c.dim for c in comps}) != 1:
            raise DimensionMismatch("components live in different dimensions")
        if self.labels is not None and len(self.labels) != len(comps):
            raise DimensionMismatch("need one label per component")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def project(self, subspace: Subspace) -> Gmm:
        return Gmm(self.weights, tuple(project_gaussian(c, subspace) for c in self.components), self.labels)


def _shrunk_gaussian(x, shrinkage, scale):
    mean = x.mean(axis=0)
    c = x - mean
    cov = c.T @ c / x.shape[0]
    d = cov.shape[0]
    level = max(np.trace(cov) / d, SHRINKAGE_FLOOR * scale, np.finfo(float).tiny)
    cov = 0.5 * (cov + cov.T) + shrinkage * level * np.eye(d)
    return Gaussian(mean, SpdMatrix(cov))


def _pooled_scale(x):
    var = x.var(axis=0).mean()
    return var if var > 0 else 1.0


def fit_source_gmm(data: LabeledDataset, shrinkage: float = SHRINKAGE) -> Gmm:
    """One component per class: biased empirical covariance plus shrinkage.

    The covariance is ``S + shrinkage * max(tr(S)/d, floor) * I`` where
    ``floor`` is ``1e-3`` times the pooled per-axis variance. Components
    follow the sorted class ids; weights are class frequencies.
    """
    if data.labels is None:
        raise ValueError("source data must be labeled")
    classes, counts = np.unique(data.labels, return_counts=True)
    small = classes[counts < 2]
    if small.size:
        raise TooFewSamples(f"classes with fewer than 2 samples: {small.tolist()}")
    scale = _pooled_scale(data.features)
    comps = tuple(_shrunk_gaussian(data.features[data.labels == c], shrinkage, scale) for c in classes)
    return Gmm(counts / counts.sum(), comps, tuple(classes.tolist()))


def kmeans_labels(x, n_clusters: int, seed, max_iter: int = KMEANS_MAX_ITER, retries: int = KMEANS_RETRIES):
    """Seeded k-means++ clustering; returns (centers, labels).

    A run leaving a cluster empty is retried with the next seed, up to
    ``retries`` times.
    """
    from sklearn.cluster import KMeans
    from sklearn.exceptions import ConvergenceWarning

    x = np.asarray(x, dtype=float)
    if not 1 <= n_clusters <= x.shape[0]:
        raise ValueError(f"need 1 <= n_clusters <= {x.shape[0]}")
    for attempt in range(retries + 1):
        km = KMeans(n_clusters, init="k-means++", n_init=1, max_iter=max_iter, random_state=int(seed) + attempt)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            labels = km.fit_predict(x)
        if np.bincount(labels, minlength=n_clusters).min() > 0:
            return km.cluster_centers_, labels
    raise EmptyCluster(f"k-means left a cluster empty after {retries} retries")


def fit_target_gmm(data: LabeledDataset, n_components: int, seed=0, shrinkage: float = SHRINKAGE) -> Gmm:
    """k-means partition, then one shrunk empirical Gaussian per cluster.

    Singleton clusters get the floored covariance ``shrinkage * floor * I``.
    """
    x = data.features
    _, labels = kmeans_labels(x, n_components, seed)
    scale = _pooled_scale(x)
    comps = tuple(_shrunk_gaussian(x[labels == c], shrinkage, scale) for c in range(n_components))
    counts = np.bincount(labels, minlength=n_components)
    return Gmm(counts / counts.sum(), comps)


def _component_of(gmm: Gmm, labels):
    index = {lab: i for i, lab in enumerate(gmm.labels)}
    try:
        return np.array([index[lab] for lab in labels.tolist()], dtype=np.intp)
    except KeyError as exc:
        raise UnassignedComponent(f"source label {exc.args[0]!r} has no component") from exc


def one_nn(train_x, train_y, query_x) -> np.ndarray:
    from sklearn.neighbors import KNeighborsClassifier

    clf = KNeighborsClassifier(n_neighbors=1, algorithm="auto")
    clf.fit(train_x, train_y)
    return clf.predict(query_x)


@dataclass
class MethodResult:
    cost_matrix: np.ndarray
    plan: TransportPlan
    mapped: np.ndarray
    predicted: np.ndarray
    accuracy: Optional[float]


@dataclass
class DAReport:
    """Per-method results: ``"mk"``, ``"projected_bures"`` and ``"bures"``."""

    methods: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> dict:
        return {name: r.accuracy for name, r in self.methods.items()}


def _run_method(src, tgt, comp_idx, x_src, y_src, x_tgt, y_tgt, cost_fn, map_fn):
    n, m = src.n_components, tgt.n_components
    cost = np.array([[cost_fn(src.components[i], tgt.components[j]) for j in range(m)] for i in range(n)])
    plan, _ = ot_exact(
        DiscreteMeasure(np.zeros((n, 1)), src.weights),
        DiscreteMeasure(np.zeros((m, 1)), tgt.weights),
        cost,
    )
    g = plan.dense()
    maps = {(i, j): map_fn(src.components[i], tgt.components[j]) for i, j in zip(*np.nonzero(g > 0))}
    mapped = barycentric_projection(plan, maps)(x_src, comp_idx)
    pred = one_nn(mapped, y_src, x_tgt)
    acc = None if y_tgt is None else float(np.mean(pred == y_tgt))
    return MethodResult(cost, plan, mapped, pred, acc)


def gmm_da(
    source: Gmm,
    target: Gmm,
    subspace: Subspace,
    source_data: LabeledDataset,
    target_data: LabeledDataset,
    baselines: bool = True,
) -> DAReport:
    """Map labeled source samples onto the target and label targets by 1-NN.

    Component pairs are costed by the MK transport cost through ``subspace``
    (mean term included), coupled by exact discrete OT with the mixture
    weights as marginals, and source samples are moved by the plan's
    barycentric projection of the pairwise MK maps. The baselines repeat
    this with Bures maps between the projections on E (samples and
    targets projected too) and with full-space Bures maps.
    """
    if source.labels is None:
        raise ValueError("source mixture needs class labels")
    comp_idx = _component_of(source, source_data.labels)
    x_src, y_src = source_data.features, source_data.labels
    x_tgt, y_tgt = target_data.features, target_data.labels
    report = DAReport()
    report.methods["mk"] = _run_method(
        source, target, comp_idx, x_src, y_src, x_tgt, y_tgt,
        lambda a, b: mk_cost(a, b, subspace), lambda a, b: mk_map(a, b, subspace),
    )
    if baselines:
        report.methods["projected_bures"] = _run_method(
            source.project(subspace), target.project(subspace), comp_idx,
            subspace.project(x_src), y_src, subspace.project(x_tgt), y_tgt,
            wasserstein2_gaussian, monge_map,
        )
        report.methods["bures"] = _run_method(
            source, target, comp_idx, x_src, y_src, x_tgt, y_tgt, wasserstein2_gaussian, monge_map,
        )
    return report


def make_da_blobs(
    n_per_class: int = 100,
    d: int = 10,
    k: int = 2,
    separation: float = 6.0,
    noise_scale: float = 1.0,
    seed=0,
) -> tuple[LabeledDataset, LabeledDataset, Subspace]:
    """Three-class source/target pair whose class means differ only inside E.

    E is spanned by the first ``k`` axes. The target is the source rotated
    and stretched inside E and shifted, with fresh anisotropic noise on the
    complement. Returns (source, target, E).
    """
    if k < 2 or d <= k:
        raise ValueError("need 2 <= k < d")
    rng = np.random.default_rng(seed)
    angles = np.array([0.0, 2.0, 4.0]) * np.pi / 3
    centers = np.zeros((3, d))
    centers[:, 0] = separation * np.cos(angles)
    centers[:, 1] = separation * np.sin(angles)

    def domain(transform_e, shift, perp_scales):
        xs, ys = [], []
        for c in range(3):
            z = rng.standard_normal((n_per_class, d))
            z[:, k:] *= perp_scales
            x = centers[c] + z
            x[:, :k] = x[:, :k] @ transform_e.T
            xs.append(x + shift)
            ys.append(np.full(n_per_class, c))
        return LabeledDataset(np.vstack(xs), np.concatenate(ys))

    perp = d - k
    src = domain(np.eye(k), np.zeros(d), noise_scale * rng.uniform(0.5, 1.5, perp))
    theta = rng.uniform(-np.pi / 6, np.pi / 6)
    rot = np.eye(k)
    rot[:2, :2] = [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    stretch = np.diag(rng.uniform(0.8, 1.25, k))
    tgt = domain(rot @ stretch, rng.normal(0.0, 2.0, d), noise_scale * rng.uniform(0.5, 1.5, perp))
    return src, tgt, Subspace.canonical(d, k)
