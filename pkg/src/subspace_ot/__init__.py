"""Transport plans and maps constrained to be optimal on a linear subspace."""

from .errors import *  # noqa: F401,F403
from .gauss_ot import (
    bures,
    interpolate,
    kr_distance,
    kr_map,
    mi_coupling,
    mi_cost,
    mi_cross_cov,
    mk_cost,
    mk_map,
    monge_map,
    transport_cost,
    wasserstein2_gaussian,
    weighted_cost,
    weighted_monge_map,
)
from .measures import DiscreteMeasure, Gaussian, GaussianCoupling, LinearTransport, Subspace, WeightedMetric
from .psdlin import SpdMatrix
from .subspace_select import SelectionConfig, mk_loss, pca_subspace, select_subspace


def __getattr__(name):
    # discrete_ot pulls in POT; import it only when asked for
    import importlib

    mod = importlib.import_module(".discrete_ot", __name__)
    if name in mod.__all__:
        return getattr(mod, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__version__ = "0.1.0"
