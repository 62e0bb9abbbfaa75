"""Command-line driver.

Every command prints (or writes to ``--out``) a JSON envelope::

    {"schema_version": 1, "command": ..., "status": "ok" | "error",
     "config": {...}, "timing": {"<stage>": seconds, ...},
     "payload": {...}, "error": null | {"type", "message", "operation", ...}}

Exit status is 0 on success and 1 whenever ``status`` is ``"error"``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io as sio
from .errors import ParseError, SubspaceOTError
from .measures import Subspace

SCHEMA_VERSION = 1
THREADS_ENV = "SUBSPACE_OT_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class _Run:
    """Collects timings and the payload of one command."""

    def __init__(self):
        self.timing = {}
        self.payload = {}
        self.operation = None

    @contextmanager
    def stage(self, name, operation=None):
        self.operation = operation or name
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timing[name] = self.timing.get(name, 0.0) + time.perf_counter() - t0


def _existing(path):
    if not Path(path).is_file():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return path


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env and env.strip().isdigit() else 1


def _gaussian(path, tol):
    return sio.read_gaussian(path) if tol is None else sio.read_gaussian(path, sym_tol=tol)


def _subspace(args, d, default_k=None) -> Subspace:
    if args.basis is not None:
        sub = sio.read_basis(args.basis)
        if sub.dim != d:
            raise SubspaceOTError(f"basis has dimension {sub.dim}, inputs have {d}")
        return sub
    if args.axes is not None:
        return Subspace.from_axes(d, args.axes)
    if default_k is not None:
        return Subspace.canonical(d, default_k)
    raise UsageError("a subspace is required: pass --axes or --basis")


def _pair(run, args):
    with run.stage("parse"):
        return _gaussian(args.source, args.tol), _gaussian(args.target, args.tol)


def _write_matrix_out(args, m):
    if getattr(args, "matrix_out", None):
        sio.write_matrix(args.matrix_out, m)


# -- commands ---------------------------------------------------------------

def cmd_bures(args, run):
    from .gauss_ot import bures

    mu, nu = _pair(run, args)
    with run.stage("compute", "bures"):
        sq = bures(mu.cov, nu.cov)
    dm = mu.mean - nu.mean
    run.payload = {"squared_distance": sq, "distance": math.sqrt(sq), "w2_squared": sq + float(dm @ dm)}


def _map_payload(run, args, t, cost):
    run.payload = {"map": t.matrix, "source_mean": t.source_mean, "target_mean": t.target_mean, "cost": cost}
    _write_matrix_out(args, t.matrix)


def cmd_monge(args, run):
    from .gauss_ot import monge_map, transport_cost

    mu, nu = _pair(run, args)
    with run.stage("compute", "monge_map"):
        t = monge_map(mu, nu)
        cost = transport_cost(t, mu.cov.values, nu.cov.values)
    _map_payload(run, args, t, cost)


def cmd_kr(args, run):
    from .gauss_ot import kr_map, transport_cost

    mu, nu = _pair(run, args)
    with run.stage("compute", "kr_map"):
        t = kr_map(mu, nu)
        cost = transport_cost(t, mu.cov.values, nu.cov.values)
    _map_payload(run, args, t, cost)


def cmd_mk(args, run):
    from .gauss_ot import mk_map, transport_cost

    mu, nu = _pair(run, args)
    sub = _subspace(args, mu.dim)
    with run.stage("compute", "mk_map"):
        t = mk_map(mu, nu, sub)
        cost = transport_cost(t, mu.cov.values, nu.cov.values)
    _map_payload(run, args, t, cost)
    run.payload["subspace"] = sub.basis


def cmd_mi(args, run):
    from .gauss_ot import mi_coupling

    mu, nu = _pair(run, args)
    sub = _subspace(args, mu.dim)
    with run.stage("compute", "mi_coupling"):
        cpl = mi_coupling(mu, nu, sub)
        cost = cpl.transport_cost()
    run.payload = {"cross_cov": cpl.cross, "sigma": cpl.sigma.values, "cost": cost, "subspace": sub.basis}
    _write_matrix_out(args, cpl.cross)


def cmd_select(args, run):
    from .subspace_select import SelectionConfig, select_subspace_trace

    mu, nu = _pair(run, args)
    cfg = SelectionConfig(
        k=args.k,
        eta=args.eta,
        max_iters=args.max_iters,
        rel_tol=args.rel_tol,
        seed=args.seed,
        restarts=args.restarts,
        threads=_threads(args),
    )
    with run.stage("compute", "select_subspace"):
        trace = select_subspace_trace(mu.cov, nu.cov, cfg)
    run.payload = {
        "basis": trace.basis[:, : args.k],
        "basis_full": trace.basis,
        "loss_history": trace.loss_history,
        "restart": trace.restart,
    }
    _write_matrix_out(args, trace.basis[:, : args.k])


def cmd_synthetic(args, run):
    from .pipelines.synthetic import SyntheticConfig, synthetic_noise_curves

    cfg = SyntheticConfig(
        d1=args.d1, d2=args.d2, eps_grid=tuple(args.eps), n_noise=args.n_noise, seed=args.seed, threads=_threads(args)
    )
    with run.stage("compute", "synthetic_noise_curves"):
        table = synthetic_noise_curves(cfg)
    run.payload = {"columns": list(table.columns), "rows": table.rows}
    if args.table:
        Path(args.table).write_text(table.to_csv(), encoding="utf-8")


def _labels(path):
    m = sio.read_matrix(path).ravel()
    if np.all(m == np.round(m)):
        return m.astype(np.int64)
    return m


def cmd_gmm_da(args, run):
    from .pipelines.gmm import LabeledDataset, fit_source_gmm, fit_target_gmm, gmm_da, make_da_blobs
    from .subspace_select import SelectionConfig, select_subspace

    with run.stage("parse"):
        if args.source_features:
            if not args.source_labels or not args.target_features:
                raise UsageError("--source-features needs --source-labels and --target-features")
            src = LabeledDataset(sio.read_matrix(args.source_features), _labels(args.source_labels))
            tgt = LabeledDataset(
                sio.read_matrix(args.target_features),
                _labels(args.target_labels) if args.target_labels else None,
            )
            sub = None
        else:
            src, tgt, sub = make_da_blobs(seed=args.seed)
    d = src.dim
    if args.axes is not None or args.basis is not None:
        sub = _subspace(args, d)
    with run.stage("fit", "fit_gmm"):
        sg = fit_source_gmm(src)
        n_comp = args.components or sg.n_components
        tg = fit_target_gmm(LabeledDataset(tgt.features), n_comp, args.seed)
    if sub is None:
        if args.k is None:
            raise UsageError("give --k (or --axes/--basis) to choose the subspace")
        with run.stage("select", "select_subspace"):
            sub, _ = select_subspace(
                np.cov(src.features, rowvar=False, bias=True),
                np.cov(tgt.features, rowvar=False, bias=True),
                SelectionConfig(k=args.k, seed=args.seed, threads=_threads(args)),
            )
    with run.stage("compute", "gmm_da"):
        report = gmm_da(sg, tg, sub, src, tgt)
    run.payload = {
        "k": sub.k,
        "subspace": sub.basis,
        "accuracy": report.accuracy,
        "plans": {name: r.plan.dense() for name, r in report.methods.items()},
        "predicted": {name: r.predicted for name, r in report.methods.items()},
    }


def cmd_color(args, run):
    from .pipelines.color import color_transfer

    with run.stage("parse"):
        src = sio.read_ppm(args.source_image).astype(float)
        tgt = sio.read_ppm(args.target_image).astype(float)
        for img in (src, tgt):
            if img.max(initial=0) > 255:
                img *= 255.0 / 65535.0
    with run.stage("compute", "color_transfer"):
        res = color_transfer(src, tgt, args.clusters, args.method, args.seed, n_proj=args.n_proj, bins=args.bins)
    run.timing.update({f"color_{k}": v for k, v in res.timings.items()})
    if args.image_out:
        with run.stage("write"):
            sio.write_ppm(args.image_out, res.image, binary=not args.ascii)
    run.payload = {
        "method": args.method,
        "clusters": args.clusters,
        "image": args.image_out,
        "max_displacement": float(np.abs(res.displacement).max()),
        "transport_seconds": res.timings["transport"],
    }


def cmd_knn(args, run):
    from .pipelines.knn import mk_knn

    with run.stage("parse"):
        query = _gaussian(args.query, args.tol)
        cands = [_gaussian(p, args.tol) for p in args.candidates]
        ctx = _gaussian(args.context, args.tol)
    with run.stage("compute", "mk_knn"):
        ranked = mk_knn(query.cov, [c.cov for c in cands], ctx.cov, args.k_sub, args.k_nn)
    run.payload = {
        "ranking": [{"id": i, "path": args.candidates[i], "cost": c} for i, c in ranked],
    }


def _limit_pair(run, args):
    from .pipelines.limits import diagonal_instance

    if args.source is None and args.target is None:
        return diagonal_instance()
    if args.source is None or args.target is None:
        raise UsageError("give both source and target, or neither for the diagonal instance")
    mu, nu = _pair(run, args)
    return mu, nu, _subspace(args, mu.dim)


def _table_csv(columns, rows):
    return ",".join(columns) + "\n" + sio.format_matrix(rows)


def cmd_mk_limit(args, run):
    from .pipelines.limits import mk_limit

    mu, nu, sub = _limit_pair(run, args)
    with run.stage("compute", "mk_limit"):
        rows = mk_limit(mu, nu, sub, args.eps)
    cols = ["eps", "frobenius_error"]
    run.payload = {"columns": cols, "rows": rows}
    if args.table:
        Path(args.table).write_text(_table_csv(cols, rows), encoding="utf-8")


def cmd_mi_limit(args, run):
    from .pipelines.limits import mi_limit

    mu, nu, sub = _limit_pair(run, args)
    with run.stage("compute", "mi_limit"):
        res = mi_limit(mu, nu, sub, args.n, range(args.seed, args.seed + args.seeds))
    err = res["errors"]
    rows = np.column_stack(
        [res["n"], res["median"], np.percentile(err, 25, axis=1), np.percentile(err, 75, axis=1)]
    )
    cols = ["n", "median_error", "p25_error", "p75_error"]
    run.payload = {"columns": cols, "rows": rows, "reference_norm": res["reference_norm"]}
    if args.table:
        Path(args.table).write_text(_table_csv(cols, rows), encoding="utf-8")


# -- parser -----------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", help="write the JSON envelope here instead of stdout")
    p.add_argument("--threads", type=int, default=None, help=f"worker cap (default ${THREADS_ENV} or 1)")
    p.add_argument("--tol", type=float, default=None, help="symmetry tolerance for input covariances (default 1e-8)")
    p.add_argument("--axes", type=_int_list, default=None, help="subspace as 0-based axes, e.g. 0,2")
    p.add_argument("--basis", type=_existing, default=None, help="subspace basis CSV (columns are vectors)")


def _pair_args(p, required=True):
    nargs = None if required else "?"
    p.add_argument("source", type=_existing, nargs=nargs, help="source Gaussian (JSON) or covariance (CSV)")
    p.add_argument("target", type=_existing, nargs=nargs, help="target Gaussian (JSON) or covariance (CSV)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="subspace-ot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, helptext in (
        ("bures", cmd_bures, "squared Bures distance between covariances"),
        ("monge", cmd_monge, "Monge map between Gaussians"),
        ("kr", cmd_kr, "Knothe-Rosenblatt map"),
        ("mk", cmd_mk, "Monge-Knothe map through a subspace"),
        ("mi", cmd_mi, "Monge-Independent coupling through a subspace"),
    ):
        p = sub.add_parser(name, help=helptext)
        _pair_args(p)
        _common(p)
        p.add_argument("--matrix-out", help="also write the map (or cross block) as CSV")
        p.set_defaults(func=fn)

    p = sub.add_parser("select", help="choose a k-dimensional subspace minimizing the MK cost")
    _pair_args(p)
    _common(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--rel-tol", type=float, default=1e-9)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--matrix-out", help="also write V_E as CSV")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("synthetic", help="MI/MK curves on noisy low-rank covariances")
    _common(p)
    p.add_argument("--d1", type=int, default=4)
    p.add_argument("--d2", type=int, default=8)
    p.add_argument("--eps", type=_float_list, default=[1e-3, 1e-2, 1e-1])
    p.add_argument("--n-noise", type=int, default=100)
    p.add_argument("--table", help="write the curve table as CSV")
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("gmm-da", help="GMM domain adaptation (generated blobs unless features are given)")
    _common(p)
    p.add_argument("--source-features", type=_existing)
    p.add_argument("--source-labels", type=_existing)
    p.add_argument("--target-features", type=_existing)
    p.add_argument("--target-labels", type=_existing)
    p.add_argument("--components", type=int, default=None, help="target components (default: source classes)")
    p.add_argument("--k", type=int, default=None, help="select a k-dim subspace when none is given")
    p.set_defaults(func=cmd_gmm_da)

    p = sub.add_parser("color", help="palette transfer between PPM images")
    p.add_argument("source_image", type=_existing)
    p.add_argument("target_image", type=_existing)
    _common(p)
    p.add_argument("--clusters", type=int, default=3000)
    p.add_argument("--method", choices=["full-OT", "gray-MK", "sliced"], default="gray-MK")
    p.add_argument("--n-proj", type=int, default=100)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--image-out", help="output PPM path")
    p.add_argument("--ascii", action="store_true", help="write P3 instead of P6")
    p.set_defaults(func=cmd_color)

    p = sub.add_parser("knn", help="MK nearest neighbours through a context's principal directions")
    p.add_argument("query", type=_existing)
    p.add_argument("context", type=_existing)
    p.add_argument("candidates", type=_existing, nargs="+")
    _common(p)
    p.add_argument("--k-sub", type=int, required=True)
    p.add_argument("--k-nn", type=int, default=5)
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("mk-limit", help="weighted-cost maps approaching the MK map")
    _pair_args(p, required=False)
    _common(p)
    p.add_argument("--eps", type=_float_list, default=[1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
    p.add_argument("--table", help="write the table as CSV")
    p.set_defaults(func=cmd_mk_limit)

    p = sub.add_parser("mi-limit", help="empirical lifted plans approaching the MI coupling")
    _pair_args(p, required=False)
    _common(p)
    p.add_argument("--n", type=_int_list, default=[100, 400, 1600, 6400])
    p.add_argument("--seeds", type=int, default=10, help="number of seeds, starting at --seed")
    p.add_argument("--table", help="write the table as CSV")
    p.set_defaults(func=cmd_mi_limit)
    return parser


def _config(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


def _check_finite(obj, where="payload"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise SubspaceOTError(f"non-finite number in {where}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, list):
        for v in obj:
            _check_finite(v, where)


def run_command(argv) -> tuple[dict, int]:
    """Parse ``argv`` and execute; returns (envelope, exit status)."""
    env = {"schema_version": SCHEMA_VERSION, "command": None, "status": "ok", "config": {}, "timing": {},
           "payload": {}, "error": None}
    run = _Run()
    try:
        args = build_parser().parse_args(argv)
        env["command"] = args.command
        env["config"] = _config(args)
        args.func(args, run)
        payload = sio.to_jsonable(run.payload)
        _check_finite(payload)
        env["payload"] = payload
    except (UsageError, SubspaceOTError, ValueError, ArithmeticError, OSError) as exc:
        env["status"] = "error"
        err = {"type": type(exc).__name__, "message": str(exc), "operation": run.operation}
        if isinstance(exc, ParseError):
            err.update(path=exc.path, line=exc.line, column=exc.column)
        env["error"] = err
    env["timing"] = run.timing
    env["config"] = sio.to_jsonable(env["config"])
    return env, 0 if env["status"] == "ok" else 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if any(a in ("-h", "--help") for a in argv) or not argv:
        try:
            build_parser().parse_args(argv or ["-h"])
        except SystemExit as exc:
            return int(exc.code or 0)
        except UsageError:
            pass
    env, status = run_command(argv)
    text = json.dumps(env, indent=2) + "\n"
    out = env["config"].get("out") if isinstance(env["config"], dict) else None
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if status:
        sys.stderr.write(f"error: {env['error']['message']}\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
