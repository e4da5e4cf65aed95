"""
Command-line front end.

Subcommands ``changepoints``, ``graph``, ``mcdof`` and ``replay``.  Every run
writes ``manifest.json`` next to its outputs; ``sparsecp replay`` reruns a
manifest into a fresh directory and compares file hashes.

Exit codes: 0 success, 1 replay mismatch, 2 usage or input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .auht import ContrastSpec, auht_selector, changepoint_dof, forward, select_changepoints
from .criteria import DofTable, ReplicateError, mc_dof, threshold_selector
from .graph import (DofConfig, NotAscentError, SampleCov, constrained_ml, nodewise_fit)
from .lasso import SingularDesignError, lasso_selector, standardize_columns
from .simulate import (BlocksSpec, GeoGraphSpec, blocks_poisson, edges_of,
                       evaluate_changepoints, evaluate_edges, geo_graph, oracle_pe_curve,
                       true_pe_curve)
from .treeselect import CycleError, Forest, tree_selector

log = logging.getLogger("sparsecp")

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
NUMERIC_ERRORS = (np.linalg.LinAlgError, FloatingPointError, ReplicateError, NotAscentError,
                  SingularDesignError, ArithmeticError)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# small I/O helpers; floats are written with repr so reruns are byte-identical


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) else x
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_matrix(path):
    """Numeric CSV, optional header row; returns a 2-d float array."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    text = p.read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"input file is empty: {path}")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise UsageError(f"non-numeric entry in {path}: {exc}") from None
    if data.ndim != 2 or data.size == 0:
        raise UsageError(f"ragged or empty table in {path}")
    return data


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get("SPARSECP_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"SPARSECP_SEED must be an integer, got {env!r}") from None


# ---------------------------------------------------------------------------
# changepoints


def _one_changepoint_run(y, mu, truth, args, dof, outdir):
    res = select_changepoints(y, ContrastSpec(args.q), dof, kappa_max=args.kappa_max,
                              reps=args.reps, seed=args.seed, mc_mode=args.mc_mode)
    header = ["kappa", "Lambda", "GCV", "naiveCp"]
    rows = [list(r) for r in res.curve_table()]
    if mu is not None:
        # truth in the same standardised coefficient domain
        s00, d = forward(res.tree, mu)
        v = np.concatenate([[s00], d]) / np.sqrt(res.variances.all)
        kmax = len(res.path.selections) - 1
        tpe = true_pe_curve(v, res.std_coefficients, res.path.selections, len(y))
        ope, _, _ = oracle_pe_curve(v, res.tree.forest, kmax, 1.0, len(y))
        header += ["truePE", "oraclePE"]
        rows = [r + [tpe[r[0]], ope[r[0]]] for r in rows]
    write_csv(outdir / "curve.csv", header, rows)
    write_json(outdir / "changepoints.json", {
        "kappa_star": res.kappa_star,
        "kappa_naive": res.kappa_naive,
        "changepoints": res.changepoints,
        "mu_hat": res.mu_hat,
    })
    recon = [[i, y[i], res.mu_hat[i]] + ([mu[i]] if mu is not None else []) for i in range(len(y))]
    write_csv(outdir / "reconstruction.csv",
              ["index", "y", "mu_hat"] + (["mu_true"] if mu is not None else []), recon)
    out = {"seed": args.seed, "kappa_star": res.kappa_star, "kappa_naive": res.kappa_naive,
           "n_changepoints": len(res.changepoints)}
    if truth is not None:
        sc = evaluate_changepoints(res.changepoints, truth, args.tol)
        out.update(tp=sc.tp, fp=sc.fp, fn=sc.fn)
    return out


def cmd_changepoints(args, outdir):
    if (args.input is None) == (args.simulate is None):
        raise UsageError("give exactly one of --input and --simulate blocks")
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    if args.input is not None:
        data = read_matrix(args.input)
        if data.shape[1] != 1 and data.shape[0] != 1:
            raise UsageError("change-point input must be a single column of counts")
        y = data.ravel()
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise UsageError("change-point input must hold nonnegative integer counts")
        if args.runs != 1:
            raise UsageError("--runs applies to simulated data only")
        datasets = [(y, None, None, args.seed)]
    else:
        spec = BlocksSpec(n=args.n)
        datasets = []
        for r in range(args.runs):
            mu, y, cps = blocks_poisson(spec, args.seed + r)
            datasets.append((y.astype(float), mu, cps, args.seed + r))
    n = len(datasets[0][0])
    kmax = min(args.kappa_max, n)
    dof = None
    if args.mc_mode == "adaptive":
        dof = changepoint_dof(n, ContrastSpec(args.q), kmax, args.reps, args.seed)
        dof.to_csv(outdir / "dof.csv")

    def run(item):
        r, (y, mu, cps, s) = item
        sub = outdir if len(datasets) == 1 else outdir / f"run_{r:03d}"
        sub.mkdir(parents=True, exist_ok=True)
        out = _one_changepoint_run(y, mu, cps, args, dof, sub)
        out["data_seed"] = s
        return out

    items = list(enumerate(datasets))
    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as pool:
            summaries = list(pool.map(run, items))
    else:
        summaries = [run(it) for it in items]

    if len(datasets) > 1:
        keys = ["data_seed", "kappa_star", "kappa_naive", "n_changepoints", "tp", "fp", "fn"]
        write_csv(outdir / "runs.csv", keys, [[s[k] for k in keys] for s in summaries])
        # Table-1 analog: rows = missed change points, columns = false positives
        hist = np.zeros((3, 6), dtype=int)
        for s in summaries:
            hist[min(s["fn"], 2), min(s["fp"], 5)] += 1
        rows = [[lab] + (100.0 * hist[i] / len(summaries)).tolist()
                for i, lab in enumerate(["0", "1", ">=2"])]
        write_csv(outdir / "table1.csv",
                  ["missed", "fp0", "fp1", "fp2", "fp3", "fp4", "fp>=5"], rows)
        write_json(outdir / "summary.json", {"runs": summaries})
    for s in summaries:
        print(f"seed {s['data_seed']}: kappa*={s['kappa_star']} naive={s['kappa_naive']} "
              f"changepoints={s['n_changepoints']}"
              + (f" tp={s['tp']} fp={s['fp']} fn={s['fn']}" if "tp" in s else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# graph


def filter_variance_quantile(X, q):
    """Keep the ``ceil(q m)`` columns of smallest variance (stable order)."""
    if not 0 < q <= 1:
        raise UsageError("--filter-variance-quantile must lie in (0, 1]")
    m = X.shape[1]
    keep = math.ceil(q * m - 1e-9)
    order = np.argsort(X.var(axis=0), kind="stable")[:keep]
    return np.sort(order)


def studentize(X):
    sd = X.std(axis=0)
    if np.any(sd == 0):
        raise UsageError("constant column after filtering; cannot studentize")
    return (X - X.mean(axis=0)) / sd


def _graph_estimate(X, args, outdir, tag, K_true=None):
    fit = nodewise_fit(X, DofConfig(args.dof_nodes, args.dof_reps, args.seed),
                       sigma_mode=args.sigma_mode, kappa_max=args.kappa_max, n_jobs=args.jobs)
    sel = fit.select(args.criterion, args.max_degree)
    cov = SampleCov.from_data(X / np.sqrt(np.mean(X * X, axis=0)))
    est = constrained_ml(cov, sel, tol=args.tol, max_iter=args.max_iter)
    spd = bool(np.linalg.eigvalsh(est.K)[0] > 0)
    write_csv(outdir / f"edges{tag}.csv", ["i", "j", "K_ij"], est.edge_list())
    m = X.shape[1]
    iu = np.triu_indices(m)
    nz = est.K[iu] != 0
    write_csv(outdir / f"precision{tag}.csv", ["i", "j", "value"],
              zip(iu[0][nz], iu[1][nz], est.K[iu][nz]))
    fit.dof.to_csv(outdir / f"dof{tag}.csv")
    summary = {"m": m, "n": X.shape[0], "n_edges": len(sel), "loglik": est.loglik,
               "iterations": est.iterations, "converged": est.converged, "spd": spd,
               "criterion": args.criterion}
    write_json(outdir / f"summary{tag}.json", summary)
    if K_true is not None:
        score = evaluate_edges(sel, edges_of(K_true), m)
        write_json(outdir / f"evaluation{tag}.json", score.as_dict())
        summary["f1"] = score.f1

    # null reference: independent normals with the observed variances, naive Cp
    rng = np.random.default_rng([args.seed, 7])
    Xn = rng.standard_normal(X.shape) * np.sqrt(np.mean(X * X, axis=0))
    kmax = fit.kappa_max
    nfit = nodewise_fit(Xn, sigma_mode=args.sigma_mode, kappa_max=kmax,
                        dof=DofTable.naive(kmax, X.shape[0]), n_jobs=args.jobs)
    nsel = nfit.select("naive", args.max_degree)
    ncov = SampleCov.from_data(Xn / np.sqrt(np.mean(Xn * Xn, axis=0)))
    nest = constrained_ml(ncov, nsel, tol=args.tol, max_iter=args.max_iter)
    a = sorted((abs(v) for _, _, v in est.edge_list()), reverse=True)
    b = sorted((abs(v) for _, _, v in nest.edge_list()), reverse=True)
    L = max(len(a), len(b))
    write_csv(outdir / f"sorted_magnitudes{tag}.csv", ["rank", "selected", "null_naive"],
              [[r + 1, a[r] if r < len(a) else float("nan"), b[r] if r < len(b) else float("nan")]
               for r in range(L)])
    return summary


def cmd_graph(args, outdir):
    if (args.input is None) == (args.simulate is None):
        raise UsageError("give exactly one of --input and --simulate geo")
    K_true = None
    if args.input is not None:
        X = read_matrix(args.input)
        groups = None
        if args.populations is not None:
            lab = read_labels(args.populations)
            if len(lab) != X.shape[0]:
                raise UsageError("--populations must give one label per data row")
            groups = lab
        if args.filter_variance_quantile is not None:
            keep = filter_variance_quantile(X, args.filter_variance_quantile)
            X = X[:, keep]
            write_csv(outdir / "kept_columns.csv", ["column"], [[int(k)] for k in keep])
        if groups is None:
            blocks = [("", studentize(X))] if args.populations is not None or \
                args.filter_variance_quantile is not None else [("", X)]
        else:
            blocks = [(f"_pop{g}", studentize(X[groups == g])) for g in sorted(set(groups))]
    else:
        m, n = (1000, 600) if args.full_scale else (args.m, args.n)
        K_true, _, X, _ = geo_graph(GeoGraphSpec(m=m, n=n, seed=args.seed))
        blocks = [("", X)]
    out = {}
    for tag, Xb in blocks:
        s = _graph_estimate(Xb, args, outdir, tag, K_true)
        out[tag or "all"] = s
        print(f"{tag or 'graph'}: m={s['m']} n={s['n']} edges={s['n_edges']} "
              f"converged={s['converged']} spd={s['spd']}"
              + (f" F1={s['f1']:.3f}" if "f1" in s else ""))
    return EXIT_OK


def read_labels(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"populations file not found: {path}")
    rows = [r for r in csv.reader(io.StringIO(p.read_text())) if r and r[0].strip()]
    vals = [r[0].strip() for r in rows]
    if vals and vals[0].lower() in ("population", "label", "group"):
        vals = vals[1:]
    return np.array(vals)


# ---------------------------------------------------------------------------
# mcdof


def cmd_mcdof(args, outdir):
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    if args.selector == "tree":
        if args.forest is None:
            raise UsageError("--selector tree needs --forest")
        if not Path(args.forest).is_file():
            raise UsageError(f"forest file not found: {args.forest}")
        forest = Forest.from_csv(args.forest)
        m = forest.m
        kmax = min(args.kappa_max or m, m)
        sel = tree_selector(forest, kappa_max=kmax)
    elif args.selector == "threshold":
        m = args.m
        kmax = min(args.kappa_max or min(m, 200), m)
        sel = threshold_selector(kmax)
    elif args.selector == "auht":
        m = args.m
        kmax = min(args.kappa_max or min(m, 200), m)
        sel = auht_selector(ContrastSpec(args.q), kmax)
    elif args.selector == "lasso":
        if args.design is None:
            raise UsageError("--selector lasso needs --design")
        D, _ = standardize_columns(read_matrix(args.design))
        m, p = D.shape
        kmax = min(args.kappa_max or min(p, m - 1, 50), p, m - 1)
        sel = lasso_selector(D, kmax)
    else:
        raise UsageError(f"unknown selector {args.selector!r}")
    dof = mc_dof(sel, m, kmax, reps=args.reps, seed=args.seed, n_jobs=args.jobs)
    dof.to_csv(outdir / "dof.csv")
    print(f"dof table for {args.selector} selector, m={m}, kappa_max={kmax}, reps={args.reps}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser, manifest, replay


def build_parser():
    p = argparse.ArgumentParser(prog="sparsecp", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=f"sparsecp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed (default: $SPARSECP_SEED or 0)")
        sp.add_argument("--outdir", default="sparsecp_out")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--log-level", default="WARNING")

    c = sub.add_parser("changepoints", help="change points in Poisson counts")
    common(c)
    c.add_argument("--input")
    c.add_argument("--simulate", choices=["blocks"])
    c.add_argument("--n", type=int, default=4000)
    c.add_argument("--runs", type=int, default=1)
    c.add_argument("--kappa-max", type=int, default=200)
    c.add_argument("--reps", type=int, default=100)
    c.add_argument("--q", type=float, default=2.0, help="balance exponent of the split contrast")
    c.add_argument("--mc-mode", choices=["adaptive", "fixed"], default="adaptive")
    c.add_argument("--tol", type=int, default=10, help="matching tolerance in samples")

    g = sub.add_parser("graph", help="sparse Gaussian graphical model")
    common(g)
    g.add_argument("--input")
    g.add_argument("--simulate", choices=["geo"])
    g.add_argument("--m", type=int, default=100)
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--full-scale", action="store_true", help="simulate m=1000, n=600")
    g.add_argument("--criterion", choices=["refined", "naive"], default="refined")
    g.add_argument("--max-degree", type=int, default=None)
    g.add_argument("--kappa-max", type=int, default=None)
    g.add_argument("--sigma-mode", choices=["residual-df", "model-size"], default="residual-df")
    g.add_argument("--dof-nodes", type=int, default=5)
    g.add_argument("--dof-reps", type=int, default=20)
    g.add_argument("--filter-variance-quantile", type=float, default=None)
    g.add_argument("--populations", help="CSV with one population label per data row")
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--max-iter", type=int, default=500)

    d = sub.add_parser("mcdof", help="Monte Carlo degrees of freedom table")
    common(d)
    d.add_argument("--selector", required=True)
    d.add_argument("--m", type=int, default=1000)
    d.add_argument("--forest")
    d.add_argument("--design")
    d.add_argument("--kappa-max", type=int, default=None)
    d.add_argument("--reps", type=int, default=100)
    d.add_argument("--q", type=float, default=2.0)

    r = sub.add_parser("replay", help="rerun a manifest and compare output hashes")
    r.add_argument("manifest")
    r.add_argument("--outdir", default=None, help="default: a temporary directory")
    return p


COMMANDS = {"changepoints": cmd_changepoints, "graph": cmd_graph, "mcdof": cmd_mcdof}


def _replay_argv(argv, args):
    """Argument list that pins the resolved seed and absolute input paths."""
    out = [a for a in argv]
    out += ["--seed", str(args.seed)]
    for name in ("input", "forest", "design", "populations"):
        v = getattr(args, name, None)
        if v is not None:
            out += [f"--{name}", str(Path(v).resolve())]
    return out


def run_command(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        return replay(args.manifest, args.outdir)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args.seed = resolve_seed(args.seed)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    code = COMMANDS[args.command](args, outdir)
    files = sorted(p for p in outdir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": args.command,
        "argv": _replay_argv([a for a in argv if a is not None], args),
        "flags": {k: v for k, v in vars(args).items()},
        "seed": args.seed,
        "version": __version__,
        "wall_time": round(time.time() - t0, 3),
        "outputs": {str(p.relative_to(outdir)): sha256(p) for p in files},
    }
    write_json(outdir / "manifest.json", manifest)
    return code


def replay(manifest_path, outdir=None):
    mpath = Path(manifest_path)
    if not mpath.is_file():
        raise UsageError(f"manifest not found: {manifest_path}")
    man = json.loads(mpath.read_text())
    tmp = None
    if outdir is None:
        tmp = tempfile.mkdtemp(prefix="sparsecp_replay_")
        outdir = tmp
    code = run_command(list(man["argv"]) + ["--outdir", str(outdir)])
    if code != EXIT_OK:
        return code
    new = json.loads((Path(outdir) / "manifest.json").read_text())["outputs"]
    old = man["outputs"]
    bad = sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    if bad:
        print(f"replay differs in {len(bad)} file(s): {', '.join(bad[:10])}")
        return EXIT_MISMATCH
    print(f"replay identical: {len(old)} file(s) in {outdir}")
    return EXIT_OK


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return run_command(argv)
    except SystemExit as exc:  # argparse
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, CycleError) as exc:
        print(f"sparsecp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"sparsecp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"sparsecp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
