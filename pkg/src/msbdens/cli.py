"""Command-line driver: ``msbdens <command> [options]``.

Every command accepts ``--config FILE`` with flat ``key=value`` lines
(keys are the long option names with dashes or underscores); explicit
flags override the file.  Each output directory receives ``manifest.txt``
holding the fully resolved options, which can be fed back through
``--config`` to repeat the run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import DataError, fit_whitening, load_dataset, save_dataset
from .evalbench import BASELINES, EvalError, compare_replicates, format_summary, write_report_csv
from .gibbs import SamplerError, load_posterior, save_posterior
from .kgraph import GraphError, build_graph, load_edge_list, median_sq_distance, save_edge_list, select_threshold
from .model import PipelineConfig, build_structure, fit_model, stage_seeds
from .msb import ModelError
from .partition import PartitionError
from .predict import PredictError, default_grid, predictive_density
from .ptree import TreeError, build_tree, load_tree, save_tree
from .simgen import MODELS, SimError, generate, save_truth

log = logging.getLogger("msbdens")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# ------------------------------------------------------------------ config


def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def write_manifest(outdir: Path, command: str, opts: dict):
    lines = [f"# msbdens {__version__}", f"command={command}"]
    for k in sorted(opts):
        v = opts[k]
        if k in ("config", "out", "command", "func", "threads"):
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k}={'' if v is None else v}")
    (outdir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _coerce(value, default):
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, (list, tuple)):
        return [s for s in str(value).split(",") if s]
    return value


def resolve(args: argparse.Namespace, defaults: dict, required=()) -> dict:
    """Merge built-in defaults < config file < explicit flags."""
    opts = dict(defaults)
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            if k == "command":
                continue
            if k not in defaults:
                raise UsageError(f"unknown config key {k!r}")
            if v == "":
                opts[k] = None if defaults[k] is None else defaults[k]
            else:
                opts[k] = _coerce(v, defaults[k]) if defaults[k] is not None else v
    for k, v in vars(args).items():
        if v is not None and k in defaults:
            opts[k] = v
    missing = [k for k in required if opts.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return opts


# ---------------------------------------------------------------- commands

SIM_DEFAULTS = dict(model=None, n=None, p=None, seed=0, format="bin",
                    mu1=-2.0, sigma1=1.0, mu2=2.0, sigma2=1.0, sigma_x=0.1, c=20.0,
                    d=5, groups=5, a_theta=1.0, b_theta=0.25)

GRAPH_DEFAULTS = dict(data=None, response=None, target_degree=20, bandwidth="median", seed=0)
TREE_DEFAULTS = dict(GRAPH_DEFAULTS, graph=None, min_leaf=20, max_depth=8, epsilon=0.05)
FIT_DEFAULTS = dict(TREE_DEFAULTS, alpha=1.0, a=3.0, b=1.0, iters=20000, burn_in=1000, thin=10,
                    max_draws=2000, early_stop=False)
PREDICT_DEFAULTS = dict(model_dir=None, query=None, grid_points=512, grid_min=None, grid_max=None)
EVAL_DEFAULTS = dict(SIM_DEFAULTS, replicates=20, baseline=["global_mean"], mode="auto",
                     target_degree=20, bandwidth="median", min_leaf=20, max_depth=8,
                     epsilon=0.05, alpha=1.0, a=3.0, b=1.0, iters=20000, burn_in=1000,
                     thin=10, max_draws=2000, knn_k=10, pcr_m=10, pcr_lambda=1.0)


def _sim_kwargs(o):
    m = o["model"]
    if m == "nonlinear_mixture":
        return dict(mu1=o["mu1"], sigma1=o["sigma1"], mu2=o["mu2"], sigma2=o["sigma2"],
                    sigma_x=o["sigma_x"], c=o["c"])
    if m == "linear_subspace":
        return dict(d=o["d"], a_theta=o["a_theta"], b_theta=o["b_theta"])
    if m == "union_subspaces":
        return dict(d=o["d"], G=o["groups"], a_theta=o["a_theta"], b_theta=o["b_theta"])
    return {}


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    o = resolve(args, SIM_DEFAULTS, required=("model", "n", "p"))
    if o["model"] not in MODELS:
        raise UsageError(f"--model must be one of {', '.join(MODELS)}")
    sim = generate(o["model"], int(o["n"]), int(o["p"]), seed=int(o["seed"]), **_sim_kwargs(o))
    out = _outdir(args)
    ext = "csv" if o["format"] == "csv" else "bin"
    save_dataset(sim.data, out / f"data.{ext}", ext)
    save_truth(sim, out / "truth.csv")
    write_manifest(out, "simulate", o)
    log.info("wrote n=%d p=%d dataset to %s", sim.data.n, sim.data.p, out)


def _cfg(o) -> PipelineConfig:
    bw = o.get("bandwidth", "median")
    return PipelineConfig(
        target_degree=int(o.get("target_degree", 20)),
        bandwidth=bw if bw == "median" else float(bw),
        epsilon=float(o.get("epsilon", 0.05)), min_leaf=int(o.get("min_leaf", 20)),
        max_depth=int(o.get("max_depth", 8)), alpha=float(o.get("alpha", 1.0)),
        a=float(o.get("a", 3.0)), b=float(o.get("b", 1.0)),
        max_iters=int(o.get("iters", 20000)), burn_in=int(o.get("burn_in", 1000)),
        thin=int(o.get("thin", 10)), max_draws=int(o.get("max_draws", 2000)),
        early_stop=bool(o.get("early_stop", False)), seed=int(o.get("seed", 0)),
    )


def _load(o):
    return load_dataset(o["data"], response_path=o["response"])


def _tree_summary(tree):
    per = np.bincount(tree.scales())
    leaves = np.bincount(tree.scales()[tree.is_leaf()], minlength=per.size)
    return (f"depth {tree.depth}; cells per scale {per.tolist()}; "
            f"leaves per scale {leaves.tolist()}")


def cmd_build_graph(args):
    o = resolve(args, GRAPH_DEFAULTS, required=("data",))
    cfg = _cfg(o)
    features = _load(o).features
    xw = fit_whitening(features).apply(features)
    n = xw.shape[0]
    if n < 3:
        raise DataError("need at least 3 rows to build a graph")
    seed = stage_seeds(cfg.seed)["graph"]
    h = median_sq_distance(xw, seed) if cfg.bandwidth == "median" else float(cfg.bandwidth)
    t = select_threshold(xw, min(cfg.target_degree, n - 2), bandwidth=h, seed=seed)
    g = build_graph(xw, t, bandwidth=h)
    out = _outdir(args)
    save_edge_list(g, out / "graph.txt")
    write_manifest(out, "build-graph", o)
    log.info("graph: %s", g.summary)


def cmd_build_tree(args):
    o = resolve(args, TREE_DEFAULTS, required=("data",))
    cfg = _cfg(o)
    data = _load(o)
    if o["graph"]:
        stats = fit_whitening(data.features)
        g = load_edge_list(o["graph"])
        if g.n_vertices != data.n:
            raise DataError(f"graph has {g.n_vertices} vertices but dataset has {data.n} rows")
        h = 1.0 if cfg.bandwidth == "median" else float(cfg.bandwidth)
        tree = build_tree(g, stats.apply(data.features), cfg.min_leaf, cfg.max_depth,
                          stage_seeds(cfg.seed)["tree"], cfg.epsilon, bandwidth=h,
                          whiten_stats=stats)
    else:
        _, g, tree, _ = build_structure(data.features, cfg)
    out = _outdir(args)
    save_tree(tree, out / "tree.msbt")
    write_manifest(out, "build-tree", o)
    log.info("tree: %s", _tree_summary(tree))


def cmd_fit(args):
    o = resolve(args, FIT_DEFAULTS, required=("data",))
    cfg = _cfg(o)
    fm = fit_model(_load(o), cfg)
    out = _outdir(args)
    save_edge_list(fm.graph, out / "graph.txt")
    save_tree(fm.tree, out / "tree.msbt")
    save_posterior(fm.samples, out / "posterior.msbp")
    write_manifest(out, "fit", o)
    g, s = fm.graph, fm.samples
    log.info("graph: %d edges, %d isolated vertices attached", g.n_edges,
             g.summary.get("isolated_before_connect", 0))
    log.info("tree: %s", _tree_summary(fm.tree))
    log.info("sampler: %d iterations, %d retained draws, stopped early: %s",
             s.meta.get("iterations"), s.n_draws, s.meta.get("stopped_early"))
    if "diagnostic_pass" in s.meta:
        log.info("convergence diagnostic accepted: %s (statistic %.4f)",
                 s.meta["diagnostic_pass"], s.meta.get("diagnostic_statistic", float("nan")))


def _read_query(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(c) for c in line.split(",")])
            except ValueError:
                raise DataError(f"{path}: unparseable value on row {lineno}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: query rows must be non-empty and of equal length")
    q = np.array(rows)
    if not np.all(np.isfinite(q)):
        raise DataError(f"{path}: non-finite query value")
    return q


def cmd_predict(args):
    o = resolve(args, PREDICT_DEFAULTS, required=("model_dir", "query"))
    md = Path(o["model_dir"])
    tree = load_tree(md / "tree.msbt")
    samples = load_posterior(md / "posterior.msbp")
    if samples.n_nodes != tree.n_nodes:
        raise DataError(f"posterior has {samples.n_nodes} nodes but tree has {tree.n_nodes}")
    q = _read_query(o["query"])
    if q.shape[1] != tree.p:
        raise DataError(f"query rows have {q.shape[1]} columns, model expects {tree.p}")
    grid = default_grid(samples.y_mean, samples.y_sd, int(o["grid_points"]))
    lo = grid[0] if o["grid_min"] in (None, "") else float(o["grid_min"])
    hi = grid[-1] if o["grid_max"] in (None, "") else float(o["grid_max"])
    grid = np.linspace(lo, hi, int(o["grid_points"]))
    out = _outdir(args)
    with open(out / "predictions.csv", "w") as pf:
        pf.write("row,prediction\n")
        for i, x in enumerate(q):
            est = predictive_density(tree, samples, x, grid)
            with open(out / f"density_{i:04d}.csv", "w") as fh:
                fh.write("y,p2.5,p50,p97.5\n")
                for row in zip(grid, est.p2_5, est.p50, est.p97_5):
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
            pf.write(f"{i},{est.point_mean!r}\n")
    write_manifest(out, "predict", dict(o, grid_min=lo, grid_max=hi))


def cmd_eval(args):
    o = resolve(args, EVAL_DEFAULTS, required=("model", "n", "p"))
    if o["model"] not in MODELS:
        raise UsageError(f"--model must be one of {', '.join(MODELS)}")
    bases = o["baseline"]
    bases = [bases] if isinstance(bases, str) else list(bases)
    for b in bases:
        if b not in BASELINES:
            raise UsageError(f"--baseline must be among {', '.join(BASELINES)}")
    cfg = _cfg(o)
    results = compare_replicates(
        o["model"], int(o["n"]), int(o["p"]), int(o["replicates"]), int(o["seed"]), bases, cfg,
        o["mode"], _sim_kwargs(o),
        dict(k=int(o["knn_k"]), m=int(o["pcr_m"]), lam=float(o["pcr_lambda"])),
        progress=lambda r: log.info("replicate %d: msb mse %.4f", r.seed, r.msb.mse_mean),
    )
    out = _outdir(args)
    write_report_csv(results, out / "report.csv")
    header = (f"model={o['model']} n={o['n']} p={o['p']} replicates={o['replicates']}\n"
              f"baseline: {', '.join(bases)}")
    (out / "summary.txt").write_text(format_summary(results, header))
    write_manifest(out, "eval", dict(o, baseline=bases))
    print((out / "summary.txt").read_text(), end="")


def cmd_report(args):
    d = Path(args.dir)
    if (d / "summary.txt").exists():
        print((d / "summary.txt").read_text(), end="")
        return
    if (d / "tree.msbt").exists():
        tree = load_tree(d / "tree.msbt")
        print(_tree_summary(tree))
        if (d / "posterior.msbp").exists():
            s = load_posterior(d / "posterior.msbp")
            print(f"posterior: {s.n_draws} draws over {s.n_nodes} nodes; "
                  f"alpha={s.hyper.alpha} a={s.hyper.a} b={s.hyper.b} thin={s.thin}")
        return
    raise DataError(f"{d}: no summary.txt or tree.msbt to report on")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msbdens", description="Multiscale stick-breaking conditional density toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="key=value file; flags override it")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    def sim_args(sp):
        sp.add_argument("--model", choices=MODELS)
        sp.add_argument("--n", type=int)
        sp.add_argument("--p", type=int)
        sp.add_argument("--seed", type=int)
        for name in ("mu1", "sigma1", "mu2", "sigma2", "sigma-x", "c", "a-theta", "b-theta"):
            sp.add_argument(f"--{name}", type=float)
        sp.add_argument("--d", type=int)
        sp.add_argument("--groups", type=int)

    def graph_args(sp, data=True):
        if data:
            sp.add_argument("--data", help="dataset (.csv or MSBD binary)")
            sp.add_argument("--response", help="separate response file")
            sp.add_argument("--seed", type=int)
        sp.add_argument("--target-degree", type=int)
        sp.add_argument("--bandwidth", help="'median' or a positive number")

    def tree_args(sp):
        sp.add_argument("--min-leaf", type=int)
        sp.add_argument("--max-depth", type=int)
        sp.add_argument("--epsilon", type=float)

    def hyper_args(sp):
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--a", type=float)
        sp.add_argument("--b", type=float)
        sp.add_argument("--iters", type=int)
        sp.add_argument("--burn-in", type=int)
        sp.add_argument("--thin", type=int)
        sp.add_argument("--max-draws", type=int)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(s)
    sim_args(s)
    s.add_argument("--format", choices=("bin", "csv"))
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("build-graph", help="kernel similarity graph")
    common(s)
    graph_args(s)
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("build-tree", help="partition tree")
    common(s)
    graph_args(s)
    tree_args(s)
    s.add_argument("--graph", help="edge-list file to reuse")
    s.set_defaults(func=cmd_build_tree)

    s = sub.add_parser("fit", help="graph + tree + Gibbs sampler")
    common(s)
    graph_args(s)
    tree_args(s)
    hyper_args(s)
    s.add_argument("--early-stop", action="store_true", default=None)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="density curves and point predictions")
    common(s)
    s.add_argument("--model-dir")
    s.add_argument("--query", help="CSV of feature rows")
    s.add_argument("--grid-points", type=int)
    s.add_argument("--grid-min", type=float)
    s.add_argument("--grid-max", type=float)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="matched leave-one-out comparison over replicates")
    common(s)
    sim_args(s)
    graph_args(s, data=False)
    tree_args(s)
    hyper_args(s)
    s.add_argument("--replicates", type=int)
    s.add_argument("--baseline", action="append", choices=BASELINES)
    s.add_argument("--mode", choices=("auto", "exact", "fast"))
    s.add_argument("--knn-k", type=int)
    s.add_argument("--pcr-m", type=int)
    s.add_argument("--pcr-lambda", type=float)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="print the summary of an eval or fit directory")
    s.add_argument("dir")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.threads is not None:
        import numba
        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        args.func(args)
    except UsageError as e:
        print(f"msbdens: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphError, TreeError, SimError, EvalError, PredictError, ModelError,
            PartitionError, FileNotFoundError) as e:
        print(f"msbdens: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"msbdens: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
