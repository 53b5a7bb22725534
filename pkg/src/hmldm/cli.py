"""Command-line interface: split, train, evaluate, sweep-delta, order.

Exit status: 0 success, 2 input or parse error, 3 precondition violation,
4 numerical divergence.
"""
import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .evaluation import (SIGNED_TASKS, EvalReport, circular_layout, evaluate,
                         order_adjacency)
from .graph import (DisconnectedGraphError, EdgeListError, EdgeListWarning, Graph,
                    load_edge_list, make_split, write_edge_list)
from .io import (load_checkpoint, manifest, manifest_line, read_split, save_checkpoint,
                 write_json, write_split, write_trace_csv)
from .model import ModelConfig
from .train import DivergenceError, fit_best

logger = logging.getLogger("hmldm")

EXIT_OK, EXIT_INPUT, EXIT_PRECONDITION, EXIT_DIVERGENCE = 0, 2, 3, 4

DEFAULTS = {
    "kind": "unsigned",
    "bipartite": None,
    "dim": 8,
    "p": 2,
    "delta_sq": 1.0,
    "grid": None,
    "lr": 0.05,
    "iters": 5000,
    "warmup_iters": 1000,
    "sample_size": None,
    "rho": 1.0,
    "seed": 0,
    "restarts": 5,
    "champion_tol": 0.999,
    "reproducible": False,
    "fraction": 0.5,
    "tasks": None,
    "n_seeds": 1,
    "workers": 1,
}

# keys that name files rather than model settings; excluded from the config hash
_PATH_KEYS = ("input", "out", "checkpoint", "split", "labels", "config")


class UsageError(Exception):
    """Bad input; exit status 2."""


class PreconditionError(Exception):
    """Inputs parse but violate a command precondition; exit status 3."""


def _csv_floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _partition(text):
    try:
        r, c = (int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected R,C, got {text!r}")
    if r < 1 or c < 1:
        raise argparse.ArgumentTypeError("partition sizes must be positive")
    return (r, c)


def _add_common(p):
    p.add_argument("--config", help="JSON file of settings; flags override it")
    p.add_argument("--input", help="edge list (i j [w] per line)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--kind", choices=("unsigned", "signed"), default=None)
    p.add_argument("--bipartite", type=_partition, default=None, metavar="R,C")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--reproducible", action="store_true", default=None,
                   help="single worker; record the flag in every manifest")


def _add_model(p):
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--p", type=int, choices=(1, 2), default=None)
    p.add_argument("--delta-sq", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--warmup-iters", type=int, default=None)
    p.add_argument("--sample-size", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--champion-tol", type=float, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="hmldm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="hold out edges while keeping the residual connected")
    _add_common(p)
    p.add_argument("--fraction", type=float, default=None)

    p = sub.add_parser("train", help="fit a model; writes checkpoint.json and trace.csv")
    _add_common(p)
    _add_model(p)
    p.add_argument("--split", help="split directory; trains on its residual graph")

    p = sub.add_parser("evaluate", help="score a checkpoint on a split; writes report.json")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split")
    p.add_argument("--labels", help="ground-truth community per node, one per line")
    p.add_argument("--tasks", default=None, help="comma-separated: link or p@n,p@z,n@z")
    p.add_argument("--champion-tol", type=float, default=None)

    p = sub.add_parser("sweep-delta", help="train and evaluate over a grid of delta^2 values")
    _add_common(p)
    _add_model(p)
    p.add_argument("--grid", type=_csv_floats, default=None, metavar="a,b,c")
    p.add_argument("--split", help="fixed split directory (otherwise one split per seed)")
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--labels")
    p.add_argument("--n-seeds", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("order", help="membership-ordered node permutation and plot data")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    return ap


def resolve(args):
    """Merge built-in defaults, the config file and explicit flags (flags win)."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        for k, v in loaded.items():
            key = k.replace("-", "_")
            if key not in DEFAULTS and key not in _PATH_KEYS:
                raise UsageError(f"unknown config key {k!r}")
            opts[key] = v
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "verbose"):
            opts[k] = v
    if isinstance(opts.get("grid"), str):
        opts["grid"] = _csv_floats(opts["grid"])
    if opts.get("bipartite") is not None:
        opts["bipartite"] = tuple(opts["bipartite"])
    if isinstance(opts.get("tasks"), str):
        opts["tasks"] = [t for t in opts["tasks"].split(",") if t]
    if opts["reproducible"]:
        opts["workers"] = 1
    return opts


def model_config(opts, delta_sq=None, seed=None):
    d2 = opts["delta_sq"] if delta_sq is None else delta_sq
    if not d2 > 0:
        raise UsageError("delta^2 must be positive")
    try:
        return ModelConfig(dim=opts["dim"], p=opts["p"], delta=math.sqrt(d2), rho=opts["rho"],
                           lr=opts["lr"], warmup_iters=opts["warmup_iters"],
                           train_iters=opts["iters"], sample_size=opts["sample_size"],
                           seed=opts["seed"] if seed is None else seed,
                           restarts=opts["restarts"], champion_tol=opts["champion_tol"],
                           reproducible=bool(opts["reproducible"]))
    except ValueError as exc:
        raise UsageError(str(exc))


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def hashed_config(opts):
    """Settings that determine the output: model options plus input file digests."""
    cfg = {k: v for k, v in opts.items() if k not in _PATH_KEYS}
    for key in ("input", "checkpoint", "labels"):
        if opts.get(key):
            cfg[f"{key}_sha256"] = _file_digest(opts[key])
    if opts.get("split"):
        d = Path(opts["split"])
        cfg["split_sha256"] = hashlib.sha256(b"".join(
            (d / f).read_bytes() for f in ("residual.tsv", "test.tsv", "controls.tsv",
                                           "manifest.json"))).hexdigest()[:16]
    return cfg


def _load_graph(opts):
    if not opts.get("input"):
        raise UsageError("--input is required")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EdgeListWarning)
        try:
            g = load_edge_list(opts["input"], opts["kind"], opts["bipartite"])
        except OSError as exc:
            raise UsageError(f"cannot read {opts['input']}: {exc}")
    for w in caught:
        logger.warning("%s", w.message)
    if g.num_nodes < 2:
        raise PreconditionError("graph needs at least two nodes")
    return g


def _load_labels(path, n):
    try:
        rows = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    except OSError as exc:
        raise UsageError(f"cannot read labels: {exc}")
    labels = [r.split()[-1] for r in rows if r and not r.startswith("#")]
    if len(labels) != n:
        raise UsageError(f"labels file has {len(labels)} entries for {n} nodes")
    return np.array(labels)


def _out_dir(opts):
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _with_header(line, body):
    return f"# {line}\n{body}"


def cmd_split(opts):
    g = _load_graph(opts)
    if not 0.0 < opts["fraction"] < 1.0:
        raise UsageError("--fraction must lie in (0, 1)")
    try:
        split = make_split(g, opts["fraction"], opts["seed"])
    except DisconnectedGraphError:
        raise
    except ValueError as exc:
        raise PreconditionError(str(exc))
    doc = write_split(_out_dir(opts), split, g, opts["seed"], hashed_config(opts))
    if split.shortfall:
        logger.warning("removed %d of %d requested edges; the residual must stay connected",
                       split.removed, split.target)
    return doc


def _training_graph(opts):
    if opts.get("split"):
        try:
            g = read_split(opts["split"]).residual
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read split {opts['split']}: {exc}")
        if g.kind != opts["kind"]:
            raise PreconditionError(f"split holds a {g.kind} graph, --kind is {opts['kind']}")
        return g
    return _load_graph(opts)


def cmd_train(opts):
    g = _training_graph(opts)
    cfg = model_config(opts)
    hcfg = hashed_config(opts)
    out = _out_dir(opts)
    line = manifest_line(hcfg, cfg.seed)
    extra = {"kind": g.kind, "num_nodes": g.num_nodes,
             "bipartite": list(g.bipartite) if g.bipartite else None}
    try:
        state, trace = fit_best(g, cfg)
    except DivergenceError as exc:
        if exc.trace is not None:
            write_trace_csv(out / "trace.csv", exc.trace, line)
        if exc.state is not None:
            save_checkpoint(out / "checkpoint.partial.json", exc.state, cfg,
                            extra={**extra, "diverged": True, **manifest(hcfg, cfg.seed)})
        raise
    write_trace_csv(out / "trace.csv", trace, line)
    save_checkpoint(out / "checkpoint.json", state, cfg,
                    extra={**extra, "trace_header": trace.header,
                           "run": manifest(hcfg, cfg.seed)})
    return state


def _checkpoint(opts):
    try:
        return load_checkpoint(opts["checkpoint"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read checkpoint {opts['checkpoint']}: {exc}")


def _default_tasks(kind):
    return list(SIGNED_TASKS) if kind == "signed" else ["link"]


def cmd_evaluate(opts):
    state, cfg, _, _ = _checkpoint(opts)
    split = None
    if opts.get("split"):
        split = read_split(opts["split"])
        if split.residual.kind != state.kind:
            raise PreconditionError(f"checkpoint is {state.kind}, split is {split.residual.kind}")
        if split.residual.num_nodes != state.num_nodes:
            raise PreconditionError("checkpoint and split differ in node count")
    tasks = opts["tasks"] or _default_tasks(state.kind)
    labels = _load_labels(opts["labels"], state.num_nodes) if opts.get("labels") else None
    try:
        report = evaluate(state, cfg, split, tasks, labels, opts["champion_tol"],
                          seed=opts["seed"])
    except ValueError as exc:
        raise PreconditionError(str(exc))
    doc = report.to_dict()
    doc["manifest"] = manifest(hashed_config(opts), opts["seed"])
    write_json(_out_dir(opts) / "report.json", doc)
    return report


def read_report(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    doc.pop("manifest", None)
    return EvalReport.from_dict(doc)


def _sweep_point(job):
    """Train and evaluate one (delta^2, seed) point; failures become row markers."""
    g, split, labels, opts, d2, seed, tasks = job
    row = {"delta_sq": d2, "seed": seed}
    try:
        cfg = model_config(opts, delta_sq=d2, seed=seed)
        state, _ = fit_best(g if split is None else split.residual, cfg)
        rep = evaluate(state, cfg, split, tasks, labels, cfg.champion_tol, seed=seed)
        row.update({f"auc_{t}": rep.auc.get(t) for t in tasks})
        row.update(champion_fraction=rep.champion_fraction, identifiable=rep.identifiable,
                   nmi=rep.nmi, ari=rep.ari, error="")
    except (DivergenceError, ValueError, FloatingPointError) as exc:
        row.update({f"auc_{t}": None for t in tasks})
        row.update(champion_fraction=None, identifiable=None, nmi=None, ari=None,
                   error=f"{type(exc).__name__}: {exc}".replace("\n", " "))
    return row


def first_identifiable(rows):
    """Largest delta^2 identifiable in every successful seed, scanning downward."""
    by_d2 = {}
    for r in rows:
        if not r["error"]:
            by_d2.setdefault(r["delta_sq"], []).append(bool(r["identifiable"]))
    for d2 in sorted(by_d2, reverse=True):
        if all(by_d2[d2]):
            return d2
    return None


def cmd_sweep(opts):
    grid = opts["grid"]
    if not grid:
        raise UsageError("--grid is required")
    if any(g <= 0 for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError("grid must be positive and strictly increasing")
    model_config(opts)  # validate shared settings before launching anything
    n_seeds = int(opts["n_seeds"])
    if n_seeds < 1:
        raise UsageError("--n-seeds must be at least 1")
    seeds = [opts["seed"] + s for s in range(n_seeds)]
    if opts.get("split"):
        fixed = read_split(opts["split"])
        if fixed.residual.kind != opts["kind"]:
            raise PreconditionError("split kind does not match --kind")
        graph, splits = None, {s: fixed for s in seeds}
        n = fixed.residual.num_nodes
    else:
        graph = _load_graph(opts)
        if not 0.0 < opts["fraction"] < 1.0:
            raise UsageError("--fraction must lie in (0, 1)")
        splits = {s: make_split(graph, opts["fraction"], s) for s in seeds}
        n = graph.num_nodes
    tasks = opts["tasks"] or _default_tasks(opts["kind"])
    labels = _load_labels(opts["labels"], n) if opts.get("labels") else None
    jobs = [(graph, splits[s], labels, opts, d2, s, tasks) for d2 in grid for s in seeds]
    workers = max(1, int(opts["workers"]))
    if workers == 1:
        rows = [_sweep_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))

    hcfg = hashed_config(opts)
    line = manifest_line(hcfg, opts["seed"])
    cols = ["delta_sq", "seed", *[f"auc_{t}" for t in tasks], "champion_fraction",
            "identifiable", "nmi", "ari", "error"]
    buf = io.StringIO()
    buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                    for c in cols])
    out = _out_dir(opts)
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")
    summary = {"manifest": manifest(hcfg, opts["seed"]), "grid": grid, "seeds": seeds,
               "first_identifiable_delta_sq": first_identifiable(rows),
               "failed_points": sum(bool(r["error"]) for r in rows)}
    write_json(out / "summary.json", summary)
    return rows, summary


def cmd_order(opts):
    state, cfg, _, extra = _checkpoint(opts)
    g = _load_graph(opts)
    if g.kind != state.kind:
        raise PreconditionError(f"checkpoint is {state.kind}, graph is {g.kind}")
    if g.num_nodes != state.num_nodes:
        raise PreconditionError("checkpoint and graph differ in node count")
    perm = order_adjacency(state)
    new_id = np.empty_like(perm)
    new_id[perm] = np.arange(len(perm))
    line = manifest_line(hashed_config(opts), opts["seed"])
    out = _out_dir(opts)
    (out / "permutation.txt").write_text(
        _with_header(line, "".join(f"{v}\n" for v in perm)), encoding="utf-8")
    # relabelled ids of a bipartite graph no longer respect the partition,
    # so the ordered edge list is written in plain global ids
    relabelled = Graph.from_edges(g.num_nodes, new_id[g.edges], g.weights, kind=g.kind)
    write_edge_list(out / "ordered_edges.tsv", relabelled.edges,
                    relabelled.weights if g.signed else None, None, line)
    lay = circular_layout(state)
    k = state.num_corners
    buf = io.StringIO()
    buf.write(f"# {line}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["node", "corner", "corner_angle", "x", "y", *[f"w{c}" for c in range(k)]])
    for row in lay:
        wr.writerow([int(row[0]), int(row[1]), *[repr(float(v)) for v in row[2:]]])
    (out / "circular.csv").write_text(buf.getvalue(), encoding="utf-8")
    return perm


COMMANDS = {"split": cmd_split, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep-delta": cmd_sweep, "order": cmd_order}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        COMMANDS[args.command](opts)
    except (UsageError, EdgeListError) as exc:
        print(f"hmldm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PreconditionError, DisconnectedGraphError) as exc:
        print(f"hmldm: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except DivergenceError as exc:
        print(f"hmldm: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
