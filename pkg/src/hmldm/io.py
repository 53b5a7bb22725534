"""Checkpoints, split files, traces and run manifests.

Every writer produces byte-identical output for identical inputs: no
timestamps, sorted JSON keys, and floats serialised exactly.
"""
import base64
import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .graph import Graph, TrainSplit, load_edge_list, write_edge_list
from .model import LatentState, ModelConfig
from .train import AdamState

__all__ = [
    "config_hash",
    "manifest_line",
    "save_checkpoint",
    "load_checkpoint",
    "write_trace_csv",
    "write_split",
    "read_split",
    "write_json",
]

CHECKPOINT_VERSION = 1


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def manifest(config, seed):
    return {"tool": "hmldm", "version": __version__, "config_hash": config_hash(config),
            "seed": seed}


def manifest_line(config, seed):
    m = manifest(config, seed)
    return f"hmldm {m['version']} config_hash={m['config_hash']} seed={seed}"


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _encode(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "f8le": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode(obj):
    raw = base64.b64decode(obj["f8le"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def save_checkpoint(path, state, cfg, adam=None, extra=None):
    """Versioned JSON dump of config, parameters and (optionally) Adam moments."""
    doc = {
        "format": "hmldm-checkpoint",
        "version": CHECKPOINT_VERSION,
        "kind": state.kind,
        "config": cfg.to_dict(),
        "manifest": manifest(cfg.to_dict(), cfg.seed),
        "params": {k: _encode(v) for k, v in state.params().items()},
    }
    if adam is not None:
        doc["adam"] = {
            "step_count": adam.step_count,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "first_moment": {k: _encode(v) for k, v in adam.first_moment.items()},
            "second_moment": {k: _encode(v) for k, v in adam.second_moment.items()},
        }
    if extra:
        doc["extra"] = extra
    write_json(path, doc)


def load_checkpoint(path):
    """Returns ``(state, cfg, adam_or_None, extra)``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "hmldm-checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    if doc["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc['version']}")
    state = LatentState(**{k: _decode(v) for k, v in doc["params"].items()})
    cfg = ModelConfig.from_dict(doc["config"])
    adam = None
    if "adam" in doc:
        a = doc["adam"]
        adam = AdamState({k: _decode(v) for k, v in a["first_moment"].items()},
                         {k: _decode(v) for k, v in a["second_moment"].items()},
                         a["step_count"], a["beta1"], a["beta2"], a["epsilon"])
    return state, cfg, adam, doc.get("extra", {})


def write_trace_csv(path, trace, header=None):
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "block_objective", "champion_fraction"])
    for k, (obj, champ) in enumerate(zip(trace.objective, trace.champion_fraction)):
        w.writerow([k, repr(obj), repr(champ)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_split(out_dir, split, graph, seed, config=None):
    """Residual and test edge lists, controls file and a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = dict(config or {})
    line = manifest_line(config, seed)
    signed = graph.signed
    write_edge_list(out / "residual.tsv", split.residual.edges,
                    split.residual.weights if signed else None, graph.bipartite, line)
    write_edge_list(out / "test.tsv", split.test_edges,
                    split.test_weights if signed else None, graph.bipartite, line)
    write_edge_list(out / "controls.tsv", split.controls, None, graph.bipartite, line)
    doc = {
        "manifest": manifest(config, seed),
        "kind": graph.kind,
        "num_nodes": graph.num_nodes,
        "bipartite": list(graph.bipartite) if graph.bipartite else None,
        "num_edges": graph.num_edges,
        "target": split.target,
        "removed": split.removed,
        "shortfall": split.shortfall,
        "controls": len(split.controls),
    }
    write_json(out / "manifest.json", doc)
    return doc


def _read_pairs(path, bipartite):
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            rows.append([int(t) for t in s.split()])
    arr = np.array(rows, dtype=np.int64).reshape(-1, len(rows[0]) if rows else 2)
    if bipartite is not None and len(arr):
        arr[:, 1] += bipartite[0]
    return arr


def read_split(split_dir):
    """Inverse of ``write_split``."""
    d = Path(split_dir)
    meta = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    bip = tuple(meta["bipartite"]) if meta["bipartite"] else None
    residual = load_edge_list(d / "residual.tsv", meta["kind"], bip,
                              num_nodes=None if bip else meta["num_nodes"])
    test = _read_pairs(d / "test.tsv", bip)
    controls = _read_pairs(d / "controls.tsv", bip)
    if meta["kind"] == "signed":
        test_edges, test_weights = test[:, :2], test[:, 2]
    else:
        test_edges, test_weights = test[:, :2], np.ones(len(test), dtype=np.int64)
    return TrainSplit(residual, test_edges.reshape(-1, 2), test_weights,
                      controls[:, :2].reshape(-1, 2), meta["target"])
