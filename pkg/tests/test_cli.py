import json
import math

import numpy as np
import pytest

from hmldm.cli import first_identifiable, main, read_report
from hmldm.graph import write_edge_list
from hmldm.io import load_checkpoint
from hmldm.metrics import nmi
from hmldm.synthetic import planted_sbm, planted_signed
from hmldm.train import fit_best

FAST = ["--dim", "1", "--iters", "300", "--warmup-iters", "100", "--restarts", "1"]


def write_graph(path, g):
    write_edge_list(path, g.edges, g.weights if g.signed else None)
    return str(path)


def write_labels(path, labels):
    path.write_text("".join(f"{v}\n" for v in labels))
    return str(path)


@pytest.fixture
def sbm(tmp_path):
    g, labels = planted_sbm(seed=0)
    return write_graph(tmp_path / "g.tsv", g), write_labels(tmp_path / "labels.txt", labels), g


def run(*argv):
    return main([str(a) for a in argv])


class TestSplit:
    def test_triangle(self, tmp_path):
        (tmp_path / "t.tsv").write_text("0 1\n1 2\n0 2\n")
        assert run("split", "--input", tmp_path / "t.tsv", "--out", tmp_path / "s",
                   "--fraction", 0.5) == 0
        doc = json.loads((tmp_path / "s" / "manifest.json").read_text())
        assert doc["removed"] == 1 and doc["controls"] == 0

    def test_tree_keeps_everything(self, tmp_path):
        (tmp_path / "t.tsv").write_text("0 1\n1 2\n1 3\n3 4\n")
        assert run("split", "--input", tmp_path / "t.tsv", "--out", tmp_path / "s") == 0
        doc = json.loads((tmp_path / "s" / "manifest.json").read_text())
        assert doc["removed"] == 0 and doc["shortfall"] == 2

    def test_disconnected_input(self, tmp_path):
        (tmp_path / "t.tsv").write_text("0 1\n2 3\n")
        assert run("split", "--input", tmp_path / "t.tsv", "--out", tmp_path / "s") == 3

    def test_byte_identical_reruns(self, sbm, tmp_path):
        path, _, _ = sbm
        for d in ("a", "b"):
            assert run("split", "--input", path, "--out", tmp_path / d, "--seed", 3) == 0
        for f in ("residual.tsv", "test.tsv", "controls.tsv", "manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    @pytest.mark.parametrize("frac", ["0", "1", "1.5"])
    def test_bad_fraction(self, sbm, tmp_path, frac):
        assert run("split", "--input", sbm[0], "--out", tmp_path / "s", "--fraction", frac) == 2


class TestExitCodes:
    def test_malformed_input(self, tmp_path):
        (tmp_path / "bad.tsv").write_text("0 x\n")
        assert run("train", "--input", tmp_path / "bad.tsv", "--out", tmp_path / "o") == 2

    def test_missing_file(self, tmp_path):
        assert run("train", "--input", tmp_path / "nope.tsv", "--out", tmp_path / "o") == 2

    def test_unknown_config_key(self, sbm, tmp_path):
        (tmp_path / "c.json").write_text('{"dimm": 3}')
        assert run("train", "--input", sbm[0], "--config", tmp_path / "c.json",
                   "--out", tmp_path / "o") == 2

    def test_bad_delta(self, sbm, tmp_path):
        assert run("train", "--input", sbm[0], "--delta-sq", -1, "--out", tmp_path / "o") == 2

    def test_divergence(self, sbm, tmp_path):
        out = tmp_path / "o"
        assert run("train", "--input", sbm[0], "--lr", 1e5, *FAST, "--out", out) == 4
        assert (out / "trace.csv").exists()
        assert not (out / "checkpoint.json").exists()


class TestTrain:
    def test_matches_library_and_reproducible(self, sbm, tmp_path):
        path, _, g = sbm
        for d in ("a", "b"):
            assert run("train", "--input", path, *FAST, "--delta-sq", 2.0, "--seed", 5,
                       "--reproducible", "--out", tmp_path / d) == 0
        for f in ("checkpoint.json", "trace.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        state, cfg, _, extra = load_checkpoint(tmp_path / "a" / "checkpoint.json")
        assert cfg.delta == pytest.approx(math.sqrt(2.0))
        assert extra["num_nodes"] == 60
        ref, _ = fit_best(g, cfg)
        assert state.logits.tobytes() == ref.logits.tobytes()
        assert state.gamma.tobytes() == ref.gamma.tobytes()
        header = (tmp_path / "a" / "trace.csv").read_text().splitlines()[0]
        assert header.startswith("# hmldm 0.1.0 config_hash=") and header.endswith("seed=5")

    def test_zero_iterations_is_warmup(self, sbm, tmp_path):
        path, _, g = sbm
        assert run("train", "--input", path, "--dim", 1, "--iters", 0, "--warmup-iters", 50,
                   "--restarts", 1, "--out", tmp_path / "o") == 0
        state, cfg, _, _ = load_checkpoint(tmp_path / "o" / "checkpoint.json")
        assert cfg.train_iters == 0
        # warmup only moves the random effects; logits keep their initial values
        ref, trace = fit_best(g, cfg)
        assert len(trace) == 50
        assert state.logits.tobytes() == ref.logits.tobytes()

    def test_flags_override_config(self, sbm, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps(
            {"dim": 3, "delta_sq": 4.0, "iters": 10, "warmup_iters": 5, "restarts": 1}))
        assert run("train", "--input", sbm[0], "--config", tmp_path / "c.json", "--dim", 2,
                   "--out", tmp_path / "o") == 0
        _, cfg, _, _ = load_checkpoint(tmp_path / "o" / "checkpoint.json")
        assert cfg.dim == 2 and cfg.delta == pytest.approx(2.0) and cfg.train_iters == 10

    def test_manifest_independent_of_output_dir(self, sbm, tmp_path):
        for d in ("a", "nested/b"):
            run("train", "--input", sbm[0], *FAST, "--out", tmp_path / d)
        a = (tmp_path / "a" / "trace.csv").read_bytes()
        assert a == (tmp_path / "nested" / "b" / "trace.csv").read_bytes()


class TestEvaluate:
    def test_unsigned_report(self, sbm, tmp_path):
        path, labels, _ = sbm
        assert run("split", "--input", path, "--out", tmp_path / "s") == 0
        assert run("train", "--split", tmp_path / "s", *FAST, "--out", tmp_path / "t") == 0
        ck = tmp_path / "t" / "checkpoint.json"
        assert run("evaluate", "--checkpoint", ck, "--split", tmp_path / "s",
                   "--labels", labels, "--out", tmp_path / "e") == 0
        doc = json.loads((tmp_path / "e" / "report.json").read_text())
        assert 0.0 <= doc["auc_link"] <= 1.0 and doc["n_link"] > 0
        assert doc["nmi"] is not None and doc["manifest"]["seed"] == 0
        rep = read_report(tmp_path / "e" / "report.json")
        assert rep.auc == {"link": doc["auc_link"]}
        assert run("evaluate", "--checkpoint", ck, "--out", tmp_path / "e2") == 0
        doc2 = json.loads((tmp_path / "e2" / "report.json").read_text())
        assert doc2["nmi"] is None and doc2["ari"] is None
        assert not any(k.startswith("auc_") for k in doc2)

    def test_signed_tasks(self, tmp_path):
        g, _ = planted_signed(seed=0)
        path = write_graph(tmp_path / "g.tsv", g)
        assert run("split", "--input", path, "--kind", "signed", "--out", tmp_path / "s") == 0
        assert run("train", "--split", tmp_path / "s", "--kind", "signed", *FAST,
                   "--out", tmp_path / "t") == 0
        assert run("evaluate", "--checkpoint", tmp_path / "t" / "checkpoint.json",
                   "--split", tmp_path / "s", "--out", tmp_path / "e") == 0
        doc = json.loads((tmp_path / "e" / "report.json").read_text())
        assert {k for k in doc if k.startswith("auc_")} == {"auc_p@n", "auc_p@z", "auc_n@z"}

    def test_kind_mismatch(self, sbm, tmp_path):
        run("split", "--input", sbm[0], "--out", tmp_path / "s")
        assert run("train", "--split", tmp_path / "s", "--kind", "signed", *FAST,
                   "--out", tmp_path / "t") == 3

    def test_label_count_mismatch(self, sbm, tmp_path):
        run("train", "--input", sbm[0], *FAST, "--out", tmp_path / "t")
        bad = write_labels(tmp_path / "l.txt", [0, 1])
        assert run("evaluate", "--checkpoint", tmp_path / "t" / "checkpoint.json",
                   "--labels", bad, "--out", tmp_path / "e") == 2


class TestSweep:
    def test_single_point(self, sbm, tmp_path):
        path, labels, _ = sbm
        assert run("sweep-delta", "--input", path, "--grid", "1.0", *FAST, "--labels", labels,
                   "--out", tmp_path / "w") == 0
        lines = (tmp_path / "w" / "sweep.csv").read_text().splitlines()
        assert lines[0].startswith("# hmldm 0.1.0")
        assert lines[1] == "delta_sq,seed,auc_link,champion_fraction,identifiable,nmi,ari,error"
        assert len(lines) == 3
        summary = json.loads((tmp_path / "w" / "summary.json").read_text())
        assert summary["failed_points"] == 0 and summary["grid"] == [1.0]

    def test_workers_match_serial(self, sbm, tmp_path):
        args = ["sweep-delta", "--input", sbm[0], "--grid", "0.5,2", *FAST, "--n-seeds", 2]
        assert run(*args, "--workers", 1, "--out", tmp_path / "a") == 0
        assert run(*args, "--workers", 2, "--out", tmp_path / "b") == 0
        a = (tmp_path / "a" / "sweep.csv").read_text().splitlines()[1:]
        b = (tmp_path / "b" / "sweep.csv").read_text().splitlines()[1:]
        assert a == b and len(a) == 5

    def test_failed_point_is_marked(self, sbm, tmp_path):
        assert run("sweep-delta", "--input", sbm[0], "--grid", "1", *FAST, "--lr", 1e5,
                   "--out", tmp_path / "w") == 0
        row = (tmp_path / "w" / "sweep.csv").read_text().splitlines()[2]
        assert "DivergenceError" in row
        assert json.loads((tmp_path / "w" / "summary.json").read_text())["failed_points"] == 1

    @pytest.mark.parametrize("grid", ["2,1", "0,1"])
    def test_bad_grid(self, sbm, tmp_path, grid):
        assert run("sweep-delta", "--input", sbm[0], "--grid", grid, "--out", tmp_path / "w") == 2

    def test_first_identifiable(self):
        rows = [{"delta_sq": d, "seed": s, "identifiable": ok, "error": ""}
                for d, s, ok in [(0.5, 0, True), (0.5, 1, True), (1, 0, True), (1, 1, False),
                                 (2, 0, False), (2, 1, False)]]
        assert first_identifiable(rows) == 0.5
        rows.append({"delta_sq": 4, "seed": 0, "identifiable": None, "error": "boom"})
        assert first_identifiable(rows) == 0.5
        assert first_identifiable([]) is None


class TestOrder:
    def test_permutation_and_blocks(self, sbm, tmp_path):
        path, _, g = sbm
        assert run("train", "--input", path, "--dim", 1, "--iters", 1000, "--restarts", 1,
                   "--out", tmp_path / "t") == 0
        assert run("order", "--checkpoint", tmp_path / "t" / "checkpoint.json", "--input", path,
                   "--out", tmp_path / "o") == 0
        rows = (tmp_path / "o" / "permutation.txt").read_text().splitlines()
        perm = np.array([int(r) for r in rows if not r.startswith("#")])
        assert sorted(perm) == list(range(60))
        new_id = np.empty(60, dtype=int)
        new_id[perm] = np.arange(60)
        edges = np.loadtxt(tmp_path / "o" / "ordered_edges.tsv", dtype=int, comments="#")
        # mapping back through the permutation recovers the original edge set
        back = {tuple(sorted(e)) for e in perm[edges]}
        assert back == {tuple(e) for e in g.edges.tolist()}
        # with two contiguous blocks of 30, most edges stay inside a block
        within = np.mean((edges[:, 0] < 30) == (edges[:, 1] < 30))
        assert within >= 0.9
        lay = (tmp_path / "o" / "circular.csv").read_text().splitlines()
        assert lay[1] == "node,corner,corner_angle,x,y,w0,w1" and len(lay) == 62

    def test_node_count_mismatch(self, sbm, tmp_path):
        run("train", "--input", sbm[0], *FAST, "--out", tmp_path / "t")
        (tmp_path / "small.tsv").write_text("0 1\n1 2\n")
        assert run("order", "--checkpoint", tmp_path / "t" / "checkpoint.json",
                   "--input", tmp_path / "small.tsv", "--out", tmp_path / "o") == 3


def test_planted_communities_recovered_end_to_end(tmp_path):
    hits = 0
    for seed in range(5):
        g, labels = planted_sbm(seed=seed)
        path = write_graph(tmp_path / f"g{seed}.tsv", g)
        out = tmp_path / f"t{seed}"
        assert run("train", "--input", path, "--dim", 1, "--iters", 1500, "--restarts", 1,
                   "--seed", seed, "--out", out) == 0
        state, _, _, _ = load_checkpoint(out / "checkpoint.json")
        hits += nmi(labels, state.memberships.argmax(1)) >= 0.95
    assert hits >= 4
