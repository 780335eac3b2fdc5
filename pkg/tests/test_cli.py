import json
import xml.etree.ElementTree as ET

import pytest

from cntm import cli, graphs as G, harness as H, model as M


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One tiny end-to-end run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.cgd"
    ckpt = root / "model.ckpt"
    assert run("gen", "--nodes", "6", "--count", "4", "--seed", "3",
               "--out", str(data)) == 0
    assert run("train", "--data", str(data), "--model", "cntm",
               "--steps", "2", "--seed", "1", "--batch", "2",
               "--controller-width", "12", "--head-width", "12",
               "--mem-rows", "6", "--mem-cols", "6", "--walk", "3",
               "--no-early-stop", "--threads", "1",
               "--out", str(ckpt)) == 0
    out_dir = root / "metrics"
    assert run("eval", "--ckpt", str(ckpt), "--data", str(data),
               "--walk", "4", "--walks-per-graph", "3", "--seed", "2",
               "--out-dir", str(out_dir)) == 0
    return root


def test_gen_writes_valid_dataset(workdir):
    ds = G.load_dataset(workdir / "data.cgd")
    assert len(ds.entries) == 4
    for split in ds.entries:
        split.graph.validate()
        split.observed_graph.validate()


def test_gen_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.cgd", tmp_path / "b.cgd"
    assert run("gen", "--nodes", "5", "--count", "3", "--seed", "9",
               "--out", str(a)) == 0
    assert run("gen", "--nodes", "5", "--count", "3", "--seed", "9",
               "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_rejects_single_node(tmp_path):
    assert run("gen", "--nodes", "1", "--count", "2", "--seed", "0",
               "--out", str(tmp_path / "x.cgd")) == cli.EXIT_USAGE


def test_gen_writes_manifest(workdir):
    manifest = json.loads((workdir / "data.cgd.manifest.json").read_text())
    assert manifest["command"] == "gen"
    assert manifest["seed"] == 3
    assert manifest["config"]["nodes"] == 6
    assert manifest["finished"] >= manifest["started"]


def test_train_checkpoint_loads_and_matches_dataset(workdir):
    params, cb, nodes, conditions, seed = M.load_checkpoint(
        workdir / "model.ckpt")
    ds = G.load_dataset(workdir / "data.cgd")
    assert cb == ds.codebook
    assert nodes == ds.nodes
    assert params.config.use_memory


def test_train_writes_loss_log(workdir):
    lines = (workdir / "model.ckpt.loss.csv").read_text().strip().split("\n")
    assert lines[0] == "step,loss"
    assert len(lines) >= 2
    step, loss = lines[1].split(",")
    assert float(loss) > 0


def test_train_lstm_checkpoint_lacks_memory_tensors(workdir, tmp_path):
    ckpt = tmp_path / "lstm.ckpt"
    assert run("train", "--data", str(workdir / "data.cgd"), "--model", "lstm",
               "--steps", "2", "--seed", "1", "--batch", "2",
               "--controller-width", "12", "--head-width", "12",
               "--walk", "3", "--no-early-stop", "--threads", "1",
               "--out", str(ckpt)) == 0
    params, *_ = M.load_checkpoint(ckpt)
    assert "memory.init" not in params.tensors
    assert not any(k.startswith(("read.", "write.")) for k in params.tensors)


def test_eval_metrics_shape_and_invariants(workdir):
    rows = H.read_metrics(workdir / "metrics" / "metrics.csv")
    ds = G.load_dataset(workdir / "data.cgd")
    predictors = {r.predictor for r in rows}
    assert predictors == {"cntm", "random", "graph_distance"}
    assert len(rows) == len(ds.entries) * len(predictors)
    for r in rows:
        assert 0.0 <= r.path_accuracy <= r.edge_accuracy <= 1.0


def test_eval_summary_matches_row_means(workdir):
    rows = H.read_metrics(workdir / "metrics" / "metrics.csv")
    summary = (workdir / "metrics" / "summary.csv").read_text().strip().split("\n")
    agg = H.aggregate(rows)
    assert len(summary) == 1 + len(agg)
    for line in summary[1:]:
        name, graphs, edge, path = line.split(",")
        assert float(edge) == pytest.approx(agg[name]["edge_accuracy"])
        assert float(path) == pytest.approx(agg[name]["path_accuracy"])


def test_eval_rejects_mismatched_codebook(workdir, tmp_path):
    other = tmp_path / "other.cgd"
    assert run("gen", "--nodes", "6", "--count", "2", "--seed", "77",
               "--out", str(other)) == 0
    code = run("eval", "--ckpt", str(workdir / "model.ckpt"),
               "--data", str(other), "--out-dir", str(tmp_path / "m"))
    assert code == cli.EXIT_DATA


def test_plot_produces_wellformed_svg_and_stats(workdir, tmp_path):
    svg = tmp_path / "box.svg"
    assert run("plot", "--metrics", str(workdir / "metrics" / "metrics.csv"),
               "--baseline", "random", "--out", str(svg)) == 0
    tree = ET.parse(svg)   # strict XML parse
    assert tree.getroot().tag.endswith("svg")
    stats = (tmp_path / "box.csv").read_text().strip().split("\n")
    assert stats[0].startswith("predictor,baseline,count,min,q1,median")
    assert len(stats) == 4   # header + three predictors


def test_plot_self_baseline_box_collapses(workdir, tmp_path):
    svg = tmp_path / "self.svg"
    assert run("plot", "--metrics", str(workdir / "metrics" / "metrics.csv"),
               "--baseline", "cntm", "--out", str(svg)) == 0
    rows = H.read_metrics(workdir / "metrics" / "metrics.csv")
    stats = {s.predictor: s for s in H.compare(rows, "cntm")}
    s = stats["cntm"]
    assert (s.minimum, s.q1, s.median, s.q3, s.maximum) == (0, 0, 0, 0, 0)


def test_plot_stats_csv_matches_compare_exactly(workdir, tmp_path):
    svg = tmp_path / "check.svg"
    run("plot", "--metrics", str(workdir / "metrics" / "metrics.csv"),
        "--baseline", "random", "--out", str(svg))
    rows = H.read_metrics(workdir / "metrics" / "metrics.csv")
    expected = H.compare(rows, "random")
    lines = (tmp_path / "check.csv").read_text().strip().split("\n")[1:]
    for line, s in zip(lines, expected):
        parts = line.split(",")
        assert parts[0] == s.predictor
        assert float(parts[3]) == s.minimum
        assert float(parts[4]) == s.q1
        assert float(parts[5]) == s.median
        assert float(parts[6]) == s.q3
        assert float(parts[7]) == s.maximum


def test_plot_unknown_baseline_is_usage_error(workdir, tmp_path, capsys):
    code = run("plot", "--metrics", str(workdir / "metrics" / "metrics.csv"),
               "--baseline", "nope", "--out", str(tmp_path / "x.svg"))
    assert code == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "random" in err and "graph_distance" in err


def test_unreadable_dataset_is_data_error(tmp_path):
    bad = tmp_path / "bad.cgd"
    bad.write_text("not a dataset\n")
    code = run("train", "--data", str(bad), "--steps", "1",
               "--out", str(tmp_path / "c.ckpt"))
    assert code == cli.EXIT_DATA


def test_config_file_supplies_defaults_flags_override(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("nodes = 5\ncount = 2\nseed = 4  # comment\n")
    out1 = tmp_path / "a.cgd"
    assert run("--config", str(cfgfile), "gen", "--out", str(out1)) == 0
    ds = G.load_dataset(out1)
    assert len(ds.nodes) == 5 and len(ds.entries) == 2
    out2 = tmp_path / "b.cgd"
    assert run("--config", str(cfgfile), "gen", "--count", "3",
               "--out", str(out2)) == 0
    assert len(G.load_dataset(out2).entries) == 3


def test_malformed_config_file_is_usage_error(tmp_path):
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("this line has no equals sign\n")
    code = run("--config", str(cfgfile), "gen", "--nodes", "5", "--count", "1",
               "--out", str(tmp_path / "x.cgd"))
    assert code == cli.EXIT_USAGE


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("CNTM_THREADS", "3")
    assert cli._default_threads() == 3
    monkeypatch.setenv("CNTM_THREADS", "junk")
    with pytest.raises(cli.UsageError):
        cli._default_threads()
    monkeypatch.delenv("CNTM_THREADS")
    assert cli._default_threads() >= 1


def test_commands_do_not_mutate_inputs(workdir):
    data = workdir / "data.cgd"
    before = data.read_bytes()
    run("eval", "--ckpt", str(workdir / "model.ckpt"), "--data", str(data),
        "--walks-per-graph", "2", "--out-dir", str(workdir / "m2"))
    assert data.read_bytes() == before
