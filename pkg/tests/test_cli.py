import csv
import json
import re

import pytest
import yaml
from click.testing import CliRunner

from trajsim import __version__
from trajsim.cli import cli
from trajsim.core.matrix import load_matrix
from trajsim.core.trajectory import load_trajectories
from trajsim.eval.retrieval import rank_candidates
from trajsim.model.checkpoint import load_model
from trajsim.model.features import featurize
from trajsim.utils.config import RunConfig

SMALL = [
    "--set", "model.d=8", "--set", "model.heads=2", "--set", "model.d_hid=16",
    "--set", "ddbm.resample_len=8", "--set", "train.batch_size=4",
    "--set", "pretrain.epochs=1", "--set", "finetune.epochs=2",
]


def invoke(args, expect=0):
    result = CliRunner().invoke(cli, args, env={"TRAJSIM_CONFIG": None, "TRAJSIM_THREADS": None},
                                catch_exceptions=False)
    assert result.exit_code == expect, result.output
    return result


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Run the pipeline once on a small synthetic corpus and share its outputs."""
    root = tmp_path_factory.mktemp("pipeline")
    paths = {name: root / name for name in ("raw.csv", "clean.csv", "sspd.tsdm", "bridge.tsps", "model.tsps")}
    invoke(SMALL + ["generate", str(paths["raw.csv"]), "--count", "30", "--clusters", "3",
                    "--min-len", "20", "--max-len", "25"])
    invoke(SMALL + ["preprocess", str(paths["raw.csv"]), str(paths["clean.csv"])])
    invoke(SMALL + ["distmatrix", str(paths["clean.csv"]), str(paths["sspd.tsdm"]), "--metric", "sspd"])
    invoke(SMALL + ["pretrain", str(paths["clean.csv"]), str(paths["bridge.tsps"])])
    invoke(SMALL + ["finetune", str(paths["clean.csv"]), str(paths["sspd.tsdm"]), str(paths["model.tsps"]),
                    "--init", str(paths["bridge.tsps"])])
    paths["root"] = root
    return paths


def test_version():
    assert __version__ in invoke(["--version"]).output


def test_config_show_marks_overrides():
    output = invoke(["--set", "model.d=32", "config", "show"]).output
    assert "model.d" in output and "32 *" in output


def test_config_path_without_file(monkeypatch, tmp_path):
    monkeypatch.setenv("HOME", str(tmp_path))
    assert "using defaults" in invoke(["config", "path"]).output


def test_generate_and_preprocess_outputs(workspace):
    trajs = load_trajectories(workspace["clean.csv"])
    assert len(trajs) == 30
    split = json.loads((workspace["root"] / "clean.csv.split.json").read_text())
    assert split["seed"] == 0
    assert (len(split["train"]), len(split["eval"]), len(split["test"])) == (21, 3, 6)


def test_distmatrix_output(workspace):
    matrix = load_matrix(workspace["sspd.tsdm"])
    assert matrix.n_trajs == 30
    assert matrix.metric_tag == "sspd"
    assert matrix.ids == [t.id for t in load_trajectories(workspace["clean.csv"])]


def test_training_outputs(workspace):
    root = workspace["root"]
    with open(root / "bridge.tsps.loss.csv") as f:
        assert [row["epoch"] for row in csv.DictReader(f)] == ["1"]
    meta = yaml.safe_load((root / "model.tsps.meta.yml").read_text())
    assert meta["stage"] == "finetune"
    assert meta["metric"] == "sspd"
    assert meta["tau"] > 0
    assert meta["init"].endswith("bridge.tsps")
    with open(root / "model.tsps.history.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    assert rows[0]["HR@1"] != "" and rows[0]["HR@20"] == ""


def test_evaluate_writes_report(workspace):
    out = workspace["root"] / "report"
    result = invoke(SMALL + ["evaluate", str(workspace["clean.csv"]), str(workspace["sspd.tsdm"]),
                             str(workspace["model.tsps"]), "--out", str(out)])
    assert "HR@1" in result.output
    payload = json.loads((workspace["root"] / "report.json").read_text())
    assert set(payload["metrics"]) == {"HR@1", "HR@5"}
    assert payload["n_queries"] == 6 and payload["split"] == "test"
    assert all(0.0 <= v <= 1.0 for v in payload["metrics"].values())
    assert payload["encode_trajectories_per_sec"] > 0
    assert "trajectories/s" in result.output


def test_query_clamps_k(workspace):
    ids = [t.id for t in load_trajectories(workspace["clean.csv"])]
    result = invoke(SMALL + ["query", str(workspace["model.tsps"]), str(workspace["clean.csv"]), ids[0], "-k", "100"])
    assert "exceeds" in result.output
    assert ids[1] in result.output


def test_query_unknown_id_exits_with_data_error(workspace):
    invoke(SMALL + ["query", str(workspace["model.tsps"]), str(workspace["clean.csv"]), "nope"], expect=3)


def test_model_config_mismatch_exits_with_config_error(workspace):
    invoke(["--set", "model.d=16", "--set", "model.heads=2", "evaluate", str(workspace["clean.csv"]),
            str(workspace["sspd.tsdm"]), str(workspace["model.tsps"])], expect=2)


def test_unknown_config_key_exits_with_config_error():
    invoke(["--set", "model.width=3", "config", "show"], expect=2)


def test_malformed_csv_exits_with_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("traj_id,seq,lon,lat\na,0,x,41.1\n")
    invoke(["distmatrix", str(bad), str(tmp_path / "m.tsdm"), "--metric", "hausdorff"], expect=3)


def test_planar_flag_reaches_the_matrix(tmp_path):
    path = tmp_path / "square.csv"
    path.write_text("traj_id,seq,lon,lat\na,0,0.0,0.0\na,1,1.0,0.0\nb,0,0.0,1.0\nb,1,1.0,1.0\n")
    out = tmp_path / "planar.tsdm"
    invoke(["--planar", "distmatrix", str(path), str(out), "--metric", "frechet"])
    assert load_matrix(out).values[0, 1] == 1.0


def test_sweep_writes_one_series_per_value(workspace):
    out = workspace["root"] / "epsilon.csv"
    result = invoke(SMALL + ["sweep", str(workspace["clean.csv"]), str(workspace["sspd.tsdm"]), str(out),
                             "--param", "model.epsilon", "--values", "0.3,0.7", "--init", str(workspace["bridge.tsps"])])
    assert "model.epsilon" in result.output
    with open(out) as f:
        reader = csv.DictReader(f)
        assert reader.fieldnames == ["param", "value", "metric", "k", "score"]
        rows = list(reader)
    assert [(r["value"], r["metric"], r["k"]) for r in rows] == [
        ("0.3", "HR", "1"), ("0.3", "HR", "5"), ("0.7", "HR", "1"), ("0.7", "HR", "5"),
    ]
    assert {r["param"] for r in rows} == {"model.epsilon"}
    assert all(0.0 <= float(r["score"]) <= 1.0 for r in rows)


def test_sweep_rejects_unknown_key_before_training(workspace, tmp_path):
    invoke(SMALL + ["sweep", str(workspace["clean.csv"]), str(workspace["sspd.tsdm"]), str(tmp_path / "s.csv"),
                    "--param", "model.width", "--values", "1,2"], expect=2)
    assert not (tmp_path / "s.csv").exists()


def test_same_seed_gives_identical_checkpoints(workspace, tmp_path):
    csv_path, matrix = str(workspace["clean.csv"]), str(workspace["sspd.tsdm"])
    for name in ("a", "b"):
        invoke(SMALL + ["--seed", "5", "pretrain", csv_path, str(tmp_path / f"{name}-bridge.tsps")])
        invoke(SMALL + ["--seed", "5", "finetune", csv_path, matrix, str(tmp_path / f"{name}-model.tsps"),
                        "--init", str(tmp_path / f"{name}-bridge.tsps")])
    for stage in ("bridge", "model"):
        assert (tmp_path / f"a-{stage}.tsps").read_bytes() == (tmp_path / f"b-{stage}.tsps").read_bytes()


def test_preprocess_is_idempotent(workspace, tmp_path):
    again = tmp_path / "again.csv"
    invoke(SMALL + ["preprocess", str(workspace["clean.csv"]), str(again)])
    assert again.read_bytes() == workspace["clean.csv"].read_bytes()
    first = workspace["root"] / "clean.csv.split.json"
    assert (tmp_path / "again.csv.split.json").read_bytes() == first.read_bytes()


def test_query_order_matches_evaluation_ranking(workspace):
    trajs = load_trajectories(workspace["clean.csv"])
    ids = [t.id for t in trajs]
    query_id = ids[4]
    result = invoke(SMALL + ["query", str(workspace["model.tsps"]), str(workspace["clean.csv"]), query_id, "-k", "5"])
    known = set(ids) - {query_id}
    shown = [tok for tok in re.split(r"[\s│|]+", result.output) if tok in known]

    run = RunConfig.build(None, {"model.d": 8, "model.heads": 2, "model.d_hid": 16})
    model, _ = load_model(workspace["model.tsps"], expected=run.sam_config())
    embs = model.embed([featurize(t, run.grid()) for t in trajs])
    ranking = rank_candidates(embs[4], embs, ids, query_id, exclude=4)
    assert shown == list(ranking.ids[:5])


def test_mse_only_run_has_no_ranking_contribution(workspace, tmp_path):
    out = tmp_path / "mse.tsps"
    invoke(SMALL + ["--set", "loss.gamma1=0", "--set", "loss.gamma2=0", "finetune", str(workspace["clean.csv"]),
                    str(workspace["sspd.tsdm"]), str(out)])
    with open(tmp_path / "mse.tsps.history.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    for row in rows:
        assert float(row["train_loss"]) == float(row["mse"])
        assert float(row["listnet"]) > 0 and float(row["rd_listnet"]) > 0
    assert yaml.safe_load((tmp_path / "mse.tsps.meta.yml").read_text())["init"] is None
