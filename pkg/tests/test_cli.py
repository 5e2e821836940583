"""The umbrella CLI, exercised end to end on a small synthetic corpus."""

import json

import pytest

from prodrec.cli import main
from prodrec.config import dump_config, load_config


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rc = main(
        [
            "gen",
            "--out", str(root / "data"),
            "--users", "60",
            "--products", "40",
            "--groups", "4",
            "--receipts", "6:8",
            "--items", "2:3",
            "--within-group-prob", "0.85",
            "--seed", "5",
        ]
    )
    assert rc == 0
    return root


def test_gen_outputs_exist(workdir):
    data = workdir / "data"
    for name in ("receipts.tsv", "cohorts.tsv", "truth_groups.tsv", "truth_transitions.tsv"):
        assert (data / name).exists()
    first = (data / "receipts.tsv").read_text().splitlines()[0]
    assert len(first.split("\t")) == 4


def test_gen_deterministic(workdir, tmp_path):
    rc = main(
        [
            "gen", "--out", str(tmp_path / "again"),
            "--users", "60", "--products", "40", "--groups", "4",
            "--receipts", "6:8", "--items", "2:3",
            "--within-group-prob", "0.85", "--seed", "5",
        ]
    )
    assert rc == 0
    a = (workdir / "data" / "receipts.tsv").read_bytes()
    b = (tmp_path / "again" / "receipts.tsv").read_bytes()
    assert a == b


@pytest.fixture(scope="module")
def trained(workdir):
    model = workdir / "model.vec"
    rc = main(
        [
            "train",
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--method", "bagged",
            "--model-out", str(model),
            "--vocab-out", str(workdir / "vocab.tsv"),
            "--dim", "16",
            "--epochs", "2",
            "--negatives", "5",
            "--seed", "3",
        ]
    )
    assert rc == 0
    return model


def test_train_writes_model_files(trained, workdir):
    header = trained.read_text().splitlines()[0]
    assert header == "40 16"
    assert (trained.parent / (trained.name + ".out")).exists()
    assert (workdir / "vocab.tsv").exists()


@pytest.fixture(scope="module")
def clustered(workdir, trained):
    rc = main(
        [
            "cluster",
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--model", str(trained),
            "--clusters", "4",
            "--out", str(workdir / "clusters.tsv"),
            "--transitions-out", str(workdir / "transitions.tsv"),
            "--seed", "2",
        ]
    )
    assert rc == 0
    return workdir / "clusters.tsv", workdir / "transitions.tsv"


def test_cluster_files(clustered):
    clusters, transitions = clustered
    assert len(clusters.read_text().splitlines()) == 40
    assert transitions.read_text().splitlines()[0] == "4"


def test_recommend_topk_tsv(capsys, workdir, trained):
    query = (workdir / "vocab.tsv").read_text().splitlines()[0].split("\t")[0]
    rc = main(
        ["recommend", "--method", "topk", "--model", str(trained), "--k", "5", "--product", query]
    )
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    rank, token, score, source = lines[0].split("\t")
    assert rank == "1" and token.startswith("p") and source == query
    float(score)


def test_recommend_cluster_method(capsys, workdir, trained, clustered):
    clusters, transitions = clustered
    query = (workdir / "vocab.tsv").read_text().splitlines()[0].split("\t")[0]
    rc = main(
        [
            "recommend", "--method", "cluster",
            "--model", str(trained),
            "--clusters", str(clusters),
            "--transitions", str(transitions),
            "--k", "6", "--product", query,
        ]
    )
    assert rc == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 6


def test_recommend_user_history_with_date(capsys, workdir, trained):
    receipts = (workdir / "data" / "receipts.tsv").read_text().splitlines()
    user = receipts[0].split("\t")[0]
    rc = main(
        [
            "recommend", "--method", "topk",
            "--model", str(trained),
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--k", "4", "--user", user, "--date", "5", "--alpha", "0.9",
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert 1 <= len(out) <= 4


def test_recommend_popular(capsys, workdir):
    rc = main(
        [
            "recommend", "--method", "popular",
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--cohorts", str(workdir / "data" / "cohorts.tsv"),
            "--k", "5", "--date", "7", "--lookback", "7",
        ]
    )
    assert rc == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 5


def test_evaluate_report_and_summary(capsys, workdir, trained):
    report = workdir / "report.tsv"
    summary = workdir / "summary.json"
    rc = main(
        [
            "evaluate",
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--cohorts", str(workdir / "data" / "cohorts.tsv"),
            "--cutoff", "6",
            "--method", "topk",
            "--model", str(trained),
            "--k", "10",
            "--report", str(report),
            "--summary", str(summary),
        ]
    )
    assert rc == 0
    lines = report.read_text().strip().splitlines()
    assert lines
    day, acc, hits, total = lines[0].split("\t")
    assert int(day) == 1 and 0.0 <= float(acc) <= 1.0 and int(hits) <= int(total)
    payload = json.loads(summary.read_text())
    assert set(payload) >= {"accuracy", "total_purchases", "backfill_fraction", "days"}


def test_evaluate_sweep_rows(capsys, workdir, trained):
    rc = main(
        [
            "evaluate",
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--cutoff", "6",
            "--method", "topk",
            "--model", str(trained),
            "--report", str(workdir / "unused.tsv"),
            "--sweep", "alpha=1.0,0.9",
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0].startswith("alpha\t")
    values = {row.split("\t")[0] for row in out[1:]}
    assert values == {"1.0", "0.9"}


def test_evaluate_random_method(workdir):
    rc = main(
        [
            "evaluate",
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--cutoff", "6",
            "--method", "random",
            "--report", str(workdir / "random_report.tsv"),
        ]
    )
    assert rc == 0


def test_dump_config_round_trips(tmp_path, capsys):
    assert main(["--dump-config"]) == 0
    text = capsys.readouterr().out
    payload = json.loads(text)
    assert payload["evaluate"]["k"] == 20
    assert payload["serve"]["ttl_days"] == 60
    assert payload["recommend"]["alpha"] == 0.9
    assert payload["serve"]["popularity_per_cohort"] == 100
    assert payload["serve"]["popularity_refresh_days"] == 3
    assert payload["serve"]["popularity_lookback_days"] == 5
    assert payload["serve"]["model_refresh_days"] == 5
    assert payload["train"]["dim"] == 300
    assert payload["train"]["context"] == 5
    assert payload["train"]["negatives"] == 10

    override = tmp_path / "config.json"
    override.write_text(json.dumps({"evaluate": {"k": 7}, "train": {"dim": 12}}))
    cfg = load_config(str(override))
    assert cfg.evaluate.k == 7
    assert cfg.train.dim == 12
    assert cfg.recommend.alpha == 0.9  # untouched sections keep defaults


def test_unknown_config_section_rejected(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": {}}))
    with pytest.raises(KeyError):
        load_config(str(bad))


def test_parse_error_reported_as_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("u1\tnot-a-timestamp\tA\t1.0\n")
    rc = main(
        ["train", "--input", str(bad), "--method", "bagged", "--model-out", str(tmp_path / "m")]
    )
    assert rc == 1
    assert "line 1" in capsys.readouterr().err


def test_recommend_copurchase_cli(capsys, workdir):
    query = (workdir / "vocab.tsv").read_text().splitlines()[0].split("\t")[0]
    rc = main(
        [
            "recommend", "--method", "copurchase",
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--k", "5", "--product", query,
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert 1 <= len(out) <= 5
    assert all(float(line.split("\t")[2]) >= 1.0 for line in out)  # raw counts


def test_user_method_cli_round_trip(capsys, workdir, tmp_path):
    model_path = tmp_path / "user_model.vec"
    rc = main(
        [
            "train",
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--method", "user",
            "--model-out", str(model_path),
            "--dim", "12", "--epochs", "2", "--negatives", "4", "--seed", "6",
        ]
    )
    assert rc == 0
    assert (tmp_path / "user_model.vec.users").exists()
    capsys.readouterr()  # drop the train status line
    user = (workdir / "data" / "receipts.tsv").read_text().split("\t", 1)[0]
    rc = main(
        ["recommend", "--method", "user", "--model", str(model_path), "--k", "4", "--user", user]
    )
    assert rc == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 4


def test_config_horizons_tuple_conversion(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text('{"evaluate": {"horizon_days": [1, 2]}}')
    cfg = load_config(str(cfg_path))
    assert cfg.evaluate.horizon_days == (1, 2)


def test_config_file_flows_into_evaluate(workdir, trained, tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text('{"evaluate": {"k": 1}}')
    report = tmp_path / "k1_report.tsv"
    rc = main(
        [
            "--config", str(cfg_path),
            "evaluate",
            "--input", str(workdir / "data" / "receipts.tsv"),
            "--cutoff", "6",
            "--method", "random",
            "--report", str(report),
        ]
    )
    assert rc == 0
    capsys.readouterr()
    # with k=1 over 40 products, accuracy collapses toward 1/40
    accs = [float(line.split("\t")[1]) for line in report.read_text().splitlines()]
    assert all(a <= 0.2 for a in accs)
