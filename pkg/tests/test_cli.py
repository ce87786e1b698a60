import hashlib
import json

import pytest

from caged.cli import EXIT_DIVERGED, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main, parse_overrides, \
    UsageError


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def prepared(tmp_path):
    raw = tmp_path / "raw.tsv"
    assert main(["synth", "--users", "40", "--items", "30", "--interactions", "400",
                 "--zipf", "1.2", "--seed", "3", "--out", str(raw)]) == EXIT_OK
    data = tmp_path / "data"
    assert main(["prepare", str(raw), "--out", str(data), "--seed", "1"]) == EXIT_OK
    return data


TRAIN_FLAGS = ["--dim", "8", "--layers", "2", "--epochs", "3", "--batch-size", "128",
               "--eta1", "0.01", "--eta2", "0.01", "--k", "10", "--set", "patience=5"]


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    for p in (a, b):
        main(["synth", "--users", "20", "--items", "10", "--interactions", "50", "--out", str(p)])
    assert _digest(a) == _digest(b)
    assert len(a.read_text().splitlines()) == 50


def test_synth_infeasible(tmp_path, capsys):
    code = main(["synth", "--users", "2", "--items", "2", "--interactions", "5",
                 "--out", str(tmp_path / "x.tsv")])
    assert code == EXIT_RUNTIME
    assert "exceed" in capsys.readouterr().err


def test_prepare_outputs_and_determinism(prepared, tmp_path, capsys):
    for name in ("train.tsv", "validation.tsv", "test.tsv", "index_map.json", "stats.json"):
        assert (prepared / name).exists()
    again = tmp_path / "again"
    main(["prepare", str(tmp_path / "raw.tsv"), "--out", str(again), "--seed", "1"])
    for name in ("train.tsv", "validation.tsv", "test.tsv", "index_map.json"):
        assert _digest(prepared / name) == _digest(again / name)
    out = capsys.readouterr().out
    assert "density=" in out


def test_prepare_movielens_binarization(tmp_path):
    raw = tmp_path / "ratings.dat"
    raw.write_text("1::10::5::1\n1::11::4::2\n2::10::5::3\n2::12::3::4\n3::12::5::5\n")
    out = tmp_path / "ml"
    assert main(["prepare", str(raw), "--out", str(out), "--format", "movielens"]) == EXIT_OK
    stats = json.loads((out / "stats.json").read_text())
    assert stats["kept"]["interactions"] == 3
    assert stats["raw"]["density"] == round(5 / 9, 5)


def test_prepare_missing_file(tmp_path, capsys):
    code = main(["prepare", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "o")])
    assert code != EXIT_OK
    assert capsys.readouterr().err


def test_unknown_key_lists_valid_keys():
    with pytest.raises(UsageError, match="valid keys: .*epsilon"):
        parse_overrides(["nonsense=1"])


def test_train_usage_error(prepared, tmp_path, capsys):
    code = main(["train", str(prepared), "--out", str(tmp_path / "r"), "--set", "bogus=2"])
    assert code == EXIT_USAGE
    code = main(["train", str(prepared), "--out", str(tmp_path / "r"), "--epsilon", "0"])
    assert code == EXIT_USAGE


def test_train_zero_epochs(prepared, tmp_path):
    out = tmp_path / "run0"
    assert main(["train", str(prepared), "--out", str(out), "--epochs", "0", "--dim", "4"]) == 0
    assert (out / "progress.jsonl").read_text() == ""
    assert [p.name for p in (out / "checkpoints").iterdir()] == ["epoch_0000"]


def test_train_deterministic_and_evaluate(prepared, tmp_path, capsys):
    runs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["train", str(prepared), "--out", str(out), *TRAIN_FLAGS]) == EXIT_OK
        runs.append(out)
    for f in ("progress.jsonl", "report.json"):
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()
    report = json.loads((runs[0] / "report.json").read_text())
    assert report["k"] == 10
    assert set(report) >= {"all", "niche", "popular", "iip_histogram"}

    capsys.readouterr()
    outs = []
    for _ in range(2):
        assert main(["evaluate", str(runs[0] / "final"), str(prepared)]) == EXIT_OK
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert json.loads(outs[0]) == report

    init = runs[0] / "checkpoints" / "epoch_0000"
    assert main(["evaluate", str(init), str(prepared), "--k", "20"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["k"] == 20 and 0 <= rep["all"]["recall"] <= 1

    csv_path = tmp_path / "stages.csv"
    assert main(["report", str(runs[0]), "--out", str(csv_path)]) == EXIT_OK
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_recall,updated,bin_left,bin_right,count"
    assert len(lines) > 10


@pytest.mark.parametrize("name", ["wo-ts", "wo-uc"])
def test_ablation_flags(prepared, tmp_path, name):
    out = tmp_path / name
    assert main(["train", str(prepared), "--out", str(out), *TRAIN_FLAGS,
                 "--ablation", name]) == EXIT_OK
    assert (out / "report.json").exists()


def test_divergence_exit_code(prepared, tmp_path):
    out = tmp_path / "boom"
    code = main(["train", str(prepared), "--out", str(out), *TRAIN_FLAGS,
                 "--set", "init_std=1e200"])
    assert code == EXIT_DIVERGED
    rec = json.loads((out / "failure.json").read_text())
    assert rec["status"] == "diverged"


def test_config_file_and_override_precedence(prepared, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# desk\ndim=4\nlayers=1\nmax_epochs=1\n")
    out = tmp_path / "cf"
    assert main(["train", str(prepared), "--out", str(out), "--config", str(cfg),
                 "--layers", "2"]) == EXIT_OK
    resolved = (out / "config.txt").read_text()
    assert "dim=4" in resolved and "layers=2" in resolved
