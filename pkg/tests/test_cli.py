import pytest

from hodn.cli import ABLATION_VARIANTS, main
from hodn.config import save_config
from hodn.data import load_dataset


@pytest.fixture
def workspace(tmp_path, tiny):
    conf = tmp_path / "tiny.conf"
    save_config(tiny.replace(epochs=2), conf)
    assert main(["gen", "--config", str(conf), "--count", "3", "--seed", "1", "--out", str(tmp_path / "d.txt")]) == 0
    return tmp_path, conf


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_gen_empty(tmp_path, tiny):
    save_config(tiny, tmp_path / "c.conf")
    assert main(["gen", "--config", str(tmp_path / "c.conf"), "--count", "0", "--seed", "0",
                 "--out", str(tmp_path / "e.txt")]) == 0
    assert load_dataset(tmp_path / "e.txt") == []


def test_train_eval_probe(workspace, capsys):
    tmp, conf = workspace
    data = str(tmp / "d.txt")
    assert main(["train", "--config", str(conf), "--data", data, "--out", str(tmp / "run")]) == 0
    assert {"model.ckpt", "model.ckpt.bin", "metrics.tsv", "config.conf"} <= set(files(tmp / "run"))
    assert len((tmp / "run" / "metrics.tsv").read_text().splitlines()) == 1 + 2 * 3
    capsys.readouterr()

    assert main(["eval", "--config", str(conf), "--data", data, "--checkpoint", str(tmp / "run" / "model.ckpt"),
                 "--dump", str(tmp / "dump.tsv")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "metric\tvalue" and any(line.startswith("role_map\t") for line in out)
    assert all(len(line.split("\t")) == 12 for line in (tmp / "dump.tsv").read_text().splitlines())

    assert main(["probe", "--config", str(conf), "--data", data, "--checkpoint", str(tmp / "run" / "model.ckpt"),
                 "--target", "both", "--probs", "0,1"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "target\tprob\tmap\tmasked_cells" and len(rows) == 5


def test_train_is_reproducible(workspace):
    tmp, conf = workspace
    for out in ("a", "b"):
        assert main(["train", "--config", str(conf), "--data", str(tmp / "d.txt"), "--out", str(tmp / out),
                     "--seed", "9"]) == 0
    assert files(tmp / "a") == files(tmp / "b")


def test_echoed_config_reproduces_run(workspace):
    tmp, conf = workspace
    main(["train", "--config", str(conf), "--data", str(tmp / "d.txt"), "--out", str(tmp / "a"), "--seed", "4"])
    main(["train", "--config", str(tmp / "a" / "config.conf"), "--data", str(tmp / "d.txt"), "--out", str(tmp / "b")])
    assert files(tmp / "a") == files(tmp / "b")


def test_eval_with_mismatched_checkpoint(workspace, capsys):
    tmp, conf = workspace
    main(["train", "--config", str(conf), "--data", str(tmp / "d.txt"), "--out", str(tmp / "run")])
    other = tmp / "other.conf"
    other.write_text(conf.read_text().replace("link_mode = human_guide", "link_mode = random_guide"))
    code = main(["eval", "--config", str(other), "--data", str(tmp / "d.txt"),
                 "--checkpoint", str(tmp / "run" / "model.ckpt")])
    assert code == 1
    assert "queries.random" in capsys.readouterr().err


def test_ablate(workspace, capsys):
    tmp, conf = workspace
    conf.write_text(conf.read_text().replace("epochs = 2", "epochs = 1"))
    assert main(["ablate", "--config", str(conf), "--data", str(tmp / "d.txt"), "--out", str(tmp / "abl")]) == 0
    table = (tmp / "abl" / "ablation.tsv").read_text().splitlines()
    assert len(table) == 1 + len(ABLATION_VARIANTS) == 7
    assert {row.split("\t")[0] for row in table[1:]} == {v[0] for v in ABLATION_VARIANTS}


def test_gradcheck_small_config(workspace, capsys):
    _, conf = workspace
    assert main(["gradcheck", "--config", str(conf)]) == 0
    assert "FAIL" not in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["train", "--config", "x"], ["gen", "--bogus", "1"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_error(tmp_path, capsys):
    assert main(["gen", "--config", str(tmp_path / "missing.conf"), "--count", "1", "--seed", "0",
                 "--out", str(tmp_path / "x")]) == 1
    assert "error" in capsys.readouterr().err


def test_bad_config_reports_line(tmp_path, capsys):
    (tmp_path / "c.conf").write_text("d = 8\nfoo = 1\n")
    assert main(["gen", "--config", str(tmp_path / "c.conf"), "--count", "1", "--seed", "0",
                 "--out", str(tmp_path / "x")]) == 1
    assert "line 2" in capsys.readouterr().err
