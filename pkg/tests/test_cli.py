import json
import time

import pytest

from perdpp.cli import main

TRIVIAL = """\
map = trivial-3x3
algorithm = per-dpp-elastic
epochs = 10
episodes_per_epoch = 10
max_steps = 10
"""


@pytest.fixture
def trained(tmp_path, capsys):
    cfg = tmp_path / "trivial.cfg"
    cfg.write_text(TRIVIAL)
    out = tmp_path / "run"
    t0 = time.perf_counter()
    assert main(["train", "--config", str(cfg), "--out", str(out), "--seed", "1"]) == 0
    return out, time.perf_counter() - t0, capsys.readouterr().out


def test_train_fast_and_complete(trained):
    out, seconds, stdout = trained
    assert seconds < 60
    for name in ("metrics.csv", "path.json", "success_curve.svg", "path_overlay.svg",
                 "checkpoint.json", "config.txt"):
        assert (out / name).exists()
    summary = json.loads(stdout.strip().splitlines()[-1])
    assert summary["seed"] == 1 and summary["algorithm"] == "per-dpp-elastic"


def test_eval_reproduces_path(trained, capsys):
    out = trained[0]
    args = ["eval", "--checkpoint", str(out / "checkpoint.json"), "--map", "trivial-3x3"]
    assert main(args) == 0
    first = json.loads(capsys.readouterr().out)
    assert main(args + ["--seed", "99"]) == 0
    second = json.loads(capsys.readouterr().out)
    assert first == second
    assert first["path"] == json.loads((out / "path.json").read_text())


def test_plot(trained):
    out = trained[0]
    (out / "success_curve.svg").unlink()
    assert main(["plot", "--run", str(out)]) == 0
    assert (out / "success_curve.svg").exists()


def test_dpp_bench(capsys):
    assert main(["dpp-bench", "--n", "10", "--m", "3", "--trials", "30", "--seed", "2"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["agreement"] == 1.0 and res["trials"] == 30


@pytest.mark.parametrize("argv", [
    ["train", "--config", "x", "--out", "y", "--bogus"],
    ["frobnicate"],
    [],
    ["dpp-bench", "--n", "4"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["eval", "--checkpoint", str(bad), "--map", "trivial-3x3"]) == 1
    assert main(["dpp-bench", "--n", "30", "--m", "3", "--trials", "1"]) == 1
    err = capsys.readouterr().err
    assert "unknown key 'colour'" in err and "error" in err
