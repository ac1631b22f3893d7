import json

import pytest

from conftest import DATA
from smp.cli import main

FAST = ["--steps", "200", "--warmup", "100", "--hidden", "8", "--eval-interval", "100"]


@pytest.fixture
def env_cfg(tmp_path):
    p = tmp_path / "env.json"
    p.write_text(json.dumps({"episode_length": 40}))
    return str(p)


def test_enumerate(tmp_path, capsys):
    out = tmp_path / "v.json"
    assert main(["enumerate", "--base", str(DATA / "walker.json"), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["variants"]) == 15
    assert "15 variants" in capsys.readouterr().out


def test_train_eval_analyze(tmp_path, env_cfg, capsys):
    hopper = str(DATA / "hopper.json")
    run = tmp_path / "run"
    assert main(["train", "--variants", hopper, str(DATA / "hopper2.json"), "--out", str(run),
                 "--env-config", env_cfg] + FAST) == 0
    manifest = json.loads((run / "manifest.json").read_text())
    ckpt = str(run / manifest["checkpoints"][-1])
    assert main(["eval", "--checkpoint", ckpt, "--variants", hopper, "--episodes", "2",
                 "--out", str(tmp_path / "eval.csv"), "--env-config", env_cfg]) == 0
    lines = (tmp_path / "eval.csv").read_text().splitlines()
    assert lines[0] == "variant,mean_return,std_return" and lines[1].startswith("hopper,")
    out = tmp_path / "an"
    assert main(["analyze", "--checkpoint", ckpt, "--variant", hopper, "--out", str(out),
                 "--env-config", env_cfg]) == 0
    for name in ("messages.csv", "projection.csv", "correlation.csv"):
        assert (out / name).exists()
    assert (out / "projection.csv").read_text().startswith("# 1-D projection")
    assert "root message period" in capsys.readouterr().out


def test_train_is_reproducible_from_the_cli(tmp_path, env_cfg):
    args = ["train", "--variants", str(DATA / "hopper2.json"), "--env-config", env_cfg] + FAST
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    for name in ("returns.csv", "eval.csv", "diagnostics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_errors_exit_nonzero(tmp_path, capsys):
    walker = str(DATA / "walker.json")
    ckpt = tmp_path / "none.smp"
    assert main(["eval", "--checkpoint", str(ckpt), "--variants", walker]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "root": "a", "limbs": []}))
    assert main(["enumerate", "--base", str(bad), "--out", str(tmp_path / "o.json")]) == 1
    assert "error:" in capsys.readouterr().err
