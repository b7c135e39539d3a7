import json
import subprocess
import sys

import numpy as np
import pytest

from fdd2d import cli, dataset, evaluation, models


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ini = d / "small.ini"
    ini.write_text("[scenario]\nL = 4\n\n[training]\nhidden = 16\nblocks = 1\nepochs = 2\nbatch = 16\nlr = 1e-3\n")
    assert run("gen", "--config", ini, "--samples", 40, "--seed", 1, "--split", "train",
               "--out", d / "train.fdd") == 0
    assert run("gen", "--config", ini, "--samples", 20, "--seed", 1, "--split", "dev",
               "--stats-from", d / "train.fdd", "--out", d / "dev.fdd") == 0
    return d


def test_gen_outputs(files):
    tr, dv = dataset.load(files / "train.fdd"), dataset.load(files / "dev.fdd")
    assert len(tr) == 40 and tr.config.L == 4 and tr.stats is not None
    np.testing.assert_array_equal(dv.stats.mean, tr.stats.mean)
    assert dv.meta["stats_source"] == "train.fdd" and dv.meta["split"] == "dev"


def test_train_and_eval(files, capsys):
    ck = files / "fc.ckpt"
    assert run("train", "--model", "fc-dnn", "--data", files / "train.fdd", "--dev", files / "dev.fdd",
               "--config", files / "small.ini", "--out", ck) == 0
    model, meta = models.load_checkpoint(ck)
    assert model.hp.hidden == 16 and model.hp.epochs == 2 and len(meta["history"]) == 2
    capsys.readouterr()
    assert run("eval", "--checkpoint", ck, "--data", files / "dev.fdd", "--baselines", "optimal", "erp",
               "--report", files / "r.json") == 0
    out = capsys.readouterr().out
    assert "fc-dnn" in out and "optimal" in out
    report = evaluation.read_report(files / "r.json")
    assert report["methods"]["optimal"]["channel_accuracy"] == 1.0
    assert report["methods"]["optimal"]["power_accuracy"] == 1.0
    assert report["methods"]["fc-dnn"]["parameters"]["total"] == models.count_parameters(model)["total"]
    assert (files / "r.fc-dnn.cdf.txt").exists()


def test_cli_flags_override_config(files):
    ck = files / "o.ckpt"
    assert run("train", "--model", "fc-dnn", "--data", files / "train.fdd", "--config", files / "small.ini",
               "--epochs", 1, "--seed", 4, "--out", ck) == 0
    model, _ = models.load_checkpoint(ck)
    assert model.hp.epochs == 1 and model.hp.seed == 4


def test_bench(files, capsys):
    assert run("bench", "--exhaustive", "--data", files / "dev.fdd", "--repeats", 1) == 0
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result["method"] == "exhaustive" and result["samples"] == 20 and result["seconds"] > 0


def test_set_overrides(tmp_path):
    out = tmp_path / "o.fdd"
    assert run("gen", "--set", "N=1", "--set", "K=1", "--set", "L=3", "--samples", 3, "--seed", 0,
               "--out", out) == 0
    assert dataset.load(out).config.csi_shape == (1, 3, 3)


def error_line(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_missing_file_exit_code(tmp_path, capsys):
    missing = tmp_path / "none.fdd"
    assert run("eval", "--data", missing, "--baselines", "erp") == 2
    err = error_line(capsys)
    assert err["path"] == str(missing) and "none.fdd" in err["message"]


def test_bad_config_exit_code(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[scenario]\nN = 0\n")
    assert run("gen", "--config", ini, "--samples", 1, "--seed", 0, "--out", tmp_path / "x.fdd") == 2
    assert error_line(capsys)["error"] == "ConfigError"
    assert run("gen", "--set", "bogus", "--samples", 1, "--seed", 0, "--out", tmp_path / "x.fdd") == 2


def test_corrupt_dataset_exit_code(tmp_path, capsys):
    p = tmp_path / "junk.fdd"
    p.write_bytes(b"garbage" * 10)
    assert run("eval", "--data", p, "--baselines", "erp") == 2
    assert error_line(capsys)["error"] == "BadMagic"


def test_nothing_to_evaluate(files, capsys):
    assert run("eval", "--data", files / "dev.fdd") == 2


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fdd2d.cli", "eval", "--data", str(tmp_path / "x"),
                          "--baselines", "erp"], capture_output=True, text=True)
    assert res.returncode == 2
    assert json.loads(res.stderr.strip().splitlines()[-1])["error"] == "InputError"
