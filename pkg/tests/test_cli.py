import json
import os
import subprocess
import sys

import numpy as np
import pytest

from jdsi.cli import build_parser, main
from jdsi.harness.container import container_read, find, read_meta
from jdsi.harness.metrics import read_csv
from jdsi.net import config_to_text

from helpers import tiny_config


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def cohort(workdir):
    main(["synth", "--out", str(workdir / "data"), "--n-train", "2", "--n-test", "2", "--size", "32",
          "--coils", "2", "--seed", "3"])
    main(["mask", "--out", str(workdir / "mask.jks"), "--width", "32", "--height", "32", "--acs", "2",
          "--seed", "3", "--pgm", str(workdir / "mask.pgm")])
    cfg = workdir / "tiny.txt"
    cfg.write_text(config_to_text(tiny_config(epochs=1, dtype="float32")))
    return workdir


def test_every_subcommand_takes_seed():
    ap = build_parser()
    sub = next(a for a in ap._actions if a.dest == "cmd")
    assert set(sub.choices) == {"synth", "mask", "recon", "train", "eval", "scenario", "report"}
    for name, p in sub.choices.items():
        assert any("--seed" in a.option_strings for a in p._actions), name


def test_synth_and_mask(cohort):
    man = json.loads((cohort / "data" / "manifest.json").read_text())
    assert [i for i, _ in man["train"]] == ["tr0000", "tr0001"]
    assert sorted(os.listdir(cohort / "data")) == ["manifest.json", "te0000.jks", "te0001.jks", "tr0000.jks",
                                                   "tr0001.jks"]
    assert (cohort / "mask.pgm").exists()
    om = find(container_read(cohort / "mask.jks"), "omega").data
    assert om.dtype == bool and om.sum() == 32 * 8


@pytest.mark.parametrize("method,maps", [("zf", None), ("cg-sense", "gt"), ("cg-sense", "acs"),
                                         ("cg-sense", "jsense"), ("pfista", "acs"), ("jsense", None)])
def test_recon_classical(capsys, cohort, method, maps):
    out = cohort / f"r_{method}_{maps}.jks"
    argv = ["recon", "--input", cohort / "data" / "te0000.jks", "--mask", cohort / "mask.jks",
            "--method", method, "--out", out]
    if maps:
        argv += ["--maps", maps]
    code, stdout, _ = run(capsys, *argv)
    assert code == 0 and json.loads(stdout)["method"] == method
    recs = container_read(out)
    assert find(recs, "x").data.shape == (1, 1, 32, 32)
    assert read_meta(recs, "recon")["method"] == method


def test_train_recon_eval_report(capsys, cohort):
    code, stdout, _ = run(capsys, "train", "--config", cohort / "tiny.txt", "--n-train", 2, "--n-test", 1,
                          "--out", cohort / "model", "--every-epoch")
    assert code == 0
    hist = json.loads((cohort / "model" / "history.json").read_text())
    assert len(hist) == 1 and "val_rlne" in hist[0]
    assert (cohort / "model" / "epochs" / "epoch0000.jks").exists()
    assert "phases = 2" in (cohort / "model" / "config.txt").read_text()

    code, _, _ = run(capsys, "train", "--config", cohort / "tiny.txt", "--n-train", 2, "--n-test", 0,
                     "--frozen", "acs", "--out", cohort / "frozen")
    assert code == 0

    data, mask = cohort / "data" / "te0000.jks", cohort / "mask.jks"
    outs = []
    for name, extra in [("jdsi", ["--checkpoint", cohort / "model" / "model.jks"]),
                        ("jdsi_acs", ["--maps", "acs", "--checkpoint", cohort / "frozen" / "model.jks"]),
                        ("cg_learned", ["--maps", "learned", "--checkpoint", cohort / "model" / "model.jks"])]:
        method = "cg-sense" if name == "cg_learned" else "jdsi"
        out = cohort / f"{name}.jks"
        code, _, err = run(capsys, "recon", "--input", data, "--mask", mask, "--method", method,
                           "--config", cohort / "tiny.txt", "--out", out, *extra)
        assert code == 0, err
        assert find(container_read(out), "S").data.shape == (1, 2, 32, 32)
        outs.append(out)

    code, stdout, _ = run(capsys, "eval", "--recon", *outs, "--reference", data, data, data,
                          "--csv", cohort / "eval.csv")
    assert code == 0
    res = json.loads(stdout)
    assert len(res["rows"]) == 3 and all(r["rlne"] >= 0 for r in res["rows"])
    back, agg = read_csv(cohort / "eval.csv")
    assert len(back.rows) == 3

    code, stdout, _ = run(capsys, "report", "--csv", cohort / "eval.csv", "--recon", *outs, "--reference", data,
                          "--out", cohort / "report")
    assert code == 0
    files = set(os.listdir(cohort / "report"))
    assert {"truth_te0000.pgm", "jdsi.pgm", "err_jdsi.pgm", "scales.txt", "report.csv"} <= files
    assert json.loads(stdout)["error_vmax"] > 0


def test_scenario_command(capsys, cohort):
    code, stdout, _ = run(capsys, "scenario", "--name", "calib-2d", "--methods", "zf,cg-sense", "--n-test", 2,
                          "--size", 32, "--coils", 2, "--out", cohort / "scen")
    assert code == 0
    assert json.loads(stdout)["csv"].endswith("calib-2d.csv")


def test_runtime_error_line(capsys, cohort):
    code, _, err = run(capsys, "recon", "--input", cohort / "missing.jks", "--mask", cohort / "mask.jks",
                       "--method", "zf", "--out", cohort / "x.jks")
    assert code == 1
    line = err.strip().splitlines()[-1]
    assert line.startswith("ERROR ")
    payload = json.loads(line[6:])
    assert payload["type"] == "FileNotFoundError" and payload["command"] == "recon"


def test_scenario_missing_checkpoint_error(capsys, cohort):
    code, _, err = run(capsys, "scenario", "--name", "acs-sweep", "--methods", "jdsi", "--n-test", 1,
                       "--size", 32, "--coils", 2, "--out", cohort / "s2")
    assert code == 1 and json.loads(err.strip().splitlines()[-1][6:])["type"] == "ScenarioError"


def test_corrupt_container_error(capsys, cohort):
    bad = cohort / "bad.jks"
    bad.write_bytes(b"NOPE" + (cohort / "mask.jks").read_bytes()[4:])
    code, _, err = run(capsys, "recon", "--input", cohort / "data" / "te0000.jks", "--mask", bad,
                       "--method", "zf", "--out", cohort / "x.jks")
    payload = json.loads(err.strip().splitlines()[-1][6:])
    assert code == 1 and payload["type"] == "ContainerFormatError" and "offset 0" in payload["message"]


def test_usage_error_subprocess(tmp_path):
    p = subprocess.run([sys.executable, "-m", "jdsi.cli", "recon", "--method", "nope"], capture_output=True,
                       text=True)
    assert p.returncode == 2
    line = p.stderr.strip().splitlines()[-1]
    assert json.loads(line[6:])["type"] == "UsageError"
    p = subprocess.run([sys.executable, "-m", "jdsi.cli", "mask", "--out", str(tmp_path / "m.jks"), "--seed", "4"],
                       capture_output=True, text=True)
    assert p.returncode == 0 and json.loads(p.stdout)["sampled"] == 64 * 16
