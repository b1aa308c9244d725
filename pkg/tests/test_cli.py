import json
import subprocess
import sys

import numpy as np
import pytest

from delgrad import cli
from delgrad import train as train_mod

SMALL = """\
dataset: {train: 150, validation: 60, test: 60}
network: {hidden: [8]}
training: {epochs: 2, batch_size: 50}
sweep: {mode: grid, hidden: [4, 8], kinds: [none, axonal], seeds: 2}
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["gen-data", "-o", str(a)]) == 0
    assert cli.main(["gen-data", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    rows = [ln for ln in lines[1:] if not ln.startswith("#")][1:]
    assert len(rows) == 7000
    assert "config_hash=" in lines[0]
    assert {r.split(",")[0] for r in rows} == {"train", "validation", "test"}


def test_seed_flag_changes_data(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.main(["gen-data", "-o", str(a)])
    cli.main(["gen-data", "-o", str(b), "--seed", "7"])
    assert a.read_bytes() != b.read_bytes()


def test_bad_config_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("training:\n  epochz: 3\n")
    assert cli.main(["train", "--config", str(p)]) == 1
    assert "bad.yaml:2: training.epochz" in capsys.readouterr().err


def test_missing_config_and_bad_flag(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "nope.yaml")]) == 1
    assert cli.main(["frobnicate"]) == 1


def test_train_outputs_and_resume(tmp_path, small_cfg):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(small_cfg), "--out", str(out)]) == 0
    for name in ("model.json", "metrics.tsv", "checkpoint.json", "summary.json"):
        assert (out / name).exists()
    model = json.loads((out / "model.json").read_text())
    assert model["config_hash"] in (out / "metrics.tsv").read_text().splitlines()[0]

    one = tmp_path / "one.yaml"
    one.write_text(SMALL.replace("epochs: 2", "epochs: 1"))
    assert cli.main(["train", "--config", str(one), "--out", str(tmp_path / "r1")]) == 0
    assert cli.main(["train", "--config", str(small_cfg), "--out", str(tmp_path / "r2"),
                     "--resume", str(tmp_path / "r1" / "checkpoint.json")]) == 0
    resumed = json.loads((tmp_path / "r2" / "model.json").read_text())
    assert resumed["network"] == model["network"]


def test_train_nan_exit_2(tmp_path, small_cfg, monkeypatch):
    def broken(out, labels, cfg):
        out = np.atleast_2d(out)
        return np.full(len(out), np.nan), np.full(out.shape, np.nan)

    monkeypatch.setattr(train_mod, "delta_mse", broken)
    out = tmp_path / "nan"
    assert cli.main(["train", "--config", str(small_cfg), "--out", str(out)]) == 2
    dump = json.loads((out / "abort_dump.json").read_text())
    assert dump["state"]["epoch"] == 0 and "network" in dump["state"]


def test_gradcheck_pass_and_negative_control(capsys):
    assert cli.main(["gradcheck", "--instances", "2"]) == 0
    text = capsys.readouterr().out
    for token in ("double", "equal", "axonal", "dendritic", "synaptic", "vmax", "dmse"):
        assert token in text
    assert cli.main(["gradcheck", "--instances", "2", "--inject-sign-flip"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_sweep_table(tmp_path, small_cfg):
    out = tmp_path / "sw"
    rc = cli.main(["sweep", "--config", str(small_cfg), "--out", str(out),
                   "--results-dir", str(tmp_path / "cache"), "--reference-mode"])
    assert rc == 0
    lines = (out / "sweep_grid.tsv").read_text().splitlines()
    assert lines[0].startswith("# sweep mode=grid config_hash=")
    header = lines[1].split("\t")
    assert header[:4] == ["hidden", "kind", "median", "q25"] and "n_params" in header
    assert len(lines) == 2 + 4
    # cached runs are reused: a second sweep writes the identical table
    cli.main(["sweep", "--config", str(small_cfg), "--out", str(tmp_path / "sw2"),
              "--results-dir", str(tmp_path / "cache")])
    assert (tmp_path / "sw2" / "sweep_grid.tsv").read_text() == "\n".join(lines) + "\n"


def test_hw_ablation_table(tmp_path):
    p = tmp_path / "hw.yaml"
    p.write_text("profile: hardware\ndataset: {train: 80, validation: 40, test: 40}\n"
                 "network: {hidden: [6]}\ntraining: {epochs: 1}\n"
                 "sweep: {ladder: [ideal, quant, jitter], ladder_kinds: [axonal, none], seeds: 1}\n")
    out = tmp_path / "hw"
    assert cli.main(["hw-ablation", "--config", str(p), "--out", str(out),
                     "--results-dir", str(tmp_path / "c")]) == 0
    lines = (out / "hw_ablation.tsv").read_text().splitlines()
    assert lines[1].split("\t") == ["kind", "ideal", "quant", "jitter"]
    assert [ln.split("\t")[0] for ln in lines[2:]] == ["axonal", "none"]


def test_console_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "delgrad.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    assert "gen-data" in r.stdout and "hw-ablation" in r.stdout


def test_relabel_uses_requested_spec():
    from delgrad.experiment import RunSpec
    cached = {"key": "k", "spec": {"span": None}, "label": "ideal/h30/axonal/s0", "test_err": 0.1}
    spec = RunSpec(span=1.85)
    (row,) = cli.relabel([cached], [spec])
    assert row["spec"]["span"] == 1.85 and row["key"] == "k"
    assert cached["spec"]["span"] is None  # the cached record is not mutated
