import csv
import json

import pytest

from conftest import BENCH_INP, WEST_SCN
from hydrosoc.cli import main


@pytest.fixture(scope="module")
def short_scn(tmp_path_factory):
    path = tmp_path_factory.mktemp("scn") / "short.scn"
    path.write_text(WEST_SCN.read_text() + "duration_days = 3\n")
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _run(*args):
    return main([str(a) for a in args])


def test_all_models_ten_trials(tmp_path, short_scn, capsys):
    out = tmp_path / "o"
    assert _run("--network", BENCH_INP, "--scenario", short_scn, "--model", "all", "--trials", 10,
                "--out", out) == 0
    rows = _rows(out / "summary.csv")
    assert len(rows) == 50
    assert sorted({(r["model"], r["trial"]) for r in rows}) == sorted(
        (str(m), str(t)) for m in range(1, 6) for t in range(10))
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == list(range(10))
    assert len(manifest["wall_clock"]) == 50
    assert manifest["scenario"]["resolved"]["cluster_size"] == 15
    assert set(manifest["outputs"]) >= {"summary.csv", "agents.csv", "report.txt"}
    assert "mean" in capsys.readouterr().out


def test_missing_network_is_usage_error(capsys):
    assert _run("--scenario", WEST_SCN) == 2
    err = capsys.readouterr().err
    assert "usage:" in err and err.strip().splitlines()[-1].startswith("hydrosoc: error[usage]")


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        _run("--network", BENCH_INP, "--frobnicate")
    assert exc.value.code == 2


@pytest.mark.parametrize("model", ["0", "6", "x"])
def test_bad_model_is_usage_error(tmp_path, model):
    assert _run("--network", BENCH_INP, "--scenario", WEST_SCN, "--model", model, "--out", tmp_path) == 2


def test_input_errors(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text(WEST_SCN.read_text() + "model_level = 9\n")
    assert _run("--network", BENCH_INP, "--scenario", bad, "--out", tmp_path / "o") == 3
    err = capsys.readouterr().err.strip()
    assert err.count("\n") == 0 and "model_level" in err
    assert _run("--network", tmp_path / "missing.inp", "--scenario", WEST_SCN, "--out", tmp_path / "o") == 3
    wrong = tmp_path / "wrong.scn"
    wrong.write_text(WEST_SCN.read_text().replace("WTP_W", "NOWHERE"))
    assert _run("--network", BENCH_INP, "--scenario", wrong, "--out", tmp_path / "o") == 3


def test_runtime_error_on_unwritable_output(tmp_path, short_scn, capsys):
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert _run("--network", BENCH_INP, "--scenario", short_scn, "--trials", 1, "--out", blocker / "o") == 4
    assert capsys.readouterr().err.startswith("hydrosoc: error[runtime]")


def test_sweep_blocks(tmp_path, short_scn):
    out = tmp_path / "s"
    assert _run("--network", BENCH_INP, "--scenario", short_scn, "--trials", 2,
                "--sweep", "cluster_size=10,15,20,25,30", "--out", out) == 0
    blocks = [r["block"] for r in _rows(out / "summary.csv")]
    assert sorted(set(blocks)) == [f"cluster_size={v}" for v in (10, 15, 20, 25, 30)]
    assert len(blocks) == 10


def test_critical_dose_sweep(tmp_path, short_scn):
    out = tmp_path / "d"
    assert _run("--network", BENCH_INP, "--scenario", short_scn, "--trials", 1, "--model", "3",
                "--sweep", "critical_dose=0.035,0.050,0.071", "--out", out) == 0
    totals = [int(r["total_exposed"]) for r in _rows(out / "summary.csv")]
    assert totals[0] >= totals[1] >= totals[2]


def test_same_seed_byte_identical_and_replay(tmp_path, short_scn):
    args = ["--network", BENCH_INP, "--scenario", short_scn, "--model", "all", "--trials", 2, "--seed", 5]
    assert _run(*args, "--out", tmp_path / "a") == 0
    assert _run(*args, "--out", tmp_path / "b") == 0
    assert _run("--replay", tmp_path / "a" / "manifest.json", "--out", tmp_path / "c") == 0
    for name in ("exposure_series.csv", "cpp_series.csv", "summary.csv", "agents.csv", "report.txt"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes(), name


def test_replay_detects_changed_network(tmp_path, short_scn):
    net = tmp_path / "net.inp"
    net.write_text(BENCH_INP.read_text())
    assert _run("--network", net, "--scenario", short_scn, "--trials", 1, "--out", tmp_path / "a") == 0
    net.write_text(BENCH_INP.read_text() + "\n")
    assert _run("--replay", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b") == 3


def test_dump_flags(tmp_path, short_scn):
    out = tmp_path / "d"
    assert _run("--network", BENCH_INP, "--scenario", short_scn, "--trials", 1, "--model", "1",
                "--dump-hydraulics", "--dump-quality", "--out", out) == 0
    assert {p.name for p in out.glob("model1_trial0_*.csv")} == {
        "model1_trial0_nodes.csv", "model1_trial0_links.csv", "model1_trial0_quality.csv"}


def test_jobs_match_serial(tmp_path, short_scn):
    args = ["--network", BENCH_INP, "--scenario", short_scn, "--model", "5", "--trials", 2]
    assert _run(*args, "--out", tmp_path / "a") == 0
    assert _run(*args, "--jobs", 2, "--out", tmp_path / "b") == 0
    for name in ("exposure_series.csv", "summary.csv", "agents.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
