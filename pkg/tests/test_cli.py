import json
import subprocess
import sys

import pytest

from bhecho import analysis
from bhecho.analysis import FitError
from bhecho.cli import main

ECHO = {
    "job": "echo-curve",
    "lattice": {"n_sites": 4, "n_bosons": 4},
    "J": 1.0,
    "U": 1.0,
    "scenarios": [
        {"kind": "delta_j_oneleg", "magnitude": 0.05, "label": "dJ"},
        {"kind": "delta_u", "magnitude": 0.2, "label": "dU"},
    ],
    "time_grid": {"t_max": 1.0, "n_points": 21},
    "fit": {"model": "gaussian"},
}

OTHERS = {
    "sequence": {
        "lattice": {"n_sites": 3, "n_bosons": 3},
        "sequence": {"J": 1.0, "U": 1.0, "imprint": "ideal", "delta_u": 0.1},
        "time_grid": {"times": [0.0, 0.5, 1.0]},
    },
    "scan-critical": {"sizes": [3], "delta_j": 0.05, "J_grid": {"start": 0.0, "stop": 0.3, "step": 0.1}},
    "spectrum": {"lattice": {"n_sites": 4, "n_bosons": 4}, "J": 0.5, "U": 1.0, "k": "all"},
    "predict": {"kind": "gravity", "magnitude": 0.1, "time_grid": {"log": [0.01, 1.0], "n_points": 5}},
}

EXPECTED = {
    "echo-curve": {"echo_dJ.csv", "echo_dU.csv", "echo_combined.csv"},
    "sequence": {"sequence.csv"},
    "scan-critical": {"scan_N3.csv"},
    "spectrum": {"spectrum.csv"},
    "predict": {"prediction.csv"},
}


def write(tmp_path, config, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return str(path)


def run(job, cfg_path, out, *flags):
    return main([job, "--config", cfg_path, "--out", str(out), "--threads", "1", *flags])


def data_rows(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


@pytest.mark.parametrize("job", ["echo-curve", *OTHERS])
def test_every_job_writes_outputs(tmp_path, capsys, job):
    config = ECHO if job == "echo-curve" else OTHERS[job]
    out = tmp_path / "out"
    assert run(job, write(tmp_path, config), out) == 0
    names = {p.name for p in out.iterdir()}
    assert names == EXPECTED[job] | {"manifest.json"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert set(manifest["outputs"]) == EXPECTED[job]
    assert manifest["config"] == config
    assert "step_tolerance" in manifest["tolerances"]
    assert all(p["status"] == "ok" for p in manifest["points"])
    for name in EXPECTED[job]:
        head = (out / name).read_text().splitlines()
        assert "# tool_version=0.1.0" in head
        assert any(line.startswith("# config=") for line in head)
        assert any(line.startswith("# wall_time_s=") for line in head)
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["status"] == "ok"


def test_echo_outputs_content(tmp_path):
    out = tmp_path / "out"
    assert run("echo-curve", write(tmp_path, ECHO), out, "--no-timestamp") == 0
    rows = data_rows(out / "echo_dU.csv")
    assert rows[0] == "t,f" and len(rows) == 22
    assert rows[1] == "0,1"
    combined = data_rows(out / "echo_combined.csv")
    assert combined[0] == "scenario,t,f" and len(combined) == 43
    fits = {p["label"]: p["fit"] for p in json.loads((out / "manifest.json").read_text())["points"]}
    assert fits["dJ"]["parameter"] > 0


def test_scan_reports_reference(tmp_path, capsys):
    out = tmp_path / "out"
    assert run("scan-critical", write(tmp_path, OTHERS["scan-critical"]), out) == 0
    assert "J_c = 0.52" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["reference_jc"] == 0.52
    assert [p["J"] for p in manifest["points"]] == [0.0, 0.1, 0.2, 0.3]


def test_partial_scan_is_reported_per_point(tmp_path, monkeypatch):
    real = analysis.fit_decay

    def flaky(curve, *a, **kw):
        if curve.protocol["J"] == 0.1:
            raise FitError("synthetic")
        return real(curve, *a, **kw)

    monkeypatch.setattr(analysis, "fit_decay", flaky)
    out = tmp_path / "out"
    assert run("scan-critical", write(tmp_path, OTHERS["scan-critical"]), out) == 0
    status = {p["J"]: p["status"] for p in json.loads((out / "manifest.json").read_text())["points"]}
    assert status[0.1].startswith("failed") and status[0.2] == "ok"
    row = [r for r in data_rows(out / "scan_N3.csv") if r.startswith("0.10000000000000001,")][0]
    assert "failed" in row


def test_spectrum_all_reports_spacing_ratio(tmp_path):
    out = tmp_path / "out"
    assert run("spectrum", write(tmp_path, OTHERS["spectrum"]), out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert 0 < manifest["spacing_ratio"]["mean_r"] < 1
    assert len(data_rows(out / "spectrum.csv")) == 1 + 35


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.mark.parametrize(
    "config",
    [
        {**ECHO, "lattice": {"n_sites": 4}},
        {**ECHO, "colour": "blue"},
        {**ECHO, "job": "spectrum"},
        {**ECHO, "time_grid": {"t_max": -1.0}},
        {**ECHO, "scenarios": [{"kind": "delta_q"}]},
        {**ECHO, "initial": {"fock": [4, 0, 0]}},
        {**ECHO, "lattice": {"n_sites": 4, "n_bosons": 3}},
    ],
    ids=["missing-M", "unknown-key", "job-mismatch", "negative-time", "bad-kind", "bad-fock", "mott-filling"],
)
def test_invalid_config_exit_2_without_outputs(tmp_path, capsys, config):
    out = tmp_path / "out"
    assert run("echo-curve", write(tmp_path, config), out) == 2
    assert not out.exists()
    err = _error(capsys)
    assert err["status"] == "error" and err["kind"] == "config"


def test_invalid_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("echo-curve", str(bad), tmp_path / "o") == 2
    assert run("echo-curve", str(tmp_path / "absent.json"), tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()


def test_scan_grid_too_short(tmp_path):
    cfg = {**OTHERS["scan-critical"], "J_grid": {"start": 0.0, "stop": 0.1, "step": 0.1}}
    assert run("scan-critical", write(tmp_path, cfg), tmp_path / "o") == 2


def test_bad_thread_count(tmp_path):
    path = write(tmp_path, ECHO)
    assert main(["echo-curve", "--config", path, "--out", str(tmp_path / "o"), "--threads", "0"]) == 2


def test_output_dir_from_config(tmp_path):
    cfg = {**OTHERS["predict"], "output_dir": str(tmp_path / "from_cfg"), "threads": 1}
    assert main(["predict", "--config", write(tmp_path, cfg)]) == 0
    assert (tmp_path / "from_cfg" / "prediction.csv").exists()
    assert main(["predict", "--config", write(tmp_path, OTHERS["predict"], "p.json")]) == 2


def test_compute_failure_exit_3(tmp_path, capsys):
    cfg = {"lattice": {"n_sites": 12, "n_bosons": 12}, "J": 1.0, "U": 1.0}
    assert run("spectrum", write(tmp_path, cfg), tmp_path / "o") == 3
    assert _error(capsys)["kind"] == "compute"


def test_refuses_to_overwrite(tmp_path):
    path, out = write(tmp_path, OTHERS["predict"]), tmp_path / "out"
    assert run("predict", path, out) == 0
    before = (out / "prediction.csv").read_bytes()
    assert run("predict", path, out) == 2
    assert (out / "prediction.csv").read_bytes() == before
    assert run("predict", path, out, "--overwrite") == 0


def test_no_timestamp_reruns_are_byte_identical(tmp_path):
    path = write(tmp_path, ECHO)
    assert run("echo-curve", path, tmp_path / "a", "--no-timestamp") == 0
    assert run("echo-curve", path, tmp_path / "b", "--no-timestamp") == 0
    for name in EXPECTED["echo-curve"] | {"manifest.json"}:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert "timestamp" not in (tmp_path / "a" / name).read_text()


def test_timestamped_reruns_differ_only_in_timing(tmp_path):
    path = write(tmp_path, OTHERS["spectrum"])
    assert run("spectrum", path, tmp_path / "a") == 0
    assert run("spectrum", path, tmp_path / "b") == 0
    a = (tmp_path / "a" / "spectrum.csv").read_text().splitlines()
    b = (tmp_path / "b" / "spectrum.csv").read_text().splitlines()
    diff = [(x, y) for x, y in zip(a, b) if x != y]
    assert all(x.split("=")[0] in ("# wall_time_s", "# timestamp") for x, _ in diff)


def test_module_entry_point(tmp_path):
    path = write(tmp_path, OTHERS["predict"])
    proc = subprocess.run([sys.executable, "-m", "bhecho", "predict", "--config", path, "--out",
                           str(tmp_path / "o"), "--no-timestamp"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["outputs"] == ["prediction.csv"]
