import csv
import io
import json
import math

import numpy as np
import pytest
import yaml

from molqudit import __version__
from molqudit.cli import main
from molqudit.config import RunConfig
from molqudit.schedule import PulseSchedule


def _run(tmp_path, *args, config=None, name="out"):
    out = tmp_path / name
    argv = list(args) + ["--out", str(out)]
    if config is not None:
        path = tmp_path / f"{name}.yaml"
        path.write_text(config if isinstance(config, str) else yaml.safe_dump(config))
        argv += ["--config", str(path)]
    return main(argv), out


def _table(path):
    rows = list(csv.reader(io.StringIO(path.read_text())))
    return rows[0], np.array(rows[1:], dtype=float) if len(rows) > 1 else np.empty((0, len(rows[0])))


# ---------------------------------------------------------------- configuration


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    code, out = _run(tmp_path, "spectrum", config={"spin": {"A_parallel": -898.0}})
    assert code == 2 and not out.exists()
    assert "A_parallel" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["spin: [1, 2", "- just\n- a list\n", "tim:\n  n: 0\n"])
def test_malformed_config_is_a_config_error(tmp_path, text):
    code, out = _run(tmp_path, "spectrum", config=text)
    assert code == 2 and not out.exists()


def test_missing_config_file(tmp_path):
    assert main(["spectrum", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_unknown_protocol_is_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["calibrate", "t3", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_default_config_round_trip(capsys):
    assert main(["--print-default-config"]) == 0
    text = capsys.readouterr().out
    cfg = RunConfig.from_yaml(text)
    assert cfg == RunConfig() and cfg.digest() == RunConfig().digest()
    assert RunConfig.from_yaml(cfg.to_yaml()) == cfg


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_flags_after_subcommand_do_not_reset_globals(tmp_path):
    out = tmp_path / "x"
    assert main(["--out", str(out), "compile", "qtm"]) == 0
    assert (out / "schedule_qtm.txt").exists()


# ---------------------------------------------------------------- spectrum


def test_spectrum_outputs(tmp_path):
    code, out = _run(tmp_path, "spectrum")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((out / "peaks.csv").read_text())))
    assert list(rows[0])[:2] == ["eta", "m_S"]
    freqs = {int(r["eta"]): float(r["frequency_MHz"]) for r in rows if r["eta"]}
    for eta, ref in zip((1, 2, 3), (333.7, 362.4, 386.2)):
        assert freqs[eta] == pytest.approx(ref, rel=0.02)
    _, spec = _table(out / "spectrum.csv")
    assert spec.shape[1] == 2 and np.all(np.diff(spec[:, 0]) > 0)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["files"] == ["peaks.csv", "spectrum.csv", "spectrum_summary.json"]


def test_infinite_temperature_gives_empty_peak_table(tmp_path):
    with pytest.warns(UserWarning, match="empty"):
        code, out = _run(tmp_path, "spectrum", config="spectrum:\n  temperature: .inf\n")
    assert code == 0
    lines = (out / "peaks.csv").read_text().splitlines()
    assert lines[0].startswith("eta,") and len(lines) == 1


def test_zero_field_is_a_physics_error(tmp_path):
    code, out = _run(tmp_path, "spectrum", config={"field": {"spectrum": 0.0}})
    assert code == 3 and not out.exists()


# ---------------------------------------------------------------- calibrate


def test_calibrate_all_recovers_configuration(tmp_path):
    code, out = _run(tmp_path, "calibrate", "all")
    assert code == 0
    summary = json.loads((out / "calibration_summary.json").read_text())
    for r in summary["results"]:
        assert r["status"] == "ok"
        if "configured" in r:
            assert r["relative_error"] < 0.05, r
    assert {r["protocol"] for r in summary["results"]} == {"rabi", "t1", "t2", "mq2", "mq3"}


def test_calibrate_fit_failure_exits_four(tmp_path):
    # delays far shorter than T2 leave a flat echo curve
    cfg = {"calibration": {"span": 1e-12}}
    code, out = _run(tmp_path, "calibrate", "t2", config=cfg)
    assert code == 4
    summary = json.loads((out / "calibration_summary.json").read_text())
    assert all(r["status"] == "failed" for r in summary["results"])


# ---------------------------------------------------------------- compile


def test_compile_qtm_at_zero_time(tmp_path):
    code, out = _run(tmp_path, "compile", "qtm", "--time", "0")
    assert code == 0
    sched = PulseSchedule.from_text((out / "schedule_qtm.txt").read_text())
    assert [(p.transition, p.angle) for p in sched.pulses] == [(2, math.pi)]


def test_compile_tim_report(tmp_path):
    code, out = _run(tmp_path, "compile", "tim", "--n", "3")
    assert code == 0
    report = json.loads((out / "compile_tim_report.json").read_text())
    assert report["pulse_count"] == report["pulse_count_J0"] == 3 * 6
    assert report["unitary_fidelity"] > 1 - 1e-12
    assert report["trotter_steps"] == 3
    sched = PulseSchedule.from_text((out / "schedule_tim.txt").read_text())
    assert len(sched) == report["pulse_count"] and len(sched.frame) == 4


def test_compile_rejects_non_positive_steps(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["compile", "tim", "--n", "0", "--out", str(tmp_path)])
    assert exc.value.code == 2


# ---------------------------------------------------------------- simulate


def test_simulate_qtm_ideal_is_cosine(tmp_path):
    code, out = _run(tmp_path, "simulate", "qtm", "--backend", "ideal")
    assert code == 0
    header, data = _table(out / "fig2f.csv")
    assert header == ["time_us", "scaled_time", "S_z", "S_z_target"]
    assert np.abs(data[:, 2] - data[:, 3]).max() < 1e-6
    assert np.allclose(data[:, 3], np.cos(2 * data[:, 1]), atol=1e-11)


def test_simulate_tim_columns_and_exact_consistency(tmp_path):
    cfg = {"tim": {"points": 8}}
    code, out = _run(tmp_path, "simulate", "tim", "--backend", "ideal", config=cfg)
    assert code == 0
    header, data = _table(out / "fig4ab.csv")
    col = {h: k for k, h in enumerate(header)}
    assert len(data) == 8
    # without coupling the Trotter sequence is exact
    assert np.abs(data[:, col["S_z_J0"]] - data[:, col["S_z_J0_exact"]]).max() < 1e-6
    header3, data3 = _table(out / "fig3bc.csv")
    assert header3[:2] == ["bt", "time_us"] and len(header3) == 8


def test_repeated_runs_are_byte_identical(tmp_path):
    cfg = {"qtm": {"points": 12}}
    a = _run(tmp_path, "simulate", "qtm", "--backend", "lindblad-ensemble", "--seed", "7", config=cfg, name="a")
    b = _run(tmp_path, "simulate", "qtm", "--backend", "lindblad-ensemble", "--seed", "7", config=cfg, name="b")
    assert a[0] == b[0] == 0
    for name in ("fig2d.csv", "fig2f.csv"):
        assert (a[1] / name).read_bytes() == (b[1] / name).read_bytes()


def test_manifest_lists_every_file(tmp_path):
    code, out = _run(tmp_path, "simulate", "qtm", "--backend", "ideal")
    manifest = json.loads((out / "manifest.json").read_text())
    on_disk = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    assert manifest["files"] == on_disk
    assert manifest["config_hash"] == RunConfig().updated("output", dir=str(out)).digest()
    assert manifest["arguments"]["backend"] == "ideal"
