import json
import struct
import shutil

import pytest

from nscopt.cli import PROFILE_COLUMNS, main
from nscopt.config import SCENARIO_DIR, build, load_config, parse_config, tomllib
from nscopt.errors import ConfigurationError
from nscopt.penalty import OptimizationReport

SHIPPED = sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def _raw(name="energy_ball_2d"):
    return tomllib.loads((SCENARIO_DIR / f"{name}.toml").read_text())


def _write(tmp_path, raw):
    lines = []

    def emit(prefix, table):
        scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
        if prefix:
            lines.append(f"[{prefix}]")
        for k, v in scalars.items():
            lines.append(f"{k} = {json.dumps(v)}")
        for k, v in table.items():
            if isinstance(v, dict):
                emit(f"{prefix}.{k}" if prefix else k, v)

    emit("", raw)
    p = tmp_path / "cfg.toml"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_shipped_scenarios_present():
    assert SHIPPED == ["energy_ball_2d", "enstrophy_ball_2d", "helicity_set_3d"]
    for name in SHIPPED:
        build(load_config(name))


@pytest.mark.parametrize(
    "section,key,value,field",
    [
        ("constraint", "rho", 0.0, "constraint.rho"),
        ("constraint", "rho", -2.0, "constraint.rho"),
        ("constraint", "variant", "helicity", "constraint.variant"),
        ("grid", "n", 7, "grid"),
        ("time", "M", 1, "time.M"),
        ("physics", "nu", -0.1, "physics.nu"),
        ("control", "beta", "big", "control.beta"),
        ("control", "cost", "cubic", "control.cost"),
        ("penalty", "schedule", [0.1, 0.2], "penalty.schedule"),
        ("penalty", "bogus", 1, "penalty.bogus"),
    ],
)
def test_invalid_config_names_field(tmp_path, capsys, section, key, value, field):
    raw = _raw()
    raw[section][key] = value
    p = _write(tmp_path, raw)
    with pytest.raises(ConfigurationError, match=field.replace(".", r"\.")):
        load_config(p)
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
    assert field in capsys.readouterr().err


def test_missing_section(tmp_path):
    raw = _raw()
    del raw["constraint"]
    with pytest.raises(ConfigurationError, match="constraint"):
        parse_config(raw)


def test_unknown_field_kind(tmp_path):
    raw = _raw()
    raw["physics"]["y0"] = {"kind": "vortex"}
    with pytest.raises(ConfigurationError, match=r"physics\.y0\.kind"):
        parse_config(raw)


def test_existence_time_guard():
    raw = _raw("helicity_set_3d")
    raw["time"]["T"] = 5.0
    with pytest.raises(ConfigurationError, match="existence time"):
        parse_config(raw)
    raw["time"]["T"] = 1.0
    raw["physics"]["C0"] = 1.0
    with pytest.raises(ConfigurationError, match=r"time\.T"):
        parse_config(raw)


def test_checkpoint_initial_field(tmp_path):
    from nscopt.checkpoint import save_field
    from nscopt.fields import Grid, random_field

    y = random_field(Grid(2, 16), 5, energy=0.01, kcut=2)
    save_field(tmp_path / "y0.field", y)
    raw = _raw()
    raw["physics"]["y0"] = {"kind": "checkpoint", "path": "y0.field"}
    p = _write(tmp_path, raw)
    prob = build(load_config(p), base_dir=p.parent)
    assert (prob.data.y0 - y).norm() == 0.0
    raw["physics"]["y0"] = {"kind": "checkpoint", "path": "missing.field"}
    with pytest.raises(ConfigurationError, match=r"physics\.y0\.path"):
        load_config(_write(tmp_path, raw))


def test_mask_and_modes_spaces(tmp_path):
    raw = _raw()
    raw["control"]["space"] = "mask"
    raw["control"]["mask_box"] = [[0.0, 3.2], [0.0, 6.3]]
    prob = build(parse_config(raw))
    assert prob.data.space.name == "mask"
    raw["control"]["space"] = "modes"
    raw["control"]["modes"] = [[1, 0], [1, 1]]
    prob = build(parse_config(raw))
    assert prob.data.space.shape == (2, 2, 2)


def test_run_outputs(scenario_run):
    code, out = scenario_run("energy_ball_2d")
    assert code == 0
    for name in ("report.csv", "levels.csv", "summary.json", "certificate.json", "profiles.csv", "config.toml"):
        assert (out / name).exists(), name
    header = (out / "report.csv").read_text().splitlines()[0].split(",")
    assert tuple(header) == OptimizationReport.ROW_COLUMNS
    header = (out / "levels.csv").read_text().splitlines()[0].split(",")
    assert tuple(header) == OptimizationReport.LEVEL_COLUMNS
    prof = (out / "profiles.csv").read_text().splitlines()
    assert tuple(prof[0].split(",")) == PROFILE_COLUMNS and len(prof) == 42
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["complete"] and len(summary["levels"]) == 5
    for j in range(5):
        assert (out / "checkpoints" / f"level_{j}" / "state.traj").exists()


def test_run_then_verify_identical(scenario_run, capsys):
    _, out = scenario_run("energy_ball_2d")
    assert main(["verify", "--dir", str(out)]) == 0
    assert "identical to run-time certificate: yes" in capsys.readouterr().out
    assert (out / "certificate.recomputed.json").read_bytes() == (out / "certificate.json").read_bytes()


def test_verify_tampered_field(scenario_run, tmp_path, capsys):
    _, out = scenario_run("energy_ball_2d")
    copy = tmp_path / "run"
    shutil.copytree(out, copy)
    traj = copy / "checkpoints" / "level_4" / "state.traj"
    raw = bytearray(traj.read_bytes())
    raw[24:31] = b"GARBAGE"  # magic of the first field record (after the 24-byte header)
    traj.write_bytes(bytes(raw))
    assert main(["verify", "--dir", str(copy)]) == 4
    assert "magic" in capsys.readouterr().err


def test_verify_tampered_shape(scenario_run, tmp_path, capsys):
    _, out = scenario_run("energy_ball_2d")
    copy = tmp_path / "run"
    shutil.copytree(out, copy)
    traj = copy / "checkpoints" / "level_4" / "adjoint.traj"
    raw = bytearray(traj.read_bytes())
    raw[31:43] = struct.pack("<iii", 2, 16, 3)
    traj.write_bytes(bytes(raw))
    assert main(["verify", "--dir", str(copy)]) == 4
    assert "shape" in capsys.readouterr().err


def test_verify_missing_and_empty(tmp_path):
    assert main(["verify", "--dir", str(tmp_path)]) == 4
    assert main(["verify", "--dir", str(tmp_path / "absent")]) == 4


def test_verify_missing_checkpoint(scenario_run, tmp_path):
    _, out = scenario_run("energy_ball_2d")
    copy = tmp_path / "run"
    shutil.copytree(out, copy)
    (copy / "checkpoints" / "level_4" / "control.npy").unlink()
    assert main(["verify", "--dir", str(copy)]) == 4


def test_stall_exit_code(tmp_path, capsys):
    raw = _raw()
    raw["grid"]["n"] = 8
    raw["time"]["M"] = 10
    raw["penalty"].update(max_backtracks=0, initial_step=1e8)
    p = _write(tmp_path, raw)
    out = tmp_path / "o"
    assert main(["run", "--config", str(p), "--out", str(out)]) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "stall" and summary["complete"] is False
    assert main(["verify", "--dir", str(out)]) == 4


def test_selftest_cli(capsys):
    assert main(["selftest", "--fast"]) == 0
    assert "PASSED" in capsys.readouterr().out
    assert main(["selftest", "--fast", "--inject-fault", "adjoint_sign"]) == 1
    text = capsys.readouterr().out
    assert "B' adjoint pairing               FAIL" in text
