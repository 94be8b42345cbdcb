from pathlib import Path

import numpy as np
import pytest

from polyshell.errors import ConfigError
from polyshell.harness.cli import main, resolve_config
from polyshell.harness.config import RunConfig, help_text, load_config, parse_config
from polyshell.harness.io import (OutputError, read_binary, read_csv, read_fields, write_binary, write_csv,
                                  write_fields)
from polyshell.harness.scenarios import CATALOGUE, load_preset, preset_text, scenario_catalogue

GOLDEN = Path(__file__).parent / "golden"


# -- configuration -------------------------------------------------------------

def test_defaults_round_trip():
    cfg = RunConfig()
    assert parse_config(cfg.dumps()) == cfg


@pytest.mark.parametrize("name", scenario_catalogue())
def test_presets_round_trip(name, tmp_path):
    cfg = load_preset(name)
    path = tmp_path / "c.cfg"
    path.write_text(cfg.dumps())
    assert load_config(path) == cfg


def test_float_round_trip_is_exact():
    cfg = RunConfig()
    cfg.set("fluid.dt", 0.1 + 0.2)
    assert parse_config(cfg.dumps()).get("fluid.dt") == 0.1 + 0.2


@pytest.mark.parametrize("text,key", [
    ("[fluid]\nbogus = 1\n", "fluid.bogus"),
    ("[nosuch]\n", "nosuch"),
    ("[fluid]\ndt = abc\n", "fluid.dt"),
    ("[fluid]\ndt = -1\n", "fluid.dt"),
    ("[fluid]\ndt = 1e-3\ndt = 2e-3\n", "fluid.dt"),
    ("dt = 1\n", "dt"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key


def test_cross_key_validation():
    with pytest.raises(ConfigError) as exc:
        RunConfig({"geometry": {"half_width": 5.0}})
    assert exc.value.key == "geometry.half_width"


def test_help_lists_every_key():
    text = help_text()
    cfg = RunConfig()
    for s, keys in cfg.values.items():
        for k in keys:
            assert f"{s}.{k} " in text


def test_overrides():
    cfg = resolve_config("preset:rest-state", ["fluid.steps=3"])
    assert cfg.get("fluid.steps") == 3
    with pytest.raises(ConfigError):
        resolve_config("preset:rest-state", ["fluid.steps"])


# -- io ------------------------------------------------------------------------

def test_fields_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pts = {"s": rng.standard_normal(12), "v": rng.standard_normal((12, 3)), "T": rng.standard_normal((12, 3, 3))}
    cells = {"c": rng.standard_normal(6)}
    p = tmp_path / "f.vtk"
    write_fields(p, (4, 3), (0.25, 0.5), (0.0, 0.1), pts, cells)
    back = read_fields(p)
    assert back["dims"] == (4, 3, 1) and back["spacing"] == (0.25, 0.5, 1.0) and back["origin"] == (0.0, 0.1, 0.0)
    for k, v in pts.items():
        assert np.array_equal(back["point_data"][k], v)
    assert np.array_equal(back["cell_data"]["c"], cells["c"])
    assert p.read_text().splitlines()[3] == "DATASET STRUCTURED_POINTS"


def test_header_only_field_file(tmp_path):
    p = tmp_path / "h.vtk"
    write_fields(p, (2, 2), (1.0, 1.0), (0.0, 0.0))
    back = read_fields(p)
    assert back["point_data"] == {} and back["cell_data"] == {}


def test_field_shape_errors(tmp_path):
    with pytest.raises(OutputError):
        write_fields(tmp_path / "x.vtk", (2, 2), (1, 1), (0, 0), {"s": np.zeros(3)})


def test_csv_round_trip(tmp_path):
    rows = np.random.default_rng(1).standard_normal((5, 3))
    write_csv(tmp_path / "a.csv", ["a", "b", "c"], rows, "# schema")
    h, d = read_csv(tmp_path / "a.csv")
    assert h == ["a", "b", "c"] and np.array_equal(d, rows)
    write_csv(tmp_path / "e.csv", ["a"], [])
    assert read_csv(tmp_path / "e.csv")[1].shape == (0, 1)


def test_binary_round_trip(tmp_path):
    a = np.random.default_rng(2).standard_normal((3, 4, 5))
    write_binary(tmp_path / "a.bin", a, {"t": 0.1, "law": "fene"})
    b, hdr = read_binary(tmp_path / "a.bin")
    assert np.array_equal(a, b) and hdr["t"] == "0.1" and hdr["law"] == "fene" and hdr["shape"] == "3x4x5"
    raw = (tmp_path / "a.bin").read_bytes()
    # little-endian float64 payload after the terminator line
    assert np.array_equal(np.frombuffer(raw[raw.index(b"\nEND\n") + 5:], "<f8"), a.ravel())
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(OutputError):
        read_binary(tmp_path / "bad.bin")


# -- catalogue and CLI -----------------------------------------------------------

def test_catalogue_matches_golden(capsys):
    assert main(["presets"]) == 0
    assert capsys.readouterr().out == (GOLDEN / "presets.txt").read_text()
    for s in CATALOGUE:
        assert preset_text(s.name).strip()


def test_unknown_key_exits_2(tmp_path, capsys):
    code = main(["--output-root", str(tmp_path), "simulate", "preset:rest-state", "--set", "fluid.nope=1"])
    err = capsys.readouterr().err
    assert code == 2
    assert err.startswith("polyshell-error category=config exit=2 key=fluid.nope ")


def test_unknown_preset_exits_2(tmp_path, capsys):
    assert main(["--output-root", str(tmp_path), "simulate", "preset:nosuch"]) == 2
    assert "key=nosuch" in capsys.readouterr().err


def test_rest_state_cli(tmp_path):
    assert main(["--output-root", str(tmp_path), "simulate", "preset:rest-state", "--set", "fluid.steps=4"]) == 0
    out = tmp_path / "rest-state"
    for name in ("config.cfg", "diagnostics.csv", "shell.csv", "fixed_point.csv", "ledger.txt"):
        assert (out / name).exists()
    h, d = read_csv(out / "diagnostics.csv")
    e = d[:, h.index("energy")]
    assert d.shape[0] == 5 and np.max(np.abs(e - e[0])) < 1e-10
    assert load_config(out / "config.cfg").get("fluid.steps") == 4


def test_shear_entropy_matches_golden(tmp_path):
    assert main(["--output-root", str(tmp_path), "fpk", "preset:shear-fixed-domain"]) == 0
    h, d = read_csv(tmp_path / "shear-fixed-domain" / "fpk.csv")
    gh, g = read_csv(GOLDEN / "shear_entropy.csv")
    assert np.array_equal(d[:, h.index("t")], g[:, 0])
    assert np.max(np.abs(d[:, h.index("entropy")] - g[:, 1])) < 1e-6


def test_shell_preset_cli(tmp_path):
    assert main(["--output-root", str(tmp_path), "shell", "preset:free-shell-vibration"]) == 0
    assert "drift" in (tmp_path / "free-shell-vibration" / "report.txt").read_text()


def test_guard_preset_saves_partial_results(tmp_path, capsys):
    assert main(["--output-root", str(tmp_path), "simulate", "preset:blow-up-guard"]) == 4
    err = capsys.readouterr().err
    assert err.startswith("polyshell-error category=admissibility exit=4")
    out = tmp_path / "blow-up-guard"
    for name in ("partial_shell.csv", "partial_diagnostics.csv", "fixed_point.csv", "termination.txt"):
        assert (out / name).exists()
    h, d = read_csv(out / "partial_shell.csv")
    assert d.shape[0] >= 2
    assert "sup_eta" in (out / "termination.txt").read_text()


def test_runs_are_bitwise_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert main(["--output-root", str(tmp_path / sub), "fpk", "preset:shear-fixed-domain",
                     "--set", "fluid.steps=20"]) == 0
    a = (tmp_path / "a" / "shear-fixed-domain" / "fpk.csv").read_bytes()
    b = (tmp_path / "b" / "shear-fixed-domain" / "fpk.csv").read_bytes()
    assert a == b
