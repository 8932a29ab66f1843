import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from collapsebounds import cli
from collapsebounds.config import ENV_VAR, ConfigError, parse_config
from collapsebounds.core import Dcsl
from collapsebounds.pipeline import StageError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return str(path)


def rows(text):
    body = [line for line in text.splitlines() if line and not line.startswith("#")]
    return list(csv.reader(body))


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# -- config parsing


def test_units_are_converted():
    cfg = parse_config(json.dumps({
        "protocol": {"dt1": "1100 ms", "dt2": "35 ms", "omega": "6.7 rad/s",
                     "sigma0": "56 um", "temperature": "1.6 nK"},
        "noise": {"model": "dcsl", "lambda": "1e-5 /s", "r_c": "100 nm", "t_csl": "1 uK"}}))
    p = cfg.protocol
    assert (p.dt1, p.dt2, p.omega) == pytest.approx((1.1, 0.035, 6.7))
    assert p.initial.sigma_x == pytest.approx(56e-6)
    n = cfg.noise
    assert isinstance(n, Dcsl)
    assert (n.lam, n.r_c, n.t_csl) == pytest.approx((1e-5, 1e-7, 1e-6), rel=1e-15)


def test_defaults_without_config():
    cfg = parse_config("")
    assert cfg.noise is None
    assert cfg.precision == 17 and cfg.output_format == "csv"
    assert cfg.protocol.omega == 6.7


@pytest.mark.parametrize("text, needle", [
    ('{\n  "protocol": {\n    "dt1": 1.1\n  }\n}', "3: protocol.dt1"),
    ('{\n  "protocol": {},\n  "bogus": 1\n}', "3: bogus: unknown key"),
    ('{\n  "noise": {\n    "model": "csl",\n    "lambda": "1e-8 m",\n    "r_c": "1 m"\n  }\n}',
     "4: noise.lambda"),
    ('{\n  "noise": {\n    "lambda": "1e-8 /s"\n  }\n}', "noise model required"),
    ('{\n  "noise": {"model": "csl", "lambda": "-1 /s", "r_c": "1 m"}\n}', "noise"),
    ('{"protocol": ', "invalid JSON"),
])
def test_config_errors_are_line_anchored(text, needle):
    with pytest.raises(ConfigError) as err:
        parse_config(text, "cfg.json")
    assert needle in str(err.value)
    assert str(err.value).startswith("cfg.json")


# -- simulate


def test_simulate_qm(capsys):
    code, out, _ = run(["simulate", "--config", str(CONFIGS / "qm.json")], capsys)
    assert code == 0
    assert "# convention.sigma_x = single-axis spread sqrt(x2/3)" in out
    table = rows(out)
    assert table[0][:3] == ["t_s", "stage", "x2_m2"]
    final_sigma = float(table[-1][5])
    assert 42e-6 <= final_sigma <= 198e-6
    assert out.endswith("\n")


def test_simulate_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cfg = str(CONFIGS / "qm.json")
    assert run(["simulate", "--config", cfg, "--out", str(a)], capsys)[0] == 0
    assert run(["simulate", "--config", cfg, "--out", str(b)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_oracle_columns(tmp_path, capsys):
    cfg = write(tmp_path, {"noise": {"model": "csl", "lambda": "1e-8 /s", "r_c": "1e-7 m"},
                           "simulate": {"sampling": "500 ms"}})
    code, out, _ = run(["simulate", "--config", cfg, "--oracle"], capsys)
    assert code == 0
    table = rows(out)
    head = table[0]
    for r in table[1:]:
        for name in ("x2", "p2", "xp_sym"):
            closed = float(r[head.index(name + ("_m2" if name == "x2" else
                                                 "_kg2m2_per_s2" if name == "p2" else "_Js"))])
            oracle = float(r[head.index(name + "_rk4")])
            assert oracle == pytest.approx(closed, rel=1e-8, abs=1e-40)


def test_empty_noise_block_exit_2(tmp_path, capsys):
    code, _, err = run(["simulate", "--config", write(tmp_path, {"noise": {}})], capsys)
    assert code == 2
    assert "noise model required" in err


def test_missing_config_uses_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(ENV_VAR, str(CONFIGS / "qm.json"))
    code, out, _ = run(["simulate", "--precision", "6"], capsys)
    assert code == 0 and "0.00013569" in out
    monkeypatch.setenv(ENV_VAR, str(tmp_path / "missing.json"))
    assert run(["simulate"], capsys)[0] == 2


def test_bad_flags_exit_2(capsys):
    cfg = str(CONFIGS / "qm.json")
    assert run(["simulate", "--config", cfg, "--precision", "30"], capsys)[0] == 2
    assert run(["simulate", "--config", cfg, "--workers", "0"], capsys)[0] == 2


def test_numerical_failure_exit_3(capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise StageError("kick", ArithmeticError("boom"))

    monkeypatch.setattr(cli, "run_protocol", broken)
    code, _, err = run(["simulate", "--config", str(CONFIGS / "qm.json")], capsys)
    assert code == 3
    assert "stage 'kick'" in err


def test_json_output(capsys):
    code, out, _ = run(["simulate", "--config", str(CONFIGS / "qm.json"), "--format", "json"],
                       capsys)
    assert code == 0
    obj = json.loads(out)
    assert obj["rows"][-1]["t_s"] == pytest.approx(2.935)
    assert obj["meta"]["convention.units"] == "SI"


def test_precision_is_round_trip_safe(capsys):
    _, out, _ = run(["simulate", "--config", str(CONFIGS / "qm.json")], capsys)
    table = rows(out)
    text = table[-1][2]
    assert len(text.split("e")[0].replace(".", "").lstrip("0")) <= 17
    assert float(text) == pytest.approx(5.523507901541029509e-8, rel=1e-15)


# -- scan, kick-error, boost-bound, sweep


def test_scan_files_and_workers(tmp_path, capsys):
    cfg = str(CONFIGS / "csl_scan.json")
    one, eight = tmp_path / "one.csv", tmp_path / "eight.csv"
    assert run(["scan", "--config", cfg, "--out", str(one)], capsys)[0] == 0
    assert run(["scan", "--config", cfg, "--out", str(eight), "--workers", "8"], capsys)[0] == 0
    assert one.read_bytes() == eight.read_bytes()
    b1, b8 = tmp_path / "one_boundary.csv", tmp_path / "eight_boundary.csv"
    assert b1.read_bytes() == b8.read_bytes()
    grid = rows(one.read_text())
    assert grid[0] == ["lambda_per_s", "r_c_m", "sigma_x", "verdict"]
    assert len(grid) == 1 + 60 * 60


def test_single_cell_scan(tmp_path, capsys):
    cfg = write(tmp_path, {
        "noise": {"model": "csl", "lambda": "1e-8 /s", "r_c": "1e-7 m"},
        "scan": {"lambda": ["1e-8 /s"], "r_c": ["1e-7 m"]}})
    code, out, _ = run(["scan", "--config", cfg], capsys)
    assert code == 0
    grid = rows(out.split("# table")[0])
    assert len(grid) == 2 and grid[1][3] == "allowed"


def test_kick_error_zero_lambda(tmp_path, capsys):
    cfg = write(tmp_path, {"noise": {"model": "dcsl", "lambda": "0 /s", "r_c": "1e-7 m",
                                     "t_csl": "1 K"}})
    code, out, _ = run(["kick-error", "--config", cfg], capsys)
    assert code == 0
    table = rows(out)
    head = table[0]
    for r in table[1:]:
        assert [float(r[head.index(c)]) for c in ("err_x2", "err_xp", "err_p2")] == [0, 0, 0]


def test_kick_error_needs_dcsl(capsys):
    assert run(["kick-error", "--config", str(CONFIGS / "qm.json")], capsys)[0] == 2


def test_boost_bound(capsys):
    code, out, _ = run(["boost-bound", "--config", str(CONFIGS / "boost.json")], capsys)
    assert code == 0
    table = rows(out)
    u = float(table[1][table[0].index("u_max_m_per_s")])
    assert 0.5e13 <= u <= 5e13


def test_sweep_kick(tmp_path, capsys):
    code, out, _ = run(["sweep", "--config", str(CONFIGS / "sweep_kick.json"), "--workers", "2"],
                       capsys)
    assert code == 0
    table = rows(out)
    assert table[0][0] == "dt2" and len(table) == 61


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "collapsebounds", "simulate", "--config",
                           str(CONFIGS / "qm.json"), "--precision", "5"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert rows(proc.stdout)[-1][0] == "2.935"
