import pandas as pd
import pytest

from src_common.common_utils import ConfigError
from src_sim.cli import build_parser, load_config, main, parse_grid, parse_int_grid
from src_sim.experiments import EFFICIENCY_COLUMNS, Experiment


def test_comma_grid():
    assert parse_grid("0.0001,100") == (1e-4, 100.0)
    assert parse_grid("10") == (10.0,)


def test_log_grid():
    grid = parse_grid("1e-4:1:25log")
    assert len(grid) == 25
    assert grid[0] == pytest.approx(1e-4)
    assert grid[-1] == pytest.approx(1.0)
    assert grid[12] == pytest.approx(1e-2)


def test_linear_grid():
    assert parse_grid("0:1:3lin") == pytest.approx((0.0, 0.5, 1.0))


@pytest.mark.parametrize("text", ["", "a,b", "0:1:5log", "1:2:0lin", "1:x:3lin"])
def test_malformed_grids(text):
    with pytest.raises(ConfigError):
        parse_grid(text)


def test_integer_grid():
    assert parse_int_grid("12,64") == (12, 64)
    with pytest.raises(ConfigError):
        parse_int_grid("12.5")


def test_defaults_come_from_pyproject(tmp_path):
    cfg = load_config(build_parser().parse_args(["efficiency", "--out", str(tmp_path / "out.csv")]))
    assert cfg.experiment is Experiment.EFFICIENCY
    assert cfg.n_subcarriers == (12,)
    assert cfg.kappa == (2.0,)
    assert len(cfg.beta) == 25
    assert cfg.theta == (1e-4, 100.0)
    assert cfg.trials == 1000
    assert cfg.seed == 42


def test_command_line_beats_config_file(tmp_path):
    config = tmp_path / "grid.env"
    config.write_text("N=24,64\nTRIALS=7\nKAPPA=2,3\nCODE=hamming84\n")
    args = build_parser().parse_args(["set_size", "--config", str(config), "--trials", "3"])
    cfg = load_config(args)
    assert cfg.n_subcarriers == (24, 64)
    assert cfg.kappa == (2.0, 3.0)
    assert cfg.trials == 3
    assert cfg.code == "hamming84"


def test_unknown_config_key(tmp_path):
    config = tmp_path / "bad.env"
    config.write_text("N=12\nSNR=10\n")
    with pytest.raises(ConfigError, match="SNR"):
        load_config(build_parser().parse_args(["efficiency", "--config", str(config)]))


def test_missing_config_file(tmp_path):
    assert main(["efficiency", "--config", str(tmp_path / "missing.env")]) == 2


def test_invalid_values_exit_with_2(tmp_path):
    assert main(["efficiency", "--beta-grid", "0,0.5", "--out", str(tmp_path / "out.csv")]) == 2
    assert main(["efficiency", "--trials", "many", "--out", str(tmp_path / "out.csv")]) == 2


def test_efficiency_run(tmp_path):
    out = tmp_path / "efficiency.csv"
    code = main(["efficiency", "--n", "6", "--beta-grid", "1e-3:1:3log", "--trials", "5", "--out", str(out)])
    assert code == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == EFFICIENCY_COLUMNS
    assert len(frame) == 3


def test_unwritable_output_exits_with_2(tmp_path):
    assert main(["set_size", "--n", "4", "--beta-grid", "0.5", "--trials", "2", "--out", str(tmp_path)]) == 2


def test_selftest_exit_code(tmp_path):
    assert main(["selftest", "--out", str(tmp_path / "selftest.csv")]) == 0


def test_tampered_demo_exits_nonzero(tmp_path):
    assert main(["protocol_demo", "--tamper-bit", "40", "--out", str(tmp_path / "demo.csv")]) == 1
