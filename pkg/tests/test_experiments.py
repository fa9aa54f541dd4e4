from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src_sim.experiments import (
    EFFECTIVE_RATE_COLUMNS,
    EFFICIENCY_COLUMNS,
    SET_SIZE_COLUMNS,
    TRANSCRIPT_COLUMNS,
    Experiment,
    ExperimentConfig,
    Transcript,
    flip_bit,
    map_trials,
    run_effective_rate,
    run_efficiency,
    run_protocol_demo,
    run_selftest,
    run_set_size,
)


def make_config(experiment: Experiment, output_path: Path, **overrides) -> ExperimentConfig:
    params = {
        "experiment": experiment,
        "n_subcarriers": (8,),
        "snr_db": (10.0,),
        "kappa": (2.0,),
        "beta": (1e-3, 0.1, 1.0),
        "theta": (0.0, 1.0),
        "sigma_e2": (0.0,),
        "trials": 20,
        "seed": 42,
        "dp_resolution": 1e-4,
        "effective_dp_resolution": 1e-3,
        "output_path": output_path,
        "workers": 2,
    }
    return ExperimentConfig(**(params | overrides))


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        make_config(Experiment.EFFICIENCY, tmp_path / "out.csv", beta=())
    with pytest.raises(ValueError):
        make_config(Experiment.EFFICIENCY, tmp_path / "out.csv", beta=(0.0,))
    with pytest.raises(ValueError):
        make_config(Experiment.EFFICIENCY, tmp_path / "out.csv", kappa=(0.5,))
    with pytest.raises(ValueError):
        make_config(Experiment.EFFICIENCY, tmp_path / "out.csv", trials=0)


def test_map_trials_keeps_trial_order():
    assert map_trials(lambda index: index * index, 50, 8, "squares") == [i * i for i in range(50)]


def test_efficiency_columns_and_ranges(tmp_path):
    cfg = make_config(Experiment.EFFICIENCY, tmp_path / "efficiency.csv")
    frame = run_efficiency(cfg)
    written = pd.read_csv(cfg.output_path)
    assert list(written.columns) == EFFICIENCY_COLUMNS
    assert len(frame) == 3
    for column in ("eta_parallel_greedy", "eta_parallel_dp", "eta_sequential"):
        assert frame[column].between(0.0, 1.0).all()
    assert (frame["eta_parallel_dp"] >= frame["eta_parallel_greedy"] - 1e-3).all()
    assert (frame["seq_m_frames"] >= 1).all()


def test_set_size_columns(tmp_path):
    cfg = make_config(Experiment.SET_SIZE, tmp_path / "set_size.csv")
    frame = run_set_size(cfg)
    assert list(pd.read_csv(cfg.output_path).columns) == SET_SIZE_COLUMNS
    assert frame["set_size_dp"].between(0, 8).all()
    assert frame["set_size_greedy"].between(0, 8).all()


def test_effective_rate_columns(tmp_path):
    cfg = make_config(Experiment.EFFECTIVE_RATE, tmp_path / "effective.csv", beta=(1e-2, 0.5))
    frame = run_effective_rate(cfg)
    assert list(pd.read_csv(cfg.output_path).columns) == EFFECTIVE_RATE_COLUMNS
    assert len(frame) == 4
    assert (frame["set_size_greedy"] < 8).all()
    assert (frame["set_size_knapsack"] < 8).all()
    assert (frame["e_opt"] > 0).all()
    assert frame[["e_parallel_greedy", "e_syndrome_greedy", "e_sequential"]].ge(0).all().all()
    assert sorted(frame["theta"].unique().tolist()) == [0.0, 1.0]


def test_effective_rate_shares_stay_within_the_frame(tmp_path):
    cfg = make_config(
        Experiment.EFFECTIVE_RATE, tmp_path / "effective.csv", beta=(1e-3, 0.1, 1.0), theta=(0.0, 1.0, 100.0)
    )
    frame = run_effective_rate(cfg)
    split = frame["e_parallel_greedy"] + frame["e_syndrome_greedy"]
    assert (split <= frame["e_opt"] * (1.0 + 1e-9) + 1e-12).all()
    budget = frame["e_opt"] / (1.0 + frame["kappa"] * frame["beta"]) * (1.0 + 1e-9) + 1e-12
    assert (frame["e_parallel_greedy"] <= budget).all()
    assert (frame["e_parallel_knapsack"] <= budget).all()


@pytest.mark.parametrize(
    "experiment, runner",
    [(Experiment.EFFICIENCY, run_efficiency), (Experiment.EFFECTIVE_RATE, run_effective_rate)],
)
def test_csv_bytes_do_not_depend_on_workers(tmp_path, experiment, runner):
    outputs = []
    for workers in (1, 4, 8):
        cfg = make_config(experiment, tmp_path / f"{experiment.value}_{workers}.csv", workers=workers, trials=12)
        runner(cfg)
        outputs.append(cfg.output_path.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_flip_bit():
    assert flip_bit(b"\x00\x00", 0) == b"\x80\x00"
    assert flip_bit(b"\x00\x00", 15) == b"\x00\x01"
    with pytest.raises(ValueError):
        flip_bit(b"\x00", 8)


def test_transcript():
    transcript = Transcript()
    assert not transcript.passed
    transcript.record("step one", True)
    assert transcript.exit_code == 0
    transcript.record("step two", False, "integrity failure")
    assert transcript.exit_code == 1
    assert list(transcript.to_frame().columns) == TRANSCRIPT_COLUMNS


def test_protocol_demo_passes(tmp_path):
    transcript = run_protocol_demo(make_config(Experiment.PROTOCOL_DEMO, tmp_path / "demo.csv"))
    steps = [step for step, _, _ in transcript.steps]
    assert steps == ["puf authentication", "initial exchange", "0-RTT resumption", "resumption replay"]
    assert transcript.exit_code == 0
    assert pd.read_csv(tmp_path / "demo.csv")["passed"].all()


def test_protocol_demo_detects_tampering(tmp_path):
    cfg = make_config(Experiment.PROTOCOL_DEMO, tmp_path / "demo.csv", tamper_bit=40)
    transcript = run_protocol_demo(cfg)
    assert transcript.exit_code == 1
    assert ("initial exchange", False, "integrity failure") in transcript.steps


def test_protocol_demo_falls_back_to_resumption(tmp_path):
    cfg = make_config(Experiment.PROTOCOL_DEMO, tmp_path / "demo.csv", exhaust_crps=True)
    transcript = run_protocol_demo(cfg)
    assert ("crp exhaustion", True, "enrolment exhausted") in transcript.steps
    assert ("0-RTT resumption", True, "plaintext recovered") in transcript.steps


def test_selftest_passes(tmp_path):
    transcript = run_selftest(make_config(Experiment.SELFTEST, tmp_path / "selftest.csv"))
    assert transcript.passed, transcript.steps


@pytest.mark.slow
def test_efficiency_near_unity_and_crossing(tmp_path):
    cfg = make_config(
        Experiment.EFFICIENCY,
        tmp_path / "crossing.csv",
        n_subcarriers=(12,),
        beta=tuple(np.geomspace(1e-4, 1.0, 9)),
        trials=1000,
        workers=8,
    )
    frame = run_efficiency(cfg)
    smallest = frame[frame["beta"] == frame["beta"].min()].iloc[0]
    assert smallest["eta_parallel_greedy"] >= 0.95
    assert smallest["eta_parallel_dp"] >= 0.95
    assert smallest["eta_sequential"] >= 0.95
    coincide = frame[frame["beta"] <= 0.01 + 1e-12]
    apart = frame[frame["beta"] >= 0.1 - 1e-12]
    assert len(coincide) == 5 and len(apart) == 3
    for column in ("eta_parallel_greedy", "eta_parallel_dp"):
        assert (abs(coincide[column] - coincide["eta_sequential"]) <= 0.05).all()
        assert (apart[column] > apart["eta_sequential"]).all()


@pytest.mark.slow
def test_efficiency_trends_at_twenty_four_subcarriers(tmp_path):
    cfg = make_config(
        Experiment.EFFICIENCY,
        tmp_path / "trends.csv",
        n_subcarriers=(24,),
        kappa=(2.0, 3.0),
        beta=tuple(np.geomspace(1e-4, 1.0, 9)),
        trials=300,
        workers=8,
    )
    frame = run_efficiency(cfg)
    # grid rounding moves a DP optimum by at most N resolution steps per trial
    slack = 24 * cfg.dp_resolution / frame["mean_capacity"].min()
    for _, group in frame.groupby("beta"):
        by_kappa = group.set_index("kappa")
        assert by_kappa.loc[3.0, "eta_parallel_dp"] <= by_kappa.loc[2.0, "eta_parallel_dp"] + slack
        assert by_kappa.loc[3.0, "eta_sequential"] <= by_kappa.loc[2.0, "eta_sequential"]
    for _, group in frame.groupby("kappa"):
        eta = group.sort_values("beta")["eta_parallel_dp"].to_numpy()
        assert np.all(np.diff(eta) <= slack)


@pytest.mark.slow
def test_set_size_trends(tmp_path):
    cfg = make_config(
        Experiment.SET_SIZE,
        tmp_path / "set_size.csv",
        n_subcarriers=(24,),
        snr_db=(5.0, 10.0, 20.0),
        kappa=(2.0, 3.0),
        beta=(1e-4, 1e-3, 1e-2, 0.1, 1.0),
        trials=300,
        workers=8,
    )
    frame = run_set_size(cfg)
    tolerance = 0.05
    for _, group in frame.groupby(["kappa", "beta"]):
        sizes = group.sort_values("snr_db")["set_size_greedy"].to_numpy()
        assert np.all(np.diff(sizes) >= -tolerance)
    for _, group in frame.groupby(["snr_db", "beta"]):
        by_kappa = group.set_index("kappa")
        assert by_kappa.loc[3.0, "set_size_greedy"] <= by_kappa.loc[2.0, "set_size_greedy"] + tolerance
    for _, group in frame.groupby(["snr_db", "kappa"]):
        sizes = group.sort_values("beta")["set_size_greedy"].to_numpy()
        assert np.all(np.diff(sizes) <= tolerance)


@pytest.mark.slow
def test_sequential_wins_under_a_tight_delay_constraint(tmp_path):
    cfg = make_config(
        Experiment.EFFECTIVE_RATE,
        tmp_path / "delay.csv",
        n_subcarriers=(12,),
        beta=(1e-4,),
        theta=(100.0,),
        trials=300,
        workers=8,
    )
    row = run_effective_rate(cfg).iloc[0]
    assert row["seq_l_frames"] >= 1
    assert row["e_sequential"] > row["e_parallel_greedy"]
    assert row["e_sequential"] > row["e_parallel_knapsack"]
