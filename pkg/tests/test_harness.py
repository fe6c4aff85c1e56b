import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdlab.exceptions import ConfigurationError, DivergenceError, RejectedInputError
from vdlab.harness import (
    WORKERS_ENV,
    load_experiment,
    percentile_band,
    read_aggregate,
    render_curves,
    run_experiment,
    smooth,
)
from vdlab.harness import runner
from vdlab.harness.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main

# ---------------------------------------------------------- smoothing


def test_smooth_constant():
    assert smooth([1, 1, 1, 1, 1], 5).tolist() == [1, 1, 1, 1, 1]


def test_smooth_trailing_truncated():
    out = smooth([0, 0, 0, 0, 5], 5)
    assert out[-1] == 1.0 and len(out) == 5
    assert smooth([2, 4, 6], 5).tolist() == [2, 3, 4]


def test_smooth_window_one_is_identity():
    x = [3.0, -1.0, 7.5]
    assert smooth(x, 1).tolist() == x


def test_smooth_empty():
    assert smooth([], 5).size == 0


def test_smooth_bad_window():
    with pytest.raises(RejectedInputError):
        smooth([1.0], 0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=30),
    st.floats(-10, 10, allow_nan=False),
    st.floats(-10, 10, allow_nan=False),
    st.integers(1, 8),
)
def test_smooth_linear_and_shift_equivariant(x, a, b, window):
    x = np.asarray(x)
    np.testing.assert_allclose(smooth(a * x + b, window), a * smooth(x, window) + b, atol=1e-8)


# -------------------------------------------------------- percentiles


def test_two_runs_golden():
    med, lo, hi = percentile_band([([0], [0.0]), ([0], [1.0])])
    assert (med[0], lo[0], hi[0]) == (0.5, 0.25, 0.75)


def test_identical_runs_collapse():
    med, lo, hi = percentile_band([([0, 1], [0.3, 0.6])] * 3)
    assert np.array_equal(med, lo) and np.array_equal(med, hi)


def test_four_runs_median():
    med, _, _ = percentile_band([([0], [v]) for v in (0.0, 0.0, 1.0, 1.0)])
    assert med[0] == 0.5


def test_median_band():
    rng = np.random.default_rng(0)
    runs = rng.random((7, 5))
    med, lo, hi = percentile_band(runs, 50, 50)
    np.testing.assert_array_equal(lo, np.median(runs, axis=0))
    np.testing.assert_array_equal(hi, med)


def test_misaligned_runs_name_step():
    with pytest.raises(RejectedInputError, match="2500"):
        percentile_band([([1000, 2000], [0, 0]), ([1000, 2500], [0, 0])])


def test_single_run_rejected():
    with pytest.raises(RejectedInputError):
        percentile_band([([0], [1.0])])


# ------------------------------------------------------------ plotting


def _write_agg(path, rows):
    path.write_text("trainer,env_steps,median,p25,p75,n_seeds\n" + "".join(rows))
    return path


def test_two_trainer_plot(tmp_path):
    rows = [f"{t},{s},{v},{v},{v},3\n" for t in ("baseline", "igm-da") for s, v in ((1, 0.1), (2, 0.5), (3, 0.9))]
    svg = render_curves(_write_agg(tmp_path / "a.csv", rows), tmp_path / "c.svg")
    text = open(svg).read()
    assert text.count("<polyline") == 2 and text.count("<polygon") == 2
    assert "env_steps" in text and "win rate" in text


def test_single_point_plot(tmp_path):
    svg = render_curves(_write_agg(tmp_path / "a.csv", ["bc,10,0.5,0.5,0.5,1\n"]), tmp_path / "c.svg")
    text = open(svg).read()
    assert "<circle" in text and text.startswith("<svg")


def test_empty_body_writes_nothing(tmp_path):
    with pytest.raises(ConfigurationError):
        render_curves(_write_agg(tmp_path / "a.csv", []), tmp_path / "c.svg")
    assert not (tmp_path / "c.svg").exists()


def test_missing_column_named(tmp_path):
    (tmp_path / "a.csv").write_text("trainer,env_steps,median,p25,n_seeds\nx,1,0,0,1\n")
    with pytest.raises(ConfigurationError, match="p75"):
        render_curves(tmp_path / "a.csv", tmp_path / "c.svg")


# ---------------------------------------------------------- experiments


def _config(tmp_path, **overrides):
    cfg = {
        "env": {"type": "frozenlake"},
        "trainer": ["baseline", "igm-da"],
        "train": {"store": "tabular", "mixer": "additive", "lr": 0.1, "total_env_steps": 1500,
                  "epsilon_anneal_steps": 1000},
        "seeds": [0, 1, 2],
        "eval_interval": 500,
        "eval_episodes": 5,
        "output_dir": "out",
    }
    cfg.update(overrides)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


def test_file_contract(tmp_path):
    run_experiment(_config(tmp_path, trainer="igm-da"))
    out = tmp_path / "out"
    assert sorted(p.name for p in out.glob("*.csv")) == [
        "aggregate.csv", "igm-da-seed0.csv", "igm-da-seed1.csv", "igm-da-seed2.csv"
    ]
    assert (out / "curves.svg").exists()
    assert (out / "igm-da-seed0.csv").read_text().splitlines()[0] == "env_steps,win_rate,mean_return,rl_loss,imitation_loss"
    curves = read_aggregate(out / "aggregate.csv")
    assert curves["igm-da"]["steps"] == [500.0, 1000.0, 1500.0]


def test_aggregate_bytes_reproducible(tmp_path):
    path = _config(tmp_path)
    run_experiment(path)
    first = (tmp_path / "out" / "aggregate.csv").read_bytes()
    run_experiment(path, force=True)
    assert (tmp_path / "out" / "aggregate.csv").read_bytes() == first


def test_refuses_to_overwrite(tmp_path):
    path = _config(tmp_path, seeds=[0])
    run_experiment(path)
    with pytest.raises(ConfigurationError, match="--force"):
        run_experiment(path)


def test_parallel_workers_match_serial(tmp_path, monkeypatch):
    path = _config(tmp_path, seeds=[0, 1])
    run_experiment(path)
    serial = (tmp_path / "out" / "aggregate.csv").read_bytes()
    monkeypatch.setenv(WORKERS_ENV, "2")
    run_experiment(path, force=True)
    assert (tmp_path / "out" / "aggregate.csv").read_bytes() == serial


def test_divergence_recorded_per_run(tmp_path, monkeypatch):
    real = runner.make_trainer

    def flaky(name, cfg):
        trainer = real(name, cfg)
        if cfg.seed == 1:
            def boom(env):
                trainer._setup(env)
                from vdlab.training import TrainReport

                trainer.report_ = TrainReport(name, cfg.seed)
                raise DivergenceError("synthetic blow-up")
            trainer.fit = boom
        return trainer

    monkeypatch.setattr(runner, "make_trainer", flaky)
    results = run_experiment(_config(tmp_path, trainer="baseline"))
    assert [r.diverged for r in results] == [False, True, False]
    summary = json.loads((tmp_path / "out" / "runs.json").read_text())
    assert summary["runs"][1]["message"] == "synthetic blow-up"
    assert read_aggregate(tmp_path / "out" / "aggregate.csv")


@pytest.mark.parametrize(
    "overrides, field",
    [
        ({"trainer": "qmix"}, "trainer"),
        ({"seeds": []}, "seeds"),
        ({"seeds": [1, 1]}, "seeds"),
        ({"train": {"learning_rate": 1}}, "train"),
        ({"colour": "red"}, "colour"),
    ],
)
def test_validation_names_field_and_line(tmp_path, overrides, field):
    path = _config(tmp_path, **overrides)
    with pytest.raises(ConfigurationError) as info:
        load_experiment(path)
    msg = str(info.value)
    assert field in msg
    line = int(msg.split(":")[1])
    assert f'"{field}"' in path.read_text().splitlines()[line - 1]


def test_invalid_json_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "env": {"type": "frozenlake"},\n  "trainer": \n}\n')
    with pytest.raises(ConfigurationError, match=r"bad.json:4"):
        load_experiment(path)


# ------------------------------------------------------------------ CLI


def test_cli_run_and_plot(tmp_path, capsys):
    path = _config(tmp_path, seeds=[0, 1], trainer="baseline")
    assert main(["run", str(path)]) == EXIT_OK
    assert main(["run", str(path)]) == EXIT_INVALID
    assert main(["run", str(path), "--force", "--seed", "5"]) == EXIT_OK
    assert (tmp_path / "out" / "baseline-seed5.csv").exists()
    assert main(["plot", str(tmp_path / "out" / "aggregate.csv"), "-o", str(tmp_path / "p.svg")]) == EXIT_OK
    assert (tmp_path / "p.svg").exists()


def test_cli_invalid_config_exit_one(tmp_path, capsys):
    assert main(["run", str(_config(tmp_path, trainer="qmix"))]) == EXIT_INVALID
    assert "trainer" in capsys.readouterr().err


def test_cli_certify(tmp_path, capsys):
    env = tmp_path / "env.json"
    env.write_text(json.dumps({"type": "matrix", "payoffs": [[[1, 0], [0, 0.5]], [[0.5, 0], [0, 1]]]}))
    assert main(["certify", str(env)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["lossy"] is True


def test_cli_runtime_failure_exit_two(tmp_path, capsys):
    env = tmp_path / "env.json"
    env.write_text(json.dumps({"type": "skirmish"}))
    assert main(["certify", str(env)]) == EXIT_RUNTIME


def test_cli_bayes_and_errors(tmp_path, capsys):
    path = _config(tmp_path, seeds=[0], trainer="igm-da")
    assert main(["run", str(path)]) == EXIT_OK
    capsys.readouterr()
    env = tmp_path / "env.json"
    env.write_text(json.dumps({"type": "frozenlake"}))
    ckpt = tmp_path / "out" / "igm-da-seed0.ckpt.json"
    assert main(["bayes", str(env), str(ckpt)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    for row in report:
        assert sum(row["q"]) == pytest.approx(1.0)
        np.testing.assert_allclose(row["expected_loss"], 1 - np.asarray(row["q"]), atol=1e-12)

    synthetic = tmp_path / "syn.json"
    synthetic.write_text(json.dumps({"gamma": 0.9, "error_dec": [1, 1, 1], "error_other": [0, 0, 0]}))
    assert main(["errors", str(synthetic)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["accumulated_total"] == pytest.approx(2.71) and out["separated_total"] == pytest.approx(1.0)

    empirical = tmp_path / "emp.json"
    empirical.write_text(json.dumps({"env": {"type": "frozenlake"}, "checkpoint": str(ckpt)}))
    assert main(["errors", str(empirical)]) == EXIT_OK
    assert "measured_total" in json.loads(capsys.readouterr().out)

    missing = tmp_path / "miss.json"
    missing.write_text(json.dumps({"gamma": 0.9}))
    assert main(["errors", str(missing)]) == EXIT_INVALID
