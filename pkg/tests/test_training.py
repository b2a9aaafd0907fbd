import math

import numpy as np
import pytest

from pinnkit.datagen import Line, Parabola
from pinnkit.network import MlpConfig
from pinnkit.problems import (
    FixedD, HeatCollocation, HeatKind, Interval1D, PolynomialKind,
    ProblemSpec, TrainableD,
)
from pinnkit.training import (
    AdamParams, HeatData, PolyData, RunConfig, config_from_dict,
    config_to_dict, ground_truth_mse, ground_truth_mse_heat, load_report_summary,
    make_dataset, save_report, train, train_inverse_heat, union_samples,
)


def linear_config(**kw):
    defaults = dict(
        problem=ProblemSpec(PolynomialKind(1), lam=1.0,
                            collocation=Interval1D(-1, 2, 30)),
        net=MlpConfig(input_dim=1, hidden_layers=2, neurons_per_layer=10),
        data=PolyData(gt=Line(1, 1), n_points=10, noise_variance=0.01),
        epochs=300,
    )
    defaults.update(kw)
    return RunConfig(**defaults)


def heat_config(**kw):
    defaults = dict(
        problem=ProblemSpec(HeatKind(FixedD(0.1)),
                            collocation=HeatCollocation(nx=6, nt=6,
                                                        n_boundary=10,
                                                        n_initial=10)),
        net=MlpConfig(input_dim=2, hidden_layers=2, neurons_per_layer=8),
        data=HeatData(dx=0.2, dt=0.2),
        epochs=200,
    )
    defaults.update(kw)
    return RunConfig(**defaults)


def test_union_samples_proportional():
    xs = union_samples([(-1, 0), (1, 2)], 300)
    assert len(xs) == 300
    assert (xs <= 0).sum() == 150 and (xs >= 1).sum() == 150
    ys = union_samples([(-1, 2)], 300)
    assert len(ys) == 300 and ys[0] == -1 and ys[-1] == 2


def test_zero_epochs_reports_untrained_mse():
    report = train(linear_config(epochs=0))
    assert len(report.curve_total) == 0
    assert math.isnan(report.final_total_loss)
    assert not report.failed
    assert all(np.isfinite(v) for v in report.gt_mse.values())


def test_training_decreases_loss():
    report = train(linear_config(epochs=400))
    assert not report.failed
    assert report.curve_total[-1] < 0.25 * report.curve_total[0]
    assert np.all(np.isfinite(report.curve_total))


def test_reports_are_bit_identical_across_runs():
    cfg = linear_config(epochs=120, seed_data=7, seed_init=8)
    a, b = train(cfg), train(cfg)
    assert np.array_equal(a.curve_total, b.curve_total)
    assert np.array_equal(a.curve_data, b.curve_data)
    assert np.array_equal(a.curve_residual, b.curve_residual)
    assert a.gt_mse == b.gt_mse
    assert a.final_total_loss == b.final_total_loss
    assert np.array_equal(a.params.values, b.params.values)


def test_curve_components_consistent():
    cfg = linear_config(epochs=50)
    report = train(cfg)
    lam = cfg.problem.lam
    recompute = report.curve_data + lam * report.curve_residual
    assert np.allclose(report.curve_total, recompute, rtol=1e-12, atol=0)


def test_heat_training_runs_and_records_bcic_in_total():
    report = train(heat_config(epochs=60))
    assert not report.failed
    # total includes the BC/IC penalty on top of data + lambda*residual
    slack = report.curve_total - (report.curve_data + report.curve_residual)
    assert np.all(slack > -1e-12)
    assert report.d_final == 0.1  # fixed-D runs report the fixed value


def test_inverse_requires_trainable():
    with pytest.raises(ValueError):
        train_inverse_heat(heat_config())


def test_lambda_zero_freezes_d():
    cfg = heat_config(
        problem=ProblemSpec(HeatKind(TrainableD(0.05)), lam=0.0,
                            collocation=HeatCollocation(nx=4, nt=4,
                                                        n_boundary=6,
                                                        n_initial=6)),
        data=HeatData(dx=0.25, dt=0.25), epochs=40)
    report = train_inverse_heat(cfg)
    assert report.d_curve is not None
    assert np.all(report.d_curve == 0.05)
    assert report.d_final == 0.05


def test_trainable_d_moves_with_lambda():
    cfg = heat_config(
        problem=ProblemSpec(HeatKind(TrainableD(0.05)), lam=1.0,
                            collocation=HeatCollocation(nx=4, nt=4,
                                                        n_boundary=6,
                                                        n_initial=6)),
        data=HeatData(dx=0.25, dt=0.25), epochs=40)
    report = train_inverse_heat(cfg)
    assert report.d_curve is not None
    assert report.d_curve[-1] != 0.05


def test_nan_loss_marks_run_failed():
    # a colossal step drives the output layer to inf; the run must stop
    # and be flagged at that epoch rather than keep training
    cfg = linear_config(epochs=200, adam=AdamParams(lr=1e250))
    report = train(cfg)
    assert report.failed
    assert report.failed_epoch is not None
    assert len(report.curve_total) == report.failed_epoch + 1
    assert not math.isfinite(report.curve_total[-1])


def test_ground_truth_mse_zero_net_closed_form():
    # untrained all-zero net against x+1 on [0,1]: integral of (x+1)^2 = 7/3
    cfg = MlpConfig(input_dim=1, hidden_layers=2, neurons_per_layer=5)
    from pinnkit.network import init_params

    params = init_params(cfg)
    params.values[:] = 0.0
    mse = ground_truth_mse(params, Line(1, 1), [(0.0, 1.0)], n_samples=2001)
    assert mse == pytest.approx(7.0 / 3.0, rel=2e-3)


def test_ground_truth_mse_model_equals_gt():
    # standalone evaluation reproduces the in-report value at the same
    # sample count
    report = train(linear_config(epochs=150))
    got = ground_truth_mse(report.params, report.config.data.gt,
                           [(0.0, 1.0)], report.config.eval_samples)
    assert got == report.gt_mse["train"]


def test_heat_eval_domain_enforced():
    from pinnkit.datagen import HeatSurface
    from pinnkit.network import init_params

    params = init_params(MlpConfig(input_dim=2, hidden_layers=1,
                                   neurons_per_layer=3))
    with pytest.raises(ValueError):
        ground_truth_mse_heat(params, HeatSurface(0.1), 1.0,
                              x_range=(-1.0, 2.0))


def test_config_round_trips_through_dict():
    for cfg in (linear_config(seed_data=3, seed_init=4),
                heat_config(epochs=77),
                heat_config(problem=ProblemSpec(
                    HeatKind(TrainableD(0.07)),
                    collocation=HeatCollocation(nx=4, nt=4, n_boundary=6,
                                                n_initial=6)),
                    data=HeatData(dx=0.25, dt=0.25, x_stride=2)),
                linear_config(problem=ProblemSpec(
                    PolynomialKind(2, residual_order=4), lam=10.0,
                    collocation=Interval1D(-1, 2, 50)),
                    data=PolyData(gt=Parabola(1, 1, 1)))):
        d = config_to_dict(cfg)
        back = config_from_dict(d)
        assert config_to_dict(back) == d
        # a round-tripped config trains identically
        if cfg.epochs <= 100:
            continue
        r1 = train(cfg.with_seeds(1, 2))
        r2 = train(back.with_seeds(1, 2))
        assert np.array_equal(r1.curve_total, r2.curve_total)


def test_dataset_regeneration_matches_training_data():
    cfg = linear_config(seed_data=11)
    ds1 = make_dataset(cfg.data, cfg.seed_data)
    ds2 = make_dataset(cfg.data, cfg.seed_data)
    assert np.array_equal(ds1.targets, ds2.targets)


def test_save_and_load_report(tmp_path):
    cfg = heat_config(
        problem=ProblemSpec(HeatKind(TrainableD(0.05)), lam=1.0,
                            collocation=HeatCollocation(nx=4, nt=4,
                                                        n_boundary=6,
                                                        n_initial=6)),
        data=HeatData(dx=0.25, dt=0.25), epochs=30)
    report = train(cfg)
    paths = save_report(report, tmp_path, "run0")
    doc = load_report_summary(paths["yaml"])
    assert doc["report_version"] == 1
    assert doc["final_total_loss"] == report.final_total_loss
    assert doc["gt_mse"]["domain"] == report.gt_mse["domain"]
    with open(paths["curves"]) as fh:
        header = fh.readline().strip().split(",")
    assert header == ["epoch", "total", "data", "residual", "D"]
    rows = np.genfromtxt(paths["curves"], delimiter=",", skip_header=1)
    assert rows.shape == (30, 5)
    assert np.array_equal(rows[:, 1], report.curve_total)


def test_ground_truth_mse_perfect_model_is_zero():
    # a model that coincides with the ground truth scores exactly zero
    from pinnkit.network import init_params

    cfg = MlpConfig(input_dim=1, hidden_layers=1, neurons_per_layer=3)
    params = init_params(cfg)
    params.values[:] = 0.0  # network output identically 0
    zero_line = Line(0.0, 0.0)
    assert ground_truth_mse(params, zero_line, [(-1.0, 2.0)], 64) == 0.0
