"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run pytest with -s to watch them go
by). The training-heavy criteria share session fixtures so the expensive
runs execute once. Everything is seeded; reruns reproduce these numbers
exactly.
"""

import math
import time
from dataclasses import replace
from statistics import median

import numpy as np
import pytest

from pinnkit.datagen import HeatSurface
from pinnkit.experiments import preset_density_sweep, preset_run_config
from pinnkit.fdm import FdmGrid, cfl_check, fdm_mse, fdm_solve
from pinnkit.network import forward, load_checkpoint, save_checkpoint
from pinnkit.problems import HeatKind, TrainableD
from pinnkit.rng import Rng, derive_seed
from pinnkit.tape import Tape, grad, nth_derivative
from pinnkit.training import RunConfig, train, train_inverse_heat

from _expr import build_spec, central_diff_spec, random_expr_spec


def _report(num, desc):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            status = "PASS" if exc_type is None else "FAIL"
            print(f"\nACCEPTANCE {num:>2} {status}  {desc}")
            return False

    return _Ctx()


def _seeded(cfg: RunConfig, base: int, i: int) -> RunConfig:
    return cfg.with_seeds(derive_seed(base, "data", i),
                          derive_seed(base, "init", i))


# -- shared expensive runs ----------------------------------------------------

@pytest.fixture(scope="session")
def linear_runs():
    cfg = preset_run_config("linear")
    return [train(_seeded(cfg, 601, i)) for i in range(10)]


@pytest.fixture(scope="session")
def heat_runs():
    cfg = preset_run_config("heat")
    return [train(_seeded(cfg, 801, i)) for i in range(5)]


@pytest.fixture(scope="session")
def inverse_runs():
    cfg = preset_run_config("heat-inverse")
    assert isinstance(cfg.problem.kind, HeatKind)
    assert isinstance(cfg.problem.kind.diffusivity, TrainableD)
    return [train_inverse_heat(_seeded(cfg, 901, i)) for i in range(5)]


# -- criteria -----------------------------------------------------------------

def test_criterion_01_autodiff_oracle():
    with _report(1, "gradients of 1000 random DAGs match central differences"):
        rng = Rng(0xACCE01)
        t_start = time.perf_counter()
        n_dags = 0
        while n_dags < 1000:
            spec, leaves = random_expr_spec(rng, n_inputs=3, max_ops=40,
                                            depth_limit=12)
            if not spec:
                continue
            n_dags += 1
            tape = Tape()
            y, leaf_vars = build_spec(tape, spec, leaves)
            gs = grad(y, leaf_vars)
            for i, g in enumerate(gs):
                fd = central_diff_spec(spec, leaves, i)
                err = abs(g.value - fd)
                assert err <= 1e-8 + 1e-5 * max(abs(g.value), abs(fd)), (
                    f"dag {n_dags} leaf {i}: ad={g.value} fd={fd}")
        elapsed = time.perf_counter() - t_start
        assert elapsed < 10.0, f"oracle suite took {elapsed:.1f}s"


def test_criterion_02_polynomial_annihilation():
    with _report(2, "(n+1)-th derivative of degree-n polynomials is zero"):
        rng = Rng(0xACCE02)
        for degree in range(1, 6):
            coeffs = [rng.uniform_in(-2, 2) for _ in range(degree + 1)]
            for _ in range(100):
                tape = Tape()
                x = tape.input(rng.uniform_in(-3, 3))

                def poly(v):
                    acc = tape.const(coeffs[0])
                    for j, c in enumerate(coeffs[1:], start=1):
                        acc = acc + tape.const(c) * tape.powi(v, j)
                    return acc

                d = nth_derivative(poly, x, degree + 1)
                assert abs(d.value) < 1e-9


def test_criterion_03_heat_residual_of_exact_solution():
    with _report(3, "autodiff heat residual of the exact solution < 1e-8"):
        rng = Rng(0xACCE03)
        t_start = time.perf_counter()
        for d in (0.01, 0.1, 1.0):
            pi2d = math.pi * math.pi * d
            for _ in range(100):
                tape = Tape()
                x = tape.input(rng.uniform())
                tt = tape.input(rng.uniform())
                u = tape.exp(-pi2d * tt) * tape.sin(math.pi * x)
                du_x, du_t = grad(u, [x, tt])
                d2u_xx = grad(du_x, [x])[0]
                r = du_t.value - d * d2u_xx.value
                assert abs(r) < 1e-8
        assert time.perf_counter() - t_start < 1.0


# appendix tables: (dx=dt, T, D) -> paper FDM MSE, or "diverged"/"limits"
_FDM_APPENDIX = [
    (0.1, 1.0, 0.01, 1.457e-8), (0.1, 1.0, 0.05, 5.169e-6),
    (0.1, 10.0, 0.01, 3.996e-7), (0.1, 10.0, 0.05, 6.329e-6),
    (0.05, 1.0, 0.005, 2.493e-10), (0.05, 1.0, 0.025, 1.167e-7),
    (0.05, 10.0, 0.005, 1.277e-8), (0.05, 10.0, 0.025, 7.127e-7),
    (0.025, 1.0, 0.0025, 4.085e-12), (0.025, 1.0, 0.0125, 2.206e-9),
    (0.025, 10.0, 0.0025, 2.909e-10), (0.025, 10.0, 0.0125, 4.687e-8),
]
_FDM_DIVERGENT = [
    (0.1, 10.0, 0.09), (0.05, 10.0, 0.045), (0.025, 10.0, 0.0225),
    (0.1, 100.0, 0.09), (0.05, 100.0, 0.045), (0.025, 100.0, 0.0225),
]


def test_criterion_04_fdm_appendix_reproduction():
    with _report(4, "FDM stable cells within 10x of the appendix, "
                    "divergent cells flagged"):
        t_start = time.perf_counter()
        for dx, t_final, d, paper in _FDM_APPENDIX:
            sol = fdm_solve(FdmGrid.from_initial_fn(dx, dx, d, t_final))
            assert not sol.diverged, (dx, t_final, d)
            mse = fdm_mse(sol, HeatSurface(d))
            assert mse <= 10.0 * paper, (dx, t_final, d, mse, paper)
        for dx, t_final, d in _FDM_DIVERGENT:
            sol = fdm_solve(FdmGrid.from_initial_fn(dx, dx, d, t_final))
            assert sol.diverged, (dx, t_final, d)
            mse = fdm_mse(sol, HeatSurface(d))
            assert math.isfinite(mse) and mse > 1e6
        assert time.perf_counter() - t_start < 30.0


def test_criterion_05_cfl_exactness():
    with _report(5, "cfl_check agrees with sign(0.5 dx^2 - D dt); boundary "
                    "counts as satisfied"):
        rng = Rng(0xACCE05)
        for _ in range(10_000):
            dx = rng.uniform_in(0.004, 0.6)
            dt = rng.uniform_in(0.004, 0.6)
            d = rng.uniform_in(1e-5, 1.2)
            res = cfl_check(d, dx, dt)
            assert res.satisfied == (0.5 * dx * dx - d * dt >= 0.0)
        # exact float boundary: binary-representable lattice values
        for dx, dt in ((0.0625, 0.125), (0.25, 0.5), (0.125, 0.25)):
            d = 0.5 * dx * dx / dt
            assert d * dt == 0.5 * dx * dx
            assert cfl_check(d, dx, dt).satisfied


def test_criterion_06_linear_desk_run(linear_runs):
    with _report(6, "linear preset: overall MSE < 5e-2 in >= 8/10 seeds, "
                    "each run < 60 s"):
        assert all(not r.failed for r in linear_runs)
        for r in linear_runs:
            assert r.wall_time_s < 60.0, f"run took {r.wall_time_s:.1f}s"
        hits = sum(1 for r in linear_runs if r.gt_mse["overall"] < 5e-2)
        values = [f"{r.gt_mse['overall']:.2e}" for r in linear_runs]
        assert hits >= 8, f"only {hits}/10 under 5e-2: {values}"


def test_criterion_07_lambda_ablation_median():
    with _report(7, "median outside-range MSE: lambda=1 beats lambda=0 "
                    "over 10 seed pairs"):
        base = preset_run_config("linear")
        with_r, without_r = [], []
        for i in range(10):
            seeded = _seeded(base, 701, i)
            with_r.append(train(seeded).gt_mse["outside"])
            lam0 = replace(seeded, problem=replace(seeded.problem, lam=0.0))
            without_r.append(train(lam0).gt_mse["outside"])
        m1, m0 = median(with_r), median(without_r)
        assert m1 < m0, f"median lambda=1 {m1:.3e} vs lambda=0 {m0:.3e}"


def test_criterion_08_heat_forward(heat_runs):
    with _report(8, "heat preset: domain MSE < 1e-4 in >= 4/5 seeds, "
                    "each run <= 10 min"):
        assert all(not r.failed for r in heat_runs)
        for r in heat_runs:
            assert r.wall_time_s <= 600.0, f"run took {r.wall_time_s:.0f}s"
        hits = sum(1 for r in heat_runs if r.gt_mse["domain"] < 1e-4)
        values = [f"{r.gt_mse['domain']:.2e}" for r in heat_runs]
        assert hits >= 4, f"only {hits}/5 under 1e-4: {values}"


def test_criterion_09_inverse_diffusivity(inverse_runs):
    with _report(9, "inverse runs recover D in [0.09, 0.11] in >= 4/5 seeds "
                    "with a stabilized trajectory"):
        assert all(not r.failed for r in inverse_runs)
        hits = 0
        for r in inverse_runs:
            tail = r.d_curve[int(0.9 * len(r.d_curve)):]
            stabilized = np.abs(tail - r.d_final).max() < 1e-3
            if 0.09 <= r.d_final <= 0.11 and stabilized:
                hits += 1
        values = [f"{r.d_final:.4f}" for r in inverse_runs]
        assert hits >= 4, f"only {hits}/5 recovered D: {values}"


def test_criterion_10_loss_curve_drop(linear_runs, heat_runs):
    with _report(10, "final total loss < 1% of epoch-1 loss for linear, "
                     "quadratic and heat presets"):
        lin = linear_runs[0]
        assert lin.final_total_loss < 0.01 * lin.curve_total[0]
        heat = heat_runs[0]
        assert heat.final_total_loss < 0.01 * heat.curve_total[0]
        quad = train(_seeded(preset_run_config("quadratic"), 1001, 0))
        assert not quad.failed
        assert quad.final_total_loss < 0.01 * quad.curve_total[0], (
            quad.final_total_loss, quad.curve_total[0])


def test_criterion_11_reproducibility(tmp_path):
    with _report(11, "identical RunConfig -> bit-identical reports; "
                     "checkpoint round trip preserves outputs"):
        cfg = replace(preset_run_config("linear"), epochs=800)
        cfg = _seeded(cfg, 1101, 0)
        a, b = train(cfg), train(cfg)
        assert np.array_equal(a.curve_total, b.curve_total)
        assert np.array_equal(a.curve_data, b.curve_data)
        assert np.array_equal(a.curve_residual, b.curve_residual)
        assert a.gt_mse == b.gt_mse
        assert np.array_equal(a.params.values, b.params.values)

        heat_cfg = preset_run_config("heat-inverse")
        heat_cfg = replace(heat_cfg, epochs=40,
                           net=replace(heat_cfg.net, hidden_layers=1,
                                       neurons_per_layer=6))
        heat_cfg = _seeded(heat_cfg, 1101, 1)
        ha, hb = train(heat_cfg), train(heat_cfg)
        assert np.array_equal(ha.curve_total, hb.curve_total)
        assert np.array_equal(ha.d_curve, hb.d_curve)

        path = tmp_path / "round.ckpt"
        save_checkpoint(path, a.params, extras={"D": 0.0999})
        loaded, _, extras = load_checkpoint(path)
        assert extras["D"] == 0.0999
        t1, t2 = Tape(), Tape()
        for xv in (-0.8, 0.1, 0.5, 1.7):
            y1 = forward(t1, a.params, [t1.input(xv)])
            y2 = forward(t2, loaded, [t2.input(xv)])
            assert y1.value == y2.value


def test_criterion_12_density_trend():
    with _report(12, "denser heat grid gives mean MSE <= coarse grid "
                     "(3 seeds, D=0.1)"):
        base = preset_density_sweep().base
        means = {}
        for delta in (0.1, 0.025):
            data = replace(base.data, dx=delta, dt=delta)
            from pinnkit.experiments import _heat_collocation

            problem = replace(base.problem,
                              collocation=_heat_collocation(delta, delta, 1.0))
            cfg = replace(base, data=data, problem=problem)
            mses = []
            for i in range(3):
                r = train(_seeded(cfg, 1201, i))
                assert not r.failed
                mses.append(r.gt_mse["domain"])
            means[delta] = float(np.mean(mses))
        assert means[0.025] <= means[0.1], means


# -- trainer-level properties that ride along with the criterion runs ---------

def test_property_inside_vs_outside_mse(linear_runs):
    # training-range error at or below outside-range error in the majority
    # of linear runs
    majority = sum(1 for r in linear_runs
                   if r.gt_mse["train"] <= r.gt_mse["outside"])
    assert majority > len(linear_runs) // 2, [
        (f"{r.gt_mse['train']:.2e}", f"{r.gt_mse['outside']:.2e}")
        for r in linear_runs]


def test_property_linear_final_loss_level(linear_runs):
    # the linear preset settles near the noise floor
    assert all(r.final_total_loss < 5e-2 for r in linear_runs)
