"""Experiment harness: sweep plans, parallel cell execution, aggregation.

A plan expands into cells (one per grid point); each cell trains
``iterations`` independent runs whose seeds derive from the plan's base
seed, the cell key and the iteration index, so a plan rerun reproduces
every run and therefore the winner. Cells execute on a bounded thread
pool (the sweep kernels release the GIL under the numba backend);
aggregation is single-threaded after the join.

Selection follows the two-stage architecture search: fix layer count,
sweep neurons, pick the argmin of mean ground-truth MSE (ties prefer
fewer neurons, then lower mean wall time), then fix neurons and sweep
layers. Mean total loss is available as an alternative criterion.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .datagen import HeatSurface, Line, Parabola, heat_exact
from .fdm import FdmGrid, cfl_check, fdm_mse, fdm_solve
from .network import MlpConfig, forward
from .problems import (
    FixedD, HeatCollocation, HeatKind, Interval1D, PolynomialKind,
    ProblemSpec, TrainableD,
)
from .program import Program
from .rng import derive_seed
from .tape import Tape, grad
from .training import (
    HeatData, PolyData, RunConfig, TrainReport, config_to_dict, train,
    union_samples,
)


# -- presets ------------------------------------------------------------------

def _poly_problem(degree, lam=1.0, residual_order=None):
    return ProblemSpec(PolynomialKind(degree, residual_order), lam=lam,
                       collocation=Interval1D(-1.0, 2.0, 100))


def _heat_collocation(dx=0.1, dt=0.1, t_final=1.0):
    nx = round(1.0 / dx) + 1
    nt = round(t_final / dt) + 1
    return HeatCollocation(nx=nx, nt=nt, t_final=t_final,
                           n_boundary=50, n_initial=50)


def preset_run_config(name: str) -> RunConfig:
    """Paper-configuration presets for single training runs."""
    if name == "linear":
        return RunConfig(
            problem=_poly_problem(1),
            net=MlpConfig.from_total_layers(3, 20, input_dim=1),
            data=PolyData(gt=Line(1.0, 1.0), n_points=10,
                          noise_variance=0.01))
    if name == "quadratic":
        return RunConfig(
            problem=_poly_problem(2),
            net=MlpConfig.from_total_layers(5, 30, input_dim=1),
            data=PolyData(gt=Parabola(1.0, 1.0, 1.0), n_points=10,
                          noise_variance=0.01))
    if name == "heat":
        return RunConfig(
            problem=ProblemSpec(HeatKind(FixedD(0.1)),
                                collocation=_heat_collocation()),
            net=MlpConfig.from_total_layers(5, 80, input_dim=2),
            data=HeatData(dx=0.1, dt=0.1, diffusivity=0.1, t_final=1.0))
    if name == "heat-inverse":
        cfg = preset_run_config("heat")
        return replace(cfg, problem=ProblemSpec(
            HeatKind(TrainableD(0.05)), lam=cfg.problem.lam,
            collocation=cfg.problem.collocation))
    raise ValueError(f"unknown preset {name!r}; "
                     "use linear, quadratic, heat or heat-inverse")


PRESET_NAMES = ("linear", "quadratic", "heat", "heat-inverse")


def _selection_interval(config: RunConfig) -> str:
    return "domain" if isinstance(config.data, HeatData) else "overall"


# -- plans --------------------------------------------------------------------

@dataclass(frozen=True)
class ArchSearchPlan:
    base: RunConfig
    stage1_layers: int = 4               # total layers held fixed in stage 1
    neuron_list: tuple = (5, 10, 20, 30, 40)
    layer_list: tuple = (2, 3, 4, 5, 6)  # total layers swept in stage 2
    iterations: int = 5
    criterion: str = "gt_mse"            # or "total_loss"

    def describe(self):
        return {"kind": "arch-search", "stage1_layers": self.stage1_layers,
                "neuron_list": list(self.neuron_list),
                "layer_list": list(self.layer_list),
                "iterations": self.iterations, "criterion": self.criterion}


@dataclass(frozen=True)
class LambdaSweepPlan:
    base: RunConfig
    lambdas: tuple = (0.0, 1e-6, 1.0, 10.0)
    iterations: int = 5

    def describe(self):
        return {"kind": "lambda-sweep", "lambdas": list(self.lambdas),
                "iterations": self.iterations}


@dataclass(frozen=True)
class ResidualOrderSweepPlan:
    base: RunConfig
    orders: tuple = (2, 3)
    iterations: int = 5

    def describe(self):
        return {"kind": "residual-order-sweep", "orders": list(self.orders),
                "iterations": self.iterations}


@dataclass(frozen=True)
class DensitySweepPlan:
    base: RunConfig
    deltas: tuple = (0.1, 0.05, 0.025)
    iterations: int = 3

    def describe(self):
        return {"kind": "density-sweep", "deltas": list(self.deltas),
                "iterations": self.iterations}


@dataclass(frozen=True)
class DiffusivitySweepPlan:
    base: RunConfig
    d_values: tuple = (0.01, 0.1, 1.0)
    iterations: int = 3

    def describe(self):
        return {"kind": "diffusivity-sweep", "d_values": list(self.d_values),
                "iterations": self.iterations}


@dataclass(frozen=True)
class FdmPinnComparePlan:
    base: RunConfig
    cells: tuple = ()            # (delta, t_final, diffusivity) triples
    max_points: int = 1200       # training-lattice cap; strided beyond it
    iterations: int = 1

    def describe(self):
        return {"kind": "compare-fdm-pinn",
                "cells": [list(c) for c in self.cells],
                "max_points": self.max_points,
                "iterations": self.iterations}


COMPARE_LATTICE = tuple(
    (delta, t_final, d)
    for delta, d_list in (
        (0.1, (0.01, 0.05, 0.09)),
        (0.05, (0.005, 0.025, 0.045)),
        (0.025, (0.0025, 0.0125, 0.0225)),
    )
    for t_final in (1.0, 10.0, 100.0)
    for d in d_list
)


def preset_arch_search(name: str, iterations: int = 5) -> ArchSearchPlan:
    base = preset_run_config(name)
    if name == "heat":
        # wider nets and a shorter budget, as for the heat search tables
        return ArchSearchPlan(base=replace(base, epochs=2500),
                              neuron_list=(10, 20, 40, 60, 80),
                              iterations=iterations)
    return ArchSearchPlan(base=base, iterations=iterations)


def preset_lambda_sweep(name: str, iterations: int = 5) -> LambdaSweepPlan:
    return LambdaSweepPlan(base=preset_run_config(name),
                           iterations=iterations)


def preset_residual_order_sweep(name: str,
                                iterations: int = 5) -> ResidualOrderSweepPlan:
    base = preset_run_config(name)
    orders = (2, 3) if name == "linear" else (3, 4)
    return ResidualOrderSweepPlan(base=base, orders=orders,
                                  iterations=iterations)


def preset_density_sweep(iterations: int = 3) -> DensitySweepPlan:
    base = preset_run_config("heat")
    # a lighter net keeps the dense 41x41 grid tractable; the sweep's
    # contract is the density trend, not the forward-run magnitudes
    base = replace(base, net=MlpConfig.from_total_layers(4, 20, input_dim=2),
                   epochs=2500)
    return DensitySweepPlan(base=base, iterations=iterations)


def preset_diffusivity_sweep(iterations: int = 3) -> DiffusivitySweepPlan:
    return DiffusivitySweepPlan(base=preset_run_config("heat"),
                                iterations=iterations)


def preset_compare(max_points: int = 1200) -> FdmPinnComparePlan:
    base = preset_run_config("heat")
    base = replace(base, net=MlpConfig.from_total_layers(4, 20, input_dim=2),
                   epochs=2500)
    return FdmPinnComparePlan(base=base, cells=COMPARE_LATTICE,
                              max_points=max_points)


# -- cell execution and aggregation -------------------------------------------

@dataclass
class CellResult:
    key: dict
    reports: list = field(repr=False, default_factory=list)
    mean_gt_mse: float = math.nan
    std_gt_mse: float = math.nan
    mean_total_loss: float = math.nan
    std_total_loss: float = math.nan
    mean_time_s: float = math.nan
    n_failed: int = 0
    gt_mse_by_interval: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    kind: str
    cells: list
    winner: dict | None
    provenance: dict


def _key_tag(key: dict) -> str:
    return ",".join(f"{k}={key[k]}" for k in sorted(key))


def _cell_seeds(base_seed: int, key: dict, iteration: int):
    tag = _key_tag(key)
    return (derive_seed(base_seed, "data", tag, iteration),
            derive_seed(base_seed, "init", tag, iteration))


def _aggregate(key: dict, reports: list, interval: str) -> CellResult:
    ok = [r for r in reports if not r.failed]
    cell = CellResult(key=key, reports=reports, n_failed=len(reports) - len(ok))
    if not ok:
        return cell
    mses = np.array([r.gt_mse[interval] for r in ok])
    losses = np.array([r.final_total_loss for r in ok])
    times = np.array([r.wall_time_s for r in ok])
    cell.mean_gt_mse = float(mses.mean())
    cell.std_gt_mse = float(mses.std(ddof=1)) if len(ok) > 1 else 0.0
    cell.mean_total_loss = float(losses.mean())
    cell.std_total_loss = float(losses.std(ddof=1)) if len(ok) > 1 else 0.0
    cell.mean_time_s = float(times.mean())
    for name in ok[0].gt_mse:
        cell.gt_mse_by_interval[name] = float(
            np.mean([r.gt_mse[name] for r in ok]))
    return cell


def run_cells(cells, iterations: int, base_seed: int,
              threads: int = 1) -> list[CellResult]:
    """Train every (cell, iteration) pair; deterministic given base_seed."""
    jobs = []
    for key, config in cells:
        for it in range(iterations):
            sd, si = _cell_seeds(base_seed, key, it)
            jobs.append((key, config.with_seeds(sd, si)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(lambda job: train(job[1]), jobs))
    else:
        reports = [train(cfg) for _, cfg in jobs]
    results = []
    idx = 0
    for key, config in cells:
        cell_reports = reports[idx:idx + iterations]
        idx += iterations
        results.append(_aggregate(key, cell_reports,
                                  _selection_interval(config)))
    return results


def pick_winner(results: list[CellResult], criterion: str = "gt_mse",
                prefer_small: tuple = ()) -> dict:
    """Argmin cell key; ties prefer smaller values of the listed key fields,
    then lower mean wall time."""
    attr = "mean_gt_mse" if criterion == "gt_mse" else "mean_total_loss"
    candidates = [c for c in results if math.isfinite(getattr(c, attr))]
    if not candidates:
        raise RuntimeError("every cell failed; no winner")

    def rank(c):
        return (getattr(c, attr),
                tuple(c.key.get(f, 0) for f in prefer_small),
                c.mean_time_s)

    return min(candidates, key=rank).key


# -- plan runners --------------------------------------------------------------

def _with_architecture(base: RunConfig, total_layers: int,
                       neurons: int) -> RunConfig:
    net = MlpConfig.from_total_layers(total_layers, neurons,
                                      input_dim=base.net.input_dim)
    return replace(base, net=net)


def _provenance(plan, base_seed: int) -> dict:
    return {"plan": plan.describe(), "base_seed": base_seed,
            "toolkit_version": __version__,
            "base_config": config_to_dict(plan.base)}


def arch_search(plan: ArchSearchPlan, base_seed: int = 0,
                threads: int = 1) -> ExperimentReport:
    stage1 = [({"layers": plan.stage1_layers, "neurons": n},
               _with_architecture(plan.base, plan.stage1_layers, n))
              for n in plan.neuron_list]
    res1 = run_cells(stage1, plan.iterations, base_seed, threads)
    best_neurons = pick_winner(res1, plan.criterion,
                               prefer_small=("neurons",))["neurons"]
    stage2 = [({"layers": ly, "neurons": best_neurons},
               _with_architecture(plan.base, ly, best_neurons))
              for ly in plan.layer_list]
    res2 = run_cells(stage2, plan.iterations, base_seed, threads)
    best = pick_winner(res2, plan.criterion, prefer_small=("layers",))
    report = ExperimentReport(
        kind="arch-search", cells=res1 + res2,
        winner={"layers": best["layers"], "neurons": best_neurons},
        provenance=_provenance(plan, base_seed))
    report.provenance["stage1_winner_neurons"] = best_neurons
    return report


def lambda_sweep(plan: LambdaSweepPlan, base_seed: int = 0,
                 threads: int = 1) -> ExperimentReport:
    cells = [({"lambda": lam},
              replace(plan.base, problem=replace(plan.base.problem, lam=lam)))
             for lam in plan.lambdas]
    results = run_cells(cells, plan.iterations, base_seed, threads)
    return ExperimentReport(kind="lambda-sweep", cells=results, winner=None,
                            provenance=_provenance(plan, base_seed))


def residual_order_sweep(plan: ResidualOrderSweepPlan, base_seed: int = 0,
                         threads: int = 1) -> ExperimentReport:
    cells = []
    for order in plan.orders:
        kind = PolynomialKind(plan.base.problem.kind.degree,
                              residual_order=order)
        cells.append(({"order": order},
                      replace(plan.base,
                              problem=replace(plan.base.problem, kind=kind))))
    results = run_cells(cells, plan.iterations, base_seed, threads)
    return ExperimentReport(kind="residual-order-sweep", cells=results,
                            winner=None,
                            provenance=_provenance(plan, base_seed))


def density_sweep(plan: DensitySweepPlan, base_seed: int = 0,
                  threads: int = 1) -> ExperimentReport:
    cells = []
    for delta in plan.deltas:
        data = replace(plan.base.data, dx=delta, dt=delta)
        problem = replace(plan.base.problem,
                          collocation=_heat_collocation(delta, delta,
                                                        plan.base.data.t_final))
        cells.append(({"density": delta},
                      replace(plan.base, data=data, problem=problem)))
    results = run_cells(cells, plan.iterations, base_seed, threads)
    return ExperimentReport(kind="density-sweep", cells=results, winner=None,
                            provenance=_provenance(plan, base_seed))


def diffusivity_sweep(plan: DiffusivitySweepPlan, base_seed: int = 0,
                      threads: int = 1) -> ExperimentReport:
    cells = []
    for d in plan.d_values:
        data = replace(plan.base.data, diffusivity=d)
        problem = replace(plan.base.problem, kind=HeatKind(FixedD(d)))
        cells.append(({"diffusivity": d},
                      replace(plan.base, data=data, problem=problem)))
    results = run_cells(cells, plan.iterations, base_seed, threads)
    return ExperimentReport(kind="diffusivity-sweep", cells=results,
                            winner=None,
                            provenance=_provenance(plan, base_seed))


def _strides_for(delta: float, t_final: float, max_points: int):
    nx = round(1.0 / delta) + 1
    nt = round(t_final / delta) + 1
    if nx * nt <= max_points:
        return 1, 1
    t_stride = math.ceil(nt / max(1, max_points // nx))
    return 1, t_stride


def compare_fdm_pinn(plan: FdmPinnComparePlan, base_seed: int = 0,
                     threads: int = 1) -> ExperimentReport:
    """Per (delta, T, D) cell: FDM MSE + divergence flag, CFL margin, and
    the trained PINN's MSE at the full data lattice."""
    cells = []
    for delta, t_final, d in plan.cells:
        x_stride, t_stride = _strides_for(delta, t_final, plan.max_points)
        data = replace(plan.base.data, dx=delta, dt=delta, diffusivity=d,
                       t_final=t_final, x_stride=x_stride, t_stride=t_stride)
        coll = _heat_collocation(delta * x_stride, delta * t_stride, t_final)
        problem = ProblemSpec(HeatKind(FixedD(d)), lam=plan.base.problem.lam,
                              collocation=coll)
        cells.append(({"delta": delta, "t_final": t_final, "diffusivity": d},
                      replace(plan.base, data=data, problem=problem)))
    results = run_cells(cells, plan.iterations, base_seed, threads)

    comparisons = []
    for cell in results:
        key = cell.key
        delta, t_final, d = key["delta"], key["t_final"], key["diffusivity"]
        grid = FdmGrid.from_initial_fn(delta, delta, d, t_final)
        solution = fdm_solve(grid)
        ok = [r for r in cell.reports if not r.failed]
        pinn_mse = math.nan
        if ok:
            pinn_mse = float(np.mean([
                _pinn_lattice_mse(r, delta, t_final, d) for r in ok]))
        comparisons.append({
            "dx": delta, "dt": delta, "T": t_final, "D": d,
            "cfl_margin": cfl_check(d, delta, delta).margin,
            "fdm_mse": fdm_mse(solution, HeatSurface(d)),
            "fdm_diverged": solution.diverged,
            "pinn_mse": pinn_mse,
        })
    report = ExperimentReport(kind="compare-fdm-pinn", cells=results,
                              winner=None,
                              provenance=_provenance(plan, base_seed))
    report.provenance["comparisons"] = comparisons
    return report


def _pinn_lattice_mse(report: TrainReport, delta: float, t_final: float,
                      d: float) -> float:
    """Trained-network MSE at every point of the full (unstrided) lattice."""
    nx = round(1.0 / delta) + 1
    nt = round(t_final / delta) + 1
    xs = np.linspace(0.0, 1.0, nx)
    ts = np.linspace(0.0, t_final, nt)
    tt, xx = np.meshgrid(ts, xs, indexing="ij")
    bind = np.column_stack([xx.ravel(), tt.ravel()])
    tape = Tape()
    ins = [tape.input(0.5), tape.input(0.5)]
    u = forward(tape, report.params, ins)
    prog = Program(tape, inputs=ins, outputs=[u])
    pred = prog.eval_many(bind)[:, 0]
    exact = heat_exact(bind[:, 0], bind[:, 1], d)
    return float(np.mean((pred - exact) ** 2))


def derivative_curve(params, segments, n_samples: int = 300) -> np.ndarray:
    """Columns (x, du/dx, d2u/dx2) of a trained one-input network."""
    tape = Tape()
    x = tape.input(0.5)
    u = forward(tape, params, [x])
    d1 = grad(u, [x])[0]
    d2 = grad(d1, [x])[0]
    prog = Program(tape, inputs=[x], outputs=[u, d1, d2])
    xs = union_samples(segments, n_samples)
    out = prog.eval_many(xs.reshape(-1, 1))
    return np.column_stack([xs, out[:, 1], out[:, 2]])
