"""One PINN training run: configuration, epoch loop, evaluation, report.

The loss graph is compiled exactly once per run: parameters and input
coordinates become rebinding slots of a :class:`~pinnkit.program.Program`,
the residual graph is emitted through :func:`pinnkit.tape.grad`, and every
epoch is then two or three kernel block passes (data+residual block,
boundary/initial block) followed by one Adam step. Tape memory is
constant across epochs — a strictly tighter bound than rebuilding and
rolling back each epoch, with identical results.

A run is a pure function of its RunConfig: dataset noise, weight init and
every summation order are fixed by the config's seeds, so two executions
produce bit-identical reports (wall time aside).
"""

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .adam import AdamState, adam_step
from .datagen import (
    Dataset, HeatSurface, Line, Parabola, gen_heat_grid, gen_polynomial,
    ground_truth_from_dict, NoiseSpec,
)
from .network import MlpConfig, ParamSet, forward, init_params, leaf_params, \
    save_checkpoint
from .problems import (
    HeatCollocation, HeatKind, Interval1D, PolynomialKind, ProblemSpec,
    FixedD, TrainableD, residual_heat_from_output, residual_poly_from_output,
)
from .program import Program
from .rng import derive_seed
from .tape import Tape


@dataclass(frozen=True)
class AdamParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class PolyData:
    """Noisy samples of a line/parabola on an interval."""
    gt: Line | Parabola
    interval: tuple = (0.0, 1.0)
    n_points: int = 10
    noise_variance: float = 0.01


@dataclass(frozen=True)
class HeatData:
    """Exact-solution lattice over [0,1] x [0,T], optionally strided."""
    dx: float = 0.1
    dt: float = 0.1
    diffusivity: float = 0.1
    t_final: float = 1.0
    noise_variance: float = 0.0
    x_stride: int = 1
    t_stride: int = 1


DEFAULT_POLY_EVAL = (
    ("train", ((0.0, 1.0),)),
    ("outside", ((-1.0, 0.0), (1.0, 2.0))),
    ("overall", ((-1.0, 2.0),)),
)


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    net: MlpConfig
    data: PolyData | HeatData
    adam: AdamParams = AdamParams()
    epochs: int = 5000
    seed_data: int = 0
    seed_init: int = 0
    eval_intervals: tuple = DEFAULT_POLY_EVAL  # heat evaluates on its domain
    eval_samples: int = 300

    def with_seeds(self, seed_data: int, seed_init: int) -> "RunConfig":
        return replace(self, seed_data=seed_data, seed_init=seed_init)


@dataclass
class TrainReport:
    config: RunConfig
    curve_total: np.ndarray
    curve_data: np.ndarray
    curve_residual: np.ndarray
    d_curve: np.ndarray | None
    final_total_loss: float
    gt_mse: dict
    d_final: float | None
    wall_time_s: float
    failed: bool = False
    failed_epoch: int | None = None
    params: ParamSet | None = field(default=None, repr=False)
    checkpoint_path: str | None = None


def make_dataset(data: PolyData | HeatData, seed_data: int) -> Dataset:
    noise_seed = derive_seed(seed_data, "data-noise")
    if isinstance(data, PolyData):
        return gen_polynomial(data.gt, data.interval, data.n_points,
                              NoiseSpec(variance=data.noise_variance,
                                        seed=noise_seed))
    return gen_heat_grid(data.dx, data.dt, data.diffusivity, data.t_final,
                         NoiseSpec(variance=data.noise_variance,
                                   seed=noise_seed),
                         x_stride=data.x_stride, t_stride=data.t_stride)


def union_samples(segments, n: int) -> np.ndarray:
    """Uniform samples over a union of intervals, proportional to length."""
    segs = [(float(lo), float(hi)) for lo, hi in segments]
    lengths = [hi - lo for lo, hi in segs]
    if any(ln <= 0 for ln in lengths):
        raise ValueError(f"degenerate interval in {segments}")
    total = sum(lengths)
    raw = [n * ln / total for ln in lengths]
    counts = [int(math.floor(r)) for r in raw]
    fracs = sorted(range(len(segs)), key=lambda i: raw[i] - counts[i],
                   reverse=True)
    for i in range(n - sum(counts)):
        counts[fracs[i % len(segs)]] += 1
    parts = [np.linspace(lo, hi, c) for (lo, hi), c in zip(segs, counts)
             if c > 0]
    return np.concatenate(parts)


# -- program compilation ------------------------------------------------------

def _compile_forward(params: ParamSet):
    tape = Tape()
    pvars = leaf_params(tape, params)
    inputs = [tape.input(0.5) for _ in range(params.config.input_dim)]
    u = forward(tape, params, inputs, param_vars=pvars)
    return Program(tape, inputs=inputs, outputs=[u], params=pvars)


def _compile_main(params: ParamSet, spec: ProblemSpec):
    """Program with outputs [u, residual]; for trainable D the diffusivity
    leaf is appended as the last parameter slot."""
    tape = Tape()
    pvars = leaf_params(tape, params)
    if isinstance(spec.kind, PolynomialKind):
        x = tape.input(0.5)
        u = forward(tape, params, [x], param_vars=pvars)
        r = residual_poly_from_output(u, x, spec.kind.order)
        return Program(tape, inputs=[x], outputs=[u, r], params=pvars)
    x, t = tape.input(0.5), tape.input(0.5)
    u = forward(tape, params, [x, t], param_vars=pvars)
    if spec.kind.trainable:
        d_var = tape.input(spec.kind.diffusivity.init)
        slots = pvars + [d_var]
    else:
        d_var = tape.const(spec.kind.diffusivity.value)
        slots = pvars
    r = residual_heat_from_output(u, x, t, d_var)
    return Program(tape, inputs=[x, t], outputs=[u, r], params=slots)


# -- evaluation ---------------------------------------------------------------

def ground_truth_mse(params: ParamSet, gt, segments, n_samples: int = 300,
                     fwd: Program | None = None,
                     param_values: np.ndarray | None = None) -> float:
    """MSE between the network and a 1-D ground truth over an interval union."""
    if fwd is None:
        fwd = _compile_forward(params)
    xs = union_samples(segments, n_samples)
    u = fwd.eval_many(xs.reshape(-1, 1), params=param_values)[:, 0]
    with np.errstate(all="ignore"):
        return float(np.mean((u - gt(xs)) ** 2))


def ground_truth_mse_heat(params: ParamSet, gt: HeatSurface, t_final: float,
                          n_samples: int = 300, x_range=(0.0, 1.0),
                          t_range=None, fwd: Program | None = None,
                          param_values: np.ndarray | None = None) -> float:
    """MSE against the exact surface over a uniform grid on the domain.

    Boundary/initial conditions pin the network to [0,1] in space, so any
    requested range outside it is an error.
    """
    if x_range[0] < 0.0 or x_range[1] > 1.0 or t_range is not None and (
            t_range[0] < 0.0 or t_range[1] > t_final):
        raise ValueError(
            f"heat evaluation domain is [0,1] x [0,{t_final}]; got "
            f"x={x_range}, t={t_range}")
    if t_range is None:
        t_range = (0.0, t_final)
    if fwd is None:
        fwd = _compile_forward(params)
    k = max(2, math.ceil(math.sqrt(n_samples)))
    xs = np.linspace(x_range[0], x_range[1], k)
    ts = np.linspace(t_range[0], t_range[1], k)
    tt, xx = np.meshgrid(ts, xs, indexing="ij")
    bind = np.column_stack([xx.ravel(), tt.ravel()])
    u = fwd.eval_many(bind, params=param_values)[:, 0]
    with np.errstate(all="ignore"):
        return float(np.mean((u - gt(bind[:, 0], bind[:, 1])) ** 2))


def _evaluate(config: RunConfig, params: ParamSet, fwd: Program,
              theta_net: np.ndarray) -> dict:
    out = {}
    if isinstance(config.data, PolyData):
        for name, segments in config.eval_intervals:
            out[name] = ground_truth_mse(
                params, config.data.gt, segments, config.eval_samples,
                fwd=fwd, param_values=theta_net)
    else:
        gt = HeatSurface(config.data.diffusivity)
        out["domain"] = ground_truth_mse_heat(
            params, gt, config.data.t_final, config.eval_samples,
            fwd=fwd, param_values=theta_net)
    return out


# -- the training loop --------------------------------------------------------

def train(config: RunConfig, checkpoint_path=None) -> TrainReport:
    """Full-batch Adam over the compiled loss programs.

    Per-epoch recorded losses are the values at the pre-update parameters.
    A non-finite total loss marks the run failed at that epoch and stops
    it; nothing is silently continued.
    """
    t_start = time.perf_counter()
    spec = config.problem
    heat = isinstance(spec.kind, HeatKind)
    trainable_d = heat and spec.kind.trainable

    dataset = make_dataset(config.data, config.seed_data)
    params = init_params(config.net.with_seed(config.seed_init))
    n_net = params.param_count

    main = _compile_main(params, spec)
    fwd = _compile_forward(params)

    theta = params.values.copy()
    if trainable_d:
        theta = np.concatenate([theta, [spec.kind.diffusivity.init]])

    lam = spec.lam
    if heat:
        # collocation = the training grid itself; data and residual share
        # one block pass over the dataset lattice
        main_bind = dataset.inputs
        main_targets = dataset.targets
        main_weights = np.full(len(dataset), 1.0 / len(dataset))
        n_colloc = len(dataset)
        bc_bind, bc_targets, bc_weights = \
            spec.collocation.boundary_initial_points()
    else:
        colloc = spec.collocation.points()
        main_bind = colloc
        main_targets = np.zeros(len(colloc))
        main_weights = np.zeros(len(colloc))
        n_colloc = len(colloc)
        data_bind = dataset.inputs
        data_targets = dataset.targets
        data_weights = np.full(len(dataset), 1.0 / len(dataset))

    resid_seed = lam / n_colloc if lam > 0 else 0.0
    adam = AdamState.create(len(theta), lr=config.adam.lr,
                            beta1=config.adam.beta1, beta2=config.adam.beta2,
                            eps=config.adam.eps)
    grad_buf = np.zeros_like(theta)

    curve_total = np.empty(config.epochs)
    curve_data = np.empty(config.epochs)
    curve_resid = np.empty(config.epochs)
    d_curve = np.empty(config.epochs) if trainable_d else None
    failed = False
    failed_epoch = None

    epochs_run = 0
    for epoch in range(config.epochs):
        grad_buf[:] = 0.0
        if heat:
            fit, resid_sse = main.train_pass(
                main_bind, main_targets, main_weights, resid_seed,
                grad_buf, params=theta)
            bc_fit, _ = fwd.train_pass(
                bc_bind, bc_targets, bc_weights, 0.0,
                grad_buf[:n_net], params=theta[:n_net])
            data_val = fit
            resid_val = resid_sse / n_colloc
            total = data_val + lam * resid_val + bc_fit
        else:
            fit, _ = fwd.train_pass(
                data_bind, data_targets, data_weights, 0.0,
                grad_buf, params=theta)
            _, resid_sse = main.train_pass(
                main_bind, main_targets, main_weights, resid_seed,
                grad_buf, params=theta)
            data_val = fit
            resid_val = resid_sse / n_colloc
            total = data_val + lam * resid_val

        curve_total[epoch] = total
        curve_data[epoch] = data_val
        curve_resid[epoch] = resid_val
        epochs_run = epoch + 1
        if not math.isfinite(total):
            failed = True
            failed_epoch = epoch
            if d_curve is not None:
                d_curve[epoch] = theta[-1]
            break
        try:
            adam_step(adam, theta, grad_buf)
        except ValueError:
            # non-finite gradient with a still-finite loss: same failure
            failed = True
            failed_epoch = epoch
            if d_curve is not None:
                d_curve[epoch] = theta[-1]
            break
        if d_curve is not None:
            d_curve[epoch] = theta[-1]

    curve_total = curve_total[:epochs_run]
    curve_data = curve_data[:epochs_run]
    curve_resid = curve_resid[:epochs_run]
    if d_curve is not None:
        d_curve = d_curve[:epochs_run]

    final_params = ParamSet(theta[:n_net].copy(), params.layout, params.config)
    d_final = None
    if heat:
        d_final = float(theta[-1]) if trainable_d \
            else spec.kind.diffusivity.value

    gt_mse = _evaluate(config, final_params, fwd, theta[:n_net])

    ckpt = None
    if checkpoint_path is not None:
        extras = {"D": d_final} if trainable_d else {}
        save_checkpoint(checkpoint_path, final_params, extras=extras)
        ckpt = str(checkpoint_path)

    return TrainReport(
        config=config,
        curve_total=curve_total,
        curve_data=curve_data,
        curve_residual=curve_resid,
        d_curve=d_curve,
        final_total_loss=float(curve_total[-1]) if epochs_run else math.nan,
        gt_mse=gt_mse,
        d_final=d_final,
        wall_time_s=time.perf_counter() - t_start,
        failed=failed,
        failed_epoch=failed_epoch,
        params=final_params,
        checkpoint_path=ckpt,
    )


def train_inverse_heat(config: RunConfig, checkpoint_path=None) -> TrainReport:
    """Forward training plus diffusivity estimation (D as a parameter)."""
    if not (isinstance(config.problem.kind, HeatKind)
            and config.problem.kind.trainable):
        raise ValueError("inverse training needs a Heat problem with TrainableD")
    return train(config, checkpoint_path=checkpoint_path)


# -- config / report serialization -------------------------------------------

REPORT_VERSION = 1


def _gt_to_dict(gt):
    return gt.to_dict()


def config_to_dict(config: RunConfig) -> dict:
    spec = config.problem
    if isinstance(spec.kind, PolynomialKind):
        kind = {"type": "polynomial", "degree": spec.kind.degree,
                "residual_order": spec.kind.residual_order}
        coll = {"lo": spec.collocation.lo, "hi": spec.collocation.hi,
                "count": spec.collocation.count}
        data = {"gt": _gt_to_dict(config.data.gt),
                "interval": list(config.data.interval),
                "n_points": config.data.n_points,
                "noise_variance": config.data.noise_variance}
    else:
        d = spec.kind.diffusivity
        kind = {"type": "heat",
                "diffusivity": ({"trainable": True, "init": d.init}
                                if isinstance(d, TrainableD)
                                else {"trainable": False, "value": d.value})}
        c = spec.collocation
        coll = {"nx": c.nx, "nt": c.nt, "t_final": c.t_final,
                "n_boundary": c.n_boundary, "n_initial": c.n_initial}
        data = {"dx": config.data.dx, "dt": config.data.dt,
                "diffusivity": config.data.diffusivity,
                "t_final": config.data.t_final,
                "noise_variance": config.data.noise_variance,
                "x_stride": config.data.x_stride,
                "t_stride": config.data.t_stride}
    return {
        "problem": {"kind": kind, "lambda": spec.lam, "collocation": coll},
        "net": {"input_dim": config.net.input_dim,
                "hidden_layers": config.net.hidden_layers,
                "neurons_per_layer": config.net.neurons_per_layer,
                "seed": config.net.seed},
        "data": data,
        "adam": {"lr": config.adam.lr, "beta1": config.adam.beta1,
                 "beta2": config.adam.beta2, "eps": config.adam.eps},
        "epochs": config.epochs,
        "seed_data": config.seed_data,
        "seed_init": config.seed_init,
        "eval_intervals": {name: [list(seg) for seg in segs]
                           for name, segs in config.eval_intervals},
        "eval_samples": config.eval_samples,
    }


def config_from_dict(d: dict) -> RunConfig:
    kd = d["problem"]["kind"]
    cd = d["problem"]["collocation"]
    if kd["type"] == "polynomial":
        kind = PolynomialKind(kd["degree"], kd.get("residual_order"))
        coll = Interval1D(cd["lo"], cd["hi"], cd["count"])
        dd = d["data"]
        data = PolyData(gt=ground_truth_from_dict(dd["gt"]),
                        interval=tuple(dd["interval"]),
                        n_points=dd["n_points"],
                        noise_variance=dd["noise_variance"])
    elif kd["type"] == "heat":
        dv = kd["diffusivity"]
        diff = TrainableD(dv["init"]) if dv["trainable"] else FixedD(dv["value"])
        kind = HeatKind(diff)
        coll = HeatCollocation(cd["nx"], cd["nt"], cd["t_final"],
                               cd["n_boundary"], cd["n_initial"])
        dd = d["data"]
        data = HeatData(dx=dd["dx"], dt=dd["dt"],
                        diffusivity=dd["diffusivity"],
                        t_final=dd["t_final"],
                        noise_variance=dd["noise_variance"],
                        x_stride=dd.get("x_stride", 1),
                        t_stride=dd.get("t_stride", 1))
    else:
        raise ValueError(f"unknown problem kind {kd['type']!r}")
    spec = ProblemSpec(kind=kind, lam=d["problem"]["lambda"], collocation=coll)
    net = MlpConfig(input_dim=d["net"]["input_dim"],
                    hidden_layers=d["net"]["hidden_layers"],
                    neurons_per_layer=d["net"]["neurons_per_layer"],
                    seed=d["net"].get("seed", 0))
    eval_intervals = tuple(
        (name, tuple(tuple(seg) for seg in segs))
        for name, segs in d.get("eval_intervals",
                                dict(DEFAULT_POLY_EVAL)).items())
    return RunConfig(
        problem=spec, net=net, data=data,
        adam=AdamParams(**d.get("adam", {})),
        epochs=d.get("epochs", 5000),
        seed_data=d.get("seed_data", 0),
        seed_init=d.get("seed_init", 0),
        eval_intervals=eval_intervals,
        eval_samples=d.get("eval_samples", 300),
    )


def save_report(report: TrainReport, directory, name: str) -> dict:
    """Writes <name>.yaml (summary) and <name>.curves.csv; returns paths."""
    import os

    import yaml

    os.makedirs(directory, exist_ok=True)
    curves_path = os.path.join(directory, f"{name}.curves.csv")
    with open(curves_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["epoch", "total", "data", "residual"]
        if report.d_curve is not None:
            header.append("D")
        writer.writerow(header)
        for i in range(len(report.curve_total)):
            row = [i, repr(float(report.curve_total[i])),
                   repr(float(report.curve_data[i])),
                   repr(float(report.curve_residual[i]))]
            if report.d_curve is not None:
                row.append(repr(float(report.d_curve[i])))
            writer.writerow(row)

    doc = {
        "report_version": REPORT_VERSION,
        "config": config_to_dict(report.config),
        "final_total_loss": report.final_total_loss,
        "gt_mse": {k: float(v) for k, v in report.gt_mse.items()},
        "d_final": report.d_final,
        "wall_time_s": report.wall_time_s,
        "failed": report.failed,
        "failed_epoch": report.failed_epoch,
        "curves_csv": os.path.basename(curves_path),
        "checkpoint": (os.path.basename(report.checkpoint_path)
                       if report.checkpoint_path else None),
    }
    yaml_path = os.path.join(directory, f"{name}.yaml")
    with open(yaml_path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)
    return {"yaml": yaml_path, "curves": curves_path}


def load_report_summary(yaml_path) -> dict:
    import yaml

    with open(yaml_path) as fh:
        return yaml.safe_load(fh)
