"""Command-line front end.

Subcommands: gen-data, train, train-inverse, arch-search, lambda-sweep,
residual-order-sweep, density-sweep, fdm, compare-fdm-pinn, report.

Global flags: --config FILE (YAML; any flag value can live there under its
underscored name), --seed, --out, --threads. Precedence is CLI > config
file > built-in defaults.

Exit codes: 0 success, 1 configuration error, 2 run failure (non-finite
loss), 3 I/O error.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from . import __version__
from .datagen import save_dataset_csv
from .experiments import (
    PRESET_NAMES, arch_search,
    compare_fdm_pinn, density_sweep, derivative_curve, lambda_sweep,
    preset_arch_search, preset_compare, preset_density_sweep,
    preset_lambda_sweep, preset_residual_order_sweep, preset_run_config,
    residual_order_sweep,
)
from .fdm import FdmGrid, cfl_check, fdm_mse, fdm_solve
from .datagen import HeatSurface
from .problems import HeatKind, TrainableD
from .reports import (
    emit_arch_table, emit_comparison_table, emit_derivative_curve,
    emit_interval_table, emit_keyed_table, emit_metrics_table, emit_rows,
    emit_surface, save_experiment, verify_experiment, load_experiment,
)
from .rng import derive_seed
from .training import (
    RunConfig, config_from_dict, make_dataset, save_report,
    train, train_inverse_heat,
)


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract reserves 2 for
    # run failures, so usage problems surface as configuration errors
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    # the global flags hang off a parent parser so they parse on either
    # side of the subcommand name; SUPPRESS keeps the subparser's copy
    # from clobbering a value parsed by the root
    sup = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=sup, help="YAML config file")
    common.add_argument("--seed", type=int, default=sup, help="base seed (u64)")
    common.add_argument("--out", default=sup, help="output directory")
    common.add_argument("--threads", type=int, default=sup,
                        help="worker threads for sweeps")

    p = _Parser(prog="pinnkit", parents=[common],
                description="PINN toolkit for polynomial ODEs and 1-D heat")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        sp = sub.add_parser(name, parents=[common], **kw)
        return sp

    sp = add("gen-data", help="generate a synthetic dataset CSV")
    sp.add_argument("--preset", choices=PRESET_NAMES, default=None)
    sp.add_argument("--noise-variance", type=float, default=None)

    for name in ("train", "train-inverse"):
        sp = add(name, help=f"{name} run(s) from a preset or config file")
        sp.add_argument("--preset", choices=PRESET_NAMES, default=None)
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--lambda", dest="lam", type=float, default=None)
        sp.add_argument("--layers", type=int, default=None,
                        help="total layers (paper convention)")
        sp.add_argument("--neurons", type=int, default=None)
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--iterations", type=int, default=None,
                        help="independent seeded runs to average")
        if name == "train-inverse":
            sp.add_argument("--d-init", type=float, default=None)

    sp = add("arch-search", help="two-stage layer/neuron search")
    sp.add_argument("--preset", choices=("linear", "quadratic", "heat"),
                    default=None)
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--criterion", choices=("gt_mse", "total_loss"),
                    default=None)
    sp.add_argument("--epochs", type=int, default=None)

    sp = add("lambda-sweep", help="residual-strength sweep")
    sp.add_argument("--preset", choices=("linear", "quadratic"), default=None)
    sp.add_argument("--lambdas", default=None,
                    help="comma-separated values, e.g. 0,1e-6,1,10")
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)

    sp = add("residual-order-sweep", help="derivative-order variants")
    sp.add_argument("--preset", choices=("linear", "quadratic"), default=None)
    sp.add_argument("--orders", default=None, help="comma-separated orders")
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)

    sp = add("density-sweep", help="grid-density sweep for the heat problem")
    sp.add_argument("--deltas", default=None,
                    help="comma-separated dx=dt values")
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)

    sp = add("fdm", help="explicit finite-difference heat solve")
    sp.add_argument("--dx", type=float, default=None)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--diffusivity", type=float, default=None)
    sp.add_argument("--t-final", type=float, default=None)

    sp = add("compare-fdm-pinn", help="FDM vs PINN over a (dx,T,D) lattice")
    sp.add_argument("--cells", default=None,
                    help="semicolon list of dx:T:D triples; default full lattice")
    sp.add_argument("--max-points", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--iterations", type=int, default=None)

    sp = add("report", help="verify and print a stored experiment")
    sp.add_argument("--dir", default=None, help="experiment directory")

    return p


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return doc


class _Options:
    """CLI > config file > default resolution for every flag."""

    def __init__(self, args, file_cfg):
        self.args = args
        self.file = file_cfg

    def get(self, name, default=None):
        cli = getattr(self.args, name, None)
        if cli is not None:
            return cli
        if name in self.file:
            return self.file[name]
        return default


def _floats_list(text):
    try:
        return tuple(float(tok) for tok in str(text).split(",") if tok != "")
    except ValueError as exc:
        raise ConfigError(f"bad numeric list {text!r}") from exc


def _ints_list(text):
    try:
        return tuple(int(tok) for tok in str(text).split(",") if tok != "")
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _base_run_config(opt: _Options, inverse: bool = False) -> RunConfig:
    if "run_config" in opt.file:
        cfg = config_from_dict(opt.file["run_config"])
    else:
        preset = opt.get("preset")
        if preset is None:
            preset = "heat-inverse" if inverse else None
        if preset is None:
            raise ConfigError("need --preset or a run_config in --config")
        cfg = preset_run_config(preset)
    if inverse and not (isinstance(cfg.problem.kind, HeatKind)
                        and cfg.problem.kind.trainable):
        base = preset_run_config("heat")
        d_init = opt.get("d_init", 0.05)
        cfg = replace(base, problem=replace(
            base.problem, kind=HeatKind(TrainableD(d_init))))
    epochs = opt.get("epochs")
    if epochs is not None:
        cfg = replace(cfg, epochs=int(epochs))
    lam = opt.get("lam")
    if lam is not None:
        cfg = replace(cfg, problem=replace(cfg.problem, lam=float(lam)))
    layers, neurons = opt.get("layers"), opt.get("neurons")
    if layers is not None or neurons is not None:
        from .network import MlpConfig

        net = MlpConfig.from_total_layers(
            int(layers) if layers is not None else cfg.net.total_layers,
            int(neurons) if neurons is not None else cfg.net.neurons_per_layer,
            input_dim=cfg.net.input_dim)
        cfg = replace(cfg, net=net)
    lr = opt.get("lr")
    if lr is not None:
        cfg = replace(cfg, adam=replace(cfg.adam, lr=float(lr)))
    return cfg


def _cmd_gen_data(opt, out_dir, seed):
    preset = opt.get("preset")
    if preset is None:
        raise ConfigError("gen-data needs --preset")
    cfg = preset_run_config(preset)
    var = opt.get("noise_variance")
    if var is not None:
        cfg = replace(cfg, data=replace(cfg.data, noise_variance=float(var)))
    ds = make_dataset(cfg.data, seed)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{preset}-data.csv")
    save_dataset_csv(ds, path)
    print(f"wrote {len(ds)} points to {path}")
    return 0


def _cmd_train(opt, out_dir, seed, threads, inverse):
    cfg = _base_run_config(opt, inverse=inverse)
    iterations = int(opt.get("iterations", 1))
    os.makedirs(out_dir, exist_ok=True)
    reports = []
    for it in range(iterations):
        run_cfg = cfg.with_seeds(derive_seed(seed, "data", it),
                                 derive_seed(seed, "init", it))
        ckpt = os.path.join(out_dir, f"run{it}.ckpt")
        fn = train_inverse_heat if inverse else train
        report = fn(run_cfg, checkpoint_path=ckpt)
        save_report(report, out_dir, f"run{it}")
        reports.append(report)
        mse = ", ".join(f"{k}={v:.4e}" for k, v in report.gt_mse.items())
        status = "FAILED" if report.failed else "ok"
        extra = f" D={report.d_final:.4f}" if inverse else ""
        print(f"run {it}: {status} loss={report.final_total_loss:.4e} "
              f"{mse}{extra} ({report.wall_time_s:.1f}s)")

    ok = [r for r in reports if not r.failed]
    if ok:
        metrics = {
            "gt_mse": float(np.mean([list(r.gt_mse.values())[0] if len(r.gt_mse) == 1
                                     else r.gt_mse.get("overall",
                                                       list(r.gt_mse.values())[0])
                                     for r in ok])),
            "total_loss": float(np.mean([r.final_total_loss for r in ok])),
            "time_s": float(np.mean([r.wall_time_s for r in ok])),
        }
        if inverse:
            metrics["d_after_training"] = float(
                np.mean([r.d_final for r in ok]))
        emit_metrics_table(os.path.join(out_dir, "metrics.csv"), metrics)
        names = list(ok[0].gt_mse)
        rows = [(n, float(np.mean([r.gt_mse[n] for r in ok]))) for n in names]
        emit_rows(os.path.join(out_dir, "intervals.csv"),
                  ["interval", "mean_gt_mse"], rows)
    if any(r.failed for r in reports):
        return 2
    return 0


def _cmd_arch_search(opt, out_dir, seed, threads):
    preset = opt.get("preset")
    if preset is None:
        raise ConfigError("arch-search needs --preset")
    plan = preset_arch_search(preset, iterations=int(opt.get("iterations", 5)))
    criterion = opt.get("criterion")
    if criterion is not None:
        plan = replace(plan, criterion=criterion)
    epochs = opt.get("epochs")
    if epochs is not None:
        plan = replace(plan, base=replace(plan.base, epochs=int(epochs)))
    report = arch_search(plan, base_seed=seed, threads=threads)
    save_experiment(report, out_dir)
    n1 = len(plan.neuron_list)
    emit_arch_table(os.path.join(out_dir, "stage1_neurons.csv"),
                    report.cells[:n1])
    emit_arch_table(os.path.join(out_dir, "stage2_layers.csv"),
                    report.cells[n1:])
    emit_interval_table(os.path.join(out_dir, "intervals.csv"), report.cells)
    print(f"winner: {report.winner}")
    return _experiment_exit(report)


def _cmd_lambda_sweep(opt, out_dir, seed, threads):
    preset = opt.get("preset", "linear")
    plan = preset_lambda_sweep(preset, iterations=int(opt.get("iterations", 5)))
    lambdas = opt.get("lambdas")
    if lambdas is not None:
        plan = replace(plan, lambdas=_floats_list(lambdas))
    epochs = opt.get("epochs")
    if epochs is not None:
        plan = replace(plan, base=replace(plan.base, epochs=int(epochs)))
    report = lambda_sweep(plan, base_seed=seed, threads=threads)
    save_experiment(report, out_dir)
    emit_keyed_table(os.path.join(out_dir, "lambda_cells.csv"),
                     report.cells, ("lambda",))
    emit_interval_table(os.path.join(out_dir, "intervals.csv"), report.cells)
    # first surviving run per cell supplies the derivative curves
    segments = dict(plan.base.eval_intervals).get("overall", ((-1.0, 2.0),))
    for cell in report.cells:
        ok = [r for r in cell.reports if not r.failed]
        if not ok:
            continue
        curve = derivative_curve(ok[0].params, segments,
                                 plan.base.eval_samples)
        emit_derivative_curve(
            os.path.join(out_dir, f"derivatives_lambda-{cell.key['lambda']}.csv"),
            curve)
    return _experiment_exit(report)


def _cmd_residual_order_sweep(opt, out_dir, seed, threads):
    preset = opt.get("preset", "linear")
    plan = preset_residual_order_sweep(
        preset, iterations=int(opt.get("iterations", 5)))
    orders = opt.get("orders")
    if orders is not None:
        plan = replace(plan, orders=_ints_list(orders))
    epochs = opt.get("epochs")
    if epochs is not None:
        plan = replace(plan, base=replace(plan.base, epochs=int(epochs)))
    report = residual_order_sweep(plan, base_seed=seed, threads=threads)
    save_experiment(report, out_dir)
    emit_keyed_table(os.path.join(out_dir, "order_cells.csv"),
                     report.cells, ("order",))
    emit_interval_table(os.path.join(out_dir, "intervals.csv"), report.cells)
    return _experiment_exit(report)


def _cmd_density_sweep(opt, out_dir, seed, threads):
    plan = preset_density_sweep(iterations=int(opt.get("iterations", 3)))
    deltas = opt.get("deltas")
    if deltas is not None:
        plan = replace(plan, deltas=_floats_list(deltas))
    epochs = opt.get("epochs")
    if epochs is not None:
        plan = replace(plan, base=replace(plan.base, epochs=int(epochs)))
    report = density_sweep(plan, base_seed=seed, threads=threads)
    save_experiment(report, out_dir)
    emit_keyed_table(os.path.join(out_dir, "density_cells.csv"),
                     report.cells, ("density",))
    return _experiment_exit(report)


def _cmd_fdm(opt, out_dir, seed):
    dx = float(opt.get("dx", 0.05))
    dt = float(opt.get("dt", 0.05))
    d = float(opt.get("diffusivity", 0.025))
    t_final = float(opt.get("t_final", 10.0))
    grid = FdmGrid.from_initial_fn(dx, dt, d, t_final)
    solution = fdm_solve(grid)
    mse = fdm_mse(solution, HeatSurface(d))
    cfl = cfl_check(d, dx, dt)
    os.makedirs(out_dir, exist_ok=True)
    emit_surface(os.path.join(out_dir, "fdm_surface.csv"), solution)
    summary = {
        "dx": dx, "dt": dt, "diffusivity": d, "t_final": t_final,
        "cfl_satisfied": bool(cfl.satisfied), "cfl_margin": float(cfl.margin),
        "mse": mse, "diverged": bool(solution.diverged),
        "first_divergent": (list(solution.first_divergent)
                            if solution.first_divergent else None),
    }
    with open(os.path.join(out_dir, "fdm_summary.yaml"), "w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=True)
    print(f"cfl_satisfied={cfl.satisfied} diverged={solution.diverged} "
          f"mse={mse:.4e}")
    return 0


def _parse_cells(text):
    cells = []
    for part in str(text).split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            dx, t_final, d = (float(v) for v in part.split(":"))
        except ValueError as exc:
            raise ConfigError(f"bad cell {part!r}, want dx:T:D") from exc
        cells.append((dx, t_final, d))
    return tuple(cells)


def _cmd_compare(opt, out_dir, seed, threads):
    plan = preset_compare(max_points=int(opt.get("max_points", 1200)))
    cells = opt.get("cells")
    if cells is not None:
        plan = replace(plan, cells=_parse_cells(cells))
    epochs = opt.get("epochs")
    if epochs is not None:
        plan = replace(plan, base=replace(plan.base, epochs=int(epochs)))
    iterations = opt.get("iterations")
    if iterations is not None:
        plan = replace(plan, iterations=int(iterations))
    report = compare_fdm_pinn(plan, base_seed=seed, threads=threads)
    save_experiment(report, out_dir)
    emit_comparison_table(os.path.join(out_dir, "comparison.csv"),
                          report.provenance["comparisons"])
    for row in report.provenance["comparisons"]:
        print(f"dx={row['dx']} T={row['T']} D={row['D']}: "
              f"fdm_mse={row['fdm_mse']:.3e} diverged={row['fdm_diverged']} "
              f"pinn_mse={row['pinn_mse']:.3e}")
    return _experiment_exit(report)


def _cmd_report(opt, out_dir):
    directory = opt.get("dir") or out_dir
    try:
        doc = load_experiment(directory)
    except OSError as exc:
        raise ConfigError(f"no experiment at {directory}: {exc}") from exc
    problems = verify_experiment(directory)
    print(f"experiment: {doc['kind']} (toolkit {doc['toolkit_version']})")
    for cell in doc["cells"]:
        print(f"  {cell['key']}: mean_gt_mse={cell.get('mean_gt_mse')} "
              f"mean_total_loss={cell.get('mean_total_loss')} "
              f"failed={cell['n_failed']}/{cell['n_runs']}")
    if doc.get("winner"):
        print(f"winner: {doc['winner']}")
    if problems:
        print("AGGREGATE MISMATCHES:")
        for p in problems:
            print(f"  {p}")
        return 2
    print("aggregates verified against per-run artifacts")
    return 0


def _experiment_exit(report) -> int:
    failed = sum(c.n_failed for c in report.cells)
    return 2 if failed else 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = _load_config_file(getattr(args, "config", None))
        opt = _Options(args, file_cfg)
        seed = int(opt.get("seed", 0))
        out_dir = str(opt.get("out", "pinnkit-out"))
        threads = int(opt.get("threads", 1))
        if threads < 1:
            raise ConfigError("--threads must be >= 1")

        cmd = args.command
        if cmd == "gen-data":
            return _cmd_gen_data(opt, out_dir, seed)
        if cmd == "train":
            return _cmd_train(opt, out_dir, seed, threads, inverse=False)
        if cmd == "train-inverse":
            return _cmd_train(opt, out_dir, seed, threads, inverse=True)
        if cmd == "arch-search":
            return _cmd_arch_search(opt, out_dir, seed, threads)
        if cmd == "lambda-sweep":
            return _cmd_lambda_sweep(opt, out_dir, seed, threads)
        if cmd == "residual-order-sweep":
            return _cmd_residual_order_sweep(opt, out_dir, seed, threads)
        if cmd == "density-sweep":
            return _cmd_density_sweep(opt, out_dir, seed, threads)
        if cmd == "fdm":
            return _cmd_fdm(opt, out_dir, seed)
        if cmd == "compare-fdm-pinn":
            return _cmd_compare(opt, out_dir, seed, threads)
        if cmd == "report":
            return _cmd_report(opt, out_dir)
        raise ConfigError(f"unknown command {cmd!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
