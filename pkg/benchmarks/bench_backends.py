"""Timing comparison of the numba and pure-NumPy kernel backends.

Builds representative compiled programs (a polynomial residual and a heat
residual), then times the forward and train-block sweeps under each
backend. Run:

    python benchmarks/bench_backends.py
"""

import time

import numpy as np

from pinnkit import backend
from pinnkit.experiments import preset_run_config
from pinnkit.network import MlpConfig, init_params
from pinnkit.training import _compile_main, train


def _timeit(fn, min_reps=3, budget_s=5.0):
    fn()  # warm-up / jit compile
    best = float("inf")
    t_total = 0.0
    reps = 0
    while reps < min_reps or t_total < budget_s / 10:
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        best = min(best, dt)
        t_total += dt
        reps += 1
        if t_total > budget_s:
            break
    return best


def bench_program(label, config, n_bind):
    params = init_params(config.net)
    main = _compile_main(params, config.problem)
    rng = np.random.default_rng(0)
    bind = rng.random((n_bind, config.net.input_dim))
    targets = rng.random(n_bind)
    weights = np.full(n_bind, 1.0 / n_bind)
    grad_out = np.zeros(len(main.param_slots))

    def step():
        grad_out[:] = 0.0
        main.train_pass(bind, targets, weights, 1.0 / n_bind, grad_out,
                        params=np.concatenate(
                            [params.values,
                             [0.05] * (len(main.param_slots)
                                       - len(params.values))]))

    results = {}
    for name in (backend.NUMBA, backend.NUMPY):
        try:
            prev = backend.set_backend(name)
        except ImportError:
            continue
        try:
            results[name] = _timeit(step)
        finally:
            backend.set_backend(prev)
    nodes = main.n_nodes
    line = f"{label:<28} {nodes:>8} nodes x {n_bind:>4} pts"
    for name, t in results.items():
        line += f"  {name}: {t * 1e3:9.2f} ms"
    if len(results) == 2:
        line += f"  speedup: {results['numpy'] / results['numba']:6.1f}x"
    print(line)


def bench_short_training():
    cfg = preset_run_config("linear")
    from dataclasses import replace

    cfg = replace(cfg, epochs=150)
    for name in (backend.NUMBA, backend.NUMPY):
        try:
            prev = backend.set_backend(name)
        except ImportError:
            continue
        try:
            train(cfg)  # warm
            t0 = time.perf_counter()
            train(cfg)
            dt = time.perf_counter() - t0
        finally:
            backend.set_backend(prev)
        print(f"{'linear preset, 150 epochs':<28} "
              f"{'':>8}              {name}: {dt * 1e3:9.2f} ms")


def main():
    print(f"active backend by default: {backend.active_backend()}")
    print("train-block pass (one full-batch forward+backward):")
    linear = preset_run_config("linear")
    bench_program("linear residual (3L/20N)", linear, 100)
    heat = preset_run_config("heat")
    from dataclasses import replace

    small_heat = replace(
        heat, net=MlpConfig(input_dim=2, hidden_layers=2,
                            neurons_per_layer=20))
    bench_program("heat residual (3L/20N)", small_heat, 121)
    bench_program("heat residual (5L/80N)", heat, 121)
    bench_short_training()


if __name__ == "__main__":
    main()
