import math
import os
import subprocess
import sys

import numpy as np
import pytest

from pinnkit import backend
from pinnkit.program import Program
from pinnkit.rng import Rng
from pinnkit.tape import Tape, grad

from _expr import build_spec, random_expr_spec


needs_numba = pytest.mark.skipif(
    not backend._numba_importable(), reason="numba not installed")


@pytest.fixture
def numpy_backend():
    prev = backend.set_backend(backend.NUMPY)
    yield
    backend.set_backend(prev)


def _random_program(seed):
    rng = Rng(seed)
    spec, leaves = random_expr_spec(rng, n_inputs=4, max_ops=35)
    t = Tape()
    y, leaf_vars = build_spec(t, spec, leaves)
    gs = grad(y, leaf_vars[:2])
    prog = Program(t, inputs=leaf_vars[:2], outputs=[y] + gs,
                   params=leaf_vars[2:])
    bind = np.array([[rng.uniform_in(-1.2, 1.2) for _ in range(2)]
                     for _ in range(7)])
    return prog, bind, np.array(leaves[2:])


@needs_numba
def test_backends_bit_identical_forward():
    for seed in range(12):
        prog, bind, pvals = _random_program(seed)
        prev = backend.set_backend(backend.NUMBA)
        try:
            out_nb = prog.eval_many(bind, params=pvals).copy()
            backend.set_backend(backend.NUMPY)
            out_py = prog.eval_many(bind, params=pvals).copy()
        finally:
            backend.set_backend(prev)
        assert np.array_equal(out_nb, out_py, equal_nan=True)


@needs_numba
def test_backends_bit_identical_train_pass():
    for seed in (3, 17):
        prog, bind, pvals = _random_program(seed)
        targets = np.linspace(-0.5, 0.5, len(bind))
        weights = np.full(len(bind), 1.0 / len(bind))
        results = {}
        prev = backend.active_backend()
        try:
            for name in (backend.NUMBA, backend.NUMPY):
                backend.set_backend(name)
                g = np.zeros(len(pvals))
                fit, resid = prog.train_pass(bind, targets, weights, 0.3, g,
                                             params=pvals)
                results[name] = (fit, resid, g.copy())
        finally:
            backend.set_backend(prev)
        assert results["numba"][0] == results["numpy"][0]
        assert results["numba"][1] == results["numpy"][1]
        assert np.array_equal(results["numba"][2], results["numpy"][2])


def test_python_path_ieee_semantics(numpy_backend):
    # division by a rebound zero must give inf, not an exception
    t = Tape()
    x = t.input(1.0)
    y = t.const(1.0) / x
    p = Program(t, inputs=[x], outputs=[y])
    assert p.eval(0.0) == math.inf
    # exp overflow saturates to inf instead of raising OverflowError
    t2 = Tape()
    a = t2.input(1.0)
    z = t2.exp(a)
    p2 = Program(t2, inputs=[a], outputs=[z])
    assert p2.eval(1e4) == math.inf
    # sin of inf is nan, not ValueError
    t3 = Tape()
    b = t3.input(0.0)
    s = t3.sin(b)
    p3 = Program(t3, inputs=[b], outputs=[s])
    assert math.isnan(p3.eval(math.inf))


def test_nan_propagates_through_backward(numpy_backend):
    t = Tape()
    x = t.input(1.0)
    w = t.input(2.0)
    u = w / x
    p = Program(t, inputs=[x], outputs=[u], params=[w])
    g = np.zeros(1)
    fit, _ = p.train_pass(np.array([[0.0]]), np.array([0.0]),
                          np.array([1.0]), 0.0, g, params=np.array([2.0]))
    assert math.isinf(fit) or math.isnan(fit)
    assert not math.isfinite(g[0])


def test_env_flag_selects_backend():
    code = ("import pinnkit.backend as b; print(b.active_backend())")
    env = dict(os.environ, PINNKIT_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_unknown_env_flag_rejected():
    code = "import pinnkit.backend"
    env = dict(os.environ, PINNKIT_BACKEND="cuda")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0


def test_lane_kernel_matches_scalar_bitwise():
    # the >=8-binding lane path must be indistinguishable from the scalar
    # path: same sums, same gradients, bit for bit
    from pinnkit import kernels

    for seed in range(6):
        prog, bind2, pvals = _random_program(seed)
        rng = Rng(1000 + seed)
        bind = np.array([[rng.uniform_in(-1.2, 1.2) for _ in range(2)]
                         for _ in range(11)])  # odd count exercises padding
        targets = np.linspace(-0.4, 0.6, len(bind))
        weights = np.full(len(bind), 1.0 / len(bind))
        g_scalar = np.zeros(len(pvals))
        fit_s, resid_s = kernels.train_block(
            prog.op, prog.p0, prog.p1, prog.aux, prog.val, prog.adj,
            prog.in_slots, bind, prog.out_idx[0], prog.out_idx[1],
            targets, weights, 0.17, prog.param_slots, g_scalar,
            start=prog.start)
        g_lane = np.zeros(len(pvals))
        fit_l, resid_l = prog.train_pass(bind, targets, weights, 0.17,
                                         g_lane, params=pvals)
        # scalar call above ran with whatever params were left in val;
        # rerun it with the same params for a fair comparison
        g_scalar[:] = 0.0
        prog.set_params(pvals)
        fit_s, resid_s = kernels.train_block(
            prog.op, prog.p0, prog.p1, prog.aux, prog.val, prog.adj,
            prog.in_slots, bind, prog.out_idx[0], prog.out_idx[1],
            targets, weights, 0.17, prog.param_slots, g_scalar,
            start=prog.start)
        assert fit_s == fit_l and resid_s == resid_l
        assert np.array_equal(g_scalar, g_lane)
