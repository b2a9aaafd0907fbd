"""Hot sweep kernels over tape node arrays.

A tape section is stored as parallel arrays (opcode, two parent handles, an
auxiliary scalar, a value). The kernels below re-evaluate node values from
leaf bindings (forward sweep) and push value-only adjoints from seeded
outputs down to leaves (backward sweep). Each kernel body is written once
as a self-contained function (the block kernels inline the sweeps so no
kernel calls another) and compiled twice: once with numba ``njit`` and once
left as plain Python over NumPy arrays. The active flavour is chosen by
:mod:`pinnkit.backend`.

Both flavours produce bit-identical values: transcendentals go through
``math.*`` (libm, which is also what numba lowers to — NumPy's scalar
tanh/exp differ by an ulp), and the explicit guards below reproduce IEEE
overflow/invalid behaviour that Python's ``math`` would otherwise raise
for. Non-finite values flow through; blow-up detection is the caller's
job.
"""

import math

import numpy as np

from . import backend

# opcodes (stored in a uint8 column; binary arithmetic sits in 2..5)
OP_LEAF = 0
OP_CONST = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_NEG = 6
OP_SIN = 7
OP_COS = 8
OP_EXP = 9
OP_TANH = 10
OP_POWI = 11

OP_NAMES = (
    "leaf", "const", "add", "sub", "mul", "div",
    "neg", "sin", "cos", "exp", "tanh", "powi",
)

_EXP_MAX = 709.782712893384  # log(DBL_MAX); beyond this exp overflows to inf
_INF = np.inf


def _forward_sweep_impl(op, p0, p1, aux, val, start, n):
    for i in range(start, n):
        o = op[i]
        if o == OP_MUL:
            val[i] = val[p0[i]] * val[p1[i]]
        elif o == OP_ADD:
            val[i] = val[p0[i]] + val[p1[i]]
        elif o == OP_SUB:
            val[i] = val[p0[i]] - val[p1[i]]
        elif o == OP_TANH:
            v = val[p0[i]]
            if math.isfinite(v):
                val[i] = math.tanh(v)
            elif v != v:
                val[i] = v
            else:
                val[i] = 1.0 if v > 0.0 else -1.0
        elif o == OP_LEAF or o == OP_CONST:
            pass
        elif o == OP_DIV:
            val[i] = val[p0[i]] / val[p1[i]]
        elif o == OP_NEG:
            val[i] = -val[p0[i]]
        elif o == OP_SIN:
            v = val[p0[i]]
            val[i] = math.sin(v) if math.isfinite(v) else v - v
        elif o == OP_COS:
            v = val[p0[i]]
            val[i] = math.cos(v) if math.isfinite(v) else v - v
        elif o == OP_EXP:
            v = val[p0[i]]
            val[i] = _INF if v > _EXP_MAX else math.exp(v)
        elif o == OP_POWI:
            # binary exponentiation; identical op order in both backends
            k = int(aux[i])
            e = -k if k < 0 else k
            acc = 1.0
            base = val[p0[i]]
            while e > 0:
                if e & 1:
                    acc = acc * base
                base = base * base
                e >>= 1
            val[i] = 1.0 / acc if k < 0 else acc


def _backward_sweep_impl(op, p0, p1, aux, val, adj, start, n):
    # adj must hold the output seeds; nodes with zero adjoint are skipped
    # (NaN adjoints compare unequal to zero, so poison still propagates).
    for i in range(n - 1, start - 1, -1):
        a = adj[i]
        if a == 0.0:
            continue
        o = op[i]
        if o == OP_MUL:
            adj[p0[i]] += a * val[p1[i]]
            adj[p1[i]] += a * val[p0[i]]
        elif o == OP_ADD:
            adj[p0[i]] += a
            adj[p1[i]] += a
        elif o == OP_SUB:
            adj[p0[i]] += a
            adj[p1[i]] -= a
        elif o == OP_TANH:
            v = val[i]
            adj[p0[i]] += a * (1.0 - v * v)
        elif o == OP_LEAF or o == OP_CONST:
            pass
        elif o == OP_DIV:
            adj[p0[i]] += a / val[p1[i]]
            adj[p1[i]] -= a * val[i] / val[p1[i]]
        elif o == OP_NEG:
            adj[p0[i]] -= a
        elif o == OP_SIN:
            v = val[p0[i]]
            adj[p0[i]] += a * (math.cos(v) if math.isfinite(v) else v - v)
        elif o == OP_COS:
            v = val[p0[i]]
            adj[p0[i]] -= a * (math.sin(v) if math.isfinite(v) else v - v)
        elif o == OP_EXP:
            adj[p0[i]] += a * val[i]
        elif o == OP_POWI:
            k = int(aux[i])
            if k != 0:
                e = k - 1
                neg = e < 0
                if neg:
                    e = -e
                acc = 1.0
                base = val[p0[i]]
                while e > 0:
                    if e & 1:
                        acc = acc * base
                    base = base * base
                    e >>= 1
                if neg:
                    acc = 1.0 / acc
                adj[p0[i]] += a * (k * acc)


def _forward_block_impl(op, p0, p1, aux, val, start, n, in_slots, bind, out_idx, out):
    # batch forward: for each binding row set the input leaves, sweep, collect
    # outputs. Inlined copy of the forward sweep (kernels must be closed).
    n_bind = bind.shape[0]
    n_in = in_slots.shape[0]
    n_out = out_idx.shape[0]
    for b in range(n_bind):
        for j in range(n_in):
            val[in_slots[j]] = bind[b, j]
        for i in range(start, n):
            o = op[i]
            if o == OP_MUL:
                val[i] = val[p0[i]] * val[p1[i]]
            elif o == OP_ADD:
                val[i] = val[p0[i]] + val[p1[i]]
            elif o == OP_SUB:
                val[i] = val[p0[i]] - val[p1[i]]
            elif o == OP_TANH:
                v = val[p0[i]]
                if math.isfinite(v):
                    val[i] = math.tanh(v)
                elif v != v:
                    val[i] = v
                else:
                    val[i] = 1.0 if v > 0.0 else -1.0
            elif o == OP_LEAF or o == OP_CONST:
                pass
            elif o == OP_DIV:
                val[i] = val[p0[i]] / val[p1[i]]
            elif o == OP_NEG:
                val[i] = -val[p0[i]]
            elif o == OP_SIN:
                v = val[p0[i]]
                val[i] = math.sin(v) if math.isfinite(v) else v - v
            elif o == OP_COS:
                v = val[p0[i]]
                val[i] = math.cos(v) if math.isfinite(v) else v - v
            elif o == OP_EXP:
                v = val[p0[i]]
                val[i] = _INF if v > _EXP_MAX else math.exp(v)
            elif o == OP_POWI:
                k = int(aux[i])
                e = -k if k < 0 else k
                acc = 1.0
                base = val[p0[i]]
                while e > 0:
                    if e & 1:
                        acc = acc * base
                    base = base * base
                    e >>= 1
                val[i] = 1.0 / acc if k < 0 else acc
        for m in range(n_out):
            out[b, m] = val[out_idx[m]]


def _train_block_impl(op, p0, p1, aux, val, adj, start, n, in_slots, bind,
                      u_idx, r_idx, targets, weights, resid_seed,
                      param_slots, grad_out):
    """One full-batch pass of a compiled loss program.

    For every binding row: rebind input leaves, forward-sweep, seed the
    fit-term adjoint 2*w*(u - target) and the residual adjoint
    2*resid_seed*r, backward-sweep, and accumulate adjoints of the
    parameter leaves into grad_out. Returns the weighted sum of squared
    fit errors and the raw sum of squared residuals, accumulated in
    binding order so results are bit-reproducible.
    """
    n_bind = bind.shape[0]
    n_in = in_slots.shape[0]
    n_par = param_slots.shape[0]
    fit_sse = 0.0
    resid_sse = 0.0
    for b in range(n_bind):
        for j in range(n_in):
            val[in_slots[j]] = bind[b, j]
        # forward sweep (inlined)
        for i in range(start, n):
            o = op[i]
            if o == OP_MUL:
                val[i] = val[p0[i]] * val[p1[i]]
            elif o == OP_ADD:
                val[i] = val[p0[i]] + val[p1[i]]
            elif o == OP_SUB:
                val[i] = val[p0[i]] - val[p1[i]]
            elif o == OP_TANH:
                v = val[p0[i]]
                if math.isfinite(v):
                    val[i] = math.tanh(v)
                elif v != v:
                    val[i] = v
                else:
                    val[i] = 1.0 if v > 0.0 else -1.0
            elif o == OP_LEAF or o == OP_CONST:
                pass
            elif o == OP_DIV:
                val[i] = val[p0[i]] / val[p1[i]]
            elif o == OP_NEG:
                val[i] = -val[p0[i]]
            elif o == OP_SIN:
                v = val[p0[i]]
                val[i] = math.sin(v) if math.isfinite(v) else v - v
            elif o == OP_COS:
                v = val[p0[i]]
                val[i] = math.cos(v) if math.isfinite(v) else v - v
            elif o == OP_EXP:
                v = val[p0[i]]
                val[i] = _INF if v > _EXP_MAX else math.exp(v)
            elif o == OP_POWI:
                k = int(aux[i])
                e = -k if k < 0 else k
                acc = 1.0
                base = val[p0[i]]
                while e > 0:
                    if e & 1:
                        acc = acc * base
                    base = base * base
                    e >>= 1
                val[i] = 1.0 / acc if k < 0 else acc
        adj[:n] = 0.0
        w = weights[b]
        e0 = val[u_idx] - targets[b]
        fit_sse += w * e0 * e0
        adj[u_idx] = 2.0 * w * e0
        if r_idx >= 0:
            r = val[r_idx]
            resid_sse += r * r
            adj[r_idx] += 2.0 * resid_seed * r
        # backward sweep (inlined)
        for i in range(n - 1, start - 1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            o = op[i]
            if o == OP_MUL:
                adj[p0[i]] += a * val[p1[i]]
                adj[p1[i]] += a * val[p0[i]]
            elif o == OP_ADD:
                adj[p0[i]] += a
                adj[p1[i]] += a
            elif o == OP_SUB:
                adj[p0[i]] += a
                adj[p1[i]] -= a
            elif o == OP_TANH:
                v = val[i]
                adj[p0[i]] += a * (1.0 - v * v)
            elif o == OP_LEAF or o == OP_CONST:
                pass
            elif o == OP_DIV:
                adj[p0[i]] += a / val[p1[i]]
                adj[p1[i]] -= a * val[i] / val[p1[i]]
            elif o == OP_NEG:
                adj[p0[i]] -= a
            elif o == OP_SIN:
                v = val[p0[i]]
                adj[p0[i]] += a * (math.cos(v) if math.isfinite(v) else v - v)
            elif o == OP_COS:
                v = val[p0[i]]
                adj[p0[i]] -= a * (math.sin(v) if math.isfinite(v) else v - v)
            elif o == OP_EXP:
                adj[p0[i]] += a * val[i]
            elif o == OP_POWI:
                k = int(aux[i])
                if k != 0:
                    e = k - 1
                    neg = e < 0
                    if neg:
                        e = -e
                    acc = 1.0
                    base = val[p0[i]]
                    while e > 0:
                        if e & 1:
                            acc = acc * base
                        base = base * base
                        e >>= 1
                    if neg:
                        acc = 1.0 / acc
                    adj[p0[i]] += a * (k * acc)
        for q in range(n_par):
            grad_out[q] += adj[param_slots[q]]
    return fit_sse, resid_sse


def _train_block4_impl(op, p0, p1, aux, val4, adj4, start, n, in_slots, bind,
                       u_idx, r_idx, targets, weights, resid_seed,
                       param_slots, grad_out):
    """Four-lane variant of the train block.

    Processes bindings in groups of four through lane-major value/adjoint
    buffers (flat, node index i lane l at 4*i+l) so the per-node index and
    dispatch work is paid once per group and the four flops vectorize.
    Group-then-lane accumulation visits bindings in exactly the same order
    as the scalar kernel, so losses and gradients are bit-identical to it.
    Short final groups replicate the last row with the extra lanes masked
    out of every sum.
    """
    n_bind = bind.shape[0]
    n_in = in_slots.shape[0]
    n_par = param_slots.shape[0]
    fit_sse = 0.0
    resid_sse = 0.0
    g = 0
    while g < n_bind:
        m = n_bind - g
        if m > 4:
            m = 4
        for l in range(4):
            src = g + l if l < m else g + m - 1
            for j in range(n_in):
                val4[4 * in_slots[j] + l] = bind[src, j]
        # forward sweep, four lanes per node
        for i in range(start, n):
            o = op[i]
            i4 = 4 * i
            a4 = 4 * p0[i]
            b4 = 4 * p1[i]
            if o == OP_MUL:
                for l in range(4):
                    val4[i4 + l] = val4[a4 + l] * val4[b4 + l]
            elif o == OP_ADD:
                for l in range(4):
                    val4[i4 + l] = val4[a4 + l] + val4[b4 + l]
            elif o == OP_SUB:
                for l in range(4):
                    val4[i4 + l] = val4[a4 + l] - val4[b4 + l]
            elif o == OP_TANH:
                for l in range(4):
                    v = val4[a4 + l]
                    if math.isfinite(v):
                        val4[i4 + l] = math.tanh(v)
                    elif v != v:
                        val4[i4 + l] = v
                    else:
                        val4[i4 + l] = 1.0 if v > 0.0 else -1.0
            elif o == OP_LEAF or o == OP_CONST:
                pass
            elif o == OP_DIV:
                for l in range(4):
                    val4[i4 + l] = val4[a4 + l] / val4[b4 + l]
            elif o == OP_NEG:
                for l in range(4):
                    val4[i4 + l] = -val4[a4 + l]
            elif o == OP_SIN:
                for l in range(4):
                    v = val4[a4 + l]
                    val4[i4 + l] = math.sin(v) if math.isfinite(v) else v - v
            elif o == OP_COS:
                for l in range(4):
                    v = val4[a4 + l]
                    val4[i4 + l] = math.cos(v) if math.isfinite(v) else v - v
            elif o == OP_EXP:
                for l in range(4):
                    v = val4[a4 + l]
                    val4[i4 + l] = _INF if v > _EXP_MAX else math.exp(v)
            elif o == OP_POWI:
                k = int(aux[i])
                e0 = -k if k < 0 else k
                for l in range(4):
                    e = e0
                    acc = 1.0
                    base = val4[a4 + l]
                    while e > 0:
                        if e & 1:
                            acc = acc * base
                        base = base * base
                        e >>= 1
                    val4[i4 + l] = 1.0 / acc if k < 0 else acc
        adj4[:4 * n] = 0.0
        u4 = 4 * u_idx
        for l in range(m):
            w = weights[g + l]
            e0 = val4[u4 + l] - targets[g + l]
            fit_sse += w * e0 * e0
            adj4[u4 + l] = 2.0 * w * e0
        if r_idx >= 0:
            r4 = 4 * r_idx
            for l in range(m):
                r = val4[r4 + l]
                resid_sse += r * r
                adj4[r4 + l] += 2.0 * resid_seed * r
        # backward sweep, four lanes per node
        for i in range(n - 1, start - 1, -1):
            i4 = 4 * i
            if (adj4[i4] == 0.0 and adj4[i4 + 1] == 0.0
                    and adj4[i4 + 2] == 0.0 and adj4[i4 + 3] == 0.0):
                continue
            o = op[i]
            a4 = 4 * p0[i]
            b4 = 4 * p1[i]
            if o == OP_MUL:
                for l in range(4):
                    a = adj4[i4 + l]
                    adj4[a4 + l] += a * val4[b4 + l]
                    adj4[b4 + l] += a * val4[a4 + l]
            elif o == OP_ADD:
                for l in range(4):
                    a = adj4[i4 + l]
                    adj4[a4 + l] += a
                    adj4[b4 + l] += a
            elif o == OP_SUB:
                for l in range(4):
                    a = adj4[i4 + l]
                    adj4[a4 + l] += a
                    adj4[b4 + l] -= a
            elif o == OP_TANH:
                for l in range(4):
                    v = val4[i4 + l]
                    adj4[a4 + l] += adj4[i4 + l] * (1.0 - v * v)
            elif o == OP_LEAF or o == OP_CONST:
                pass
            elif o == OP_DIV:
                for l in range(4):
                    a = adj4[i4 + l]
                    adj4[a4 + l] += a / val4[b4 + l]
                    adj4[b4 + l] -= a * val4[i4 + l] / val4[b4 + l]
            elif o == OP_NEG:
                for l in range(4):
                    adj4[a4 + l] -= adj4[i4 + l]
            elif o == OP_SIN:
                for l in range(4):
                    v = val4[a4 + l]
                    adj4[a4 + l] += adj4[i4 + l] * (
                        math.cos(v) if math.isfinite(v) else v - v)
            elif o == OP_COS:
                for l in range(4):
                    v = val4[a4 + l]
                    adj4[a4 + l] -= adj4[i4 + l] * (
                        math.sin(v) if math.isfinite(v) else v - v)
            elif o == OP_EXP:
                for l in range(4):
                    adj4[a4 + l] += adj4[i4 + l] * val4[i4 + l]
            elif o == OP_POWI:
                k = int(aux[i])
                if k != 0:
                    e0 = k - 1
                    neg = e0 < 0
                    if neg:
                        e0 = -e0
                    for l in range(4):
                        e = e0
                        acc = 1.0
                        base = val4[a4 + l]
                        while e > 0:
                            if e & 1:
                                acc = acc * base
                            base = base * base
                            e >>= 1
                        if neg:
                            acc = 1.0 / acc
                        adj4[a4 + l] += adj4[i4 + l] * (k * acc)
        for l in range(m):
            for q in range(n_par):
                grad_out[q] += adj4[4 * param_slots[q] + l]
        g += m
    return fit_sse, resid_sse


_PY_KERNELS = {
    "forward_sweep": _forward_sweep_impl,
    "backward_sweep": _backward_sweep_impl,
    "forward_block": _forward_block_impl,
    "train_block": _train_block_impl,
    "train_block4": _train_block4_impl,
}

_NB_KERNELS = {}
try:
    from numba import njit as _njit

    _jit = _njit(cache=True, nogil=True, error_model="numpy")
    _NB_KERNELS = {name: _jit(fn) for name, fn in _PY_KERNELS.items()}
except ImportError:
    pass


def _kernel(name):
    if backend.using_numba():
        return _NB_KERNELS[name]
    return _PY_KERNELS[name]


def forward_sweep(op, p0, p1, aux, val, n=None, start=0):
    if n is None:
        n = len(op)
    with np.errstate(all="ignore"):
        _kernel("forward_sweep")(op, p0, p1, aux, val, start, n)


def backward_sweep(op, p0, p1, aux, val, adj, n=None, start=0):
    if n is None:
        n = len(op)
    with np.errstate(all="ignore"):
        _kernel("backward_sweep")(op, p0, p1, aux, val, adj, start, n)


def forward_block(op, p0, p1, aux, val, in_slots, bind, out_idx, out, start=0):
    with np.errstate(all="ignore"):
        _kernel("forward_block")(op, p0, p1, aux, val, start, len(op),
                                 in_slots, bind, out_idx, out)


def train_block(op, p0, p1, aux, val, adj, in_slots, bind, u_idx, r_idx,
                targets, weights, resid_seed, param_slots, grad_out, start=0):
    with np.errstate(all="ignore"):
        return _kernel("train_block")(
            op, p0, p1, aux, val, adj, start, len(op), in_slots, bind,
            u_idx, r_idx, targets, weights, resid_seed,
            param_slots, grad_out)


def train_block4(op, p0, p1, aux, val4, adj4, in_slots, bind, u_idx, r_idx,
                 targets, weights, resid_seed, param_slots, grad_out, start=0):
    with np.errstate(all="ignore"):
        return _kernel("train_block4")(
            op, p0, p1, aux, val4, adj4, start, len(op), in_slots, bind,
            u_idx, r_idx, targets, weights, resid_seed,
            param_slots, grad_out)
