"""Compiled snapshots of tape graphs for repeated re-evaluation.

Training evaluates the same loss graph thousands of times with different
leaf values (collocation coordinates every batch row, parameters every
epoch). Rebuilding the graph per epoch would dwarf the numeric work, so a
:class:`Program` freezes a tape section once into contiguous arrays, keeps
designated leaves as rebinding slots, and then re-runs value sweeps with
the :mod:`pinnkit.kernels` backends. Dead nodes (not feeding any output)
are dropped and indices compacted.

A Program owns its value buffer; the source tape is untouched and may be
rolled back or discarded afterwards.
"""

import numpy as np

from . import kernels
from .kernels import OP_LEAF
from .tape import Tape, TapeError, Var


class Program:
    def __init__(self, tape: Tape, inputs, outputs, params=()):
        inputs = list(inputs)
        outputs = list(outputs)
        params = list(params)
        if not outputs:
            raise ValueError("a program needs at least one output")
        for v in inputs + outputs + params:
            if not isinstance(v, Var) or v.tape is not tape:
                raise TapeError("program vars must live on the given tape")
            tape._check_var(v)
        for v in inputs + params:
            if tape._op[v.index] != OP_LEAF:
                raise TapeError(
                    f"rebindable slot must be a leaf, got {tape._node_label(v.index)}")

        op, p0, p1 = tape._op, tape._p0, tape._p1
        hi = max(v.index for v in inputs + outputs + params) + 1

        live = bytearray(hi)
        for v in inputs + outputs + params:
            live[v.index] = 1
        for i in range(hi - 1, -1, -1):
            if live[i] and op[i] > kernels.OP_CONST:
                live[p0[i]] = 1
                if op[i] <= kernels.OP_DIV:
                    live[p1[i]] = 1

        remap = np.full(hi, -1, dtype=np.int64)
        kept = [i for i in range(hi) if live[i]]
        remap[kept] = np.arange(len(kept))

        self.op = np.array([op[i] for i in kept], dtype=np.uint8)
        # int32 handles: half the streamed index traffic of the hot sweeps
        self.p0 = np.array([remap[p0[i]] if op[i] > kernels.OP_CONST else 0
                            for i in kept], dtype=np.int32)
        self.p1 = np.array([remap[p1[i]] if kernels.OP_CONST < op[i] <= kernels.OP_DIV
                            else 0 for i in kept], dtype=np.int32)
        self.aux = np.array([tape._aux[i] for i in kept], dtype=np.float64)
        self.val = np.array([tape._val[i] for i in kept], dtype=np.float64)
        self.adj = np.zeros_like(self.val)
        # leaves and consts sit in one contiguous prefix in practice;
        # sweeps may start at the first computing node
        computing = (self.op != kernels.OP_LEAF) & (self.op != kernels.OP_CONST)
        self.start = int(np.argmax(computing)) if computing.any() else 0

        self.in_slots = np.array([remap[v.index] for v in inputs], dtype=np.int64)
        self.param_slots = np.array([remap[v.index] for v in params], dtype=np.int64)
        self.out_idx = np.array([remap[v.index] for v in outputs], dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.op)

    def set_params(self, values):
        self.val[self.param_slots] = values

    def _lane_buffers(self):
        if not hasattr(self, "_val4"):
            self._val4 = np.repeat(self.val, 4)
            self._adj4 = np.zeros_like(self._val4)
        return self._val4, self._adj4

    def eval(self, *input_values, params=None):
        """Evaluate outputs at one input point; returns a float or tuple."""
        bind = np.array([input_values], dtype=np.float64)
        out = self.eval_many(bind, params=params)[0]
        return float(out[0]) if len(out) == 1 else tuple(float(v) for v in out)

    def eval_many(self, bind, params=None) -> np.ndarray:
        """Forward sweeps at each binding row; returns (rows, n_outputs)."""
        bind = np.ascontiguousarray(bind, dtype=np.float64)
        if bind.ndim != 2 or bind.shape[1] != len(self.in_slots):
            raise ValueError(
                f"bindings must have shape (rows, {len(self.in_slots)})")
        if params is not None:
            self.set_params(params)
        out = np.empty((bind.shape[0], len(self.out_idx)), dtype=np.float64)
        kernels.forward_block(self.op, self.p0, self.p1, self.aux, self.val,
                              self.in_slots, bind, self.out_idx, out,
                              start=self.start)
        return out

    def train_pass(self, bind, targets, weights, resid_seed, grad_out,
                   params=None):
        """Full-batch forward+backward accumulation over binding rows.

        Outputs[0] is the fitted quantity u; outputs[1] (if present) the
        residual r. Per row b the adjoint of u is seeded with
        ``2*weights[b]*(u - targets[b])`` and the adjoint of r with
        ``2*resid_seed*r``; adjoints of the parameter slots accumulate
        into ``grad_out``. Returns (weighted fit SSE, raw residual SSE).
        """
        bind = np.ascontiguousarray(bind, dtype=np.float64)
        targets = np.ascontiguousarray(targets, dtype=np.float64)
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        r_idx = self.out_idx[1] if len(self.out_idx) > 1 else -1
        if len(bind) >= 8:
            # four-lane kernel; bit-identical to the scalar path but pays
            # the per-node dispatch once per four bindings
            val4, adj4 = self._lane_buffers()
            lane_params = params if params is not None \
                else self.val[self.param_slots]
            for l in range(4):
                val4[4 * self.param_slots + l] = lane_params
            return kernels.train_block4(
                self.op, self.p0, self.p1, self.aux, val4, adj4,
                self.in_slots, bind, self.out_idx[0], r_idx,
                targets, weights, float(resid_seed), self.param_slots,
                grad_out, start=self.start)
        if params is not None:
            self.set_params(params)
        return kernels.train_block(
            self.op, self.p0, self.p1, self.aux, self.val, self.adj,
            self.in_slots, bind, self.out_idx[0], r_idx,
            targets, weights, float(resid_seed), self.param_slots, grad_out,
            start=self.start)

    def grad_values(self, input_values, params=None, output: int = 0):
        """Value-only parameter gradient of one output at one point.

        Cross-checkable against the node-emitting :func:`pinnkit.tape.grad`;
        both walk the same graph in the same order.
        """
        bind = np.array([input_values], dtype=np.float64)
        if params is not None:
            self.set_params(params)
        out = np.empty((1, len(self.out_idx)), dtype=np.float64)
        kernels.forward_block(self.op, self.p0, self.p1, self.aux, self.val,
                              self.in_slots, bind, self.out_idx, out,
                              start=self.start)
        self.adj[:] = 0.0
        self.adj[self.out_idx[output]] = 1.0
        kernels.backward_sweep(self.op, self.p0, self.p1, self.aux, self.val,
                               self.adj, self.n_nodes, start=self.start)
        return self.adj[self.param_slots].copy()
