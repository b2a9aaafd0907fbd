"""Scalar tape-based reverse-mode automatic differentiation.

Every scalar quantity lives as a node in an append-only arena (the
:class:`Tape`); a :class:`Var` is a lightweight handle into it. The
backward pass of :func:`grad` *emits new tape nodes* for the adjoint
arithmetic instead of just computing numbers, so a gradient is itself a
differentiable quantity: calling :func:`grad` on it again yields second
derivatives, and so on to any order. That single mechanism serves both
high-order derivatives with respect to network inputs and first-order
parameter gradients of losses that contain such derivatives.

Nodes store at most two parent handles plus an auxiliary scalar (the
integer exponent of ``powi``). Node values are computed eagerly at
construction; a value may later become stale only inside a compiled
:class:`~pinnkit.program.Program`, which owns its own value buffer.

Non-finite values are data, not errors: arithmetic may overflow to inf
(finite-difference stress inputs do this on purpose) and the tape stores
the result. :meth:`Tape.first_nonfinite` is the dedicated check that
reports the first offending node. Construction-time domain violations
(division by an exact zero, ``powi`` with negative exponent at zero) are
rejected eagerly with the node named.
"""

import math
from numbers import Integral

from .kernels import (
    OP_LEAF, OP_CONST, OP_ADD, OP_SUB, OP_MUL, OP_DIV,
    OP_NEG, OP_SIN, OP_COS, OP_EXP, OP_TANH, OP_POWI, OP_NAMES,
    _EXP_MAX,
)

_UNARY_KINDS = {"neg": OP_NEG, "sin": OP_SIN, "cos": OP_COS,
                "exp": OP_EXP, "tanh": OP_TANH, "powi": OP_POWI}
_ARITH_KINDS = {"add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL, "div": OP_DIV}


class TapeError(Exception):
    pass


class StaleVariableError(TapeError):
    """A Var (or Mark) refers to nodes removed by a rollback."""


# value helpers, bit-identical to the kernel implementations (guarded libm)

def _powi_value(x: float, k: int) -> float:
    e = -k if k < 0 else k
    acc = 1.0
    base = x
    while e > 0:
        if e & 1:
            acc = acc * base
        base = base * base
        e >>= 1
    return 1.0 / acc if k < 0 else acc


def _sin_value(x: float) -> float:
    return math.sin(x) if math.isfinite(x) else x - x


def _cos_value(x: float) -> float:
    return math.cos(x) if math.isfinite(x) else x - x


def _exp_value(x: float) -> float:
    return math.inf if x > _EXP_MAX else math.exp(x)


def _tanh_value(x: float) -> float:
    if math.isfinite(x):
        return math.tanh(x)
    if x != x:
        return x
    return 1.0 if x > 0.0 else -1.0


class Var:
    """Handle to one tape node. Cheap to copy; never outlives a rollback."""

    __slots__ = ("tape", "index", "_ver")

    def __init__(self, tape: "Tape", index: int, ver: int):
        self.tape = tape
        self.index = index
        self._ver = ver

    @property
    def value(self) -> float:
        t = self.tape
        t._check_var(self)
        return t._val[self.index]

    @property
    def op_name(self) -> str:
        self.tape._check_var(self)
        return OP_NAMES[self.tape._op[self.index]]

    def is_finite(self) -> bool:
        return math.isfinite(self.value)

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        return self.tape.const(float(other))

    def __add__(self, other):
        return self.tape.add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.sub(self._lift(other), self)

    def __mul__(self, other):
        return self.tape.mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.tape.div(self, self._lift(other))

    def __rtruediv__(self, other):
        return self.tape.div(self._lift(other), self)

    def __neg__(self):
        return self.tape.neg(self)

    def __pow__(self, k):
        return self.tape.powi(self, k)

    def __repr__(self):
        try:
            return f"Var(#{self.index} {self.op_name}={self.value:.6g})"
        except TapeError:
            return f"Var(#{self.index} <stale>)"


class Mark:
    """Checkpoint token; see :meth:`Tape.checkpoint`."""

    __slots__ = ("tape", "length", "version")

    def __init__(self, tape, length, version):
        self.tape = tape
        self.length = length
        self.version = version


class Tape:
    """Append-only arena of scalar computation nodes.

    Parents always point at earlier nodes, so the node order is a valid
    topological order and a single linear sweep re-evaluates everything.
    A tape is single-owner: one thread mutates it at a time.
    """

    def __init__(self):
        self._op: list[int] = []
        self._p0: list[int] = []
        self._p1: list[int] = []
        self._aux: list[float] = []
        self._val: list[float] = []
        self._node_ver: list[int] = []
        self.version = 0

    def __len__(self):
        return len(self._op)

    # -- node plumbing -------------------------------------------------

    def _emit(self, op: int, p0: int = 0, p1: int = 0,
              aux: float = 0.0, value: float = 0.0) -> int:
        self._op.append(op)
        self._p0.append(p0)
        self._p1.append(p1)
        self._aux.append(aux)
        self._val.append(value)
        self._node_ver.append(self.version)
        return len(self._op) - 1

    def _var(self, index: int) -> Var:
        return Var(self, index, self._node_ver[index])

    def _check_var(self, v: Var) -> int:
        if v.tape is not self:
            raise TapeError("variable belongs to a different tape")
        idx = v.index
        if idx >= len(self._op) or self._node_ver[idx] != v._ver:
            raise StaleVariableError(
                f"variable #{idx} was invalidated by a rollback")
        return idx

    def _node_label(self, idx: int) -> str:
        return f"node #{idx} ({OP_NAMES[self._op[idx]]})"

    # -- leaves ----------------------------------------------------------

    def input(self, value: float) -> Var:
        """New leaf node; gradients with respect to it are obtainable."""
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"input value must be finite, got {value!r}")
        return self._var(self._emit(OP_LEAF, value=value))

    def const(self, value: float) -> Var:
        """Structural constant: like a leaf, but never a rebinding slot."""
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"const value must be finite, got {value!r}")
        return self._var(self._emit(OP_CONST, value=value))

    # -- primitive operations ---------------------------------------------

    def add(self, a: Var, b: Var) -> Var:
        ia, ib = self._check_var(a), self._check_var(b)
        return self._var(self._emit(OP_ADD, ia, ib,
                                    value=self._val[ia] + self._val[ib]))

    def sub(self, a: Var, b: Var) -> Var:
        ia, ib = self._check_var(a), self._check_var(b)
        return self._var(self._emit(OP_SUB, ia, ib,
                                    value=self._val[ia] - self._val[ib]))

    def mul(self, a: Var, b: Var) -> Var:
        ia, ib = self._check_var(a), self._check_var(b)
        return self._var(self._emit(OP_MUL, ia, ib,
                                    value=self._val[ia] * self._val[ib]))

    def div(self, a: Var, b: Var) -> Var:
        ia, ib = self._check_var(a), self._check_var(b)
        if self._val[ib] == 0.0:
            raise ZeroDivisionError(
                f"division by zero: denominator {self._node_label(ib)} is 0")
        return self._var(self._emit(OP_DIV, ia, ib,
                                    value=self._val[ia] / self._val[ib]))

    def neg(self, a: Var) -> Var:
        ia = self._check_var(a)
        return self._var(self._emit(OP_NEG, ia, value=-self._val[ia]))

    def sin(self, a: Var) -> Var:
        ia = self._check_var(a)
        return self._var(self._emit(OP_SIN, ia, value=_sin_value(self._val[ia])))

    def cos(self, a: Var) -> Var:
        ia = self._check_var(a)
        return self._var(self._emit(OP_COS, ia, value=_cos_value(self._val[ia])))

    def exp(self, a: Var) -> Var:
        ia = self._check_var(a)
        return self._var(self._emit(OP_EXP, ia, value=_exp_value(self._val[ia])))

    def tanh(self, a: Var) -> Var:
        ia = self._check_var(a)
        return self._var(self._emit(OP_TANH, ia, value=_tanh_value(self._val[ia])))

    def powi(self, a: Var, k: int) -> Var:
        """Integer power by repeated multiplication; exact at x <= 0."""
        ia = self._check_var(a)
        if not isinstance(k, Integral):
            raise TypeError(f"powi exponent must be an integer, got {k!r}")
        k = int(k)
        if k < 0 and self._val[ia] == 0.0:
            raise ZeroDivisionError(
                f"powi(x, {k}) at x=0: base {self._node_label(ia)} is 0")
        if k == 0:
            return self.const(1.0)
        return self._var(self._emit(OP_POWI, ia, aux=float(k),
                                    value=_powi_value(self._val[ia], k)))

    # -- dispatch-by-name forms -------------------------------------------

    def arith(self, a: Var, b: Var, kind: str) -> Var:
        try:
            fn = {"add": self.add, "sub": self.sub,
                  "mul": self.mul, "div": self.div}[kind]
        except KeyError:
            raise ValueError(f"unknown arith kind {kind!r}") from None
        return fn(a, b)

    def unary(self, a: Var, kind: str, power: int | None = None) -> Var:
        if kind == "powi":
            if power is None:
                raise ValueError("powi requires the power argument")
            return self.powi(a, power)
        try:
            fn = {"neg": self.neg, "sin": self.sin, "cos": self.cos,
                  "exp": self.exp, "tanh": self.tanh}[kind]
        except KeyError:
            raise ValueError(f"unknown unary kind {kind!r}") from None
        return fn(a)

    # -- checkpoint / rollback ----------------------------------------------

    def checkpoint(self) -> Mark:
        return Mark(self, len(self._op), self.version)

    def _check_mark(self, mark: Mark):
        if mark.tape is not self:
            raise TapeError("mark belongs to a different tape")
        m = mark.length
        if m > len(self._op):
            raise StaleVariableError("mark is stale: tape shrank below it")
        if m > 0 and self._node_ver[m - 1] > mark.version:
            raise StaleVariableError(
                "mark is stale: an earlier rollback removed its nodes")

    def rollback(self, mark: Mark):
        """Discard all nodes created after the mark. Idempotent."""
        self._check_mark(mark)
        m = mark.length
        if m == len(self._op):
            return
        del self._op[m:]
        del self._p0[m:]
        del self._p1[m:]
        del self._aux[m:]
        del self._val[m:]
        del self._node_ver[m:]
        self.version += 1

    # -- non-finite check ----------------------------------------------------

    def first_nonfinite(self):
        """Index, op name and value of the first non-finite node, or None."""
        for i, v in enumerate(self._val):
            if not math.isfinite(v):
                return i, OP_NAMES[self._op[i]], v
        return None

    # -- reverse-mode differentiation --------------------------------------

    def _mul_idx(self, a: int, b: int) -> int:
        # peephole: multiplying by a structural 1.0 constant is a no-op;
        # keeps first-order adjoint chains from dragging a unit factor
        if self._op[a] == OP_CONST and self._val[a] == 1.0:
            return b
        if self._op[b] == OP_CONST and self._val[b] == 1.0:
            return a
        return self._emit(OP_MUL, a, b, value=self._val[a] * self._val[b])

    def grad(self, output: Var, wrt) -> list[Var]:
        """Derivatives of ``output`` w.r.t. each var, as new tape Vars.

        The adjoint computation is recorded on the tape, so the returned
        Vars can be differentiated again. A wrt node the output does not
        depend on yields a constant-zero Var.
        """
        out = self._check_var(output)
        wrt = list(wrt)
        wrt_idx = [self._check_var(w) for w in wrt]
        n = out + 1
        op, p0, p1 = self._op, self._p0, self._p1

        # ancestors of the output (the only nodes that can carry adjoints)
        anc = bytearray(n)
        anc[out] = 1
        for i in range(out, -1, -1):
            if anc[i] and op[i] > OP_CONST:
                anc[p0[i]] = 1
                if op[i] <= OP_DIV:  # binary ops
                    anc[p1[i]] = 1

        # nodes some wrt leaf can reach; adjoints are only pushed into these
        haswrt = bytearray(n)
        for w in wrt_idx:
            if w < n:
                haswrt[w] = 1
        for i in range(n):
            if not haswrt[i] and op[i] > OP_CONST:
                if haswrt[p0[i]] or (op[i] <= OP_DIV and haswrt[p1[i]]):
                    haswrt[i] = 1

        adj: list[int | None] = [None] * n
        one = self._emit(OP_CONST, value=1.0)
        adj[out] = one

        def contribute(target: int, handle: int):
            if adj[target] is None:
                adj[target] = handle
            else:
                a, b = adj[target], handle
                adj[target] = self._emit(OP_ADD, a, b,
                                         value=self._val[a] + self._val[b])

        for i in range(out, -1, -1):
            a = adj[i]
            if a is None or not anc[i]:
                continue
            o = op[i]
            if o <= OP_CONST:
                continue
            pa = p0[i]
            pb = p1[i]
            if o == OP_ADD:
                if haswrt[pa]:
                    contribute(pa, a)
                if haswrt[pb]:
                    contribute(pb, a)
            elif o == OP_SUB:
                if haswrt[pa]:
                    contribute(pa, a)
                if haswrt[pb]:
                    contribute(pb, self._emit(OP_NEG, a, value=-self._val[a]))
            elif o == OP_MUL:
                if haswrt[pa]:
                    contribute(pa, self._mul_idx(a, pb))
                if haswrt[pb]:
                    contribute(pb, self._mul_idx(a, pa))
            elif o == OP_DIV:
                if haswrt[pa]:
                    contribute(pa, self._emit(
                        OP_DIV, a, pb, value=self._val[a] / self._val[pb]))
                if haswrt[pb]:
                    # d(a/b)/db = -y/b where y is this node
                    t = self._mul_idx(a, i)
                    t = self._emit(OP_DIV, t, pb,
                                   value=self._val[t] / self._val[pb])
                    contribute(pb, self._emit(OP_NEG, t, value=-self._val[t]))
            elif o == OP_NEG:
                if haswrt[pa]:
                    contribute(pa, self._emit(OP_NEG, a, value=-self._val[a]))
            elif o == OP_SIN:
                if haswrt[pa]:
                    c = self._emit(OP_COS, pa, value=_cos_value(self._val[pa]))
                    contribute(pa, self._mul_idx(a, c))
            elif o == OP_COS:
                if haswrt[pa]:
                    s = self._emit(OP_SIN, pa, value=_sin_value(self._val[pa]))
                    t = self._mul_idx(a, s)
                    contribute(pa, self._emit(OP_NEG, t, value=-self._val[t]))
            elif o == OP_EXP:
                if haswrt[pa]:
                    contribute(pa, self._mul_idx(a, i))
            elif o == OP_TANH:
                if haswrt[pa]:
                    sq = self._emit(OP_MUL, i, i,
                                    value=self._val[i] * self._val[i])
                    s = self._emit(OP_SUB, one, sq,
                                   value=1.0 - self._val[sq])
                    contribute(pa, self._mul_idx(a, s))
            elif o == OP_POWI:
                k = int(self._aux[i])
                if k != 0 and haswrt[pa]:
                    if k == 1:
                        contribute(pa, a)
                    else:
                        if k - 1 == 0:
                            pw = one
                        else:
                            pw = self._emit(
                                OP_POWI, pa, aux=float(k - 1),
                                value=_powi_value(self._val[pa], k - 1))
                        ck = self._emit(OP_CONST, value=float(k))
                        d = self._mul_idx(ck, pw)
                        contribute(pa, self._mul_idx(a, d))

        results = []
        for w in wrt_idx:
            h = adj[w] if w < n else None
            if h is None:
                h = self._emit(OP_CONST, value=0.0)
            results.append(self._var(h))
        return results


# module-level forms of the tape operations

def grad(output: Var, wrt) -> list[Var]:
    return output.tape.grad(output, wrt)


def nth_derivative(f, x: Var, n: int) -> Var:
    """n-th derivative of ``f`` (a Var-valued function of one Var) at x.

    Repeated application of :func:`grad`; the result is still a Var and
    still differentiable.
    """
    if n < 1:
        raise ValueError("derivative order must be >= 1; call f directly for order 0")
    y = f(x)
    if not isinstance(y, Var) or y.tape is not x.tape:
        raise TapeError("f must return a Var on the same tape as x")
    for _ in range(n):
        y = y.tape.grad(y, [x])[0]
    return y


def derivatives_up_to(f, x: Var, n: int) -> list[Var]:
    """[f(x), f'(x), ..., f^(n)(x)] sharing one graph."""
    ys = [f(x)]
    for _ in range(n):
        ys.append(ys[-1].tape.grad(ys[-1], [x])[0])
    return ys


def checkpoint(tape: Tape) -> Mark:
    return tape.checkpoint()


def rollback(tape: Tape, mark: Mark):
    tape.rollback(mark)
