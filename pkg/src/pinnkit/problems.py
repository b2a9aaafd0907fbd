"""Differential-equation problems: residuals and the composite training loss.

A problem couples a differential operator (what the residual measures)
with a residual strength lambda and a collocation layout (where the
residual is penalized). Polynomial problems use the annihilation property
of the (n+1)-th derivative; the heat problem uses u_t - D u_xx with a
fixed or trainable diffusivity.

All operations here are pure graph builders: they take a tape, emit the
loss/residual as a Var, and leave evaluation strategy to the caller. The
residual loss is the mean of squared pointwise residuals (the raw
operator would not pose a minimization), and boundary/initial conditions
are enforced softly as extra mean-squared terms with weight 1.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datagen import Dataset
from .network import ParamSet, forward
from .tape import Tape, Var, grad


# -- collocation layouts ------------------------------------------------------

@dataclass(frozen=True)
class Interval1D:
    """Uniform collocation points on [lo, hi] for one-input problems."""
    lo: float = -1.0
    hi: float = 2.0
    count: int = 100

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.count < 2:
            raise ValueError("count must be >= 2")

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count).reshape(-1, 1)


@dataclass(frozen=True)
class HeatCollocation:
    """Lattice over [0,1] x [0,T] plus boundary/initial sample counts.

    The lattice mirrors the training grid; n_boundary time samples are
    each enforced at both rod ends, n_initial space samples at t=0.
    """
    nx: int = 11
    nt: int = 11
    t_final: float = 1.0
    n_boundary: int = 50
    n_initial: int = 50

    def __post_init__(self):
        if self.nx < 2 or self.nt < 2:
            raise ValueError("nx and nt must be >= 2")
        if self.t_final <= 0:
            raise ValueError("t_final must be > 0")
        if self.n_boundary < 2 or self.n_initial < 2:
            raise ValueError("n_boundary and n_initial must be >= 2")

    def points(self) -> np.ndarray:
        xs = np.linspace(0.0, 1.0, self.nx)
        ts = np.linspace(0.0, self.t_final, self.nt)
        tt, xx = np.meshgrid(ts, xs, indexing="ij")
        return np.column_stack([xx.ravel(), tt.ravel()])

    def boundary_initial_points(self):
        """(bindings, targets, weights) for the soft BC/IC penalty."""
        ts = np.linspace(0.0, self.t_final, self.n_boundary)
        xs = np.linspace(0.0, 1.0, self.n_initial)
        bind = np.concatenate([
            np.column_stack([np.zeros_like(ts), ts]),
            np.column_stack([np.ones_like(ts), ts]),
            np.column_stack([xs, np.zeros_like(xs)]),
        ])
        targets = np.concatenate([
            np.zeros(2 * self.n_boundary),
            np.sin(np.pi * xs),
        ])
        weights = np.concatenate([
            np.full(2 * self.n_boundary, 1.0 / (2 * self.n_boundary)),
            np.full(self.n_initial, 1.0 / self.n_initial),
        ])
        return bind, targets, weights


# -- problem kinds ------------------------------------------------------------

@dataclass(frozen=True)
class PolynomialKind:
    """Data believed to follow a degree-n polynomial; the residual is the
    r-th derivative of the model (default r = n+1, which annihilates any
    degree-n polynomial)."""
    degree: int
    residual_order: int | None = None

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.residual_order is not None and self.residual_order < 1:
            raise ValueError("residual_order must be >= 1")

    @property
    def order(self) -> int:
        return self.residual_order if self.residual_order is not None \
            else self.degree + 1


@dataclass(frozen=True)
class FixedD:
    value: float

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("fixed diffusivity must be > 0")


@dataclass(frozen=True)
class TrainableD:
    init: float = 0.05

    def __post_init__(self):
        if self.init <= 0:
            raise ValueError("initial diffusivity must be > 0")


@dataclass(frozen=True)
class HeatKind:
    diffusivity: FixedD | TrainableD

    @property
    def trainable(self) -> bool:
        return isinstance(self.diffusivity, TrainableD)


@dataclass(frozen=True)
class ProblemSpec:
    kind: PolynomialKind | HeatKind
    lam: float = 1.0
    collocation: Interval1D | HeatCollocation = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.collocation is None:
            default = (Interval1D() if isinstance(self.kind, PolynomialKind)
                       else HeatCollocation())
            object.__setattr__(self, "collocation", default)
        if isinstance(self.kind, PolynomialKind) and not isinstance(
                self.collocation, Interval1D):
            raise ValueError("polynomial problems use Interval1D collocation")
        if isinstance(self.kind, HeatKind) and not isinstance(
                self.collocation, HeatCollocation):
            raise ValueError("heat problems use HeatCollocation")

    @property
    def input_dim(self) -> int:
        return 1 if isinstance(self.kind, PolynomialKind) else 2


# -- models -------------------------------------------------------------------

class MlpModel:
    """Network bound to a parameter set (and optionally to parameter leaves
    so losses stay differentiable w.r.t. the parameters)."""

    def __init__(self, params: ParamSet, param_vars: Sequence[Var] | None = None):
        self.params = params
        self.param_vars = param_vars
        self.input_dim = params.config.input_dim

    def build(self, tape: Tape, inputs: Sequence[Var]) -> Var:
        return forward(tape, self.params, inputs, param_vars=self.param_vars)


class AnalyticModel:
    """Closed-form expression in place of a network, for oracle checks."""

    def __init__(self, fn, input_dim: int):
        self.fn = fn
        self.input_dim = input_dim

    def build(self, tape: Tape, inputs: Sequence[Var]) -> Var:
        return self.fn(tape, *inputs)


# -- losses and residuals -----------------------------------------------------

def data_loss(model, tape: Tape, dataset: Dataset) -> Var:
    """Mean squared error over all dataset points, as a differentiable Var."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.input_dim != model.input_dim:
        raise ValueError(
            f"dataset has {dataset.input_dim} inputs, model wants "
            f"{model.input_dim}")
    acc = None
    for row, y in zip(dataset.inputs, dataset.targets):
        inputs = [tape.input(v) for v in row]
        e = model.build(tape, inputs) - tape.const(y)
        sq = e * e
        acc = sq if acc is None else acc + sq
    return acc / len(dataset)


def residual_poly_from_output(u: Var, x: Var, order: int) -> Var:
    """Polynomial residual given an already-built model output."""
    if order < 1:
        raise ValueError("residual order must be >= 1")
    y = u
    for _ in range(order):
        y = grad(y, [x])[0]
    return y


def residual_heat_from_output(u: Var, x: Var, t: Var, d_var: Var) -> Var:
    """Heat residual u_t - D u_xx given an already-built model output."""
    du_x, du_t = grad(u, [x, t])
    d2u_xx = grad(du_x, [x])[0]
    return du_t - d_var * d2u_xx


def residual_poly(model, tape: Tape, x: Var, order: int) -> Var:
    """r-th derivative of the model at x; zero iff the ODE holds there."""
    if order < 1:
        raise ValueError("residual order must be >= 1")
    if model.input_dim != 1:
        raise ValueError("polynomial residual needs a one-input model")
    return residual_poly_from_output(model.build(tape, [x]), x, order)


def residual_heat(model, tape: Tape, x: Var, t: Var, d_var: Var) -> Var:
    """Heat-equation residual u_t - D u_xx at one point (D may be a leaf)."""
    if model.input_dim != 2:
        raise ValueError("heat residual needs a two-input model")
    u = model.build(tape, [x, t])
    return residual_heat_from_output(u, x, t, d_var)


def _resolve_d(tape: Tape, kind: HeatKind, d_var: Var | None) -> Var:
    if d_var is not None:
        return d_var
    if kind.trainable:
        return tape.input(kind.diffusivity.init)
    return tape.const(kind.diffusivity.value)


def residual_loss(model, tape: Tape, spec: ProblemSpec,
                  d_var: Var | None = None) -> Var:
    """Mean of squared residuals over the collocation points."""
    acc = None
    if isinstance(spec.kind, PolynomialKind):
        pts = spec.collocation.points()
        for (xv,) in pts:
            r = residual_poly(model, tape, tape.input(xv), spec.kind.order)
            sq = r * r
            acc = sq if acc is None else acc + sq
    else:
        d = _resolve_d(tape, spec.kind, d_var)
        pts = spec.collocation.points()
        for xv, tv in pts:
            r = residual_heat(model, tape, tape.input(xv), tape.input(tv), d)
            sq = r * r
            acc = sq if acc is None else acc + sq
    return acc / len(pts)


def boundary_initial_loss(model, tape: Tape, spec: ProblemSpec) -> Var:
    """Soft Dirichlet-boundary and initial-condition penalty (heat only)."""
    if not isinstance(spec.kind, HeatKind):
        raise ValueError("boundary/initial loss applies to heat problems only")
    bind, targets, weights = spec.collocation.boundary_initial_points()
    acc = None
    for row, y, w in zip(bind, targets, weights):
        u = model.build(tape, [tape.input(row[0]), tape.input(row[1])])
        e = u - tape.const(y)
        term = tape.const(w) * e * e
        acc = term if acc is None else acc + term
    return acc


def total_loss(model, tape: Tape, dataset: Dataset, spec: ProblemSpec,
               d_var: Var | None = None) -> Var:
    """L_data + lambda * L_residual (+ BC/IC penalty for heat).

    With lambda = 0 the residual term is omitted entirely, so no gradient
    path through the residual exists at all.
    """
    loss = data_loss(model, tape, dataset)
    if spec.lam > 0:
        loss = loss + tape.const(spec.lam) * residual_loss(
            model, tape, spec, d_var=d_var)
    if isinstance(spec.kind, HeatKind):
        loss = loss + boundary_initial_loss(model, tape, spec)
    return loss
