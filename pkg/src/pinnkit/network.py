"""Fully connected tanh network over tape scalars.

The network is deliberately tiny: 1 or 2 inputs, one linear output, tanh
hidden activations (residual losses need smooth high-order derivatives,
so the activation is not configurable). Parameters live in one flat
vector plus a layout table; training re-binds them as tape leaves so the
whole forward graph is differentiable with respect to both inputs and
parameters.

Layer-count convention: paper-style tables quote "total layers" L, which
counts the output layer, so a table row "L layers, N neurons" maps to
``hidden_layers = L - 1`` and ``neurons_per_layer = N``
(:meth:`MlpConfig.from_total_layers`).
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .rng import Rng, derive_seed
from .tape import Tape, Var


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_layers: int
    neurons_per_layer: int
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim not in (1, 2):
            raise ValueError(f"input_dim must be 1 or 2, got {self.input_dim}")
        if self.hidden_layers < 1 or self.neurons_per_layer < 1:
            raise ValueError("hidden_layers and neurons_per_layer must be >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh activation is supported")

    @classmethod
    def from_total_layers(cls, total_layers: int, neurons: int,
                          input_dim: int = 1, seed: int = 0) -> "MlpConfig":
        """Paper-table convention: total layers include the output layer."""
        return cls(input_dim=input_dim, hidden_layers=total_layers - 1,
                   neurons_per_layer=neurons, seed=seed)

    @property
    def total_layers(self) -> int:
        return self.hidden_layers + 1

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer, hidden layers then output."""
        sizes = ([self.input_dim]
                 + [self.neurons_per_layer] * self.hidden_layers + [1])
        return list(zip(sizes[:-1], sizes[1:]))

    def with_seed(self, seed: int) -> "MlpConfig":
        return replace(self, seed=seed)


class LayoutEntry(NamedTuple):
    layer: int
    kind: str  # "weight" | "bias"
    offset: int
    shape: tuple


def _build_layout(config: MlpConfig) -> tuple[LayoutEntry, ...]:
    entries = []
    off = 0
    for layer, (fan_in, fan_out) in enumerate(config.layer_dims()):
        entries.append(LayoutEntry(layer, "weight", off, (fan_out, fan_in)))
        off += fan_out * fan_in
        entries.append(LayoutEntry(layer, "bias", off, (fan_out,)))
        off += fan_out
    return tuple(entries)


def param_count(config: MlpConfig) -> int:
    return sum(fi * fo + fo for fi, fo in config.layer_dims())


@dataclass
class ParamSet:
    """Flat parameter vector plus the layout that carves it into tensors."""
    values: np.ndarray
    layout: tuple[LayoutEntry, ...] = field(repr=False)
    config: MlpConfig

    @property
    def param_count(self) -> int:
        return len(self.values)

    def copy(self) -> "ParamSet":
        return ParamSet(self.values.copy(), self.layout, self.config)

    def tensor(self, layer: int, kind: str) -> np.ndarray:
        for e in self.layout:
            if e.layer == layer and e.kind == kind:
                n = int(np.prod(e.shape))
                return self.values[e.offset:e.offset + n].reshape(e.shape)
        raise KeyError(f"no tensor (layer={layer}, kind={kind})")


def init_params(config: MlpConfig) -> ParamSet:
    """Xavier-uniform weights, zero biases; deterministic given the seed."""
    layout = _build_layout(config)
    values = np.zeros(param_count(config), dtype=np.float64)
    rng = Rng(derive_seed(config.seed, "xavier-init"))
    for e in layout:
        if e.kind != "weight":
            continue
        fan_out, fan_in = e.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        n = fan_in * fan_out
        values[e.offset:e.offset + n] = [
            rng.uniform_in(-bound, bound) for _ in range(n)]
    return ParamSet(values, layout, config)


def leaf_params(tape: Tape, params: ParamSet) -> list[Var]:
    """Load every parameter onto the tape as a rebindable leaf."""
    return [tape.input(v) for v in params.values]


def forward(tape: Tape, params: ParamSet, inputs: Sequence[Var],
            param_vars: Sequence[Var] | None = None) -> Var:
    """Network output as a Var, differentiable w.r.t. inputs (and params
    when ``param_vars`` from :func:`leaf_params` is supplied; otherwise the
    parameter values are baked in as constants)."""
    config = params.config
    if len(inputs) != config.input_dim:
        raise ValueError(
            f"expected {config.input_dim} inputs, got {len(inputs)}")
    values = params.values

    if param_vars is None:
        def p(idx):
            return tape.const(values[idx])
    else:
        if len(param_vars) != len(values):
            raise ValueError("param_vars length does not match ParamSet")

        def p(idx):
            return param_vars[idx]

    acts = list(inputs)
    layout = iter(params.layout)
    n_layers = len(config.layer_dims())
    for layer in range(n_layers):
        w = next(layout)
        b = next(layout)
        fan_out, fan_in = w.shape
        out_acts = []
        for j in range(fan_out):
            base = w.offset + j * fan_in
            acc = tape.mul(p(base), acts[0])
            for i in range(1, fan_in):
                acc = tape.add(acc, tape.mul(p(base + i), acts[i]))
            acc = tape.add(acc, p(b.offset + j))
            if layer < n_layers - 1:
                acc = tape.tanh(acc)
            out_acts.append(acc)
        acts = out_acts
    return acts[0]


# -- checkpoint serialization ------------------------------------------------
#
# Plain text, one hex-encoded IEEE-754 double per line: round-trips are
# bit-exact and files stay diffable. `extras` carries named scalars such
# as a trained diffusivity.

_MAGIC = "pinnkit-checkpoint v1"


def save_checkpoint(path, params: ParamSet, extras: dict | None = None):
    extras = extras or {}
    cfg = params.config
    lines = [
        _MAGIC,
        f"input_dim {cfg.input_dim}",
        f"hidden_layers {cfg.hidden_layers}",
        f"neurons_per_layer {cfg.neurons_per_layer}",
        f"activation {cfg.activation}",
        f"seed {cfg.seed}",
        f"extras {len(extras)}",
    ]
    for name, value in extras.items():
        lines.append(f"extra {name} {float(value).hex()}")
    for e in params.layout:
        n = int(np.prod(e.shape))
        shape_s = " ".join(str(s) for s in e.shape)
        lines.append(f"tensor {e.layer} {e.kind} {shape_s}")
        vals = params.values[e.offset:e.offset + n]
        lines.extend(float(v).hex() for v in vals)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class _LineReader:
    def __init__(self, path):
        with open(path) as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0
        self.path = path

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise CheckpointError(
                f"{self.path}: truncated file, expected {what} at line {self.pos + 1}")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect_field(self, key: str) -> str:
        line = self.next(f"'{key}'")
        parts = line.split()
        if len(parts) != 2 or parts[0] != key:
            raise CheckpointError(
                f"{self.path}:{self.pos}: expected '{key} <value>', got {line!r}")
        return parts[1]


def load_checkpoint(path) -> tuple[ParamSet, MlpConfig, dict]:
    r = _LineReader(path)
    if r.next("header") != _MAGIC:
        raise CheckpointError(f"{path}:1: not a pinnkit checkpoint")
    try:
        config = MlpConfig(
            input_dim=int(r.expect_field("input_dim")),
            hidden_layers=int(r.expect_field("hidden_layers")),
            neurons_per_layer=int(r.expect_field("neurons_per_layer")),
            activation=r.expect_field("activation"),
            seed=int(r.expect_field("seed")),
        )
    except ValueError as exc:
        raise CheckpointError(f"{path}:{r.pos}: bad config field: {exc}") from exc
    n_extras = int(r.expect_field("extras"))
    extras = {}
    for _ in range(n_extras):
        line = r.next("extra")
        parts = line.split()
        if len(parts) != 3 or parts[0] != "extra":
            raise CheckpointError(
                f"{path}:{r.pos}: expected 'extra <name> <hex>', got {line!r}")
        try:
            extras[parts[1]] = float.fromhex(parts[2])
        except ValueError as exc:
            raise CheckpointError(
                f"{path}:{r.pos}: bad hex double {parts[2]!r}") from exc

    layout = _build_layout(config)
    values = np.zeros(param_count(config), dtype=np.float64)
    for e in layout:
        header = r.next("tensor header")
        shape_s = " ".join(str(s) for s in e.shape)
        expected = f"tensor {e.layer} {e.kind} {shape_s}"
        if header != expected:
            raise CheckpointError(
                f"{path}:{r.pos}: expected {expected!r}, got {header!r}")
        n = int(np.prod(e.shape))
        for i in range(n):
            token = r.next("parameter value")
            try:
                values[e.offset + i] = float.fromhex(token)
            except ValueError as exc:
                raise CheckpointError(
                    f"{path}:{r.pos}: bad hex double {token!r}") from exc
    if r.pos != len(r.lines) and any(s.strip() for s in r.lines[r.pos:]):
        raise CheckpointError(f"{path}:{r.pos + 1}: trailing content")
    return ParamSet(values, layout, config), config, extras
