"""Deterministic synthetic data: noisy polynomial samples and heat-equation
exact-solution grids.

Every dataset carries a provenance record sufficient to regenerate it
bit-for-bit: ground-truth definition, sampling lattice, and the noise
stream (mean, variance, seed). Gaussian noise is Box-Muller on the
package PRNG so regeneration does not depend on any library's sampler.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng

PI = math.pi


@dataclass(frozen=True)
class NoiseSpec:
    variance: float = 0.0
    mean: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.variance}")

    def to_dict(self):
        return {"mean": self.mean, "variance": self.variance, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(variance=d["variance"], mean=d.get("mean", 0.0),
                   seed=d["seed"])


def heat_exact(x, t, diffusivity):
    """Closed-form rod-cooling solution u(x,t) = exp(-pi^2 D t) sin(pi x)."""
    return np.exp(-PI * PI * diffusivity * np.asarray(t, dtype=float)) \
        * np.sin(PI * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Line:
    a: float = 1.0
    b: float = 1.0

    def __call__(self, x):
        return self.a * np.asarray(x, dtype=float) + self.b

    def to_dict(self):
        return {"kind": "line", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Parabola:
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * x * x + self.b * x + self.c

    def to_dict(self):
        return {"kind": "parabola", "a": self.a, "b": self.b, "c": self.c}


@dataclass(frozen=True)
class HeatSurface:
    diffusivity: float = 0.1

    def __post_init__(self):
        if self.diffusivity <= 0:
            raise ValueError("diffusivity must be > 0")

    def __call__(self, x, t):
        return heat_exact(x, t, self.diffusivity)

    def to_dict(self):
        return {"kind": "heat_surface", "diffusivity": self.diffusivity}


def ground_truth_from_dict(d):
    kind = d["kind"]
    if kind == "line":
        return Line(d["a"], d["b"])
    if kind == "parabola":
        return Parabola(d["a"], d["b"], d["c"])
    if kind == "heat_surface":
        return HeatSurface(d["diffusivity"])
    raise ValueError(f"unknown ground truth kind {kind!r}")


@dataclass
class Dataset:
    """Sampled points plus a record that regenerates them exactly."""
    inputs: np.ndarray   # (n, 1) for x-only problems, (n, 2) for (x, t)
    targets: np.ndarray  # (n,)
    provenance: dict

    def __len__(self):
        return len(self.targets)

    @property
    def input_dim(self):
        return self.inputs.shape[1]


def _lattice_count(span: float, step: float, what: str) -> int:
    """Number of intervals in the lattice; step must divide span to 1e-9."""
    ratio = span / step
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ValueError(
            f"{what}: step {step} does not divide span {span} "
            f"(ratio {ratio} is not integral within 1e-9)")
    return n


def gen_polynomial(gt, interval, n_points: int, noise: NoiseSpec) -> Dataset:
    """Uniformly spaced samples of a line/parabola plus Gaussian noise."""
    if not isinstance(gt, (Line, Parabola)):
        raise TypeError("polynomial data needs a Line or Parabola ground truth")
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    xs = np.linspace(lo, hi, n_points)
    rng = Rng(noise.seed)
    std = math.sqrt(noise.variance)
    eps = np.array([rng.normal(noise.mean, std) for _ in range(n_points)])
    targets = gt(xs) + eps
    provenance = {
        "kind": "polynomial",
        "gt": gt.to_dict(),
        "interval": [lo, hi],
        "n_points": n_points,
        "noise": noise.to_dict(),
    }
    return Dataset(xs.reshape(-1, 1), targets, provenance)


def gen_heat_grid(dx: float, dt: float, diffusivity: float, t_final: float,
                  noise: NoiseSpec = NoiseSpec(), include_boundaries: bool = True,
                  x_stride: int = 1, t_stride: int = 1) -> Dataset:
    """Exact-solution samples on the (x, t) lattice over [0,1] x [0,T].

    The lattice includes both space boundaries and t=0 by default (their
    targets coincide with the boundary/initial conditions); strides allow
    deterministic subsampling of very dense grids.
    """
    nx = _lattice_count(1.0, dx, "heat grid x") + 1
    nt = _lattice_count(t_final, dt, "heat grid t") + 1
    xs = np.linspace(0.0, 1.0, nx)
    ts = np.linspace(0.0, t_final, nt)
    if not include_boundaries:
        xs = xs[1:-1]
    xs = xs[::x_stride]
    ts = ts[::t_stride]
    tt, xx = np.meshgrid(ts, xs, indexing="ij")  # time-major rows
    inputs = np.column_stack([xx.ravel(), tt.ravel()])
    clean = heat_exact(inputs[:, 0], inputs[:, 1], diffusivity)
    rng = Rng(noise.seed)
    std = math.sqrt(noise.variance)
    if std > 0:
        eps = np.array([rng.normal(noise.mean, std) for _ in range(len(clean))])
    else:
        eps = 0.0
    provenance = {
        "kind": "heat_grid",
        "dx": dx, "dt": dt,
        "diffusivity": diffusivity,
        "t_final": t_final,
        "include_boundaries": include_boundaries,
        "x_stride": x_stride, "t_stride": t_stride,
        "noise": noise.to_dict(),
    }
    return Dataset(inputs, clean + eps, provenance)


def regenerate(provenance: dict) -> Dataset:
    """Rebuild a dataset from its provenance record (bit-identical)."""
    kind = provenance["kind"]
    noise = NoiseSpec.from_dict(provenance["noise"])
    if kind == "polynomial":
        return gen_polynomial(ground_truth_from_dict(provenance["gt"]),
                              provenance["interval"], provenance["n_points"],
                              noise)
    if kind == "heat_grid":
        return gen_heat_grid(
            provenance["dx"], provenance["dt"], provenance["diffusivity"],
            provenance["t_final"], noise,
            include_boundaries=provenance.get("include_boundaries", True),
            x_stride=provenance.get("x_stride", 1),
            t_stride=provenance.get("t_stride", 1))
    raise ValueError(f"unknown dataset kind {kind!r}")


def save_dataset_csv(dataset: Dataset, path):
    """CSV with `x[,t],target` columns plus a YAML provenance sidecar."""
    import yaml

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["x", "target"] if dataset.input_dim == 1 else ["x", "t", "target"]
        writer.writerow(header)
        for row, y in zip(dataset.inputs, dataset.targets):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(y))])
    with open(_sidecar_path(path), "w") as fh:
        yaml.safe_dump(dataset.provenance, fh, sort_keys=True)


def load_dataset_csv(path) -> Dataset:
    import yaml

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows)
    with open(_sidecar_path(path)) as fh:
        provenance = yaml.safe_load(fh)
    if header not in (["x", "target"], ["x", "t", "target"]):
        raise ValueError(f"{path}: unexpected CSV header {header}")
    return Dataset(data[:, :-1], data[:, -1], provenance)


def _sidecar_path(path):
    return f"{path}.provenance.yaml"
