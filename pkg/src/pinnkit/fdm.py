"""Explicit finite-difference solver for the 1-D heat equation.

Forward-Euler in time, central second difference in space:

    u[j+1, i] = u[j, i] + (D dt / dx^2) (u[j, i+1] - 2 u[j, i] + u[j, i-1])

Stability requires the CFL bound D dt <= 0.5 dx^2; past it the scheme
amplifies high spatial modes exponentially. Divergence is data here, not
an error: the march saturates values at +-1e300 so the error of a blown-up
run still comes out as a (huge but finite) number, and the solution
records where the blow-up started.
"""

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .datagen import HeatSurface, _lattice_count, heat_exact

VALUE_CAP = 1e300          # saturating arithmetic bound for diverged runs
DIVERGENCE_THRESHOLD = 1e12  # |u| past this marks the run diverged


class CflResult(NamedTuple):
    satisfied: bool
    margin: float  # 0.5 dx^2 / dt - D; >= 0 (boundary included) is stable


def cfl_check(diffusivity: float, dx: float, dt: float) -> CflResult:
    if diffusivity <= 0 or dx <= 0 or dt <= 0:
        raise ValueError(
            f"cfl_check needs positive arguments, got D={diffusivity}, "
            f"dx={dx}, dt={dt}")
    satisfied = diffusivity * dt <= 0.5 * dx * dx
    margin = 0.5 * dx * dx / dt - diffusivity
    return CflResult(satisfied, margin)


@dataclass(frozen=True)
class FdmGrid:
    dx: float
    dt: float
    diffusivity: float
    t_final: float
    initial: np.ndarray = field(repr=False)  # u(x, 0) on the x-lattice
    left: float = 0.0   # Dirichlet value at x = 0
    right: float = 0.0  # Dirichlet value at x = 1

    def __post_init__(self):
        if min(self.dx, self.dt, self.diffusivity, self.t_final) <= 0:
            raise ValueError("dx, dt, diffusivity and t_final must be > 0")
        if len(self.initial) != self.nx:
            raise ValueError(
                f"initial profile has {len(self.initial)} samples, lattice "
                f"needs {self.nx}")

    @property
    def nx(self) -> int:
        return _lattice_count(1.0, self.dx, "fdm x") + 1

    @property
    def nt(self) -> int:
        return _lattice_count(self.t_final, self.dt, "fdm t") + 1

    def x_lattice(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx)

    def t_lattice(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.nt)

    @classmethod
    def from_initial_fn(cls, dx, dt, diffusivity, t_final,
                        initial_fn: Callable | None = None, **kw) -> "FdmGrid":
        """Grid with a sampled initial profile (default sin(pi x))."""
        nx = _lattice_count(1.0, dx, "fdm x") + 1
        xs = np.linspace(0.0, 1.0, nx)
        if initial_fn is None:
            profile = np.sin(np.pi * xs)
        else:
            profile = np.asarray([initial_fn(x) for x in xs], dtype=float)
        return cls(dx, dt, diffusivity, t_final, profile, **kw)


@dataclass
class FdmSolution:
    surface: np.ndarray  # (nt, nx)
    diverged: bool
    first_divergent: tuple[int, int] | None  # (time level j, space index i)
    grid: FdmGrid


def fdm_solve(grid: FdmGrid) -> FdmSolution:
    """March the explicit scheme over the full lattice.

    Dirichlet boundaries are re-imposed every step. Values saturate at
    +-VALUE_CAP so the march always completes; the first lattice site
    whose magnitude passes DIVERGENCE_THRESHOLD (or goes non-finite) is
    recorded.
    """
    nx, nt = grid.nx, grid.nt
    r = grid.diffusivity * grid.dt / (grid.dx * grid.dx)
    surface = np.empty((nt, nx), dtype=np.float64)
    u = np.asarray(grid.initial, dtype=np.float64).copy()
    u[0], u[-1] = grid.left, grid.right
    surface[0] = u
    diverged = False
    first = None
    with np.errstate(all="ignore"):
        for j in range(1, nt):
            new = u.copy()
            new[1:-1] = u[1:-1] + r * (u[2:] - 2.0 * u[1:-1] + u[:-2])
            new[0], new[-1] = grid.left, grid.right
            if not diverged:
                bad = ~(np.abs(new) <= DIVERGENCE_THRESHOLD)  # catches NaN too
                if bad.any():
                    diverged = True
                    first = (j, int(np.argmax(bad)))
            np.clip(new, -VALUE_CAP, VALUE_CAP, out=new)
            new[np.isnan(new)] = VALUE_CAP
            surface[j] = new
            u = new
    return FdmSolution(surface, diverged, first, grid)


def fdm_mse(solution: FdmSolution, gt: HeatSurface) -> float:
    """Mean squared error of the surface against the exact solution.

    Squared errors saturate at VALUE_CAP, so diverged runs report a huge
    finite number instead of overflowing.
    """
    grid = solution.grid
    if gt.diffusivity != grid.diffusivity:
        raise ValueError(
            f"ground truth D={gt.diffusivity} does not match grid "
            f"D={grid.diffusivity}")
    xs = grid.x_lattice()
    ts = grid.t_lattice()
    exact = heat_exact(xs[None, :], ts[:, None], grid.diffusivity)
    with np.errstate(all="ignore"):
        sq = (solution.surface - exact) ** 2
        sq[~np.isfinite(sq)] = VALUE_CAP
        np.clip(sq, 0.0, VALUE_CAP, out=sq)
        return float(sq.mean())
