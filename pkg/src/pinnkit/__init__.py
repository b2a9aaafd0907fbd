"""pinnkit: physics-informed neural networks for polynomial ODEs and 1-D heat.

From-scratch scalar autodiff with differentiable backward passes, a small
tanh MLP, Adam, problem/loss definitions, deterministic data generation,
an explicit finite-difference reference solver, a training loop, and an
experiment harness with a CLI.
"""

__version__ = "0.1.0"

from .tape import Tape, Var, grad, nth_derivative, checkpoint, rollback
from .program import Program

__all__ = [
    "Tape", "Var", "grad", "nth_derivative", "checkpoint", "rollback",
    "Program", "__version__",
]
