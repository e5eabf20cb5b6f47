"""Discrete-time propagation of the sampled diffusion model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .galerkin import DiscreteTimeSystem, ParameterVector


@dataclass(frozen=True, eq=False)
class SimulationResult:
    y: np.ndarray  # TAC at steps 1..n
    x_final: np.ndarray
    q: ParameterVector
    tau: float

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(1, len(self.y) + 1)


def simulate_tac(sys: DiscreteTimeSystem, u, x0=None) -> SimulationResult:
    """Run x_k = A_hat x_{k-1} + B_hat u_{k-1}, y_k = C x_k for k = 1..n.

    ``u`` holds the inputs u_0..u_{n-1}; ``x0`` defaults to the zero state.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise ValueError("u must be a one-dimensional held input series")
    if not np.all(np.isfinite(u)):
        raise ValueError("u must be finite")
    if x0 is None:
        x = np.zeros(sys.dim)
    else:
        x = np.array(x0, dtype=float)
        if x.shape != (sys.dim,):
            raise ValueError(f"x0 has shape {x.shape}, system state has dimension {sys.dim}")

    a_hat, b_hat, c_hat = sys.a_hat, sys.b_hat, sys.c_hat
    y = np.empty(len(u))
    for k, uk in enumerate(u):
        x = a_hat @ x + b_hat * uk
        y[k] = c_hat @ x
    return SimulationResult(y, x, sys.q, sys.tau)


def simulate_many(sys: DiscreteTimeSystem, inputs: np.ndarray) -> np.ndarray:
    """Zero-state outputs for several input series at once.

    ``inputs`` is (n_series, n_steps); shorter series should be zero padded,
    which leaves their earlier outputs untouched by causality.
    """
    U = np.atleast_2d(np.asarray(inputs, dtype=float))
    n_series, n_steps = U.shape
    X = np.zeros((sys.dim, n_series))
    Y = np.empty((n_series, n_steps))
    b = sys.b_hat[:, None]
    for k in range(n_steps):
        X = sys.a_hat @ X + b * U[:, k]
        Y[:, k] = sys.c_hat @ X
    return Y


def superposition_check(
    sys: DiscreteTimeSystem,
    u1,
    u2,
    x0a,
    x0b,
    alpha: float = 1.0,
    beta: float = 1.0,
    rtol: float = 1e-10,
) -> bool:
    """Check sim(alpha u1 + beta u2, alpha x0a + beta x0b) against the combination of sims."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    x0a = np.asarray(x0a, dtype=float)
    x0b = np.asarray(x0b, dtype=float)
    with np.errstate(all="ignore"):
        try:
            combined = simulate_tac(sys, alpha * u1 + beta * u2, alpha * x0a + beta * x0b).y
            ya = simulate_tac(sys, u1, x0a).y
            yb = simulate_tac(sys, u2, x0b).y
        except ValueError:
            return False
        expected = alpha * ya + beta * yb
        if not (np.all(np.isfinite(combined)) and np.all(np.isfinite(expected))):
            return False
        scale = max(1.0, float(np.max(np.abs(expected), initial=0.0)))
        return bool(np.max(np.abs(combined - expected), initial=0.0) <= rtol * scale)
