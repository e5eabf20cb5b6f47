"""Linear-spline Galerkin model of ethanol diffusion through the epidermis.

The skin layer is the unit interval, eta = 0 at the surface and eta = 1 at
the dermal boundary.  With concentration x(t, eta):

    x_t = q1 * x_etaeta
    q1 * x_eta(t, 0) = x(t, 0)        (surface evaporation)
    q1 * x_eta(t, 1) = q2 * u(t)      (flux from blood, u = BrAC)
    y(t) = x(t, 0)                    (TAC read at the surface)

Projecting the weak form onto hat functions over a uniform mesh of N
subintervals gives M x' = -(q1 K1 + E00) x + q2 e_in u, y = e_out . x.
Sampling under a zero-order hold then yields x_k = A_hat x_{k-1} + B_hat u_{k-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

MAX_MESH = 512

# Pade coefficients and 1-norm thresholds, Higham (2005).
_PADE_COEFFS = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0,
    ),
    13: (
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
        16380.0, 182.0, 1.0,
    ),
}
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


@dataclass(frozen=True)
class ParameterVector:
    """Random model parameters: normalized diffusivity and flux gain."""

    q1: float
    q2: float

    def __post_init__(self):
        for name in ("q1", "q2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")

    def __iter__(self):
        yield self.q1
        yield self.q2

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2])


def as_parameter(q) -> ParameterVector:
    if isinstance(q, ParameterVector):
        return q
    q1, q2 = q
    return ParameterVector(float(q1), float(q2))


@dataclass(frozen=True, eq=False)
class GalerkinSystem:
    """Parameter-independent mesh matrices for N subintervals of [0, 1].

    Node 0 sits at the skin surface (eta = 0), node N at the dermal
    boundary (eta = 1).
    """

    n_mesh: int
    mass: np.ndarray
    stiff_diffusion: np.ndarray
    boundary_evap: np.ndarray
    input_vec: np.ndarray
    output_vec: np.ndarray
    _mass_factor: tuple = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n_mesh

    @property
    def dim(self) -> int:
        return self.n_mesh + 1

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self._mass_factor, rhs)


@dataclass(frozen=True, eq=False)
class DiscreteTimeSystem:
    a_hat: np.ndarray
    b_hat: np.ndarray
    c_hat: np.ndarray
    tau: float
    q: ParameterVector

    @property
    def dim(self) -> int:
        return self.a_hat.shape[0]


def assemble_galerkin(n_mesh: int) -> GalerkinSystem:
    """Assemble mass, stiffness and boundary terms for hat functions."""
    if int(n_mesh) != n_mesh or n_mesh < 2:
        raise ValueError(f"n_mesh must be an integer >= 2, got {n_mesh!r}")
    if n_mesh > MAX_MESH:
        raise ValueError(f"n_mesh capped at {MAX_MESH}, got {n_mesh}")
    n = int(n_mesh)
    h = 1.0 / n
    dim = n + 1

    mass = np.zeros((dim, dim))
    stiff = np.zeros((dim, dim))
    # element-by-element: each [eta_e, eta_e+1] contributes a 2x2 block
    local_mass = (h / 6.0) * np.array([[2.0, 1.0], [1.0, 2.0]])
    local_stiff = (1.0 / h) * np.array([[1.0, -1.0], [-1.0, 1.0]])
    for e in range(n):
        idx = np.ix_([e, e + 1], [e, e + 1])
        mass[idx] += local_mass
        stiff[idx] += local_stiff

    evap = np.zeros((dim, dim))
    evap[0, 0] = 1.0
    e_in = np.zeros(dim)
    e_in[-1] = 1.0
    e_out = np.zeros(dim)
    e_out[0] = 1.0

    factor = cho_factor(mass, lower=False)
    for arr in (mass, stiff, evap, e_in, e_out):
        arr.setflags(write=False)
    return GalerkinSystem(n, mass, stiff, evap, e_in, e_out, factor)


def continuous_operators(g: GalerkinSystem, q) -> tuple[np.ndarray, np.ndarray]:
    """Return (A, B) with A = -M^-1 (q1 K1 + E00) and B = q2 M^-1 e_in."""
    q = as_parameter(q)
    A = -g.solve_mass(q.q1 * g.stiff_diffusion + g.boundary_evap)
    B = q.q2 * g.solve_mass(g.input_vec)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise FloatingPointError("mass solve produced non-finite operators")
    return A, B


def _pade_terms(A: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE_COEFFS[degree]
    ident = np.eye(A.shape[0])
    A2 = A @ A
    if degree == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        U = A @ (
            A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
            + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident
        )
        V = (
            A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
            + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
        )
        return U, V
    powers = [ident, A2]
    while len(powers) <= degree // 2:
        powers.append(powers[-1] @ A2)
    U = A @ sum(b[2 * k + 1] * powers[k] for k in range(degree // 2 + 1))
    V = sum(b[2 * k] * powers[k] for k in range(degree // 2 + 1))
    return U, V


def matrix_exponential(A: np.ndarray) -> np.ndarray:
    """exp(A) by scaling and squaring with a diagonal Pade approximant.

    Degree and scaling follow Higham's 2005 thresholds on the 1-norm.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if A.shape[0] == 0:
        return A.copy()

    norm = np.linalg.norm(A, 1)
    for degree in (3, 5, 7, 9):
        if norm <= _THETA[degree]:
            U, V = _pade_terms(A, degree)
            squarings = 0
            break
    else:
        squarings = max(0, math.ceil(math.log2(norm / _THETA[13])))
        U, V = _pade_terms(A / 2.0**squarings, 13)

    with np.errstate(over="raise", invalid="raise"):
        try:
            R = np.linalg.solve(V - U, V + U)
            for _ in range(squarings):
                R = R @ R
        except FloatingPointError as exc:
            raise OverflowError("matrix exponential overflowed") from exc
    if not np.all(np.isfinite(R)):
        raise OverflowError("matrix exponential overflowed")
    return R


def discretize(A: np.ndarray, B: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold sampling: A_hat = e^{A tau}, B_hat = int_0^tau e^{As} B ds.

    Both come from one exponential of the augmented matrix [[A, B], [0, 0]] tau,
    so no solve with A is needed.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if tau < 0 or not math.isfinite(tau):
        raise ValueError(f"tau must be finite and >= 0, got {tau!r}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("A and B must be finite")
    n = A.shape[0]
    B2 = B.reshape(n, -1)
    k = B2.shape[1]
    aug = np.zeros((n + k, n + k))
    aug[:n, :n] = A * tau
    aug[:n, n:] = B2 * tau
    E = matrix_exponential(aug)
    a_hat = E[:n, :n]
    b_hat = E[:n, n:].reshape(B.shape)
    return a_hat, b_hat


def build_system(g: GalerkinSystem, q, tau: float) -> DiscreteTimeSystem:
    q = as_parameter(q)
    A, B = continuous_operators(g, q)
    a_hat, b_hat = discretize(A, B, tau)
    return DiscreteTimeSystem(a_hat, b_hat, g.output_vec, float(tau), q)


def dump_matrices(g: GalerkinSystem, directory: str | Path) -> list[Path]:
    """Write the assembled matrices as CSV files for inspection."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name in ("mass", "stiff_diffusion", "boundary_evap", "input_vec", "output_vec"):
        path = directory / f"{name}_N{g.n_mesh}.csv"
        np.savetxt(path, np.atleast_2d(getattr(g, name)), delimiter=",", fmt="%.17g")
        out.append(path)
    return out
