"""Crank–Nicolson solver for ``-i u_t - Delta_A u + rho u = 0`` with Dirichlet
data, i.e. ``u_t = -i H u`` with ``H = -Delta_A + rho`` and

    Delta_A f = Delta f + 2i A . grad f + i (div A) f - |A|**2 f.

The assembled ``H`` writes the first-order part as
``i (D_k A_k + A_k D_k)`` (product rule), which is consistent with the
expanded form above and keeps the interior block Hermitian whenever ``rho``
and ``A`` are real, so the time stepping is exactly unitary in that case.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import SpaceTimeGrid, divergence, gradient, laplacian

COMPAT_TOL = 1e-10


class CompatibilityError(ValueError):
    """Initial state and Dirichlet data disagree on the boundary at ``t = 0``."""


class SolverError(RuntimeError):
    """The Crank–Nicolson system could not be factorized."""


@dataclass(frozen=True, eq=False)
class ElectromagneticPotential:
    """Electric potential ``rho`` (complex) and magnetic potential ``A`` (real).

    ``div_A`` defaults to the discrete divergence of ``A``; pass it explicitly
    when a closed form is available.  When ``M`` is given, ``max|rho|`` and
    ``max|A|`` must not exceed it.
    """

    grid: SpaceTimeGrid
    rho: np.ndarray
    A: Optional[np.ndarray] = None
    div_A: Optional[np.ndarray] = None
    M: Optional[float] = None

    def __post_init__(self):
        g = self.grid
        rho = np.broadcast_to(np.asarray(self.rho, dtype=complex), g.shape).copy()
        if self.A is None:
            A = np.zeros(g.shape + (g.dim,))
        else:
            A = np.asarray(self.A)
            if np.iscomplexobj(A):
                if np.any(A.imag != 0):
                    raise ValueError("magnetic potential A must be real")
                A = A.real
            A = np.broadcast_to(A.astype(float), g.shape + (g.dim,)).copy()
        div_A = divergence(g, A) if self.div_A is None else np.asarray(self.div_A, float)
        div_A = np.broadcast_to(div_A, g.shape).copy()
        for name, arr in (("rho", rho), ("A", A), ("div_A", div_A)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        if self.M is not None:
            if np.max(np.abs(rho)) > self.M or np.max(np.linalg.norm(A, axis=-1)) > self.M:
                raise ValueError(f"potential exceeds the admissibility bound M={self.M}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "div_A", div_A)

    @classmethod
    def zero(cls, grid: SpaceTimeGrid) -> "ElectromagneticPotential":
        return cls(grid, np.zeros(grid.shape))

    @property
    def is_self_adjoint(self) -> bool:
        return not np.any(self.rho.imag)

    @cached_property
    def hamiltonian(self) -> sp.csr_matrix:
        return hamiltonian_matrix(self)

    def __sub__(self, other: "ElectromagneticPotential"):
        """Differences ``(rho1 - rho2, A1 - A2, divA1 - divA2)``."""
        return (self.rho - other.rho, self.A - other.A, self.div_A - other.div_A)


def boundary_agreement(p1: ElectromagneticPotential, p2: ElectromagneticPotential, tol=1e-12):
    """Flags for ``rho``, ``A`` and ``div A`` agreeing on every boundary node."""
    b = p1.grid.boundary_mask
    d_rho, d_A, d_div = p1 - p2
    return {
        "rho": bool(np.max(np.abs(d_rho[b]), initial=0) <= tol),
        "A": bool(np.max(np.abs(d_A[b]), initial=0) <= tol),
        "div_A": bool(np.max(np.abs(d_div[b]), initial=0) <= tol),
    }


# -- operators -----------------------------------------------------------------


def _d1(n: int, h: float) -> sp.csr_matrix:
    """Matrix of ``np.gradient(f, h, edge_order=2)``."""
    main = np.zeros(n)
    up = np.full(n - 1, 0.5)
    lo = np.full(n - 1, -0.5)
    D = sp.diags([lo, main, up], [-1, 0, 1], format="lil")
    D[0, :3] = [-1.5, 2.0, -0.5]
    D[n - 1, n - 3:] = [0.5, -2.0, 1.5]
    return (D / h).tocsr()


def _d2(n: int, h: float) -> sp.csr_matrix:
    """Matrix of the 3-point second difference with one-sided end rows."""
    D = sp.diags([np.ones(n - 1), np.full(n, -2.0), np.ones(n - 1)], [-1, 0, 1], format="lil")
    D[0, :4] = [2.0, -5.0, 4.0, -1.0]
    D[n - 1, n - 4:] = [-1.0, 4.0, -5.0, 2.0]
    return (D / h**2).tocsr()


def _axis_operator(grid: SpaceTimeGrid, k: int, op) -> sp.csr_matrix:
    mats = [sp.identity(n, format="csr") for n in grid.nx]
    mats[k] = op(grid.nx[k], grid.h[k])
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def difference_matrices(grid: SpaceTimeGrid):
    """Sparse gradient components and Laplacian acting on C-order flattened
    spatial fields."""
    D = [_axis_operator(grid, k, _d1) for k in range(grid.dim)]
    lap = sum(_axis_operator(grid, k, _d2) for k in range(grid.dim))
    return D, lap.tocsr()


def hamiltonian_matrix(pot: ElectromagneticPotential) -> sp.csr_matrix:
    """Full-node matrix of ``H = -Delta_A + rho``."""
    D, lap = difference_matrices(pot.grid)
    first = 0
    for k, Dk in enumerate(D):
        Ak = sp.diags(pot.A[..., k].ravel())
        first = first + Dk @ Ak + Ak @ Dk
    A2 = np.sum(pot.A**2, axis=-1).ravel()
    H = -lap - 1j * first + sp.diags(A2 + pot.rho.ravel())
    return sp.csr_matrix(H, dtype=complex)


def magnetic_laplacian(pot: ElectromagneticPotential, f: np.ndarray) -> np.ndarray:
    """``Delta f + 2i A . grad f + i (div A) f - |A|**2 f``, pointwise."""
    g = pot.grid
    f = g.check_spatial(np.asarray(f, dtype=complex), "f")
    grad_f = gradient(g, f)
    return (
        laplacian(g, f)
        + 2j * np.sum(pot.A * grad_f, axis=-1)
        + 1j * pot.div_A * f
        - np.sum(pot.A**2, axis=-1) * f
    )


def apply_hamiltonian(pot: ElectromagneticPotential, f: np.ndarray) -> np.ndarray:
    """``H f`` with the assembled matrix; leading axes are batch axes."""
    g = pot.grid
    f = g.check_spatial(np.asarray(f, dtype=complex), "f")
    lead = f.shape[: f.ndim - g.dim]
    flat = f.reshape(-1, int(np.prod(g.shape)))
    return (pot.hamiltonian @ flat.T).T.reshape(lead + g.shape)


# -- forward problem -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    """Solution ``u``, its time derivative ``ut`` (both ``grid.st_shape``),
    the imposed boundary data ``g`` (``(nt, n_boundary)``, ordered like
    ``grid.boundary_nodes``) and the initial state."""

    grid: SpaceTimeGrid
    u: np.ndarray
    ut: np.ndarray
    g: np.ndarray
    u0: np.ndarray

    def norms(self) -> np.ndarray:
        """``||u(., t_m)||_{L2}`` for every time level."""
        w = self.grid.space_weights
        axes = tuple(range(1, self.u.ndim))
        return np.sqrt(np.sum(np.abs(self.u) ** 2 * w, axis=axes))


def dirichlet_data_from_reference(pot, u0: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Time-independent data ``g(x, t) = u0(x)`` on the boundary.

    ``pot`` is accepted for interface symmetry: admissible pairs agree on
    the boundary, so this ``g`` is compatible for both members of a pair.
    """
    u0 = grid.check_spatial(np.asarray(u0, dtype=complex), "u0")
    gb = u0.ravel()[grid.boundary_nodes]
    return np.tile(gb, (grid.nt, 1))


def _boundary_time_derivative(grid: SpaceTimeGrid, g: np.ndarray) -> np.ndarray:
    if np.all(g == g[0]):
        return np.zeros_like(g)
    return np.gradient(g, grid.tau, axis=0, edge_order=2)


def compatibility_residual(grid: SpaceTimeGrid, u0: np.ndarray, g: np.ndarray) -> float:
    """``max |g(., 0) - u0|`` over boundary nodes."""
    return float(np.max(np.abs(g[0] - np.asarray(u0).ravel()[grid.boundary_nodes])))


def compatibility_residual_k1(pot: ElectromagneticPotential, u0: np.ndarray, g: np.ndarray) -> float:
    """``max |g_t(., 0) + i H u0|`` over boundary nodes, with ``H u0`` from the
    pointwise magnetic Laplacian (one-sided stencils on the boundary)."""
    grid = pot.grid
    u0 = np.asarray(u0, dtype=complex)
    Hu0 = -magnetic_laplacian(pot, u0) + pot.rho * u0
    gt0 = _boundary_time_derivative(grid, g)[0]
    return float(np.max(np.abs(gt0 + 1j * Hu0.ravel()[grid.boundary_nodes])))


class CrankNicolson:
    """Factorized Crank–Nicolson stepper for one potential.

    The interior matrix ``I + (i tau/2) H_II`` is LU-factorized once
    (SuperLU); each step is then one sparse triangular solve pair.
    """

    def __init__(self, pot: ElectromagneticPotential):
        grid = pot.grid
        self.grid = grid
        self.pot = pot
        H = pot.hamiltonian
        I_, B_ = grid.interior_nodes, grid.boundary_nodes
        self.H_II = H[I_][:, I_].tocsc()
        self.H_IB = H[I_][:, B_].tocsr()
        half = 0.5j * grid.tau
        eye = sp.identity(I_.size, dtype=complex, format="csc")
        try:
            self._lu = splu((eye + half * self.H_II).tocsc())
        except RuntimeError as exc:
            raise SolverError(f"Crank-Nicolson matrix is singular: {exc}") from exc
        self._explicit = (eye - half * self.H_II).tocsr()
        self._half = half

    def march(self, start_interior: np.ndarray, boundary: np.ndarray) -> np.ndarray:
        """Advance interior values through all time levels.

        ``boundary`` holds the Dirichlet values at every level, shape
        ``(nt, n_boundary)``.  Returns the full ``(nt, n_nodes)`` history.
        """
        grid = self.grid
        n = int(np.prod(grid.shape))
        out = np.empty((grid.nt, n), dtype=complex)
        I_, B_ = grid.interior_nodes, grid.boundary_nodes
        out[:, B_] = boundary
        x = np.asarray(start_interior, dtype=complex)
        out[0, I_] = x
        forcing = self.H_IB @ (boundary[1:] + boundary[:-1]).T
        for m in range(grid.nt - 1):
            rhs = self._explicit @ x - self._half * forcing[:, m]
            x = self._lu.solve(rhs)
            out[m + 1, I_] = x
        return out


def solve_forward(
    pot: ElectromagneticPotential,
    u0: np.ndarray,
    g: Optional[np.ndarray] = None,
    grid: Optional[SpaceTimeGrid] = None,
    stepper: Optional[CrankNicolson] = None,
) -> ForwardSolution:
    """Solve the Dirichlet problem and its time-differentiated companion.

    ``ut`` solves the same scheme started from ``-i H u0`` (interior) with
    boundary values ``g_t``; it is not a difference quotient of ``u``.

    Raises
    ------
    CompatibilityError
        If ``g(., 0)`` and ``u0`` differ on the boundary by more than
        ``1e-10`` relative to ``max |u0|``.
    """
    grid = pot.grid if grid is None else grid
    if grid is not pot.grid and grid.st_shape != pot.grid.st_shape:
        raise ValueError("potential and grid do not match")
    u0 = grid.check_spatial(np.asarray(u0, dtype=complex), "u0")
    if g is None:
        g = dirichlet_data_from_reference(pot, u0, grid)
    g = np.asarray(g, dtype=complex)
    if g.shape != (grid.nt, grid.boundary_nodes.size):
        raise ValueError(f"g must have shape {(grid.nt, grid.boundary_nodes.size)}")
    scale = max(1.0, float(np.max(np.abs(u0))))
    res = compatibility_residual(grid, u0, g)
    if res > COMPAT_TOL * scale:
        raise CompatibilityError(f"g(., 0) != u0 on the boundary (residual {res:.3e})")

    cn = CrankNicolson(pot) if stepper is None else stepper
    I_ = grid.interior_nodes
    u = cn.march(u0.ravel()[I_], g)
    gt = _boundary_time_derivative(grid, g)
    z0 = -1j * (pot.hamiltonian @ u0.ravel())[I_]
    ut = cn.march(z0, gt)
    st = grid.st_shape
    return ForwardSolution(grid, u.reshape(st), ut.reshape(st), g, u0)
