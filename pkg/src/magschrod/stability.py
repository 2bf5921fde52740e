"""Admissible potential pairs, initial-state sets and the paired forward runs
that measure Lipschitz stability ratios from Neumann data.

Perturbations carry a polynomial cutoff
``chi = prod_k (4 (x_k - a_k)(b_k - x_k) / L_k**2)**p`` so both members of a
pair agree with the reference potential on the boundary.  All profiles are
carried with closed-form gradients and Hessians.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .grid import (
    BoundarySubset,
    SpaceTimeGrid,
    gradient,
    l2_norm,
    neumann_trace,
    trace_norm,
)
from .solver import (
    CrankNicolson,
    ElectromagneticPotential,
    boundary_agreement,
    dirichlet_data_from_reference,
    magnetic_laplacian,
    solve_forward,
)
from .weights import CarlemanWeight, observation_boundary

CASES = ("case1", "case2", "case3", "case3-divfree")


class AdmissibilityError(ValueError):
    """A pair violates a structural condition; ``condition`` names it and
    ``node`` gives the offending grid index (if any)."""

    def __init__(self, message, condition, node=None):
        super().__init__(message)
        self.condition = condition
        self.node = node


class DegeneratePairError(ValueError):
    """Both members of the pair coincide."""


# -- smooth profiles ---------------------------------------------------------


class Profile(NamedTuple):
    """Scalar field with its gradient (``+(dim,)``) and Hessian
    (``+(dim, dim)``)."""

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    def __mul__(self, other):
        if not isinstance(other, Profile):
            return Profile(other * self.value, other * self.grad, other * self.hess)
        u, v = self, other
        outer = u.grad[..., :, None] * v.grad[..., None, :]
        return Profile(
            u.value * v.value,
            u.value[..., None] * v.grad + v.value[..., None] * u.grad,
            u.value[..., None, None] * v.hess
            + v.value[..., None, None] * u.hess
            + outer
            + np.swapaxes(outer, -1, -2),
        )

    __rmul__ = __mul__

    def __add__(self, other):
        return Profile(self.value + other.value, self.grad + other.grad, self.hess + other.hess)


def bracket(grid: SpaceTimeGrid) -> Profile:
    """``<x> = (1 + |x|**2)**0.5``."""
    x = grid.coords
    b = np.sqrt(1.0 + np.sum(x**2, axis=-1))
    eye = np.eye(grid.dim)
    hess = (eye - x[..., :, None] * x[..., None, :] / (b**2)[..., None, None]) / b[..., None, None]
    return Profile(b, x / b[..., None], hess)


def cutoff(grid: SpaceTimeGrid, power: int = 3) -> Profile:
    """Polynomial bump equal to 1 at the centre and 0 on the boundary.

    ``power >= 2`` makes the gradient vanish on the boundary and
    ``power >= 3`` the Hessian as well.
    """
    if power < 1 or int(power) != power:
        raise ValueError("cutoff power must be a positive integer")
    p = int(power)
    factors = []
    for k, ((a, b), x) in enumerate(zip(grid.extents, grid.axes)):
        L2 = (b - a) ** 2
        q = 4 * (x - a) * (b - x) / L2
        dq = 4 * (a + b - 2 * x) / L2
        d2q = -8 / L2
        f = q**p
        df = p * q ** (p - 1) * dq
        d2f = (p * (p - 1) * q ** (p - 2) * dq**2 if p >= 2 else 0.0) + p * q ** (p - 1) * d2q
        shape = [1] * grid.dim
        shape[k] = x.size
        factors.append(tuple(np.broadcast_to(np.reshape(z, shape), grid.shape) for z in (f, df, d2f)))
    value = np.prod([f for f, _, _ in factors], axis=0)
    grad = np.zeros(grid.shape + (grid.dim,))
    hess = np.zeros(grid.shape + (grid.dim, grid.dim))
    for i in range(grid.dim):
        for j in range(grid.dim):
            term = np.ones(grid.shape)
            for k, (f, df, d2f) in enumerate(factors):
                if i == j == k:
                    term = term * d2f
                elif k in (i, j):
                    term = term * df
                else:
                    term = term * f
            hess[..., i, j] = term
        term = np.ones(grid.shape)
        for k, (f, df, _) in enumerate(factors):
            term = term * (df if k == i else f)
        grad[..., i] = term
    return Profile(value, grad, hess)


def jacobian(grid: SpaceTimeGrid, Y: np.ndarray) -> np.ndarray:
    """Discrete ``J_Y[..., i, j] = d_i Y_j``."""
    return np.stack([gradient(grid, Y[..., j]) for j in range(grid.dim)], axis=-1)


# -- ratio conditions ------------------------------------------------------------


def _ratio(num: np.ndarray, den: np.ndarray, scale: float) -> np.ndarray:
    """Pointwise ``num / den`` with ``0/0 -> 0`` and ``x/0 -> inf``."""
    tiny = 1e-14 * max(scale, 1e-300)
    num = np.where(num <= tiny, 0.0, num)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(num == 0, 0.0, num / den)
    return np.where((num > 0) & (den == 0), np.inf, r)


def _check_ratio(cond: str, num, den, scale, M: Optional[float]) -> float:
    r = _ratio(num, den, scale)
    worst = np.unravel_index(int(np.argmax(r)), r.shape)
    m_eff = float(r[worst])
    if not np.isfinite(m_eff):
        raise AdmissibilityError(f"({cond}) violated at node {worst}: zero difference with nonzero gradient", cond, worst)
    if M is not None and m_eff > M:
        raise AdmissibilityError(f"({cond}) violated at node {worst}: ratio {m_eff:.3e} > M={M}", cond, worst)
    return m_eff


def check_c_el(d: Profile, M=None) -> float:
    """``|Im(conj(d) grad d)| <= M |d|**2``; returns the effective ``M``."""
    num = np.linalg.norm(np.imag(np.conj(d.value)[..., None] * d.grad), axis=-1)
    den = np.abs(d.value) ** 2
    return _check_ratio("c-el", num, den, float(np.max(den)), M)


def check_h_em(d_rho: Profile, d_A: Sequence[Profile], M=None) -> dict:
    """Logarithmic-gradient bounds on the differences of ``rho``, ``A`` and
    ``div A``; returns the effective ``M`` of each."""
    dim = d_rho.grad.shape[-1]
    out = {}
    out["h-em-a"] = _check_ratio(
        "h-em-a",
        np.linalg.norm(d_rho.grad, axis=-1),
        np.abs(d_rho.value),
        float(np.max(np.abs(d_rho.value))),
        M,
    )
    A_abs = np.sqrt(sum(np.abs(c.value) ** 2 for c in d_A))
    jac_rows = np.max(
        np.stack([sum(np.abs(c.grad[..., i]) for c in d_A) for i in range(dim)]), axis=0
    )
    out["h-em-b"] = _check_ratio("h-em-b", jac_rows, A_abs, float(np.max(A_abs)), M)
    div = sum(c.grad[..., j] for j, c in enumerate(d_A))
    grad_div = sum(c.hess[..., j, :] for j, c in enumerate(d_A))
    out["h-em-c"] = _check_ratio(
        "h-em-c",
        np.linalg.norm(grad_div, axis=-1),
        np.abs(div),
        float(np.max(np.abs(div))),
        M,
    )
    return out


# -- pairs -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PotentialPair:
    case: str
    pot1: ElectromagneticPotential
    pot2: ElectromagneticPotential
    delta: float
    effective_M: dict = field(default_factory=dict)
    degenerate: bool = False

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.pot1.grid

    def differences(self):
        """``(rho1 - rho2, A1 - A2, divA1 - divA2)``."""
        return self.pot1 - self.pot2

    def coefficient_norms(self) -> tuple[float, float, float]:
        d_rho, d_A, d_div = self.differences()
        g = self.grid
        return l2_norm(g, d_rho), l2_norm(g, d_A), l2_norm(g, d_div)


def _check_boundary(pair: PotentialPair, tol=1e-12):
    flags = boundary_agreement(pair.pot1, pair.pot2, tol)
    for name, ok in flags.items():
        if not ok:
            raise AdmissibilityError(f"pair disagrees on the boundary in {name}", f"boundary-{name}")


def _vector(prof_list, grid):
    return np.stack([p.value for p in prof_list], axis=-1)


def _divergence(prof_list):
    return sum(p.grad[..., j] for j, p in enumerate(prof_list))


def make_case1_pair(
    grid: SpaceTimeGrid,
    delta1: complex,
    delta2: complex,
    a: complex = 0.0,
    power: int = 3,
    M: Optional[float] = None,
    allow_degenerate: bool = False,
) -> PotentialPair:
    """``rho_j = a + delta_j chi <x>`` with zero magnetic potential.

    ``a = 0`` (default) also keeps the first-order compatibility of constant
    initial states with constant boundary data.
    """
    if delta1 == delta2 and not allow_degenerate:
        raise DegeneratePairError("delta1 == delta2 gives identical potentials")
    prof = cutoff(grid, power) * bracket(grid)
    rho1 = a + delta1 * prof.value
    rho2 = a + delta2 * prof.value
    d = prof * (delta1 - delta2)
    m_eff = {"c-el": check_c_el(d, M)}
    pair = PotentialPair(
        "case1",
        ElectromagneticPotential(grid, rho1),
        ElectromagneticPotential(grid, rho2),
        float(abs(delta1 - delta2)),
        m_eff,
        delta1 == delta2,
    )
    _check_boundary(pair)
    return pair


def case2_base(grid: SpaceTimeGrid, rho_amp=0.5 + 0.25j, A_amp=0.4, theta=0.3, power=3):
    """Reference potential vanishing (with ``div A``) on the boundary."""
    chi = cutoff(grid, power)
    direction = np.array([math.cos(theta), math.sin(theta)])[: grid.dim]
    A = [chi * (A_amp * c) for c in direction]
    return rho_amp * chi.value, A


def make_case2_pair(
    grid: SpaceTimeGrid,
    delta: float,
    p_coef: complex = 1.0 + 0.5j,
    b_coef: float = 1.0,
    power: int = 3,
    M: Optional[float] = None,
    allow_degenerate: bool = False,
    base=None,
) -> PotentialPair:
    """``(rho2, A2) = (rho1, A1) + delta chi (p_coef <x>, b_coef <x> e_1)``.

    The three logarithmic-gradient conditions are checked on the grid
    after the cutoff and their effective ``M`` recorded.
    """
    if delta == 0 and not allow_degenerate:
        raise DegeneratePairError("delta = 0 gives identical potentials")
    rho0, A0 = case2_base(grid, power=power) if base is None else base
    profile = cutoff(grid, power) * bracket(grid)
    d_rho = profile * (delta * p_coef)
    d_A = [profile * (delta * b_coef)] + [profile * 0.0 for _ in range(grid.dim - 1)]
    m_eff = check_h_em(d_rho, d_A, M) if delta != 0 else {}
    A1 = _vector(A0, grid)
    div1 = _divergence(A0)
    pot1 = ElectromagneticPotential(grid, rho0, A1, div1)
    pot2 = ElectromagneticPotential(
        grid,
        rho0 + d_rho.value,
        A1 + _vector(d_A, grid),
        div1 + _divergence(d_A),
    )
    pair = PotentialPair("case2", pot1, pot2, float(abs(delta)), m_eff, delta == 0)
    _check_boundary(pair)
    return pair


def _polar_field(r: Profile, theta: Profile):
    """``r (cos theta, sin theta)`` and its exact divergence."""
    c, s = np.cos(theta.value), np.sin(theta.value)
    A = np.stack([r.value * c, r.value * s], axis=-1)
    div = (
        r.grad[..., 0] * c
        + r.grad[..., 1] * s
        + r.value * (-s * theta.grad[..., 0] + c * theta.grad[..., 1])
    )
    return A, div


def make_case3_pair(
    grid: SpaceTimeGrid,
    delta: float,
    r_amp: float = 0.8,
    theta0: float = 0.3,
    power: int = 3,
    allow_degenerate: bool = False,
) -> PotentialPair:
    """Equal-strength magnetic potentials ``A_j = r (cos th_j, sin th_j)`` with
    ``r = r_amp chi`` and ``th_2 = th_1 + delta chi``; ``rho = 0``.

    Raises
    ------
    AdmissibilityError
        If the cutoff gradient does not vanish on the boundary (needed for
        the divergences to agree there), or the strengths differ.
    """
    if grid.dim != 2:
        raise ValueError("equal-strength direction pairs need a 2D grid")
    if delta == 0 and not allow_degenerate:
        raise DegeneratePairError("delta = 0 gives identical potentials")
    chi = cutoff(grid, power)
    if np.max(np.abs(chi.grad[grid.boundary_mask])) > 0:
        raise AdmissibilityError(
            "cutoff gradient must vanish on the boundary (use power >= 2)", "grad-chi-boundary"
        )
    r = chi * r_amp
    zero = Profile(np.zeros(grid.shape), np.zeros(grid.shape + (2,)), np.zeros(grid.shape + (2, 2)))
    th1 = zero + Profile(np.full(grid.shape, theta0), zero.grad, zero.hess)
    th2 = th1 + chi * delta
    A1, div1 = _polar_field(r, th1)
    A2, div2 = _polar_field(r, th2)
    gap = np.max(np.abs(np.linalg.norm(A1, axis=-1) - np.linalg.norm(A2, axis=-1)))
    if gap > 1e-12:
        raise AdmissibilityError(f"|A1| != |A2| (gap {gap:.2e})", "h-em2")
    pair = PotentialPair(
        "case3",
        ElectromagneticPotential(grid, 0.0, A1, div1),
        ElectromagneticPotential(grid, 0.0, A2, div2),
        float(abs(delta)),
        {"h-em2": float(gap)},
        delta == 0,
    )
    _check_boundary(pair)
    return pair


def make_divfree_pair(grid: SpaceTimeGrid, delta: float, power: int = 3, allow_degenerate=False):
    """``A_1 = delta curl(chi)``, ``A_2 = -A_1``: equal strength and
    ``div(A_1 - A_2) = 0``, so ``n`` measurements suffice."""
    if grid.dim != 2:
        raise ValueError("divergence-free pairs need a 2D grid")
    if delta == 0 and not allow_degenerate:
        raise DegeneratePairError("delta = 0 gives identical potentials")
    chi = cutoff(grid, power)
    A1 = delta * np.stack([chi.grad[..., 1], -chi.grad[..., 0]], axis=-1)
    zero = np.zeros(grid.shape)
    pair = PotentialPair(
        "case3-divfree",
        ElectromagneticPotential(grid, 0.0, A1, zero),
        ElectromagneticPotential(grid, 0.0, -A1, zero),
        float(abs(delta)),
        {"h-em2": 0.0},
        delta == 0,
    )
    _check_boundary(pair)
    return pair


# -- initial states ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InitialStateSet:
    states: tuple
    r0: float

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)


def make_initial_states(case: str, grid: SpaceTimeGrid, r0: float = 1.0, shift: float = 1.0) -> InitialStateSet:
    """Constant state ``r0`` and affine states ``x_j + shift``.

    ``case1`` uses the constant state alone; ``case3-divfree`` only the
    ``n`` affine states.  All states are real, so they serve Case 3 too.
    """
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    const = np.full(grid.shape, float(r0), dtype=complex)
    affine = [grid.coords[..., j] + shift + 0j for j in range(grid.dim)]
    if case == "case1":
        states = (const,)
    elif case == "case3-divfree":
        states = tuple(affine)
    else:
        states = (const, *affine)
    return InitialStateSet(states, float(r0))


def state_gradient_matrix(grid: SpaceTimeGrid, states: Sequence[np.ndarray]) -> np.ndarray:
    """``U0[..., i, j] = d_i u0^j`` for the affine states."""
    return np.stack([gradient(grid, u) for u in states], axis=-1)


def z_decomposition_ell1(grid: SpaceTimeGrid, A: np.ndarray, div_A: np.ndarray, u0: np.ndarray) -> np.ndarray:
    """``Im((2 A.grad u0 + div(A) u0)(2 J_A grad conj(u0) + conj(u0) grad div A))``."""
    gu = gradient(grid, u0)
    first = 2 * np.sum(A * gu, axis=-1) + div_A * u0
    JA = jacobian(grid, A)
    second = 2 * np.einsum("...ij,...j->...i", JA, np.conj(gu)) + np.conj(u0)[..., None] * gradient(grid, div_A)
    return np.imag(first[..., None] * second)


def jacobian_identity_residual(grid: SpaceTimeGrid, A1: np.ndarray, A2: np.ndarray) -> np.ndarray:
    """``J_S A + J_A S`` with ``S = A1 + A2`` and ``A = A1 - A2``."""
    S, A = A1 + A2, A1 - A2
    return np.einsum("...ij,...j->...i", jacobian(grid, S), A) + np.einsum(
        "...ij,...j->...i", jacobian(grid, A), S
    )


# -- experiments -------------------------------------------------------------------


def v0_formula(pair: PotentialPair, u0: np.ndarray) -> np.ndarray:
    """``-2 A.grad u0 - i (rho + (A1 + A2).A - i div A) u0``."""
    g = pair.grid
    d_rho, d_A, d_div = pair.differences()
    S = pair.pot1.A + pair.pot2.A
    gu = gradient(g, u0)
    return -2 * np.sum(d_A * gu, axis=-1) - 1j * (d_rho + np.sum(S * d_A, axis=-1) - 1j * d_div) * u0


def linearized_residual(pair: PotentialPair, v: np.ndarray, ut2: np.ndarray) -> float:
    """Relative residual of the equation solved by ``v = d_t(u1 - u2)``.

    Evaluated at time midpoints, where the Crank–Nicolson update is centred,
    so the residual isolates the spatial consistency of the discrete
    potentials with the pointwise operator.  Interior nodes only; scaled by
    ``||d_t v||``.
    """
    g = pair.grid
    p1 = pair.pot1
    d_rho, d_A, d_div = pair.differences()
    S = pair.pot1.A + pair.pot2.A
    dv = (v[1:] - v[:-1]) / g.tau
    v_mid = 0.5 * (v[1:] + v[:-1])
    w_mid = 0.5 * (ut2[1:] + ut2[:-1])
    lhs = -1j * dv - magnetic_laplacian(p1, v_mid) + p1.rho * v_mid
    rhs = 2j * np.sum(d_A * gradient(g, w_mid), axis=-1) - (
        d_rho + np.sum(S * d_A, axis=-1) - 1j * d_div
    ) * w_mid
    res = lhs - rhs
    res[:, g.boundary_mask] = 0
    dv[:, g.boundary_mask] = 0
    res_norm = float(np.sqrt(np.sum(np.abs(res) ** 2 * g.space_weights) * g.tau))
    scale = float(np.sqrt(np.sum(np.abs(dv) ** 2 * g.space_weights) * g.tau))
    return res_norm / scale if scale > 0 else res_norm


@dataclass
class StabilityReport:
    case: str
    delta: float
    h: float
    tau: float
    s: float
    lam: float
    norm_rho: float
    norm_A: float
    norm_divA: float
    obs_norms: tuple
    obs_norm: float
    ratio: float
    degenerate: bool = False
    violation: bool = False
    linearized_residual: float = float("nan")
    v0_residual: float = float("nan")
    effective_M: dict = field(default_factory=dict)
    v_fields: list = field(default_factory=list, repr=False)

    def row(self) -> tuple:
        return (
            self.case, self.delta, self.h, self.tau, self.s, self.lam,
            self.norm_rho, self.norm_A, self.norm_divA, self.obs_norm, self.ratio,
        )


STABILITY_COLUMNS = (
    "case", "delta", "h", "tau", "s", "lambda",
    "norm_rho", "norm_A", "norm_divA", "obs_norm", "ratio",
)


def _solve_all(pot, states, grid):
    stepper = CrankNicolson(pot)
    return [
        solve_forward(pot, u0, dirichlet_data_from_reference(pot, u0, grid), grid, stepper)
        for u0 in states
    ]


def run_stability(
    pair: PotentialPair,
    states: InitialStateSet,
    weight: CarlemanWeight,
    gamma0: Optional[BoundarySubset] = None,
    threads: int = 1,
    keep_fields: bool = False,
) -> StabilityReport:
    """Paired forward solves for every initial state and the resulting
    coefficient-to-observation ratio.

    The observation of state ``k`` is ``||d_nu v^k||`` on ``Gamma0 x (0, T)``
    with ``v^k = d_t(u_1^k - u_2^k)`` taken from the solver's differentiated
    system.  Ratio numerators: ``||rho||`` (case 1), ``||rho|| + ||A|| +
    ||div A||`` (case 2), ``||A|| + ||div A||`` (case 3 and its
    divergence-free variant).
    """
    grid = pair.grid
    gamma0 = observation_boundary(grid, weight) if gamma0 is None else gamma0
    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, 2)) as pool:
            sols1, sols2 = pool.map(lambda p: _solve_all(p, states, grid), (pair.pot1, pair.pot2))
    else:
        sols1 = _solve_all(pair.pot1, states, grid)
        sols2 = _solve_all(pair.pot2, states, grid)

    obs, lin, v0r, vs = [], [], [], []
    for u0, s1, s2 in zip(states, sols1, sols2):
        v = s1.ut - s2.ut
        obs.append(trace_norm(grid, neumann_trace(grid, v, gamma0), gamma0))
        lin.append(linearized_residual(pair, v, s2.ut))
        formula = v0_formula(pair, u0)
        f_norm = l2_norm(grid, formula)
        diff = l2_norm(grid, v[0] - formula)
        v0r.append(diff / f_norm if f_norm > 0 else diff)
        if keep_fields:
            vs.append(v)

    n_rho, n_A, n_div = pair.coefficient_norms()
    numer = {"case1": n_rho, "case2": n_rho + n_A + n_div}.get(pair.case, n_A + n_div)
    obs_sum = float(sum(obs))
    degenerate = numer == 0
    violation = (not degenerate) and obs_sum == 0
    ratio = numer / obs_sum if obs_sum > 0 else float("nan")
    return StabilityReport(
        pair.case, pair.delta, max(grid.h), grid.tau, weight.s, weight.lam,
        n_rho, n_A, n_div, tuple(obs), obs_sum, ratio, degenerate, violation,
        float(max(lin)), float(max(v0r)), dict(pair.effective_M), vs,
    )
