"""Both sides of the global Carleman estimate for ``L = -i d_t - Delta`` and
the initial-slice estimate used by the Bukhgeim–Klibanov argument.

Operators act on space-time fields and return values on interior spatial
nodes (boundary nodes hold zero).  Weighted space-time quadratures drop the
final time slice, where ``exp(s alpha)`` vanishes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import (
    BoundarySubset,
    SpaceTimeGrid,
    gradient,
    integrate_space,
    integrate_spacetime,
    laplacian,
    neumann_trace,
    time_derivative,
    trace_norm,
)
from .weights import CarlemanWeight, WeightFields, observation_boundary

TERM_NAMES = (
    "R1_w",
    "R2_w",
    "s_grad_u",
    "s3_u",
    "Lu",
    "boundary",
    "sZ",
)


def _interior_only(grid: SpaceTimeGrid, f: np.ndarray) -> np.ndarray:
    f = np.array(f, copy=True)
    f[..., grid.boundary_mask] = 0
    return f


def _open_time_weights(grid: SpaceTimeGrid) -> np.ndarray:
    tw = grid.time_weights.copy()
    tw[-1] = 0.0
    return tw


def weighted_sq_norm(grid: SpaceTimeGrid, f: np.ndarray) -> float:
    """``int_Q |f|**2`` without the final time slice; vector fields allowed."""
    sq = np.abs(f) ** 2
    if sq.ndim == grid.dim + 2:
        sq = sq.sum(axis=-1)
    return float(integrate_spacetime(grid, sq, _open_time_weights(grid)))


def apply_L(grid: SpaceTimeGrid, u: np.ndarray) -> np.ndarray:
    """``-i u_t - Delta u``."""
    u = grid.check_spacetime(np.asarray(u, dtype=complex), "u")
    return _interior_only(grid, -1j * time_derivative(grid, u) - laplacian(grid, u))


def apply_R1(grid: SpaceTimeGrid, w: np.ndarray, wf: WeightFields, s: float) -> np.ndarray:
    """``-i w_t - Delta w - s**2 |grad alpha|**2 w``."""
    w = grid.check_spacetime(np.asarray(w, dtype=complex), "w")
    ga2 = np.sum(wf.grad_alpha**2, axis=-1)
    out = -1j * time_derivative(grid, w) - laplacian(grid, w) - s**2 * ga2 * w
    return _interior_only(grid, out)


def apply_R2(grid: SpaceTimeGrid, w: np.ndarray, wf: WeightFields, s: float) -> np.ndarray:
    """``2 s grad alpha . grad w + s (Delta alpha) w``."""
    w = grid.check_spacetime(np.asarray(w, dtype=complex), "w")
    out = 2 * s * np.sum(wf.grad_alpha * gradient(grid, w), axis=-1) + s * wf.lap_alpha * w
    return _interior_only(grid, out)


def decomposition_residual(
    u: np.ndarray, weight: CarlemanWeight, s: float
) -> tuple[float, float]:
    """Residual of ``e^{s alpha} L u = i s alpha_t w + R1 w + R2 w`` with
    ``w = u e^{s alpha}``.

    The field is supplied as ``u`` (not ``w``) because ``e^{-s alpha}``
    overflows near ``t = T``.  The weight is normalized by its maximum at
    ``t = 0``, which rescales every term alike.

    Returns
    -------
    residual, scale : float
        ``||residual||_{L2(Q)}`` and ``||w||_{L2(Q)}``.
    """
    grid = weight.grid
    wf = weight.fields(s, normalize=True)
    w = u * wf.exp_sa
    lhs = wf.exp_sa * apply_L(grid, u)
    rhs = (
        _interior_only(grid, 1j * s * wf.dt_alpha * w)
        + apply_R1(grid, w, wf, s)
        + apply_R2(grid, w, wf, s)
    )
    return np.sqrt(weighted_sq_norm(grid, lhs - rhs)), np.sqrt(weighted_sq_norm(grid, w))


def compute_Z(u0: np.ndarray, weight: CarlemanWeight, s: Optional[float] = None) -> float:
    """``int e^{2 s alpha(x,0)} |conj(u0) grad beta . grad u0 - c.c.| dx``.

    The integrand equals ``2 |Im(conj(u0) grad beta . grad u0)|``, which is
    exactly zero for real or purely imaginary samples.
    """
    grid = weight.grid
    s = weight.s if s is None else float(s)
    u0 = grid.check_spatial(np.asarray(u0, dtype=complex), "u0")
    db = np.sum(weight.grad_beta * gradient(grid, u0), axis=-1)
    integrand = 2.0 * np.abs(np.imag(np.conj(u0) * db))
    e0 = np.exp(2 * s * weight.alpha_at(0))
    return float(integrate_space(grid, e0 * integrand))


@dataclass
class CarlemanReport:
    """Per-``s`` terms of the estimate.

    ``terms`` has shape ``(len(s), 7)`` in the order of :data:`TERM_NAMES`;
    ``C_hat = (t1 + t2 + t3 + t4) / (t5 + t6 + t7)``.
    """

    s: np.ndarray
    terms: np.ndarray
    C_hat: np.ndarray
    violations: np.ndarray
    stable_from: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def lhs(self) -> np.ndarray:
        return self.terms[:, :4].sum(axis=1)

    @property
    def rhs(self) -> np.ndarray:
        return self.terms[:, 4:].sum(axis=1)

    @property
    def ok(self) -> np.ndarray:
        return ~self.violations

    def rows(self):
        for k, s in enumerate(self.s):
            yield (float(s), *map(float, self.terms[k]), float(self.C_hat[k]), bool(self.ok[k]))


CARLEMAN_COLUMNS = ("s",) + tuple(f"term{k}" for k in range(1, 8)) + ("C_hat", "ok")


def carleman_terms(
    u: np.ndarray, weight: CarlemanWeight, s: float, gamma0: BoundarySubset
) -> np.ndarray:
    grid = weight.grid
    wf = weight.fields(s)
    w = u * wf.exp_sa
    e2 = wf.exp_sa[..., None]
    return np.array(
        [
            weighted_sq_norm(grid, apply_R1(grid, w, wf, s)),
            weighted_sq_norm(grid, apply_R2(grid, w, wf, s)),
            s * weighted_sq_norm(grid, e2 * gradient(grid, u)),
            s**3 * weighted_sq_norm(grid, w),
            weighted_sq_norm(grid, wf.exp_sa * apply_L(grid, u)),
            trace_norm(grid, neumann_trace(grid, u, gamma0), gamma0) ** 2,
            s * compute_Z(u[0], weight, s),
        ]
    )


def _nonincreasing_from(s: np.ndarray, c: np.ndarray) -> Optional[float]:
    """Smallest ``s[k]`` such that ``c[k:]`` is non-increasing."""
    if c.size == 0:
        return None
    k = c.size - 1
    while k > 0 and c[k - 1] >= c[k]:
        k -= 1
    return float(s[k])


def verify_carleman(
    u: np.ndarray,
    weight: CarlemanWeight,
    s_grid: Sequence[float],
    gamma0: Optional[BoundarySubset] = None,
    boundary_tol: float = 1e-12,
) -> CarlemanReport:
    """Evaluate the seven terms of the estimate for every ``s``.

    ``u`` must vanish on the spatial boundary at all times.  A right-hand
    side of zero with a positive left-hand side is reported as a violation.
    """
    grid = weight.grid
    u = grid.check_spacetime(np.asarray(u, dtype=complex), "u")
    scale = max(1.0, float(np.max(np.abs(u))))
    if np.max(np.abs(u[:, grid.boundary_mask]), initial=0.0) > boundary_tol * scale:
        raise ValueError("u must vanish on the boundary")
    gamma0 = observation_boundary(grid, weight) if gamma0 is None else gamma0
    s_arr = np.asarray(s_grid, dtype=float)
    terms = np.array([carleman_terms(u, weight, s, gamma0) for s in s_arr]).reshape(-1, 7)
    lhs, rhs = terms[:, :4].sum(axis=1), terms[:, 4:].sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        c_hat = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.where(lhs > 0, np.inf, 0.0))
    violations = ~np.isfinite(c_hat)
    return CarlemanReport(
        s_arr, terms, c_hat, violations, _nonincreasing_from(s_arr, c_hat),
        meta={"lambda": weight.lam, "h": grid.h, "tau": grid.tau},
    )


def geometric_s_grid(s_min: float = 1.0, s_max: float = 100.0, count: int = 12) -> np.ndarray:
    return np.geomspace(s_min, s_max, count)


@dataclass(frozen=True)
class InitialBound:
    lhs: float
    rhs: float
    ok: bool


def verify_initial_bound(
    v: np.ndarray, weight: CarlemanWeight, s: float, slack: float = 10.0, scale: float = 1.0
) -> InitialBound:
    """Check ``||e^{s alpha(0)} v(0)||**2 <= s^{-3/2} (||R1 w||**2 + s**3 ||w||**2)``
    with ``w = v e^{s alpha}`` and constant one.

    Accepts when ``lhs <= rhs * (1 + slack * (h**2 + tau**2) * scale)``.
    Both sides are computed with the weight normalized by its maximum at
    ``t = 0``; the inequality is homogeneous in that factor.
    """
    grid = weight.grid
    v = grid.check_spacetime(np.asarray(v, dtype=complex), "v")
    wf = weight.fields(s, normalize=True)
    w = v * wf.exp_sa
    lhs = float(integrate_space(grid, np.abs(w[0]) ** 2))
    rhs = s**-1.5 * (
        weighted_sq_norm(grid, apply_R1(grid, w, wf, s)) + s**3 * weighted_sq_norm(grid, w)
    )
    tol = slack * (max(grid.h) ** 2 + grid.tau**2) * scale
    return InitialBound(lhs, rhs, bool(lhs <= rhs * (1 + tol)))


def bandlimited_field(
    grid: SpaceTimeGrid, rng: np.random.Generator, modes: int = 3, time_modes: int = 3
) -> np.ndarray:
    """Random sum of Dirichlet sine modes times smooth time envelopes.

    The field vanishes on the spatial boundary exactly.
    """
    t = grid.t / grid.T
    envelopes = np.stack([np.cos(np.pi * k * t) for k in range(time_modes)])
    spatial = []
    for idx in np.ndindex(*(modes,) * grid.dim):
        prof = np.ones(grid.shape)
        for axis, j in enumerate(idx):
            (a, b), x = grid.extents[axis], grid.axes[axis]
            shape = [1] * grid.dim
            shape[axis] = x.size
            prof = prof * np.sin((j + 1) * np.pi * (x - a) / (b - a)).reshape(shape)
        spatial.append(prof)
    spatial = np.stack(spatial)
    n_sp, n_t = spatial.shape[0], envelopes.shape[0]
    coef = rng.standard_normal((n_t, n_sp)) + 1j * rng.standard_normal((n_t, n_sp))
    decay = 1.0 / (1.0 + np.arange(n_t))[:, None]
    u = np.einsum("kj,kt,j...->t...", coef * decay, envelopes, spatial)
    u[:, grid.boundary_mask] = 0
    return u
