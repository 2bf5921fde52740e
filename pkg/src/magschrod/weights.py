"""Carleman weight system ``alpha = (exp(lam*beta) - exp(lam*K)) / l(t)**2``.

The default spatial weight is ``beta(x) = |x - x0|**2`` with ``x0`` outside
the closed domain and ``l(t) = (T + t)(T - t)``; all derivatives of the
default weight are evaluated from closed forms.  A user supplied ``beta``
sampled on the grid falls back to the discrete operators of
:mod:`magschrod.grid`.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .grid import BoundarySubset, SpaceTimeGrid, gradient

#: below this exponent ``exp`` underflows to zero in double precision
EXP_FLOOR = -745.0


class WeightError(ValueError):
    """Weight parameters violate a structural hypothesis."""


class PseudoconvexityError(ValueError):
    """The sampled quadratic form is not positive.

    Attributes ``node`` (grid index tuple) and ``direction`` identify the
    offending sample.
    """

    def __init__(self, message, node, direction, value):
        super().__init__(message)
        self.node = node
        self.direction = direction
        self.value = value


def safe_exp(exponent):
    """``exp`` with exponents below :data:`EXP_FLOOR` (including ``-inf``)
    mapped to exactly zero."""
    exponent = np.asarray(exponent, dtype=float)
    out = np.zeros_like(exponent)
    ok = exponent >= EXP_FLOOR
    out[ok] = np.exp(exponent[ok])
    return out


def default_l(T: float):
    return (lambda t: (T + t) * (T - t)), (lambda t: -2.0 * np.asarray(t, dtype=float))


class WeightFields(NamedTuple):
    """Weight-derived quantities on the full space-time grid.

    Every array has shape ``grid.st_shape`` (``grad_alpha`` has an extra
    trailing ``dim`` axis).  The final time slice, where ``alpha`` has a
    pole, holds ``exp_sa = 0`` and zeros in the derivative arrays.
    """

    alpha: np.ndarray
    phi: np.ndarray
    exp_sa: np.ndarray
    grad_alpha: np.ndarray
    lap_alpha: np.ndarray
    dt_alpha: np.ndarray


@dataclass(frozen=True, eq=False)
class CarlemanWeight:
    grid: SpaceTimeGrid
    lam: float
    s: float
    K: float
    beta: np.ndarray
    grad_beta: np.ndarray
    hess_beta: np.ndarray
    l: Callable
    dl: Callable
    x0: Optional[np.ndarray] = None

    def with_s(self, s: float) -> "CarlemanWeight":
        return replace(self, s=float(s))

    @property
    def c0(self) -> float:
        return float(np.min(np.linalg.norm(self.grad_beta, axis=-1)))

    @property
    def lap_beta(self) -> np.ndarray:
        return np.trace(self.hess_beta, axis1=-2, axis2=-1)

    def alpha_at(self, k: int) -> np.ndarray:
        """Spatial slice of alpha at time level ``k`` (``-inf`` at ``t = T``)."""
        lt = self.l(self.grid.t[k])
        num = np.exp(self.lam * self.beta) - np.exp(self.lam * self.K)
        if lt == 0:
            return np.full(self.grid.shape, -np.inf)
        return num / lt**2

    def alpha0_max(self) -> float:
        """``max_x alpha(x, 0)``, which is also the global maximum of alpha."""
        return float(np.max(self.alpha_at(0)))

    def fields(self, s: Optional[float] = None, normalize: bool = False) -> WeightFields:
        """Evaluate the weight on the grid.

        With ``normalize=True`` the exponential is ``exp(s*(alpha - a*))``
        with ``a* = max alpha(., 0)``.  This rescales every weighted
        quantity by the same positive constant, which leaves homogeneous
        relations (identities, the initial-slice bound) unchanged while
        keeping the numbers representable.
        """
        s = self.s if s is None else float(s)
        g = self.grid
        t = g.t
        lt = np.asarray(self.l(t), dtype=float)
        dlt = np.asarray(self.dl(t), dtype=float)
        live = lt > 0
        e_beta = np.exp(self.lam * self.beta)
        num = e_beta - np.exp(self.lam * self.K)
        bshape = (g.nt,) + (1,) * g.dim

        inv_l2 = np.zeros(g.nt)
        inv_l2[live] = 1.0 / lt[live] ** 2
        inv_l3 = np.zeros(g.nt)
        inv_l3[live] = 1.0 / lt[live] ** 3
        alpha = num * inv_l2.reshape(bshape)
        alpha[~live] = -np.inf
        phi = e_beta * inv_l2.reshape(bshape)
        shift = self.alpha0_max() if normalize else 0.0
        exponent = np.where(live.reshape(bshape), s * (alpha - shift), -np.inf)
        exp_sa = safe_exp(exponent)

        grad_alpha = self.lam * phi[..., None] * self.grad_beta
        lap_alpha = self.lam * phi * (
            self.lam * np.sum(self.grad_beta**2, axis=-1) + self.lap_beta
        )
        dt_alpha = -2.0 * (dlt * inv_l3).reshape(bshape) * num
        return WeightFields(alpha, phi, exp_sa, grad_alpha, lap_alpha, dt_alpha)


def _inside_closure(grid: SpaceTimeGrid, x0: np.ndarray) -> bool:
    return all(a <= xi <= b for (a, b), xi in zip(grid.extents, x0))


def build_default_weight(
    grid: SpaceTimeGrid, x0, lam: float = 1.0, s: float = 1.0
) -> CarlemanWeight:
    """Weight with ``beta = |x - x0|**2`` and ``l(t) = (T + t)(T - t)``.

    Raises
    ------
    WeightError
        If ``x0`` lies in the closed domain (``beta`` would have a critical
        point), or ``lam``/``s`` are not positive.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (grid.dim,):
        raise WeightError(f"x0 must have {grid.dim} coordinates")
    if _inside_closure(grid, x0):
        raise WeightError(f"x0={x0.tolist()} lies in the closed domain; need x0 outside")
    if not lam > 0 or not s > 0:
        raise WeightError("lambda and s must be positive")
    diff = grid.coords - x0
    beta = np.sum(diff**2, axis=-1)
    corners = np.array(np.meshgrid(*grid.extents, indexing="ij")).reshape(grid.dim, -1).T
    K = 2.0 * float(np.max(np.sum((corners - x0) ** 2, axis=-1)))
    hess = np.broadcast_to(2.0 * np.eye(grid.dim), grid.shape + (grid.dim, grid.dim))
    l, dl = default_l(grid.T)
    return CarlemanWeight(grid, float(lam), float(s), K, beta, 2.0 * diff, hess, l, dl, x0)


def weight_from_beta(
    grid: SpaceTimeGrid,
    beta: np.ndarray,
    lam: float = 1.0,
    s: float = 1.0,
    l: Optional[Callable] = None,
    dl: Optional[Callable] = None,
) -> CarlemanWeight:
    """Weight built from a sampled ``beta``; derivatives by finite differences.

    ``l`` must satisfy ``l(T) = 0`` and ``l(0) > l(t) >= 0`` on the time grid.
    """
    beta = grid.check_spatial(np.asarray(beta, dtype=float), "beta")
    if np.any(beta < 0):
        raise WeightError("beta must be nonnegative")
    gb = gradient(grid, beta)
    if np.min(np.linalg.norm(gb, axis=-1)) <= 0:
        raise WeightError("beta has a critical point on the grid")
    hess = np.stack([gradient(grid, gb[..., k]) for k in range(grid.dim)], axis=-2)
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    if l is None:
        l, dl = default_l(grid.T)
    elif dl is None:
        raise WeightError("a custom l needs its derivative dl")
    lt = np.asarray(l(grid.t), dtype=float)
    if abs(lt[-1]) > 1e-14 * abs(lt[0]) or np.any(lt[1:] >= lt[0]) or np.any(lt < 0):
        raise WeightError("l must vanish at T and satisfy l(0) > l(t) >= 0")
    K = 2.0 * float(np.max(beta))
    return CarlemanWeight(grid, float(lam), float(s), K, beta, gb, hess, l, dl, None)


def eval_alpha_phi(w: CarlemanWeight, x, t):
    """Pointwise ``(alpha, phi)`` for the default weight.

    ``x`` has trailing axis ``dim``; ``t`` broadcasts against ``x[..., 0]``.
    At ``t >= T`` alpha is ``-inf`` and phi is ``+inf``.
    """
    if w.x0 is None:
        raise WeightError("pointwise evaluation needs the closed-form default weight")
    x = np.asarray(x, dtype=float)
    beta = np.sum((x - w.x0) ** 2, axis=-1)
    lt = np.asarray(w.l(np.asarray(t, dtype=float)), dtype=float)
    lt, beta = np.broadcast_arrays(lt, beta)
    e_beta = np.exp(w.lam * beta)
    alpha = np.full(lt.shape, -np.inf)
    phi = np.full(lt.shape, np.inf)
    live = lt > 0
    alpha[live] = (e_beta[live] - np.exp(w.lam * w.K)) / lt[live] ** 2
    phi[live] = e_beta[live] / lt[live] ** 2
    if alpha.ndim == 0:
        return float(alpha), float(phi)
    return alpha, phi


def exp_s_alpha(w: CarlemanWeight, x, t, s: Optional[float] = None):
    """``exp(s * alpha(x, t))`` with underflow to exactly zero."""
    alpha, _ = eval_alpha_phi(w, x, t)
    s = w.s if s is None else s
    return safe_exp(s * np.asarray(alpha))


@dataclass(frozen=True)
class PseudoconvexityCertificate:
    epsilon: float
    lambda_min: float
    sampled_directions: int


def sample_directions(dim: int, count: int = 16) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if count < 16:
        raise ValueError("at least 16 directions are required in 2D")
    theta = 2 * np.pi * np.arange(count) / count
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def certify_pseudoconvexity(
    w: CarlemanWeight, n_directions: int = 16, tol: float = 1e-12
) -> PseudoconvexityCertificate:
    """Minimum over nodes and sampled unit directions of
    ``(lam*(grad beta . xi)**2 + D2beta(xi, xi)) / |xi|**2``.

    ``lambda_min`` is the smallest lambda keeping every sample positive
    (``-inf`` when any lambda >= 0 works from the Hessian alone, ``inf`` when
    no lambda works).

    Raises
    ------
    PseudoconvexityError
        If the minimum is ``<= tol`` times the form's scale.
    """
    xi = sample_directions(w.grid.dim, n_directions)
    norm2 = np.sum(xi * xi, axis=-1)
    a = np.einsum("...k,dk->...d", w.grad_beta, xi) ** 2 / norm2
    b = np.einsum("...kl,dk,dl->...d", w.hess_beta, xi, xi) / norm2
    form = w.lam * a + b
    flat = int(np.argmin(form))
    eps = float(form.ravel()[flat])
    scale = max(1.0, float(np.max(np.abs(form))))
    if eps <= tol * scale:
        idx = np.unravel_index(flat, form.shape)
        raise PseudoconvexityError(
            f"pseudo-convexity fails at node {idx[:-1]}, direction "
            f"{xi[idx[-1]].tolist()} (value {eps:.3e})",
            idx[:-1],
            xi[idx[-1]],
            eps,
        )
    pos = a > tol * scale
    if np.any(~pos & (b <= tol * scale)):
        lam_min = np.inf
    elif np.any(pos):
        lam_min = float(np.max(-b[pos] / a[pos]))
    else:
        lam_min = -np.inf
    return PseudoconvexityCertificate(eps, lam_min, int(xi.shape[0]))


def observation_boundary(grid: SpaceTimeGrid, w: CarlemanWeight) -> BoundarySubset:
    """Boundary nodes with ``grad beta . nu >= 0``, decided face by face."""
    masks = {}
    for face in grid.faces:
        gb = w.grad_beta[grid.face_index(face)]
        masks[face] = gb @ grid.face_normal(face) >= 0
    return BoundarySubset(grid, masks)
