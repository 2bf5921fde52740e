"""Uniform space-time grids, boundary bookkeeping, difference operators and
trapezoidal quadrature.

Spatial fields are plain numpy arrays whose *trailing* axes match
``grid.shape`` (``(nx,)`` in 1D, ``(nx, ny)`` in 2D, ``'ij'`` indexing).
Space-time fields carry one extra leading axis of length ``nt``.  Vector
fields carry one extra trailing axis of length ``dim``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

MIN_POINTS = 5

#: face name -> (axis, side); side 0 is the lower end of the axis
FACES = {
    "left": (0, 0),
    "right": (0, 1),
    "bottom": (1, 0),
    "top": (1, 1),
}


def _as_tuple(value, dim, cast):
    if np.ndim(value) == 0:
        return (cast(value),) * dim
    value = tuple(cast(v) for v in value)
    if len(value) != dim:
        raise ValueError(f"expected {dim} entries, got {len(value)}")
    return value


@dataclass(frozen=True, eq=False)
class SpaceTimeGrid:
    """Tensor grid on ``Omega x [0, T]`` with ``Omega`` an interval or a
    rectangle.

    Parameters
    ----------
    extents : sequence of (a, b) pairs
        One interval per spatial axis.
    nx : int or sequence of int
        Points per spatial axis (boundary nodes included).
    nt : int
        Number of time levels, ``t_0 = 0`` to ``t_{nt-1} = T``.
    T : float
        Final time.
    """

    extents: tuple
    nx: tuple
    nt: int
    T: float

    def __post_init__(self):
        ext = tuple((float(a), float(b)) for a, b in self.extents)
        if len(ext) not in (1, 2):
            raise ValueError("only 1D and 2D domains are supported")
        for a, b in ext:
            if not b > a:
                raise ValueError(f"empty interval [{a}, {b}]")
        nx = _as_tuple(self.nx, len(ext), int)
        if min(nx) < MIN_POINTS or int(self.nt) < MIN_POINTS:
            raise ValueError(
                f"grid needs at least {MIN_POINTS} points per axis and in time"
            )
        if not float(self.T) > 0:
            raise ValueError("T must be positive")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "nt", int(self.nt))
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def unit(cls, dim: int, nx, nt: int, T: float) -> "SpaceTimeGrid":
        return cls(((0.0, 1.0),) * dim, nx, nt, T)

    def refined(self) -> "SpaceTimeGrid":
        """Grid with both ``h`` and ``tau`` halved."""
        return SpaceTimeGrid(
            self.extents, tuple(2 * n - 1 for n in self.nx), 2 * self.nt - 1, self.T
        )

    # -- geometry -----------------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple:
        return self.nx

    @property
    def st_shape(self) -> tuple:
        return (self.nt,) + self.nx

    @property
    def h(self) -> tuple:
        return tuple((b - a) / (n - 1) for (a, b), n in zip(self.extents, self.nx))

    @property
    def tau(self) -> float:
        return self.T / (self.nt - 1)

    @cached_property
    def axes(self) -> tuple:
        return tuple(
            np.linspace(a, b, n) for (a, b), n in zip(self.extents, self.nx)
        )

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def faces(self) -> tuple:
        return tuple(name for name, (axis, _) in FACES.items() if axis < self.dim)

    def face_index(self, face: str) -> tuple:
        """Index tuple selecting the nodes of ``face`` in a spatial array."""
        axis, side = FACES[face]
        idx = [slice(None)] * self.dim
        idx[axis] = 0 if side == 0 else -1
        return tuple(idx)

    def face_normal(self, face: str) -> np.ndarray:
        axis, side = FACES[face]
        nu = np.zeros(self.dim)
        nu[axis] = 1.0 if side == 1 else -1.0
        return nu

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for face in self.faces:
            mask[self.face_index(face)] = True
        return mask

    @cached_property
    def corner_mask(self) -> np.ndarray:
        """Nodes lying on two faces (empty in 1D)."""
        count = np.zeros(self.shape, dtype=int)
        for face in self.faces:
            count[self.face_index(face)] += 1
        return count > 1

    @cached_property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Flat (C-order) indices of boundary nodes."""
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask)

    # -- quadrature ---------------------------------------------------------

    @cached_property
    def space_weights(self) -> np.ndarray:
        w = np.ones(self.shape)
        for axis, (h, n) in enumerate(zip(self.h, self.nx)):
            w1 = np.full(n, h)
            w1[[0, -1]] = h / 2
            shape = [1] * self.dim
            shape[axis] = n
            w = w * w1.reshape(shape)
        return w

    @cached_property
    def time_weights(self) -> np.ndarray:
        w = np.full(self.nt, self.tau)
        w[[0, -1]] = self.tau / 2
        return w

    def check_spatial(self, f: np.ndarray, name: str = "field") -> np.ndarray:
        f = np.asarray(f)
        if f.shape[f.ndim - self.dim:] != self.shape:
            raise ValueError(
                f"{name} has shape {f.shape}, expected trailing {self.shape}"
            )
        return f

    def check_spacetime(self, f: np.ndarray, name: str = "field") -> np.ndarray:
        f = np.asarray(f)
        if f.shape != self.st_shape:
            raise ValueError(f"{name} has shape {f.shape}, expected {self.st_shape}")
        return f


@dataclass(frozen=True, eq=False)
class BoundarySubset:
    """A set of boundary nodes with per-face membership.

    ``face_masks`` maps a face name to a boolean array over that face's nodes.
    A corner belongs to the subset as soon as one of its two faces claims it;
    its quadrature weight only collects the contributions of claiming faces.
    """

    grid: SpaceTimeGrid
    face_masks: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        masks = {}
        for face in self.grid.faces:
            n_face = self.grid.boundary_mask[self.grid.face_index(face)].shape
            m = self.face_masks.get(face, False)
            masks[face] = np.broadcast_to(np.asarray(m, dtype=bool), n_face).copy()
        unknown = set(self.face_masks) - set(masks)
        if unknown:
            raise ValueError(f"unknown faces {sorted(unknown)}")
        object.__setattr__(self, "face_masks", masks)

    @classmethod
    def from_faces(cls, grid: SpaceTimeGrid, faces: Sequence[str]) -> "BoundarySubset":
        return cls(grid, {f: True for f in faces})

    @classmethod
    def whole(cls, grid: SpaceTimeGrid) -> "BoundarySubset":
        return cls.from_faces(grid, grid.faces)

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.shape, dtype=bool)
        for face, fm in self.face_masks.items():
            m[self.grid.face_index(face)] |= fm
        return m

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    @cached_property
    def weights(self) -> np.ndarray:
        """Boundary quadrature weights (counting measure in 1D)."""
        g = self.grid
        w = np.zeros(g.shape)
        for face, fm in self.face_masks.items():
            if g.dim == 1:
                fw = np.ones(())
            else:
                axis, _ = FACES[face]
                other = 1 - axis
                h, n = g.h[other], g.nx[other]
                fw = np.full(n, h)
                fw[[0, -1]] = h / 2
            w[g.face_index(face)] += np.where(fm, fw, 0.0)
        return w

    @cached_property
    def normals(self) -> np.ndarray:
        """Outward unit normals; zero at corners and off the boundary."""
        g = self.grid
        nu = np.zeros(g.shape + (g.dim,))
        for face in g.faces:
            nu[g.face_index(face)] += g.face_normal(face)
        nu[g.corner_mask] = 0.0
        nu[~g.boundary_mask] = 0.0
        return nu

    @cached_property
    def trace_nodes(self) -> np.ndarray:
        """Flat indices of member nodes carrying a normal derivative."""
        return np.flatnonzero(self.mask & ~self.grid.corner_mask)

    @cached_property
    def trace_weights(self) -> np.ndarray:
        return self.weights.ravel()[self.trace_nodes]

    def issubset(self, other: "BoundarySubset") -> bool:
        return all(
            not np.any(m & ~other.face_masks[f]) for f, m in self.face_masks.items()
        )


# -- difference operators ----------------------------------------------------


def _spatial_axis(grid: SpaceTimeGrid, f: np.ndarray, k: int) -> int:
    return f.ndim - grid.dim + k


def gradient(grid: SpaceTimeGrid, f: np.ndarray) -> np.ndarray:
    """Second-order gradient: central in the interior, one-sided second order
    on the boundary.  Returns shape ``f.shape + (dim,)``."""
    f = grid.check_spatial(f)
    parts = [
        np.gradient(f, h, axis=_spatial_axis(grid, f, k), edge_order=2)
        for k, h in enumerate(grid.h)
    ]
    return np.stack(parts, axis=-1)


def divergence(grid: SpaceTimeGrid, V: np.ndarray) -> np.ndarray:
    V = np.asarray(V)
    if V.shape[-1] != grid.dim:
        raise ValueError("last axis of a vector field must have length dim")
    out = 0
    for k, h in enumerate(grid.h):
        comp = grid.check_spatial(V[..., k])
        out = out + np.gradient(comp, h, axis=_spatial_axis(grid, comp, k), edge_order=2)
    return out


def _second_difference(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, -1)
    out = np.empty_like(f)
    out[..., 1:-1] = (f[..., 2:] - 2 * f[..., 1:-1] + f[..., :-2]) / h**2
    out[..., 0] = (2 * f[..., 0] - 5 * f[..., 1] + 4 * f[..., 2] - f[..., 3]) / h**2
    out[..., -1] = (2 * f[..., -1] - 5 * f[..., -2] + 4 * f[..., -3] - f[..., -4]) / h**2
    return np.moveaxis(out, -1, axis)


def laplacian(grid: SpaceTimeGrid, f: np.ndarray) -> np.ndarray:
    """3-point (1D) / 5-point (2D) Laplacian.  Boundary nodes get a one-sided
    second-order stencil so the result is defined everywhere; only interior
    values are used by the solvers."""
    f = grid.check_spatial(f)
    f = f.astype(np.result_type(f, float), copy=False)
    return sum(
        _second_difference(f, h, _spatial_axis(grid, f, k))
        for k, h in enumerate(grid.h)
    )


def time_derivative(grid: SpaceTimeGrid, f: np.ndarray) -> np.ndarray:
    """Centered in time, one-sided second order at ``t = 0`` and ``t = T``."""
    f = grid.check_spacetime(f)
    return np.gradient(f, grid.tau, axis=0, edge_order=2)


# -- quadrature ----------------------------------------------------------------


def integrate_space(grid: SpaceTimeGrid, f: np.ndarray):
    """Trapezoidal integral over Omega of the trailing spatial axes."""
    f = grid.check_spatial(f)
    axes = tuple(range(f.ndim - grid.dim, f.ndim))
    return np.sum(f * grid.space_weights, axis=axes)


def integrate_spacetime(grid: SpaceTimeGrid, f: np.ndarray, time_weights=None):
    f = grid.check_spacetime(f)
    tw = grid.time_weights if time_weights is None else time_weights
    return np.dot(tw, integrate_space(grid, f))


def integrate_boundary(grid: SpaceTimeGrid, f: np.ndarray, gamma: BoundarySubset):
    """Integral over ``gamma`` (spatial ``f``) or over ``gamma x (0, T)``
    (space-time ``f``)."""
    f = np.asarray(f)
    if f.shape == grid.shape:
        return np.sum(f * gamma.weights)
    f = grid.check_spacetime(f)
    per_t = np.sum(f * gamma.weights, axis=tuple(range(1, f.ndim)))
    return np.dot(grid.time_weights, per_t)


def l2_norm(grid: SpaceTimeGrid, f: np.ndarray) -> float:
    """L2(Omega) norm of a spatial (scalar or vector) field."""
    f = np.asarray(f)
    if f.shape[-1:] == (grid.dim,) and f.shape[:-1] == grid.shape:
        sq = np.sum(np.abs(f) ** 2, axis=-1)
    else:
        sq = np.abs(grid.check_spatial(f)) ** 2
    return float(np.sqrt(integrate_space(grid, sq)))


def l2_norm_spacetime(grid: SpaceTimeGrid, f: np.ndarray) -> float:
    return float(np.sqrt(integrate_spacetime(grid, np.abs(f) ** 2)))


def neumann_trace(grid: SpaceTimeGrid, u: np.ndarray, gamma: BoundarySubset) -> np.ndarray:
    """One-sided second-order normal derivative at the non-corner nodes of
    ``gamma``.

    Returns an array of shape ``(nt, m)`` for a space-time ``u`` (or ``(m,)``
    for a spatial one), ordered like ``gamma.trace_nodes``.
    """
    if gamma.trace_nodes.size == 0:
        raise ValueError("observation set is empty")
    u = grid.check_spatial(u)
    lead = u.shape[: u.ndim - grid.dim]
    out = np.zeros(lead + (gamma.trace_nodes.size,), dtype=np.result_type(u, float))
    position = {node: k for k, node in enumerate(gamma.trace_nodes)}
    for face in grid.faces:
        axis, side = FACES[face]
        nodes = np.ravel_multi_index(
            np.nonzero(_face_selector(grid, face)), grid.shape
        )
        keep = [(j, position[n]) for j, n in enumerate(nodes) if n in position]
        if not keep:
            continue
        ax = u.ndim - grid.dim + axis
        v = np.moveaxis(u, ax, -1)
        if side == 1:
            d = (3 * v[..., -1] - 4 * v[..., -2] + v[..., -3]) / (2 * grid.h[axis])
        else:
            d = (3 * v[..., 0] - 4 * v[..., 1] + v[..., 2]) / (2 * grid.h[axis])
        d = d.reshape(lead + (-1,))
        src, dst = zip(*keep)
        out[..., list(dst)] = d[..., list(src)]
    return out


def _face_selector(grid: SpaceTimeGrid, face: str) -> np.ndarray:
    sel = np.zeros(grid.shape, dtype=bool)
    sel[grid.face_index(face)] = True
    return sel


def trace_norm(grid: SpaceTimeGrid, trace: np.ndarray, gamma: BoundarySubset) -> float:
    """L2(gamma x (0, T)) norm of a trace returned by :func:`neumann_trace`."""
    trace = np.asarray(trace)
    per_t = np.abs(trace) ** 2 @ gamma.trace_weights
    if trace.ndim == 1:
        return float(np.sqrt(per_t))
    return float(np.sqrt(np.dot(grid.time_weights, per_t)))
