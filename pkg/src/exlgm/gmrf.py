"""Lattice meshes, Matérn SPDE precision matrices and GMRF utilities.

The smoothness-1 Matérn field on a regular lattice is discretised with the
five-point Laplacian under reflecting (Neumann) boundaries:

    Q = tau_s^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G),   kappa = sqrt(8) / rho

with ``C = h^2 I`` the lumped mass matrix and ``G`` the graph Laplacian of
the lattice.  ``tau_s^2 = 1 / (4 pi kappa^2)`` gives unit marginal variance
in the continuum limit, so the field scale is carried by ``s`` alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .cholesky import LinearPattern, SparseCholesky
from .errors import InvalidInputError, NotPositiveDefiniteError, OutOfHullError


@dataclass(frozen=True)
class Mesh:
    """Regular ``nx`` by ``ny`` lattice with lower-left node ``origin``.

    Node ``k`` sits at column ``k % nx`` and row ``k // nx``.
    """

    origin: tuple
    nx: int
    ny: int
    spacing: float

    def __post_init__(self):
        if self.spacing <= 0:
            raise InvalidInputError("spacing must be positive")
        if self.nx < 2 or self.ny < 2:
            raise InvalidInputError("lattice needs at least 2 nodes per axis")

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @cached_property
    def nodes(self) -> np.ndarray:
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return np.column_stack(
            [self.origin[0] + ix.ravel() * self.spacing, self.origin[1] + iy.ravel() * self.spacing]
        )

    @property
    def extent(self):
        x0, y0 = self.origin
        return (x0, x0 + (self.nx - 1) * self.spacing, y0, y0 + (self.ny - 1) * self.spacing)

    @property
    def diameter(self) -> float:
        x0, x1, y0, y1 = self.extent
        return math.hypot(x1 - x0, y1 - y0)

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "nx": self.nx, "ny": self.ny, "spacing": self.spacing}

    @classmethod
    def from_dict(cls, d) -> "Mesh":
        return cls(tuple(float(v) for v in d["origin"]), int(d["nx"]), int(d["ny"]), float(d["spacing"]))


def build_mesh(bbox: Sequence[float], target_spacing: float, margin: float | None = None) -> Mesh:
    """Lattice covering ``bbox = (xmin, xmax, ymin, ymax)`` expanded by ``margin``.

    ``margin`` defaults to twice the spacing.  When an expanded side is not a
    multiple of the spacing the lattice is widened symmetrically.
    """
    xmin, xmax, ymin, ymax = (float(v) for v in bbox)
    if not (target_spacing > 0 and math.isfinite(target_spacing)):
        raise InvalidInputError("spacing must be positive")
    if margin is None:
        margin = 2.0 * target_spacing
    if margin < 0:
        raise InvalidInputError("margin must be nonnegative")
    wx, wy = xmax - xmin, ymax - ymin
    if wx < 0 or wy < 0 or (wx == 0 and wy == 0):
        raise InvalidInputError("degenerate bounding box")
    if target_spacing > max(wx, wy) + 2 * margin:
        raise InvalidInputError("spacing larger than the bounding box extent")

    def axis(lo, width):
        full = width + 2 * margin
        n = int(math.ceil(full / target_spacing - 1e-9)) + 1
        n = max(n, 2)
        pad = ((n - 1) * target_spacing - full) / 2.0
        return lo - margin - pad, n

    x0, nx = axis(xmin, wx)
    y0, ny = axis(ymin, wy)
    return Mesh((x0, y0), nx, ny, float(target_spacing))


def lattice_laplacian(mesh: Mesh) -> sp.csr_matrix:
    """Graph Laplacian of the lattice (reflecting boundaries), unscaled."""

    def path(n):
        main = np.full(n, 2.0)
        main[0] = main[-1] = 1.0
        return sp.diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1])

    Lx, Ly = path(mesh.nx), path(mesh.ny)
    return (sp.kron(sp.eye(mesh.ny), Lx) + sp.kron(Ly, sp.eye(mesh.nx))).tocsr()


class MaternPrecision:
    """Precomputed pieces of the smoothness-1 SPDE precision on a mesh.

    ``Q(rho) = a(rho) C + b(rho) G + c(rho) G C^{-1} G`` with the
    unit-variance normalisation folded into the coefficients, so each range
    value costs one linear combination over a fixed sparsity pattern.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        h2 = mesh.spacing**2
        G = lattice_laplacian(mesh)
        C = sp.identity(mesh.n_nodes, format="csr") * h2
        self.components = (C, G, (G @ G / h2).tocsr())
        self._pattern = None

    @staticmethod
    def coefficients(rho: float) -> np.ndarray:
        """Weights of ``(C, G, G C^-1 G)`` in ``Q(rho)``."""
        if not (rho > 0 and math.isfinite(rho)):
            raise InvalidInputError("range must be positive")
        r2 = rho * rho
        if not (r2 > 0 and math.isfinite(r2)):
            raise NotPositiveDefiniteError(f"range {rho!r} outside the representable scale")
        kappa2 = 8.0 / r2
        tau2 = 1.0 / (4.0 * math.pi * kappa2)
        out = np.array([tau2 * kappa2**2, 2.0 * tau2 * kappa2, tau2])
        if not np.all(np.isfinite(out)) or not np.all(out > 0):
            raise NotPositiveDefiniteError(f"range {rho!r} outside the representable scale")
        return out

    @property
    def pattern(self) -> LinearPattern:
        if self._pattern is None:
            self._pattern = LinearPattern(self.components)
        return self._pattern

    def __call__(self, rho: float) -> sp.csc_matrix:
        return self.pattern.matrix(self.coefficients(rho))

    @property
    def ordering(self):
        return self.pattern.ordering

    def factor(self, rho: float) -> SparseCholesky:
        return self.pattern.factor(self.coefficients(rho))


def build_precision(mesh: Mesh, rho: float) -> sp.csc_matrix:
    """Sparse SPDE precision (smoothness 1, unit marginal variance) for range ``rho``."""
    return MaternPrecision(mesh)(rho)


def build_projection(mesh: Mesh, sites) -> sp.csr_matrix:
    """Bilinear interpolation weights from mesh nodes to ``sites`` (N x 2)."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    x0, x1, y0, y1 = mesh.extent
    tol = 1e-9 * max(1.0, mesh.spacing)
    bad = np.flatnonzero(
        (sites[:, 0] < x0 - tol)
        | (sites[:, 0] > x1 + tol)
        | (sites[:, 1] < y0 - tol)
        | (sites[:, 1] > y1 + tol)
        | ~np.all(np.isfinite(sites), axis=1)
    )
    if bad.size:
        raise OutOfHullError(f"{bad.size} site(s) outside the mesh: indices {bad.tolist()}", bad)
    gx = np.clip((sites[:, 0] - x0) / mesh.spacing, 0.0, mesh.nx - 1)
    gy = np.clip((sites[:, 1] - y0) / mesh.spacing, 0.0, mesh.ny - 1)
    i = np.minimum(np.floor(gx).astype(int), mesh.nx - 2)
    j = np.minimum(np.floor(gy).astype(int), mesh.ny - 2)
    fx, fy = gx - i, gy - j
    n = sites.shape[0]
    rows = np.repeat(np.arange(n), 4)
    cols = np.column_stack(
        [j * mesh.nx + i, j * mesh.nx + i + 1, (j + 1) * mesh.nx + i, (j + 1) * mesh.nx + i + 1]
    ).ravel()
    w = np.column_stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    ).ravel()
    A = sp.csr_matrix((w, (rows, cols)), shape=(n, mesh.n_nodes))
    A.eliminate_zeros()
    return A


def _as_factor(Q) -> SparseCholesky:
    return Q if isinstance(Q, SparseCholesky) else SparseCholesky(Q)


def gmrf_sample(Q, s: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from ``Normal(0, s^2 Q^{-1})``; ``Q`` may be a matrix or a factorization.

    With ``size`` the result has shape ``(size, n)``.
    """
    if not s > 0:
        raise InvalidInputError("s must be positive")
    fac = _as_factor(Q)
    if size is None:
        z = rng.standard_normal(fac.n)
        return s * fac.solve_lt(z)
    z = rng.standard_normal((size, fac.n))
    return s * fac.solve_lt(z.T).T


def gmrf_log_density(x, Q, s: float, factor: SparseCholesky | None = None) -> float:
    """``log Normal(x; 0, s^2 Q^{-1})``; pass ``factor`` to reuse a factorization of ``Q``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (Q.shape[0],):
        raise InvalidInputError("dimension mismatch between x and Q")
    if not s > 0:
        raise InvalidInputError("s must be positive")
    fac = SparseCholesky(Q) if factor is None else factor
    d = fac.n
    quad = float(x @ (Q @ x)) / s**2
    return -0.5 * d * math.log(2 * math.pi) + 0.5 * fac.logdet() - d * math.log(s) - 0.5 * quad


def write_mesh_csv(mesh: Mesh, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("node_id,x,y\n")
        for k, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{k},{x:.17g},{y:.17g}\n")


__all__ = [
    "Mesh",
    "MaternPrecision",
    "NotPositiveDefiniteError",
    "build_mesh",
    "build_precision",
    "build_projection",
    "gmrf_log_density",
    "gmrf_sample",
    "lattice_laplacian",
    "write_mesh_csv",
]
