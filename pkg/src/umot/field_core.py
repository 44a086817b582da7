"""Rectangular-grid fields and finite-difference stencil operators.

Every other module is built from the pieces here: a uniform 2D grid with
row-major node numbering, scalar/vector fields sampled at the nodes, sparse
stencil operators, and Dirichlet boundary bookkeeping.

Conventions
-----------
* node (i, j) sits at (x0 + i*hx, y0 + j*hy) and has linear index j*nx + i
* boundary nodes are ordered counterclockwise starting at (x0, y0)
* interior rows of assembled operators hold the stencil; boundary rows of the
  diffusion operator are identity so the "pinned" full system stays solvable
* interior stencils are second-order central differences; gradients fall back
  to second-order one-sided stencils on the boundary
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import GridMismatch, NonPositiveDiffusion, NotUnitVector


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid of nx-by-ny nodes."""

    nx: int
    ny: int
    hx: float
    hy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 5 or self.ny < 5:
            raise ValueError("grid needs at least 5 nodes per axis")
        if self.hx <= 0.0 or self.hy <= 0.0:
            raise ValueError("grid spacings must be positive")

    @classmethod
    def unit_square(cls, n: int) -> "Grid":
        h = 1.0 / (n - 1)
        return cls(n, n, h, h)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def n_interior(self) -> int:
        return (self.nx - 2) * (self.ny - 2)

    @property
    def n_boundary(self) -> int:
        return 2 * self.nx + 2 * self.ny - 4

    def index(self, i, j):
        return j * self.nx + i

    def coords(self):
        """Flat row-major node coordinates (X, Y)."""
        x = self.x0 + self.hx * np.arange(self.nx)
        y = self.y0 + self.hy * np.arange(self.ny)
        X, Y = np.meshgrid(x, y)
        return X.ravel(), Y.ravel()

    def boundary_indices(self) -> np.ndarray:
        """Linear indices of boundary nodes, counterclockwise from (x0, y0)."""
        nx, ny = self.nx, self.ny
        bottom = np.arange(nx)
        right = nx - 1 + nx * np.arange(1, ny)
        top = (ny - 1) * nx + np.arange(nx - 2, -1, -1)
        left = nx * np.arange(ny - 2, 0, -1)
        return np.concatenate([bottom, right, top, left])

    def interior_indices(self) -> np.ndarray:
        ii, jj = np.meshgrid(np.arange(1, self.nx - 1), np.arange(1, self.ny - 1))
        return (jj * self.nx + ii).ravel()

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.n_nodes, dtype=bool)
        m[self.boundary_indices()] = True
        return m

    def depth(self) -> np.ndarray:
        """Distance (in node steps) of each node from the boundary."""
        i = np.arange(self.n_nodes) % self.nx
        j = np.arange(self.n_nodes) // self.nx
        return np.minimum.reduce([i, self.nx - 1 - i, j, self.ny - 1 - j])


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatch("fields live on different grids")


@dataclass(frozen=True)
class ScalarField:
    """Real-valued function sampled at the grid nodes (row-major, flat)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_nodes,):
            v = v.reshape(self.grid.n_nodes)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        X, Y = grid.coords()
        return cls(grid, np.asarray(fn(X, Y), dtype=float))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.n_nodes, float(c)))

    def as_matrix(self) -> np.ndarray:
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * float(c))

    __rmul__ = __mul__


@dataclass(frozen=True)
class VectorField:
    """2-vector per node, stored as an (n_nodes, 2) array."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_nodes, 2):
            raise ValueError("vector field values must have shape (n_nodes, 2)")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.values[:, 0] ** 2 + self.values[:, 1] ** 2)


@dataclass(frozen=True)
class BoundaryData:
    """One value per boundary node, counterclockwise from (x0, y0).

    ``normal_values`` optionally carries outward-normal-derivative data at
    the same nodes (used by the lifted normal-system formulation).
    """

    grid: Grid
    values: np.ndarray
    normal_values: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_boundary,):
            raise ValueError(
                f"boundary data needs {self.grid.n_boundary} values, got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("boundary values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.normal_values is not None:
            nv = np.asarray(self.normal_values, dtype=float).copy()
            if nv.shape != v.shape:
                raise ValueError("normal_values must match boundary node count")
            nv.setflags(write=False)
            object.__setattr__(self, "normal_values", nv)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "BoundaryData":
        X, Y = grid.coords()
        b = grid.boundary_indices()
        return cls(grid, np.asarray(fn(X[b], Y[b]), dtype=float))

    @classmethod
    def zero(cls, grid: Grid) -> "BoundaryData":
        return cls(grid, np.zeros(grid.n_boundary))

    def as_full_field(self) -> np.ndarray:
        """Full-grid array with boundary values placed, zeros inside."""
        full = np.zeros(self.grid.n_nodes)
        full[self.grid.boundary_indices()] = self.values
        return full


class DiscreteOperator:
    """Sparse linear map between stacked-field coefficient spaces.

    Wraps a CSR matrix; duplicate (row, col) entries are summed on
    construction so the finalized operator has a unique entry per pair.
    ``block_map`` optionally names column ranges that must partition
    [0, cols).
    """

    def __init__(self, matrix, block_map: dict[str, tuple[int, int]] | None = None):
        m = sp.csr_matrix(matrix)
        m.sum_duplicates()
        m.sort_indices()
        self._matrix = m
        self.block_map = dict(block_map) if block_map else None
        if self.block_map is not None:
            spans = sorted(self.block_map.values())
            cursor = 0
            for lo, hi in spans:
                if lo != cursor or hi < lo:
                    raise ValueError("block ranges must partition [0, cols)")
                cursor = hi
            if cursor != m.shape[1]:
                raise ValueError("block ranges must partition [0, cols)")

    @classmethod
    def from_triplets(cls, rows, cols, vals, shape, block_map=None):
        m = sp.coo_matrix((vals, (rows, cols)), shape=shape)
        return cls(m, block_map)

    @property
    def matrix(self) -> sp.csr_matrix:
        return self._matrix

    @property
    def rows(self) -> int:
        return self._matrix.shape[0]

    @property
    def cols(self) -> int:
        return self._matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self._matrix.nnz

    def __matmul__(self, x):
        return self._matrix @ x

    def transpose(self) -> "DiscreteOperator":
        return DiscreteOperator(self._matrix.T)

    def block(self, name: str) -> tuple[int, int]:
        if self.block_map is None or name not in self.block_map:
            raise KeyError(name)
        return self.block_map[name]


# ---------------------------------------------------------------------------
# gradients and divergence


def gradient(u: ScalarField) -> VectorField:
    """Discrete gradient: central differences inside, one-sided 3-point at edges."""
    g = u.grid
    mat = u.as_matrix()
    dy, dx = np.gradient(mat, g.hy, g.hx, edge_order=2)
    return VectorField(g, np.stack([dx.ravel(), dy.ravel()], axis=1))


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    vx = v.values[:, 0].reshape(g.ny, g.nx)
    vy = v.values[:, 1].reshape(g.ny, g.nx)
    dvx = np.gradient(vx, g.hx, axis=1, edge_order=2)
    dvy = np.gradient(vy, g.hy, axis=0, edge_order=2)
    return ScalarField(g, (dvx + dvy).ravel())


# ---------------------------------------------------------------------------
# interior stencil index helpers


def _interior_stencil_indices(grid: Grid):
    """Center/east/west/north/south linear indices for all interior nodes."""
    c = grid.interior_indices()
    return c, c + 1, c - 1, c + grid.nx, c - grid.nx


def face_average(a, b, kind: str = "harmonic"):
    if kind == "harmonic":
        return 2.0 * a * b / (a + b)
    if kind == "arithmetic":
        return 0.5 * (a + b)
    raise ValueError(f"unknown face average '{kind}'")


def face_average_partials(a, b, kind: str = "harmonic"):
    """Derivatives of the face value with respect to the two nodal values."""
    if kind == "harmonic":
        s = (a + b) ** 2
        return 2.0 * b * b / s, 2.0 * a * a / s
    if kind == "arithmetic":
        half = np.full_like(np.asarray(a, dtype=float), 0.5)
        return half, half.copy()
    raise ValueError(f"unknown face average '{kind}'")


# ---------------------------------------------------------------------------
# diffusion operator


def _diffusion_csr(gamma_vals, sigma_vals, grid: Grid, kind: str) -> sp.csr_matrix:
    """Flux-conservative 5-point stencil for -div(gamma grad) + sigma.

    Interior rows carry the stencil, boundary rows are identity.
    """
    c, e, w, n, s = _interior_stencil_indices(grid)
    hx2, hy2 = grid.hx ** 2, grid.hy ** 2
    ge = face_average(gamma_vals[c], gamma_vals[e], kind) / hx2
    gw = face_average(gamma_vals[c], gamma_vals[w], kind) / hx2
    gn = face_average(gamma_vals[c], gamma_vals[n], kind) / hy2
    gs = face_average(gamma_vals[c], gamma_vals[s], kind) / hy2
    diag = ge + gw + gn + gs + sigma_vals[c]

    b = grid.boundary_indices()
    rows = np.concatenate([c, c, c, c, c, b])
    cols = np.concatenate([c, e, w, n, s, b])
    vals = np.concatenate([diag, -ge, -gw, -gn, -gs, np.ones(b.size)])
    m = sp.coo_matrix((vals, (rows, cols)), shape=(grid.n_nodes, grid.n_nodes))
    return m.tocsr()


def assemble_diffusion_operator(
    gamma: ScalarField, sigma: ScalarField, face_avg: str = "harmonic"
) -> DiscreteOperator:
    """Assemble -div(gamma grad u) + sigma u on interior rows.

    Boundary rows are identity; use :func:`eliminate_dirichlet` to reduce to
    the interior system.  Raises NonPositiveDiffusion when min(gamma) <= 0.
    """
    _check_same_grid(gamma, sigma)
    if gamma.values.min() <= 0.0:
        raise NonPositiveDiffusion("diffusion coefficient must be positive")
    m = _diffusion_csr(gamma.values, sigma.values, gamma.grid, face_avg)
    return DiscreteOperator(m, {"u": (0, gamma.grid.n_nodes)})


def diffusion_flux_jacobian(
    gamma: ScalarField, u: ScalarField, face_avg: str = "harmonic"
) -> sp.csr_matrix:
    """Derivative of the flux stencil with respect to the diffusion field.

    Returns the matrix M with interior rows such that
    (M dgamma)_x = [-div(dgamma_face grad u)]_x where dgamma_face carries the
    exact derivative weights of the chosen face average.  Together with the
    pointwise absorption derivative this is the exact Jacobian of the
    assembled operator in the coefficients.
    """
    _check_same_grid(gamma, u)
    grid = gamma.grid
    c, e, w, n, s = _interior_stencil_indices(grid)
    hx2, hy2 = grid.hx ** 2, grid.hy ** 2
    gv, uv = gamma.values, u.values

    rows, cols, vals = [], [], []
    for nb, h2 in ((e, hx2), (w, hx2), (n, hy2), (s, hy2)):
        t = (uv[c] - uv[nb]) / h2
        wa, wb = face_average_partials(gv[c], gv[nb], face_avg)
        rows.extend([c, c])
        cols.extend([c, nb])
        vals.extend([wa * t, wb * t])
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_nodes, grid.n_nodes),
    )
    return m.tocsr()


def eliminate_dirichlet(
    op: DiscreteOperator, bc: BoundaryData
) -> tuple[DiscreteOperator, ScalarField]:
    """Remove boundary unknowns, moving their stencil terms to the right side.

    Returns the interior-by-interior operator and a full-grid field whose
    interior entries must be ADDED to the right-hand side:
    A_II u_I = f_I + contribution_I.
    """
    grid = bc.grid
    iidx = grid.interior_indices()
    bidx = grid.boundary_indices()
    A = op.matrix
    A_II = A[iidx][:, iidx]
    A_IB = A[iidx][:, bidx]
    contrib = np.zeros(grid.n_nodes)
    contrib[iidx] = -(A_IB @ bc.values)
    return (
        DiscreteOperator(A_II, {"u": (0, iidx.size)}),
        ScalarField(grid, contrib),
    )


# ---------------------------------------------------------------------------
# first/second derivative matrices


def first_derivative_matrices(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """d/dx and d/dy with rows at every node (one-sided at the edges)."""
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    idx = np.arange(grid.n_nodes)
    i = idx % nx
    j = idx // nx

    def axis_matrix(pos, count, stride, h):
        rows, cols, vals = [], [], []
        mid = (pos >= 1) & (pos <= count - 2)
        m = idx[mid]
        rows.extend([m, m])
        cols.extend([m + stride, m - stride])
        vals.extend([np.full(m.size, 1.0 / (2 * h)), np.full(m.size, -1.0 / (2 * h))])
        lo = idx[pos == 0]
        rows.extend([lo, lo, lo])
        cols.extend([lo, lo + stride, lo + 2 * stride])
        vals.extend(
            [
                np.full(lo.size, -3.0 / (2 * h)),
                np.full(lo.size, 4.0 / (2 * h)),
                np.full(lo.size, -1.0 / (2 * h)),
            ]
        )
        hi = idx[pos == count - 1]
        rows.extend([hi, hi, hi])
        cols.extend([hi, hi - stride, hi - 2 * stride])
        vals.extend(
            [
                np.full(hi.size, 3.0 / (2 * h)),
                np.full(hi.size, -4.0 / (2 * h)),
                np.full(hi.size, 1.0 / (2 * h)),
            ]
        )
        m = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(grid.n_nodes, grid.n_nodes),
        )
        return m.tocsr()

    return axis_matrix(i, nx, 1, hx), axis_matrix(j, ny, nx, hy)


def interior_derivative_matrices(grid: Grid):
    """Central-difference Dx, Dy, Dxx, Dyy, Dxy with interior rows only."""
    c, e, w, n, s = _interior_stencil_indices(grid)
    hx, hy = grid.hx, grid.hy
    N = grid.n_nodes
    ne, nw, se, sw = c + grid.nx + 1, c + grid.nx - 1, c - grid.nx + 1, c - grid.nx - 1

    def build(rows, cols, vals):
        m = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(N, N),
        )
        return m.tocsr()

    one = np.ones(c.size)
    dx = build([c, c], [e, w], [one / (2 * hx), -one / (2 * hx)])
    dy = build([c, c], [n, s], [one / (2 * hy), -one / (2 * hy)])
    dxx = build([c, c, c], [e, c, w], [one / hx ** 2, -2 * one / hx ** 2, one / hx ** 2])
    dyy = build([c, c, c], [n, c, s], [one / hy ** 2, -2 * one / hy ** 2, one / hy ** 2])
    q = one / (4 * hx * hy)
    dxy = build([c, c, c, c], [ne, sw, nw, se], [q, q, -q, -q])
    return dx, dy, dxx, dyy, dxy


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """5-point Laplacian with interior rows only (zero boundary rows)."""
    _, _, dxx, dyy, _ = interior_derivative_matrices(grid)
    return (dxx + dyy).tocsr()


def assemble_directional_ops(
    grid: Grid, v
) -> tuple[DiscreteOperator, DiscreteOperator]:
    """First (v . grad) and second (v . grad)^2 directional derivative operators.

    The first operator is second-order everywhere (one-sided at the edges);
    the second carries interior rows only.
    """
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise NotUnitVector("direction must have unit length")
    dx_full, dy_full = first_derivative_matrices(grid)
    first = v[0] * dx_full + v[1] * dy_full
    _, _, dxx, dyy, dxy = interior_derivative_matrices(grid)
    second = v[0] ** 2 * dxx + 2 * v[0] * v[1] * dxy + v[1] ** 2 * dyy
    blocks = {"field": (0, grid.n_nodes)}
    return DiscreteOperator(first, blocks), DiscreteOperator(second, blocks)


# ---------------------------------------------------------------------------
# grid-weighted norms


def l2_norm(values: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(np.sum(np.asarray(values) ** 2) * grid.hx * grid.hy))


def rel_l2_error(approx: np.ndarray, exact: np.ndarray, grid: Grid) -> float:
    denom = l2_norm(exact, grid)
    if denom == 0.0:
        return l2_norm(approx, grid)
    return l2_norm(np.asarray(approx) - np.asarray(exact), grid) / denom
