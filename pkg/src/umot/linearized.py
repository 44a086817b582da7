"""Linearized inversion: redundant first-order system and normal equations.

Around a base bundle (gamma, sigma, {u_j}), first-order perturbations solve,
per solution j and interior node,

    |grad u_j|^2 dgamma + eta u_j^2 dsigma
        + 2 gamma grad u_j . grad du_j + 2 eta sigma u_j du_j = dH_j      (data)
    -div(dgamma grad u_j) + L du_j + u_j dsigma = 0,   L = -div(gamma grad) + sigma
                                                                          (state)

with du_j = 0 on the boundary.  Stacking all rows gives a redundant sparse
least-squares problem solved through its normal equations.  Mixed-order row
weights (data rows times 1, state rows times h) balance the discrete system
across derivative orders.

Unknown layout: perturbation blocks [dgamma | dsigma | du_1 ... du_J], each
restricted to interior nodes.  Boundary values of dgamma and dsigma are
pinned to zero (perturbations are modeled as interior-supported); when
normal-derivative data g is supplied they are instead carried by a clamped
biharmonic lift and the solve runs on the homogeneous remainder.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .biharmonic import biharmonic_lift
from .errors import GridMismatch, RankDeficient, SolverDivergence, TooFewSolutions
from .field_core import (
    BoundaryData,
    DiscreteOperator,
    ScalarField,
    diffusion_flux_jacobian,
    gradient,
)
from .forward import SolutionBundle
from .solvers import FactorizedSPD, smallest_singular_probe, solve_spd

DIRECT_NORMAL_LIMIT = 40000
NORMAL_TOL = 1e-10
RANK_DEFICIENT_REL = 1e-8


@dataclass(frozen=True)
class PerturbationVector:
    """Stacked perturbation (dgamma, dsigma, {du_j}); du_j vanish on dX."""

    dgamma: ScalarField
    dsigma: ScalarField
    du: tuple

    def __post_init__(self):
        grid = self.dgamma.grid
        if self.dsigma.grid != grid or any(u.grid != grid for u in self.du):
            raise GridMismatch("perturbation components on different grids")
        b = grid.boundary_indices()
        for u in self.du:
            if np.max(np.abs(u.values[b])) > 1e-12:
                raise ValueError("du components must vanish on the boundary")
        object.__setattr__(self, "du", tuple(self.du))


@dataclass
class LinearizedSystem:
    """Assembled least-squares system A v = rhs with block metadata.

    ``A`` carries the row weights already applied.  ``A_boundary`` holds the
    columns of the boundary nodes of the dgamma/dsigma blocks (zero in the
    default interior-supported model; needed when a lift supplies boundary
    values).
    """

    A: DiscreteOperator
    rhs: np.ndarray
    row_weights: np.ndarray
    bundle: SolutionBundle
    A_boundary: sp.csr_matrix
    certified: bool | None = None
    _normal_factor: object = field(default=None, repr=False)
    _rank_checked: bool = field(default=False, repr=False)

    @property
    def n_interior(self) -> int:
        return self.bundle.grid.n_interior

    @property
    def J(self) -> int:
        return self.bundle.J

    def data_rhs(self, dH: list[ScalarField]) -> np.ndarray:
        """Right-hand side for a new set of functional perturbations."""
        grid = self.bundle.grid
        iidx = grid.interior_indices()
        n_int = iidx.size
        rhs = np.zeros(2 * self.J * n_int)
        for j, dh in enumerate(dH):
            if dh.grid != grid:
                raise GridMismatch("dH field on the wrong grid")
            rhs[2 * j * n_int : (2 * j + 1) * n_int] = dh.values[iidx]
        return rhs


def assemble_system(
    bundle: SolutionBundle,
    dH: list[ScalarField],
    allow_deficient: bool = False,
    face_avg: str = "harmonic",
) -> LinearizedSystem:
    """Assemble the stacked first-order system at the bundle's base point.

    Row blocks per solution j: data rows then state rows, each over the
    interior nodes.  ``allow_deficient`` admits J < 3 configurations (used by
    injectivity probes of deliberately deficient setups).
    """
    J = bundle.J
    if len(dH) != J:
        raise ValueError("need one dH field per solution")
    if J < 3 and not allow_deficient:
        raise TooFewSolutions("the 2D inversion needs at least three solutions")
    grid = bundle.grid
    for dh in dH:
        if dh.grid != grid:
            raise GridMismatch("dH field on the wrong grid")

    iidx = grid.interior_indices()
    bidx = grid.boundary_indices()
    n_int = iidx.size
    n_bnd = bidx.size
    pos = -np.ones(grid.n_nodes, dtype=int)
    pos[iidx] = np.arange(n_int)
    bpos = -np.ones(grid.n_nodes, dtype=int)
    bpos[bidx] = np.arange(n_bnd)

    gam = bundle.coeffs.gamma.values
    sig = bundle.coeffs.sigma.values
    eta = bundle.eta
    hx, hy = grid.hx, grid.hy
    w_pde = float(np.sqrt(hx * hy))

    solver = bundle.solver
    A_II = solver.A_II  # interior rows/cols of L
    lcoo = A_II.tocoo()

    n_rows = 2 * J * n_int
    n_cols = (2 + J) * n_int
    col_dg = 0
    col_ds = n_int
    col_du0 = 2 * n_int

    rows, cols, vals = [], [], []
    brows, bcols, bvals = [], [], []  # boundary dgamma/dsigma columns
    rhs = np.zeros(n_rows)

    east, west = iidx + 1, iidx - 1
    north, south = iidx + grid.nx, iidx - grid.nx
    neighbor_data = (
        (east, 1.0 / hx, 0),
        (west, -1.0 / hx, 0),
        (north, 1.0 / hy, 1),
        (south, -1.0 / hy, 1),
    )

    for j in range(J):
        _, u = bundle.solutions[j]
        geo = bundle.geometry[j]
        F = geo.F.values
        r_data = 2 * j * n_int + np.arange(n_int)
        r_pde = r_data + n_int
        col_du = col_du0 + j * n_int

        # data rows: |F|^2 dgamma + eta u^2 dsigma + 2 gamma F.grad(du) + 2 eta sigma u du
        mag2 = F[iidx, 0] ** 2 + F[iidx, 1] ** 2
        rows.append(r_data)
        cols.append(col_dg + np.arange(n_int))
        vals.append(mag2)
        rows.append(r_data)
        cols.append(col_ds + np.arange(n_int))
        vals.append(eta * u.values[iidx] ** 2)
        rows.append(r_data)
        cols.append(col_du + np.arange(n_int))
        vals.append(2.0 * eta * sig[iidx] * u.values[iidx])
        for nb, sgn_h, axis in neighbor_data:
            inb = pos[nb]
            hit = inb >= 0  # boundary du columns are zero
            coef = gam[iidx] * F[iidx, axis] * sgn_h  # 2 gamma F_a / (2 h_a)
            rows.append(r_data[hit])
            cols.append(col_du + inb[hit])
            vals.append(coef[hit])
        rhs[r_data] = dH[j].values[iidx]

        # state rows (weighted by h): flux-jacobian in dgamma, u dsigma, L du
        Mj = diffusion_flux_jacobian(bundle.coeffs.gamma, u, face_avg)
        Mj_int = Mj[iidx]
        coo = Mj_int.tocoo()
        c_int = pos[coo.col]
        on_int = c_int >= 0
        rows.append(r_pde[coo.row[on_int]])
        cols.append(col_dg + c_int[on_int])
        vals.append(w_pde * coo.data[on_int])
        on_bnd = ~on_int
        if np.any(on_bnd):
            brows.append(r_pde[coo.row[on_bnd]])
            bcols.append(bpos[coo.col[on_bnd]])
            bvals.append(w_pde * coo.data[on_bnd])

        rows.append(r_pde)
        cols.append(col_ds + np.arange(n_int))
        vals.append(w_pde * u.values[iidx])

        rows.append(r_pde[lcoo.row])
        cols.append(col_du + lcoo.col)
        vals.append(w_pde * lcoo.data)

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rows, n_cols),
    ).tocsr()
    if brows:
        A_bnd = sp.coo_matrix(
            (np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))),
            shape=(n_rows, 2 * n_bnd),
        ).tocsr()
        # boundary dsigma columns never appear (pointwise term at interior rows)
        A_bnd = sp.hstack(
            [A_bnd[:, :n_bnd], sp.csr_matrix((n_rows, n_bnd))], format="csr"
        )
    else:
        A_bnd = sp.csr_matrix((n_rows, 2 * n_bnd))

    block_map = {"dgamma": (0, n_int), "dsigma": (n_int, 2 * n_int)}
    for j in range(J):
        block_map[f"du_{j}"] = (col_du0 + j * n_int, col_du0 + (j + 1) * n_int)

    weights = np.ones(n_rows)
    for j in range(J):
        weights[(2 * j + 1) * n_int : (2 * j + 2) * n_int] = w_pde

    rhs_vec = np.zeros(n_rows)
    for j, dh in enumerate(dH):
        rhs_vec[2 * j * n_int : (2 * j + 1) * n_int] = dh.values[iidx]

    return LinearizedSystem(
        A=DiscreteOperator(A, block_map),
        rhs=rhs_vec,
        row_weights=weights,
        bundle=bundle,
        A_boundary=A_bnd,
    )


def apply_linearized_forward(
    bundle: SolutionBundle,
    dgamma: ScalarField,
    dsigma: ScalarField,
    face_avg: str = "harmonic",
) -> tuple[list[ScalarField], list[ScalarField]]:
    """Exact Jacobian action of the forward map on (dgamma, dsigma).

    Solves L du_j = div(dgamma grad u_j) - u_j dsigma with du_j = 0 on dX,
    then evaluates the first-order functional perturbation.  Because the flux
    stencil enters through the exact derivative of its face average, this is
    the derivative of the discrete forward map, not merely a consistent
    discretization of the continuum one.
    """
    grid = bundle.grid
    if dgamma.grid != grid or dsigma.grid != grid:
        raise GridMismatch("perturbations on the wrong grid")
    iidx = grid.interior_indices()
    eta = bundle.eta
    gam = bundle.coeffs.gamma.values
    sig = bundle.coeffs.sigma.values
    dH_out, du_out = [], []
    for j in range(bundle.J):
        _, u = bundle.solutions[j]
        Mj = diffusion_flux_jacobian(bundle.coeffs.gamma, u, face_avg)
        rhs = -(Mj @ dgamma.values)[iidx] - (u.values * dsigma.values)[iidx]
        du = bundle.solver.solve_zero_dirichlet(rhs)
        F = bundle.geometry[j].F.values
        Gdu = gradient(du).values
        mag2 = F[:, 0] ** 2 + F[:, 1] ** 2
        dh = (
            mag2 * dgamma.values
            + eta * u.values ** 2 * dsigma.values
            + 2.0 * gam * (F[:, 0] * Gdu[:, 0] + F[:, 1] * Gdu[:, 1])
            + 2.0 * eta * sig * u.values * du.values
        )
        dH_out.append(ScalarField(grid, dh))
        du_out.append(du)
    return dH_out, du_out


def _normal_matrix(sys: LinearizedSystem) -> sp.csr_matrix:
    A = sys.A.matrix
    return (A.T @ A).tocsr()


def _ensure_full_rank(sys: LinearizedSystem, N: sp.csr_matrix) -> None:
    """Raise RankDeficient when the smallest Ritz value collapses.

    The normal equations stay consistent even for a singular operator, so a
    direct factorization can return an arbitrarily large spurious solution
    without tripping any residual check; the rank probe runs once per
    assembled system before the first solve.
    """
    if sys._rank_checked:
        return
    probe, smax = smallest_singular_probe(sys.A.matrix, N)
    sys._rank_checked = True
    if smax > 0 and probe < RANK_DEFICIENT_REL * smax:
        raise RankDeficient(
            f"smallest singular-value probe {probe:.3e} below "
            f"{RANK_DEFICIENT_REL:.0e} of {smax:.3e}: injectivity failure"
        )


def solve_normal_equations(
    sys: LinearizedSystem,
    g: list[BoundaryData] | None = None,
    rhs: np.ndarray | None = None,
    method: str = "auto",
    tol: float = NORMAL_TOL,
    maxiter: int = 20000,
) -> PerturbationVector:
    """Least-squares solution of the stacked system via its normal equations.

    With normal-derivative data ``g`` (one BoundaryData per unknown block,
    ordered dgamma, dsigma, du_1..du_J), the solution is split v = w + phi
    with phi the clamped biharmonic lift of g, and the homogeneous remainder
    w is solved for.  Default method is a cached sparse factorization at desk
    scale with diagonally preconditioned CG above DIRECT_NORMAL_LIMIT
    unknowns.
    """
    if sys.certified is False:
        warnings.warn("solving a system whose bundle failed certification")
    grid = sys.bundle.grid
    iidx = grid.interior_indices()
    bidx = grid.boundary_indices()
    n_int = iidx.size
    J = sys.J
    A = sys.A.matrix
    b = sys.rhs if rhs is None else rhs

    phis = None
    if g is not None:
        if len(g) != 2 + J:
            raise ValueError("need normal data for each unknown block")
        phis = [biharmonic_lift(gc) for gc in g]
        phi_int = np.concatenate([p.values[iidx] for p in phis])
        phi_bnd = np.concatenate([phis[0].values[bidx], phis[1].values[bidx]])
        b = b - A @ phi_int - sys.A_boundary @ phi_bnd

    N = _normal_matrix(sys)
    rhs_n = A.T @ b
    n_unknowns = N.shape[0]
    if not np.any(rhs_n):
        w = np.zeros(n_unknowns)
    elif method == "cg" or (method == "auto" and n_unknowns > DIRECT_NORMAL_LIMIT):
        _ensure_full_rank(sys, N)
        w = solve_spd(N, rhs_n, tol=tol, direct_threshold=0, maxiter=maxiter)
    else:
        _ensure_full_rank(sys, N)
        if sys._normal_factor is None:
            try:
                sys._normal_factor = FactorizedSPD(N, tol)
            except RuntimeError as exc:  # singular factorization
                raise SolverDivergence(str(exc)) from exc
        w = sys._normal_factor.solve(rhs_n)

    if phis is not None:
        w = w + np.concatenate([p.values[iidx] for p in phis])

    def unpack(block: int, boundary_from=None) -> ScalarField:
        full = np.zeros(grid.n_nodes)
        full[iidx] = w[block * n_int : (block + 1) * n_int]
        if boundary_from is not None:
            full[bidx] = boundary_from.values[bidx]
        return ScalarField(grid, full)

    dgamma = unpack(0, phis[0] if phis else None)
    dsigma = unpack(1, phis[1] if phis else None)
    du = tuple(unpack(2 + j) for j in range(J))
    return PerturbationVector(dgamma, dsigma, du)


def normal_residual(sys: LinearizedSystem, v: PerturbationVector) -> float:
    """Relative normal-equation residual of a candidate solution."""
    grid = sys.bundle.grid
    iidx = grid.interior_indices()
    w = np.concatenate(
        [v.dgamma.values[iidx], v.dsigma.values[iidx]]
        + [u.values[iidx] for u in v.du]
    )
    A = sys.A.matrix
    rN = A.T @ (A @ w) - A.T @ sys.rhs
    scale = max(float(np.linalg.norm(A.T @ sys.rhs)), 1e-300)
    return float(np.linalg.norm(rN)) / scale


def injectivity_probe(sys: LinearizedSystem, relative: bool = False) -> float:
    """Smallest-singular-value estimate of the stacked operator.

    Inverse-power iteration on the (shifted) normal operator followed by a
    direct Rayleigh quotient on the rectangular matrix; structurally null
    directions therefore report far below the eigenvalue round-off floor.
    """
    A = sys.A.matrix
    probe, smax = smallest_singular_probe(A, _normal_matrix(sys))
    if relative:
        return probe / smax if smax > 0 else 0.0
    return probe
