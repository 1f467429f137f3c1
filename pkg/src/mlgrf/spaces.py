"""Per-level finite element operators and inter-level transfer.

Piecewise constants carry a diagonal mass matrix W with entries equal to
cell volumes.  The lowest-order Raviart-Thomas space uses face-normal flux
degrees of freedom with fixed global normals (+x/+y/+z), so the divergence
matrix B has entries exactly +-1.  Interpolation P injects coarse element
coefficients into their children; the restriction is Pi = W_c^{-1} P^T W_f.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import GridError, LevelMesh, parent_map


class AssemblyError(ValueError):
    pass


@dataclass(eq=False)
class LevelOperators:
    """Assembled operators for one level.

    W is stored as the vector of diagonal entries.  M and B are restricted
    to ``active_faces`` (boundary flux dofs eliminated, q.n = 0 on the
    outer boundary); both are None in 1D where the RT space degenerates.
    """

    level: int
    mesh: LevelMesh
    W: np.ndarray
    W_sqrt: np.ndarray
    M: sp.csr_matrix | None
    B: sp.csr_matrix | None
    active_faces: np.ndarray | None
    lumped: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_elements(self) -> int:
        return self.W.shape[0]

    @property
    def num_flux_dofs(self) -> int:
        return 0 if self.M is None else self.M.shape[0]


@dataclass(eq=False)
class TransferPair:
    """Interpolation/restriction between a fine level and its parent."""

    fine_level: int
    P: sp.csr_matrix
    Pi: sp.csr_matrix


def assemble_theta_mass(mesh: LevelMesh) -> np.ndarray:
    """Diagonal of the piecewise-constant mass matrix: cell volumes."""
    return np.full(mesh.num_elements, mesh.cell_volume)


def _gauss01(n: int):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def assemble_rt_mass(
    mesh: LevelMesh,
    element_weights: np.ndarray | None = None,
    n_gauss: int = 2,
    lumped: bool = False,
) -> sp.csr_matrix:
    """RT0 mass matrix over all faces, unit-flux dof normalization.

    ``element_weights`` scales each element's contribution (used as the
    k^{-1} factor in the Darcy velocity mass matrix).  The tensor-product
    Gauss rule with ``n_gauss`` >= 2 points per direction is exact for RT0
    on affine boxes.  With ``lumped`` the row-sum diagonal is returned,
    which changes the discrete covariance.
    """
    if mesh.dim == 1:
        raise AssemblyError("RT spaces are not supported in 1D")
    if element_weights is None:
        weights = np.ones(mesh.num_elements)
    else:
        weights = np.asarray(element_weights, dtype=float)
        if weights.shape != (mesh.num_elements,):
            raise AssemblyError("element_weights must have one entry per element")

    t, wq = _gauss01(n_gauss)
    # basis values along the normal direction in reference coordinates:
    # minus-face dof is (1 - t)/A, plus-face dof is t/A with A the face area
    phi_minus = 1.0 - t
    phi_plus = t
    c_mm = float(np.sum(wq * phi_minus * phi_minus))
    c_pp = float(np.sum(wq * phi_plus * phi_plus))
    c_mp = float(np.sum(wq * phi_minus * phi_plus))

    rows, cols, vals = [], [], []
    n = mesh.num_elements
    idx = np.arange(n)
    multis = np.empty((mesh.dim, n), dtype=np.int64)
    rem = idx.copy()
    for a in range(mesh.dim):
        multis[a] = rem % mesh.cells_per_dir[a]
        rem //= mesh.cells_per_dir[a]

    for a in range(mesh.dim):
        shape = mesh._face_shape[a]
        stride = np.ones(mesh.dim, dtype=np.int64)
        for b in range(1, mesh.dim):
            stride[b] = stride[b - 1] * shape[b - 1]
        base = mesh._face_offsets[a] + (multis * stride[:, None]).sum(axis=0)
        minus = base
        plus = base + stride[a]
        area = mesh.face_area(a)
        # vol * (phi_i phi_j)/A^2 = (h_a^2 / vol) * reference integral
        scale = (mesh.spacing[a] ** 2 / mesh.cell_volume) * weights
        rows.extend([minus, plus, minus, plus])
        cols.extend([minus, plus, plus, minus])
        vals.extend([c_mm * scale, c_pp * scale, c_mp * scale, c_mp * scale])

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    M = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.num_faces, mesh.num_faces)).tocsr()
    M.sum_duplicates()
    M.sort_indices()
    if lumped:
        M = sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()
    return M


def assemble_div(mesh: LevelMesh) -> sp.csr_matrix:
    """Divergence matrix over all faces: B[elem, face] = +-1."""
    if mesh.dim == 1:
        raise AssemblyError("RT spaces are not supported in 1D")
    n = mesh.num_elements
    idx = np.arange(n)
    multis = np.empty((mesh.dim, n), dtype=np.int64)
    rem = idx.copy()
    for a in range(mesh.dim):
        multis[a] = rem % mesh.cells_per_dir[a]
        rem //= mesh.cells_per_dir[a]

    rows, cols, vals = [], [], []
    for a in range(mesh.dim):
        shape = mesh._face_shape[a]
        stride = np.ones(mesh.dim, dtype=np.int64)
        for b in range(1, mesh.dim):
            stride[b] = stride[b - 1] * shape[b - 1]
        base = mesh._face_offsets[a] + (multis * stride[:, None]).sum(axis=0)
        rows.extend([idx, idx])
        cols.extend([base, base + stride[a]])
        vals.extend([-np.ones(n), np.ones(n)])

    B = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, mesh.num_faces),
    ).tocsr()
    B.sort_indices()
    return B


def build_transfer(
    fine: LevelMesh,
    coarse: LevelMesh,
    W_fine: np.ndarray,
    W_coarse: np.ndarray,
) -> TransferPair:
    """Piecewise-constant interpolation P and restriction Pi = Wc^-1 P^T Wf."""
    parents = parent_map(fine, coarse)
    nf, nc = fine.num_elements, coarse.num_elements
    P = sp.csr_matrix(
        (np.ones(nf), (np.arange(nf), parents)), shape=(nf, nc)
    )
    Pi = sp.diags(1.0 / W_coarse) @ P.T @ sp.diags(W_fine)
    return TransferPair(fine_level=fine.level, P=P, Pi=Pi.tocsr())


def project_coarse(pair: TransferPair, zeta_fine: np.ndarray) -> np.ndarray:
    """Coefficient vector of the L2 projection onto the coarse space."""
    zeta_fine = np.asarray(zeta_fine)
    if zeta_fine.shape[0] != pair.P.shape[0]:
        raise GridError("vector length does not match the fine level")
    return pair.Pi @ zeta_fine


def build_level_operators(mesh: LevelMesh, lump_rt_mass: bool = False) -> LevelOperators:
    """Assemble W (all dims) and boundary-eliminated M, B (dim >= 2)."""
    W = assemble_theta_mass(mesh)
    if mesh.dim == 1:
        return LevelOperators(mesh.level, mesh, W, np.sqrt(W), None, None, None)
    active = np.flatnonzero(~mesh.boundary_faces())
    M = assemble_rt_mass(mesh, lumped=lump_rt_mass)[np.ix_(active, active)].tocsr()
    B = assemble_div(mesh)[:, active].tocsr()
    return LevelOperators(mesh.level, mesh, W, np.sqrt(W), M, B, active, lumped=lump_rt_mass)


def build_hierarchy_operators(
    meshes: list[LevelMesh], lump_rt_mass: bool = False
) -> tuple[list[LevelOperators], list[TransferPair]]:
    """Operators per level plus transfers for each adjacent pair.

    ``transfers[l]`` connects fine level l with coarse level l+1.
    """
    ops = [build_level_operators(m, lump_rt_mass=lump_rt_mass) for m in meshes]
    transfers = [
        build_transfer(meshes[l], meshes[l + 1], ops[l].W, ops[l + 1].W)
        for l in range(len(meshes) - 1)
    ]
    return ops, transfers


def dump_matrix(mat, path) -> None:
    """Write a matrix in triplet `row col value` text form."""
    coo = sp.coo_matrix(mat)
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
