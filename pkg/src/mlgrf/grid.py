"""Structured tensor-product mesh hierarchies with uniform 2x refinement.

Levels are numbered 0 (finest) through L (coarsest).  Element ordering is
lexicographic with x fastest and z slowest; faces are ordered by normal
direction (all x-normal, then y-, then z-normal), each block lexicographic
in the same way.  All boxes are half-open, [a, b), so every point in the
padded domain belongs to exactly one cell per level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# face tag values
INTERIOR = 0
GAMMA_D = 1
GAMMA_N = 2


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class MeshSpec:
    """Specification of a mesh hierarchy on a (possibly padded) box.

    ``coarse_cells`` gives the cell counts per direction on the coarsest
    level (before padding); ``num_levels`` is L+1; ``pad_cells`` adds that
    many coarse cells per side in every direction, extending the domain.
    """

    dim: int
    domain_min: tuple[float, ...]
    domain_max: tuple[float, ...]
    coarse_cells: tuple[int, ...]
    num_levels: int
    pad_cells: int = 0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GridError(f"dim must be 1, 2 or 3, got {self.dim}")
        object.__setattr__(self, "domain_min", tuple(float(x) for x in self.domain_min))
        object.__setattr__(self, "domain_max", tuple(float(x) for x in self.domain_max))
        object.__setattr__(self, "coarse_cells", tuple(int(n) for n in self.coarse_cells))
        if not (len(self.domain_min) == len(self.domain_max) == len(self.coarse_cells) == self.dim):
            raise GridError("domain_min, domain_max, coarse_cells must all have length dim")
        if self.num_levels < 1:
            raise GridError(f"num_levels must be >= 1, got {self.num_levels}")
        if self.pad_cells < 0:
            raise GridError(f"pad_cells must be >= 0, got {self.pad_cells}")
        for i in range(self.dim):
            if self.coarse_cells[i] < 1:
                raise GridError(f"coarse_cells[{i}] must be >= 1")
            if not self.domain_max[i] > self.domain_min[i]:
                raise GridError(f"domain_max[{i}] must exceed domain_min[{i}]")

    @property
    def num_refinements(self) -> int:
        """L: number of refinements between coarsest and finest level."""
        return self.num_levels - 1


class LevelMesh:
    """One level of a structured tensor-product hierarchy.

    Boundary faces carry the default flow-cell tags: GAMMA_D on the x_min
    and x_max boundaries, GAMMA_N elsewhere; ``gamma_out`` marks the x_max
    faces restricted to the physical (unpadded) domain.  The SPDE sampler
    ignores the tags and eliminates all boundary flux dofs.
    """

    def __init__(self, spec: MeshSpec, level: int):
        self.level = level
        self.dim = spec.dim
        L = spec.num_refinements
        refine = 2 ** (L - level)

        coarse_h = np.array(
            [(spec.domain_max[i] - spec.domain_min[i]) / spec.coarse_cells[i] for i in range(spec.dim)]
        )
        pad = spec.pad_cells
        self.phys_min = np.array(spec.domain_min, dtype=float)
        self.phys_max = np.array(spec.domain_max, dtype=float)
        self.origin = self.phys_min - pad * coarse_h
        self.corner = self.phys_max + pad * coarse_h
        self.cells_per_dir = np.array(
            [(spec.coarse_cells[i] + 2 * pad) * refine for i in range(spec.dim)], dtype=np.int64
        )
        self.spacing = (self.corner - self.origin) / self.cells_per_dir
        self.cell_volume = float(np.prod(self.spacing))
        self.num_elements = int(np.prod(self.cells_per_dir))

        # face block layout: for each normal direction a, the face grid has
        # one extra entry along a
        self._face_shape = []
        self._face_offsets = []
        off = 0
        for a in range(self.dim):
            shape = self.cells_per_dir.copy()
            shape[a] += 1
            self._face_shape.append(shape)
            self._face_offsets.append(off)
            off += int(np.prod(shape))
        self.num_faces = off

        self.face_tags = self._tag_faces()
        self.gamma_out = self._mark_outflow()
        self.inside_physical = self._mark_physical()
        self._cache: dict = {}

    # -- element indexing ------------------------------------------------

    def element_index(self, multi) -> int:
        multi = np.asarray(multi, dtype=np.int64)
        idx = 0
        for a in reversed(range(self.dim)):
            idx = idx * self.cells_per_dir[a] + multi[a]
        return int(idx)

    def element_multi(self, index: int) -> np.ndarray:
        if not 0 <= index < self.num_elements:
            raise GridError(f"element index {index} out of range")
        multi = np.empty(self.dim, dtype=np.int64)
        for a in range(self.dim):
            multi[a] = index % self.cells_per_dir[a]
            index //= self.cells_per_dir[a]
        return multi

    def cell_center(self, index: int) -> np.ndarray:
        return self.origin + (self.element_multi(index) + 0.5) * self.spacing

    def cell_centers(self) -> np.ndarray:
        """Centers of all elements, shape (num_elements, dim)."""
        grids = [self.origin[a] + (np.arange(self.cells_per_dir[a]) + 0.5) * self.spacing[a]
                 for a in range(self.dim)]
        mesh = np.meshgrid(*grids, indexing="ij")
        # element index runs x fastest: stack with x fastest requires
        # transposing the ij meshgrid to C order over (z, y, x)
        pts = np.stack([m.T.reshape(-1) for m in mesh], axis=-1)
        return pts

    # -- face indexing ---------------------------------------------------

    def face_index(self, axis: int, multi) -> int:
        multi = np.asarray(multi, dtype=np.int64)
        shape = self._face_shape[axis]
        idx = 0
        for a in reversed(range(self.dim)):
            idx = idx * shape[a] + multi[a]
        return self._face_offsets[axis] + int(idx)

    def face_axis(self, face: int) -> int:
        for a in reversed(range(self.dim)):
            if face >= self._face_offsets[a]:
                return a
        raise GridError(f"face index {face} out of range")

    def face_multi(self, face: int) -> tuple[int, np.ndarray]:
        axis = self.face_axis(face)
        rem = face - self._face_offsets[axis]
        shape = self._face_shape[axis]
        multi = np.empty(self.dim, dtype=np.int64)
        for a in range(self.dim):
            multi[a] = rem % shape[a]
            rem //= shape[a]
        return axis, multi

    def face_area(self, axis: int) -> float:
        return self.cell_volume / self.spacing[axis]

    def element_faces(self, index: int):
        """All (face, sign) pairs of an element; sign +1 when the global
        normal (+x/+y/+z) points out of the element."""
        multi = self.element_multi(index)
        out = []
        for a in range(self.dim):
            lo = multi.copy()
            hi = multi.copy()
            hi[a] += 1
            out.append((self.face_index(a, lo), -1))
            out.append((self.face_index(a, hi), +1))
        return out

    def boundary_faces(self) -> np.ndarray:
        """Boolean mask over faces marking the outer boundary."""
        mask = np.zeros(self.num_faces, dtype=bool)
        for a in range(self.dim):
            shape = self._face_shape[a]
            idx = np.arange(int(np.prod(shape)))
            coord = (idx // int(np.prod(shape[:a]))) % shape[a]
            on_bdry = (coord == 0) | (coord == shape[a] - 1)
            mask[self._face_offsets[a] + idx[on_bdry]] = True
        return mask

    def face_centers(self) -> np.ndarray:
        pts = np.empty((self.num_faces, self.dim))
        for a in range(self.dim):
            shape = self._face_shape[a]
            n = int(np.prod(shape))
            idx = np.arange(n)
            for b in range(self.dim):
                coord = (idx // int(np.prod(shape[:b]))) % shape[b]
                shift = 0.0 if b == a else 0.5
                pts[self._face_offsets[a] + idx, b] = self.origin[b] + (coord + shift) * self.spacing[b]
        return pts

    # -- tagging ---------------------------------------------------------

    def _tag_faces(self) -> np.ndarray:
        tags = np.zeros(self.num_faces, dtype=np.int8)
        bdry = self.boundary_faces()
        tags[bdry] = GAMMA_N
        # x_min / x_max faces are Dirichlet in the default flow-cell layout
        shape = self._face_shape[0]
        idx = np.arange(int(np.prod(shape)))
        coord_x = idx % shape[0]
        on_x = (coord_x == 0) | (coord_x == shape[0] - 1)
        tags[self._face_offsets[0] + idx[on_x]] = GAMMA_D
        return tags

    def _mark_outflow(self) -> np.ndarray:
        """x_max boundary faces, restricted transversally to the physical
        domain when padding is on."""
        mask = np.zeros(self.num_faces, dtype=bool)
        shape = self._face_shape[0]
        idx = np.arange(int(np.prod(shape)))
        coord_x = idx % shape[0]
        sel = coord_x == shape[0] - 1
        centers = self.face_centers()[self._face_offsets[0] + idx[sel]]
        inside = np.ones(sel.sum(), dtype=bool)
        for b in range(1, self.dim):
            inside &= (centers[:, b] > self.phys_min[b]) & (centers[:, b] < self.phys_max[b])
        mask[self._face_offsets[0] + idx[sel][inside]] = True
        return mask

    def _mark_physical(self) -> np.ndarray:
        centers = self.cell_centers()
        mask = np.ones(self.num_elements, dtype=bool)
        for a in range(self.dim):
            mask &= (centers[:, a] > self.phys_min[a]) & (centers[:, a] < self.phys_max[a])
        return mask

    def __repr__(self):
        cells = "x".join(str(int(n)) for n in self.cells_per_dir)
        return f"LevelMesh(level={self.level}, cells={cells})"


def build_hierarchy(spec: MeshSpec) -> list[LevelMesh]:
    """Build all L+1 levels, ordered fine (index 0) to coarse (index L)."""
    return [LevelMesh(spec, level) for level in range(spec.num_levels)]


def parent_of(meshes: list[LevelMesh], level: int, element: int) -> int:
    """Index of the level ``level+1`` element containing a level ``level``
    element."""
    if not 0 <= level < len(meshes) - 1:
        raise GridError(f"level {level} has no parent level")
    fine = meshes[level]
    coarse = meshes[level + 1]
    multi = fine.element_multi(element)
    return coarse.element_index(multi // 2)


def parent_map(fine: LevelMesh, coarse: LevelMesh) -> np.ndarray:
    """Vector of parent element indices, one per fine element."""
    if coarse.level != fine.level + 1:
        raise GridError("coarse mesh must be the parent level of fine")
    if not np.all(coarse.cells_per_dir * 2 == fine.cells_per_dir):
        raise GridError("meshes are not a nested 2x refinement pair")
    idx = np.arange(fine.num_elements)
    parent = np.zeros(fine.num_elements, dtype=np.int64)
    rem = idx.copy()
    stride = 1
    for a in range(fine.dim):
        coord = rem % fine.cells_per_dir[a]
        rem //= fine.cells_per_dir[a]
        parent += (coord // 2) * stride
        stride *= coarse.cells_per_dir[a]
    return parent


def locate_element(mesh: LevelMesh, point) -> int:
    """Cell whose half-open tensor box contains ``point``."""
    point = np.asarray(point, dtype=float)
    if point.shape != (mesh.dim,):
        raise GridError(f"point must have shape ({mesh.dim},)")
    multi = np.floor((point - mesh.origin) / mesh.spacing).astype(np.int64)
    if np.any(multi < 0) or np.any(multi >= mesh.cells_per_dir):
        raise GridError(f"point {point} is outside the padded domain")
    return mesh.element_index(multi)
