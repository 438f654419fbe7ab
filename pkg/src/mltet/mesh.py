"""Tetrahedral meshes: 6-tet cube subdivision, the periodic honeycomb cell,
global node numbering and a small text file format."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import InvertedElement, NonConformingMesh, ParseError
from .kernels import ElementGeometry, batch_geometry

# Kuhn subdivision of the unit cube: one tet per axis ordering, vertices
# 0, e_s0, e_s0 + e_s1, (1, 1, 1).  Odd orderings are flipped to keep det > 0.
_AXES = np.eye(3, dtype=int)


def _cube_tets() -> list[np.ndarray]:
    tets = []
    for perm in itertools.permutations(range(3)):
        corners = [np.zeros(3, dtype=int)]
        for ax in perm:
            corners.append(corners[-1] + _AXES[ax])
        c = np.array(corners)
        if np.linalg.det((c[1:] - c[0]).T) < 0:
            c[[1, 2]] = c[[2, 1]]
        tets.append(c)
    return tets


CUBE_TETS = _cube_tets()

HONEYCOMB_T = np.array([
    [1.0, -1.0 / 3.0, -1.0 / 3.0],
    [0.0, np.sqrt(8.0 / 9.0), -np.sqrt(2.0 / 9.0)],
    [0.0, 0.0, np.sqrt(2.0 / 3.0)],
])
HONEYCOMB_VOLUME = 2.0 * np.sqrt(3.0) / 27.0


@dataclass(frozen=True, eq=False)
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("tet references a vertex index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "tets", t)
        self._geometry  # validates orientation

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @cached_property
    def _geometry(self):
        return batch_geometry(self.vertices[self.tets])

    @property
    def jacobians(self) -> np.ndarray:
        return self._geometry[0]

    @property
    def inverse_jacobians(self) -> np.ndarray:
        return self._geometry[1]

    @property
    def dets(self) -> np.ndarray:
        return self._geometry[2]

    @property
    def volumes(self) -> np.ndarray:
        return self.dets / 6.0

    def geometry(self, e: int) -> ElementGeometry:
        jac, inv, det = self._geometry
        return ElementGeometry(jac[e], inv[e], float(det[e]))

    def map_points(self, ref_points) -> np.ndarray:
        """Images of reference points in every element, shape (E, npts, 3)."""
        pts = np.atleast_2d(np.asarray(ref_points, dtype=float))[:, :3]
        origin = self.vertices[self.tets[:, 0]]
        return origin[:, None, :] + np.einsum("epa,ka->ekp", self.jacobians, pts)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    @cached_property
    def h(self) -> float:
        """Largest edge length."""
        v = self.vertices[self.tets]
        pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        return float(max(np.linalg.norm(v[:, i] - v[:, j], axis=1).max() for i, j in pairs))

    def face_counts(self) -> dict[tuple[int, int, int], int]:
        counts: dict[tuple[int, int, int], int] = {}
        for tet in self.tets:
            for v in range(4):
                key = tuple(sorted(int(x) for j, x in enumerate(tet) if j != v))
                counts[key] = counts.get(key, 0) + 1
        return counts


def _distortion(points, lo, hi, amplitude):
    """Smooth displacement vanishing on the box boundary."""
    xi = (points - lo) / (hi - lo)
    bump = np.prod(np.sin(np.pi * xi), axis=1)
    sign = np.array([1.0, -1.0, 1.0])
    return amplitude * (hi - lo) / np.pi * sign * bump[:, None]


def build_block_mesh(nx: int, ny: int, nz: int, box=((0.0, 1.0),) * 3,
                     distortion: float = 0.0) -> TetMesh:
    """Block of nx*ny*nz cubes, each cut into 6 tetrahedra.

    ``distortion`` scales a sinusoidal interior displacement of the vertices;
    boundary vertices do not move, so the domain is unchanged.
    """
    counts = np.array([nx, ny, nz])
    if np.any(counts < 1):
        raise ValueError("cell counts must be >= 1")
    if not 0.0 <= distortion <= 0.3:
        raise ValueError("distortion amplitude must lie in [0, 0.3]")
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    grid = np.stack(np.meshgrid(*[np.arange(c + 1) for c in counts], indexing="ij"), -1)
    lattice = grid.reshape(-1, 3)
    strides = np.array([(ny + 1) * (nz + 1), nz + 1, 1])
    vertices = lo + lattice / counts * (hi - lo)
    if distortion:
        vertices = vertices + _distortion(vertices, lo, hi, distortion)
    cells = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"), -1).reshape(-1, 3)
    # cell-major ordering: the 6 tets of a cube are consecutive
    tets = np.stack([(cells[:, None, :] + corners[None]) @ strides for corners in CUBE_TETS], 1)
    tets = tets.reshape(-1, 4)
    try:
        return TetMesh(vertices, tets)
    except InvertedElement as exc:
        raise InvertedElement(f"distortion {distortion} inverts an element: {exc}") from exc


# -- global numbering ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DofMap:
    local_to_global: np.ndarray   # (E, n)
    n_global: int
    boundary: np.ndarray          # (N,) bool
    coords: np.ndarray            # (N, 3)

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(~self.boundary))


def _identify(points: np.ndarray, tol: float) -> np.ndarray:
    """Group coincident points; labels numbered in order of first appearance."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    n = len(points)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    rank = np.empty_like(first)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[labels]


def enumerate_global_dofs(mesh: TetMesh, node_points, bary_tol: float = 1e-10) -> DofMap:
    """Number the physical images of reference nodes, sharing coincident ones.

    ``node_points`` are reference nodes in barycentric form (n, 4).  Nodes
    are boundary nodes when they lie on a face owned by a single tet.

    Raises
    ------
    NonConformingMesh
        if a face is shared by more than two tets or two nodes of one tet coincide.
    """
    bary = np.atleast_2d(np.asarray(node_points, dtype=float))
    if bary.shape[1] == 3:
        bary = np.column_stack([bary, 1.0 - bary.sum(axis=1)])
    n = len(bary)
    images = mesh.map_points(bary).reshape(-1, 3)
    labels = _identify(images, 1e-8 * mesh.h).reshape(mesh.n_tets, n)
    for e, row in enumerate(labels):
        if len(np.unique(row)) != n:
            raise NonConformingMesh(f"two nodes of tet {e} coincide")
    counts = mesh.face_counts()
    if any(c > 2 for c in counts.values()):
        raise NonConformingMesh("a face is shared by more than two tets")
    n_global = int(labels.max()) + 1 if labels.size else 0
    boundary = np.zeros(n_global, dtype=bool)
    # local vertex v sits at barycentric coordinate (v - 1) % 4 = 1 (x4 is
    # the origin vertex); that coordinate vanishes on the face opposite v
    on_face = np.abs(bary) < bary_tol
    for e, tet in enumerate(mesh.tets):
        for v in range(4):
            key = tuple(sorted(int(x) for j, x in enumerate(tet) if j != v))
            if counts[key] == 1:
                boundary[labels[e, on_face[:, (v - 1) % 4]]] = True
    coords = np.zeros((n_global, 3))
    coords[labels.reshape(-1)] = images
    return DofMap(labels, n_global, boundary, coords)


# -- periodic honeycomb ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PeriodicCell:
    """The 6-tet unit cell mapped by T, with nodes identified under lattice shifts.

    ``owner[e, i]`` is the owned representative of local node ``i`` of tet
    ``e`` and ``shift[e, i]`` the integer lattice offset so that the node sits
    at ``T (owned_position + shift)``.
    """

    mesh: TetMesh
    transform: np.ndarray
    owner: np.ndarray = field(default=None)
    shift: np.ndarray = field(default=None)
    n0: int = 0

    @property
    def average_volume(self) -> float:
        return float(self.mesh.volumes.mean())


def build_honeycomb_cell(node_points=None) -> PeriodicCell:
    """Honeycomb cell; with ``node_points`` also identifies periodic nodes."""
    cube = TetMesh(np.array(list(itertools.product((0, 1), repeat=3)), dtype=float),
                   [c @ np.array([4, 2, 1]) for c in CUBE_TETS])
    mesh = TetMesh(cube.vertices @ HONEYCOMB_T.T, cube.tets)
    if node_points is None:
        return PeriodicCell(mesh, HONEYCOMB_T)
    bary = np.atleast_2d(np.asarray(node_points, dtype=float))
    ref = cube.map_points(bary)                       # nodes in cube coordinates
    shift = np.floor(ref + 1e-9).astype(int)
    wrapped = ref - shift
    n = ref.shape[1]
    labels = _identify(wrapped.reshape(-1, 3), 1e-9).reshape(-1, n)
    return PeriodicCell(mesh, HONEYCOMB_T, labels, shift, int(labels.max()) + 1)


# -- file format ----------------------------------------------------------------------

def write_mesh(path, mesh: TetMesh) -> None:
    """Text format: 'tetmesh 1', counts line, vertex lines, tet lines."""
    lines = ["tetmesh 1", f"{len(mesh.vertices)} {mesh.n_tets}"]
    lines += [" ".join(f"{x:.17g}" for x in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in t) for t in mesh.tets]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TetMesh:
    """Parse a mesh file; raises ParseError with the offending line number."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "tetmesh 1":
        raise ParseError("expected header 'tetmesh 1'", line=1)
    try:
        nv, nt = (int(x) for x in text[1].split())
    except (IndexError, ValueError):
        raise ParseError("expected '<n_vertices> <n_tets>'", line=2) from None
    if len(text) < 2 + nv + nt:
        raise ParseError("file ends before all records were read", line=len(text))
    vertices = np.empty((nv, 3))
    for k in range(nv):
        ln = 3 + k
        try:
            vertices[k] = [float(x) for x in text[ln - 1].split()]
        except ValueError:
            raise ParseError("bad vertex record", line=ln) from None
    tets = np.empty((nt, 4), dtype=np.int64)
    for k in range(nt):
        ln = 3 + nv + k
        try:
            tets[k] = [int(x) for x in text[ln - 1].split()]
        except ValueError:
            raise ParseError("bad tet record", line=ln) from None
        if tets[k].min() < 0 or tets[k].max() >= nv:
            raise ParseError("vertex index out of range", line=ln)
    try:
        return TetMesh(vertices, tets)
    except InvertedElement as exc:
        bad = int(np.argmin(batch_geometry_dets(vertices, tets)))
        raise ParseError(f"tet has non-positive volume: {exc}", line=3 + nv + bad) from None


def batch_geometry_dets(vertices, tets) -> np.ndarray:
    v = np.asarray(vertices)[np.asarray(tets)]
    return np.linalg.det(np.transpose(v[:, 1:] - v[:, :1], (0, 2, 1)))
