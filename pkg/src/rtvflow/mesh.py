"""Triangle meshes: structured generation, plain-text I/O, shape quality.

The mesh file format is line-oriented text.  The first significant line
holds ``<num_vertices> <num_triangles>``; the next ``num_vertices`` lines
hold ``x y`` coordinate pairs; the final ``num_triangles`` lines hold three
0-based vertex indices in counter-clockwise order.  ``#`` starts a comment
running to the end of the line; blank lines are ignored.  Coordinates are
written with 17 significant digits, so a save/load round trip reproduces
the mesh bit for bit.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "TriMesh",
    "QuasiUniformityReport",
    "MeshFormatError",
    "MeshGeometryError",
    "MeshTopologyError",
    "generate_structured",
    "load_mesh",
    "save_mesh",
    "quasi_uniformity",
]


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""


class MeshGeometryError(ValueError):
    """Raised for geometric defects: degenerate or clockwise triangles."""


class MeshTopologyError(ValueError):
    """Raised for non-conforming connectivity (hanging nodes, overlaps,
    disconnected pieces).  Conformity is checked through edge multiplicity
    and the Euler relation ``V - E + F = 1``, which holds exactly for a
    conforming triangulation of a simply connected polygonal domain."""


class TriMesh:
    """Conforming triangulation of a simply connected polygonal domain.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array
        0-based vertex indices, counter-clockwise per triangle.

    The arrays are copied and frozen; all derived quantities (areas,
    diameters, edge counts) are computed once at construction.
    """

    def __init__(self, vertices, triangles):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshGeometryError("vertices must be an (nv, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshTopologyError("triangles must be an (nt, 3) array")
        if not np.all(np.isfinite(vertices)):
            raise MeshGeometryError("vertex coordinates must be finite")
        nv = vertices.shape[0]
        if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
            raise MeshTopologyError("triangle index out of range")
        if triangles.shape[0] == 0:
            raise MeshTopologyError("mesh has no triangles")

        same = (
            (triangles[:, 0] == triangles[:, 1])
            | (triangles[:, 1] == triangles[:, 2])
            | (triangles[:, 2] == triangles[:, 0])
        )
        if np.any(same):
            raise MeshTopologyError(
                f"triangle {int(np.flatnonzero(same)[0])} repeats a vertex"
            )

        p = vertices[triangles]
        signed = 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )
        bad = signed <= 0.0
        if np.any(bad):
            raise MeshGeometryError(
                f"triangle {int(np.flatnonzero(bad)[0])} has nonpositive area "
                "(vertices must be counter-clockwise)"
            )

        referenced = np.zeros(nv, dtype=bool)
        referenced[triangles.ravel()] = True
        if not referenced.all():
            raise MeshTopologyError(
                f"vertex {int(np.flatnonzero(~referenced)[0])} is not used by any triangle"
            )

        edges = np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            e = uniq[np.argmax(counts > 2)]
            raise MeshTopologyError(
                f"edge ({e[0]}, {e[1]}) is shared by more than two triangles"
            )
        num_edges = uniq.shape[0]
        euler = nv - num_edges + triangles.shape[0]
        if euler != 1:
            raise MeshTopologyError(
                f"V - E + F = {euler} != 1; mesh is not a conforming triangulation "
                "of a simply connected domain"
            )

        edge_len = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)

        vertices.setflags(write=False)
        triangles.setflags(write=False)
        self._vertices = vertices
        self._triangles = triangles
        self._areas = signed
        self._areas.setflags(write=False)
        self._diameters = edge_len.max(axis=1)
        self._diameters.setflags(write=False)
        self._perimeters = edge_len.sum(axis=1)
        self._perimeters.setflags(write=False)
        self._num_edges = num_edges

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def triangles(self) -> np.ndarray:
        return self._triangles

    @property
    def num_vertices(self) -> int:
        return self._vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self._triangles.shape[0]

    @property
    def num_edges(self) -> int:
        return self._num_edges

    @property
    def areas(self) -> np.ndarray:
        """Triangle areas (all positive)."""
        return self._areas

    @property
    def diameters(self) -> np.ndarray:
        """Longest edge of each triangle."""
        return self._diameters

    @property
    def h_mesh(self) -> float:
        """Mesh size: the largest triangle diameter."""
        return float(self._diameters.max())

    @property
    def inradii(self) -> np.ndarray:
        return 2.0 * self._areas / self._perimeters

    def __repr__(self) -> str:
        return (
            f"TriMesh(num_vertices={self.num_vertices}, "
            f"num_triangles={self.num_triangles}, h_mesh={self.h_mesh:.6g})"
        )


@dataclass(frozen=True)
class QuasiUniformityReport:
    """Worst-case shape ratios over the mesh; larger is better shaped.

    rho_inradius : min over cells of inradius / diameter
    rho_area     : min over cells of area / diameter**2
    rho_size     : min over cells of diameter / h_mesh
    rho          : min of the three ratios
    """

    h_mesh: float
    rho_inradius: float
    rho_area: float
    rho_size: float
    rho: float


def quasi_uniformity(mesh: TriMesh) -> QuasiUniformityReport:
    """Measure shape regularity and size uniformity of a mesh."""
    d = mesh.diameters
    rho_in = float((mesh.inradii / d).min())
    rho_area = float((mesh.areas / d**2).min())
    rho_size = float((d / mesh.h_mesh).min())
    return QuasiUniformityReport(
        h_mesh=mesh.h_mesh,
        rho_inradius=rho_in,
        rho_area=rho_area,
        rho_size=rho_size,
        rho=min(rho_in, rho_area, rho_size),
    )


def generate_structured(n: int) -> TriMesh:
    """Uniform diagonal triangulation of the unit square.

    The square is cut into ``n x n`` cells and each cell is split along the
    diagonal from its lower-left to its upper-right corner, giving
    ``2 n**2`` congruent right triangles on ``(n+1)**2`` vertices with
    ``h_mesh = sqrt(2)/n``.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be a positive integer")
    side = np.linspace(0.0, 1.0, n + 1)
    gx, gy = np.meshgrid(side, side, indexing="xy")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ll = (iy * (n + 1) + ix).ravel()
    lr = ll + 1
    ul = ll + (n + 1)
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.vstack([lower, upper])
    return TriMesh(vertices, triangles)


def _tokenized_lines(text: str):
    """Yield (line_number, tokens) for significant lines; strip comments."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            yield lineno, body.split()


def load_mesh(source) -> TriMesh:
    """Read a mesh from a path or a (text or binary) file object.

    Raises
    ------
    MeshFormatError
        If the stream does not follow the documented layout.
    MeshGeometryError, MeshTopologyError
        If the parsed mesh fails validation.
    """
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")

    lines = _tokenized_lines(text)

    def next_line(what):
        try:
            return next(lines)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file while reading {what}") from None

    lineno, tokens = next_line("the header")
    if len(tokens) != 2:
        raise MeshFormatError(
            f"line {lineno}: header must be '<num_vertices> <num_triangles>'"
        )
    try:
        nv, nt = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise MeshFormatError(f"line {lineno}: header entries must be integers") from None
    if nv < 3 or nt < 1:
        raise MeshFormatError(f"line {lineno}: need at least 3 vertices and 1 triangle")

    vertices = np.empty((nv, 2), dtype=np.float64)
    for k in range(nv):
        lineno, tokens = next_line(f"vertex {k}")
        if len(tokens) != 2:
            raise MeshFormatError(f"line {lineno}: expected 'x y' for vertex {k}")
        try:
            vertices[k, 0] = float(tokens[0])
            vertices[k, 1] = float(tokens[1])
        except ValueError:
            raise MeshFormatError(f"line {lineno}: bad coordinate for vertex {k}") from None

    triangles = np.empty((nt, 3), dtype=np.int64)
    for k in range(nt):
        lineno, tokens = next_line(f"triangle {k}")
        if len(tokens) != 3:
            raise MeshFormatError(f"line {lineno}: expected 'i0 i1 i2' for triangle {k}")
        try:
            triangles[k] = [int(t) for t in tokens]
        except ValueError:
            raise MeshFormatError(f"line {lineno}: bad vertex index for triangle {k}") from None

    for lineno, _ in lines:
        raise MeshFormatError(f"line {lineno}: trailing content after last triangle")

    return TriMesh(vertices, triangles)


def save_mesh(mesh: TriMesh, dest) -> None:
    """Write a mesh to a path or text file object in the plain-text format."""
    buf = io.StringIO()
    buf.write(f"{mesh.num_vertices} {mesh.num_triangles}\n")
    for x, y in mesh.vertices:
        buf.write(f"{x:.17g} {y:.17g}\n")
    for a, b, c in mesh.triangles:
        buf.write(f"{a} {b} {c}\n")
    payload = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(payload)
    else:
        Path(dest).write_text(payload, encoding="utf-8")
