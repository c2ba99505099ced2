"""Uniform conforming triangulations of the unit square with face topology."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .io import atomic_write_text

INFLOW = "inflow"
OUTFLOW_OR_TANGENT = "outflow-or-tangent"

_BARY_TOL = 1e-12


@dataclass(frozen=True)
class Face:
    """Read-only view of one mesh edge.

    ``neighbors`` is ``(E1, E2)`` for interior faces, with the normal pointing
    from ``E1`` to ``E2``, and ``(E,)`` for boundary faces, where the normal
    is the outward normal of the domain.
    """

    vertices: tuple[int, int]
    kind: str
    neighbors: tuple[int, ...]
    normal: tuple[float, float]
    h_e: float

    @property
    def is_interior(self) -> bool:
        return self.kind == "interior"


class Mesh:
    """Immutable triangulation with oriented faces.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array, counter-clockwise vertex triples
    face_vertices : (nf, 2) int array
    face_elements : (nf, 2) int array, second column is -1 on boundary faces
    normals : (nf, 2) float array, unit normals n_e
    h_e : (nf,) float array, edge lengths
    element_faces : (ne, 3) int array, local face ``l`` is opposite vertex ``l``
    """

    def __init__(self, vertices: np.ndarray, elements: np.ndarray):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        v = self.vertices[self.elements]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        if np.any(signed <= 0):
            raise ValueError("elements must be positively oriented")
        self.areas = signed
        self._build_faces()
        for arr in (self.vertices, self.elements, self.areas, self.face_vertices,
                    self.face_elements, self.normals, self.h_e, self.element_faces):
            arr.setflags(write=False)

    def _build_faces(self) -> None:
        ne = len(self.elements)
        # local face l is the edge (v[l+1], v[l+2])
        local = np.array([[1, 2], [2, 0], [0, 1]])
        edges = self.elements[:, local]  # (ne, 3, 2)
        keys = np.sort(edges.reshape(-1, 2), axis=1)
        uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                          return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise ValueError("non-manifold edge in triangulation")
        nf = len(uniq)
        owners = np.full((nf, 2), -1, dtype=np.int64)
        owner_local = np.full((nf, 2), -1, dtype=np.int64)
        # sorted traversal gives the smaller element index first
        for flat, f in enumerate(inverse):
            e, l = divmod(flat, 3)
            slot = 0 if owners[f, 0] < 0 else 1
            owners[f, slot] = e
            owner_local[f, slot] = l

        # orient the stored vertex pair along E1's counter-clockwise edge
        e1_edges = edges[owners[:, 0], owner_local[:, 0]]
        p, q = self.vertices[e1_edges[:, 0]], self.vertices[e1_edges[:, 1]]
        t = q - p
        length = np.hypot(t[:, 0], t[:, 1])
        # outward normal of a CCW element is the tangent rotated clockwise
        normals = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]

        self.face_vertices = e1_edges
        self.face_elements = owners
        self.face_local = owner_local
        self.normals = normals
        self.h_e = length
        self.element_faces = inverse.reshape(ne, 3)
        self.interior_faces = np.flatnonzero(owners[:, 1] >= 0)
        self.boundary_faces = np.flatnonzero(owners[:, 1] < 0)
        self.face_local.setflags(write=False)
        self.interior_faces.setflags(write=False)
        self.boundary_faces.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @cached_property
    def h_elements(self) -> np.ndarray:
        v = self.vertices[self.elements]
        d = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], axis=1)
        return np.max(np.linalg.norm(d, axis=2), axis=1)

    @cached_property
    def h_max(self) -> float:
        return float(self.h_elements.max())

    @cached_property
    def faces(self) -> tuple[Face, ...]:
        out = []
        for f in range(self.n_faces):
            e1, e2 = self.face_elements[f]
            interior = e2 >= 0
            out.append(Face(
                vertices=(int(self.face_vertices[f, 0]), int(self.face_vertices[f, 1])),
                kind="interior" if interior else "boundary",
                neighbors=(int(e1), int(e2)) if interior else (int(e1),),
                normal=(float(self.normals[f, 0]), float(self.normals[f, 1])),
                h_e=float(self.h_e[f]),
            ))
        return tuple(out)

    def outward_normal(self, element: int, face: int) -> np.ndarray:
        """Outward unit normal of ``element`` on ``face``."""
        e1, e2 = self.face_elements[face]
        if element == e1:
            return self.normals[face].copy()
        if element == e2:
            return -self.normals[face]
        raise ValueError(f"face {face} does not belong to element {element}")

    def barycentric(self, element: int, x: Sequence[float]) -> np.ndarray:
        v = self.vertices[self.elements[element]]
        B = np.column_stack([v[1] - v[0], v[2] - v[0]])
        lam12 = np.linalg.solve(B, np.asarray(x, dtype=float) - v[0])
        return np.array([1.0 - lam12.sum(), lam12[0], lam12[1]])

    def point_on_face(self, face: int, x: Sequence[float], tol: float = _BARY_TOL) -> bool:
        a, b = self.vertices[self.face_vertices[face]]
        x = np.asarray(x, dtype=float)
        t = b - a
        s = np.dot(x - a, t) / np.dot(t, t)
        off = abs(t[0] * (x - a)[1] - t[1] * (x - a)[0]) / np.dot(t, t)
        return -tol <= s <= 1 + tol and off <= tol

    def dump(self, path: str | Path) -> None:
        """Write the plain-text debugging dump (VERTICES / ELEMENTS / FACES)."""
        lines = ["VERTICES"]
        lines += [f"{i} {float(x)!r} {float(y)!r}" for i, (x, y) in enumerate(self.vertices)]
        lines.append("ELEMENTS")
        lines += [f"{a} {b} {c}" for a, b, c in self.elements]
        lines.append("FACES")
        for f in range(self.n_faces):
            v0, v1 = self.face_vertices[f]
            e1, e2 = self.face_elements[f]
            kind = "interior" if e2 >= 0 else "boundary"
            nb = f"{e1} {e2}" if e2 >= 0 else f"{e1}"
            nx, ny = self.normals[f]
            lines.append(f"{v0} {v1} {kind} {nb} {float(nx)!r} {float(ny)!r} {float(self.h_e[f])!r}")
        atomic_write_text(path, "\n".join(lines) + "\n")


def build_uniform_mesh(n: int) -> Mesh:
    """Split the unit square into ``n x n`` cells, each cut along its
    bottom-left to top-right diagonal."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, elements)


def upwind_indicator(mesh: Mesh, z, element: int, face: int,
                     x: Sequence[float]) -> str:
    """Classify ``x`` on ``face`` as inflow for ``element`` w.r.t. ``z``.

    ``z`` is either an object with ``evaluate(element, points)`` (a discrete
    field, evaluated from both sides and averaged on interior faces) or a
    plain callable ``z(x)`` for a continuous velocity.
    """
    if face not in mesh.element_faces[element]:
        raise ValueError(f"face {face} is not a face of element {element}")
    if not mesh.point_on_face(face, x):
        raise ValueError(f"point {tuple(x)} does not lie on face {face}")
    n_E = mesh.outward_normal(element, face)
    zbar = _face_average(mesh, z, face, np.asarray(x, dtype=float))
    return INFLOW if float(zbar @ n_E) < 0.0 else OUTFLOW_OR_TANGENT


def _face_average(mesh: Mesh, z, face: int, x: np.ndarray) -> np.ndarray:
    if not hasattr(z, "evaluate"):
        return np.asarray(z(x), dtype=float)
    sides = [e for e in mesh.face_elements[face] if e >= 0]
    traces = [np.asarray(z.evaluate(int(e), x[None, :]), dtype=float).reshape(-1)
              for e in sides]
    return np.mean(traces, axis=0)

