"""Halfedge connectivity, metric ingestion, and cone prescription checks.

Meshes are closed, oriented, manifold triangle meshes; surfaces with
boundary enter only through :func:`double_mesh`. Connectivity is stored in
flat integer arrays indexed by halfedge:

* halfedge ``h`` of face ``f`` points along the face's oriented boundary;
* ``next_he[h]`` is the next halfedge around the face (``next^3 == id``);
* ``twin[h]`` is the oppositely oriented halfedge of the same edge
  (``-1`` on boundary halfedges of open meshes);
* ``tip[h]`` is the vertex the halfedge points at;
* ``edge[h]`` / ``face[h]`` give the undirected edge and the face.

Edges and halfedges are numbered deterministically from the input face
order: halfedge ``3*f + m`` is corner ``m`` of face ``f``, and an edge's
canonical halfedge is the one with the smaller index.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlreadyClosed,
    DegenerateTriangle,
    GaussBonnetViolation,
    MeshError,
    NonManifoldEdge,
    NonpositiveAngle,
    OpenBoundary,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# Relative face-area threshold below which an embedding is rejected.
DEGENERACY_THRESHOLD = 1e-14


class HalfedgeMesh:
    """Triangle-mesh connectivity in halfedge form. Immutable by convention:
    operations that change connectivity work on a copy."""

    __slots__ = (
        "n_vertices",
        "next_he",
        "twin",
        "tip",
        "edge",
        "face",
        "he_of_edge",
        "he_of_face",
        "n_components",
    )

    def __init__(self, n_vertices, next_he, twin, tip, edge, face, he_of_edge, he_of_face,
                 n_components=1):
        self.n_vertices = int(n_vertices)
        self.next_he = np.asarray(next_he, dtype=np.int64)
        self.twin = np.asarray(twin, dtype=np.int64)
        self.tip = np.asarray(tip, dtype=np.int64)
        self.edge = np.asarray(edge, dtype=np.int64)
        self.face = np.asarray(face, dtype=np.int64)
        self.he_of_edge = np.asarray(he_of_edge, dtype=np.int64)
        self.he_of_face = np.asarray(he_of_face, dtype=np.int64)
        self.n_components = int(n_components)

    # -- basic counts ------------------------------------------------------

    @property
    def n_halfedges(self):
        return len(self.next_he)

    @property
    def n_edges(self):
        return len(self.he_of_edge)

    @property
    def n_faces(self):
        return len(self.he_of_face)

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def is_closed(self):
        return bool(np.all(self.twin >= 0))

    # -- derived connectivity ----------------------------------------------

    def prev(self, h):
        return self.next_he[self.next_he[h]]

    def origin(self, h):
        """Vertex the halfedge emanates from (works on open meshes too)."""
        return self.tip[self.prev(h)]

    def face_halfedges(self):
        """(F, 3) array: the halfedge cycle of each face, starting at the
        face's canonical halfedge."""
        h0 = self.he_of_face
        h1 = self.next_he[h0]
        h2 = self.next_he[h1]
        return np.stack([h0, h1, h2], axis=1)

    def face_vertices(self):
        """(F, 3) vertex indices in corner order (corner m = origin of the
        m-th halfedge of the face cycle)."""
        H = self.face_halfedges()
        return self.tip[self.next_he[self.next_he[H]]]

    def face_edges(self):
        """(F, 3) edge indices in face-cycle order."""
        return self.edge[self.face_halfedges()]

    def edge_endpoints(self):
        """(E, 2) array (origin, tip) of each edge's canonical halfedge."""
        h = self.he_of_edge
        return np.stack([self.tip[self.next_he[self.next_he[h]]], self.tip[h]], axis=1)

    def vertex_degrees(self):
        """Edge-graph degree per vertex; a loop edge counts twice."""
        return np.bincount(self.tip, minlength=self.n_vertices)

    def boundary_halfedges(self):
        return np.nonzero(self.twin < 0)[0]

    def connectivity_signature(self):
        """Hashable signature of the connectivity as a multiset of edge
        endpoint pairs (used to compare triangulations of a fixed vertex set)."""
        ends = np.sort(self.edge_endpoints(), axis=1)
        return tuple(sorted(map(tuple, ends.tolist())))

    def connectivity_hash(self):
        blob = b"".join(
            np.ascontiguousarray(a).tobytes()
            for a in (self.next_he, self.twin, self.tip, self.edge, self.face)
        )
        return hashlib.sha256(blob).hexdigest()

    def copy(self):
        return HalfedgeMesh(
            self.n_vertices,
            self.next_he.copy(),
            self.twin.copy(),
            self.tip.copy(),
            self.edge.copy(),
            self.face.copy(),
            self.he_of_edge.copy(),
            self.he_of_face.copy(),
            self.n_components,
        )

    def check_invariants(self):
        """Raise MeshError if any structural invariant is broken."""
        n_h = self.n_halfedges
        nxt = self.next_he
        if n_h % 3 != 0 or not np.array_equal(nxt[nxt[nxt[np.arange(n_h)]]], np.arange(n_h)):
            raise MeshError("next is not a triangle-face permutation")
        closed = self.twin >= 0
        tw = self.twin[closed]
        if np.any(self.twin[tw] != np.nonzero(closed)[0]) or np.any(tw == np.nonzero(closed)[0]):
            raise MeshError("twin is not a fixed-point-free involution")
        counts = np.bincount(self.edge, minlength=self.n_edges)
        if self.is_closed and np.any(counts != 2):
            raise MeshError("an edge does not have exactly two halfedges")
        if np.any(self.vertex_degrees() < 1):
            raise MeshError("isolated vertex")

    def __repr__(self):
        return (f"HalfedgeMesh(V={self.n_vertices}, E={self.n_edges}, "
                f"F={self.n_faces}, chi={self.euler_characteristic})")


def build_halfedge(faces, allow_boundary=False):
    """Build a HalfedgeMesh from a list of oriented vertex-index triples.

    Raises NonManifoldEdge if a vertex pair appears more than twice or twice
    with the same orientation, and OpenBoundary if a pair appears once and
    ``allow_boundary`` is false. A disconnected mesh is allowed but logged.
    """
    faces = np.asarray(faces, dtype=np.int64)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise MeshError("faces must be an (F, 3) index array")
    n_f = len(faces)
    if n_f == 0:
        raise MeshError("empty face list")
    if np.any(faces < 0):
        raise MeshError("negative vertex index")
    if np.any(faces[:, 0] == faces[:, 1]) or np.any(faces[:, 1] == faces[:, 2]) \
            or np.any(faces[:, 2] == faces[:, 0]):
        raise NonManifoldEdge("face with a repeated vertex")
    n_v = int(faces.max()) + 1

    n_h = 3 * n_f
    tip = np.empty(n_h, dtype=np.int64)
    next_he = np.empty(n_h, dtype=np.int64)
    for m in range(3):
        tip[m::3] = faces[:, (m + 1) % 3]
        next_he[m::3] = np.arange(n_f) * 3 + (m + 1) % 3

    # Pair halfedges along shared undirected vertex pairs.
    origin = np.empty(n_h, dtype=np.int64)
    for m in range(3):
        origin[m::3] = faces[:, m]
    by_pair = {}
    for h in range(n_h):
        u, v = int(origin[h]), int(tip[h])
        by_pair.setdefault((min(u, v), max(u, v)), []).append(h)

    twin = np.full(n_h, -1, dtype=np.int64)
    edge = np.full(n_h, -1, dtype=np.int64)
    he_of_edge = []
    boundary_pairs = []
    for pair in sorted(by_pair):
        hs = by_pair[pair]
        if len(hs) > 2:
            raise NonManifoldEdge(f"vertex pair {pair} appears {len(hs)} times")
        if len(hs) == 2:
            h0, h1 = hs
            if origin[h0] == origin[h1]:
                raise NonManifoldEdge(f"vertex pair {pair} appears twice with equal orientation")
            twin[h0], twin[h1] = h1, h0
        else:
            boundary_pairs.append(pair)
    if boundary_pairs and not allow_boundary:
        raise OpenBoundary(f"{len(boundary_pairs)} boundary edge(s), e.g. {boundary_pairs[0]}")

    # Edge ids in order of first halfedge occurrence; canonical halfedge is
    # the smaller one.
    for h in range(n_h):
        if edge[h] >= 0:
            continue
        e = len(he_of_edge)
        edge[h] = e
        if twin[h] >= 0:
            edge[twin[h]] = e
        he_of_edge.append(h)

    face = np.repeat(np.arange(n_f, dtype=np.int64), 3)
    he_of_face = np.arange(n_f, dtype=np.int64) * 3

    n_components = _count_components(n_v, origin, tip)
    if n_components > 1:
        log.warning("mesh has %d connected components", n_components)

    mesh = HalfedgeMesh(n_v, next_he, twin, tip, edge, face,
                        np.asarray(he_of_edge), he_of_face, n_components)
    mesh.check_invariants()
    return mesh


def _count_components(n_v, origin, tip):
    parent = list(range(n_v))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in zip(origin.tolist(), tip.tolist()):
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
    return len({find(v) for v in range(n_v)})


@dataclass(frozen=True)
class ConeMetric:
    """A mesh with positive edge lengths satisfying the strict triangle
    inequality on every face."""

    mesh: HalfedgeMesh
    lengths: np.ndarray

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=np.float64)
        object.__setattr__(self, "lengths", lengths)
        if lengths.shape != (self.mesh.n_edges,):
            raise MeshError("lengths must have one entry per edge")
        if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0):
            raise MeshError("edge lengths must be finite and positive")
        tri = lengths[self.mesh.face_edges()]
        if np.any(2.0 * tri.max(axis=1) >= tri.sum(axis=1)):
            bad = int(np.argmax(2.0 * tri.max(axis=1) - tri.sum(axis=1)))
            raise DegenerateTriangle(f"triangle inequality fails on face {bad}")

    def log_coords(self):
        """Logarithmic coordinates 2*ln(length), the native optimizer variables."""
        return 2.0 * np.log(self.lengths)


def metric_from_embedding(mesh, positions):
    """Edge lengths from vertex positions; rejects (near-)degenerate faces."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != (mesh.n_vertices, 3):
        raise MeshError("positions must be (V, 3)")
    if not np.all(np.isfinite(positions)):
        raise MeshError("positions must be finite")
    ends = mesh.edge_endpoints()
    lengths = np.linalg.norm(positions[ends[:, 0]] - positions[ends[:, 1]], axis=1)
    if np.any(lengths <= 0):
        raise DegenerateTriangle("coincident edge endpoints")
    tri = lengths[mesh.face_edges()]
    s = tri.sum(axis=1) / 2.0
    area_sq = s * (s - tri[:, 0]) * (s - tri[:, 1]) * (s - tri[:, 2])
    lmax_sq = tri.max(axis=1) ** 2
    bad = area_sq <= (DEGENERACY_THRESHOLD * lmax_sq) ** 2
    if np.any(bad):
        raise DegenerateTriangle(f"face {int(np.nonzero(bad)[0][0])} is degenerate")
    return ConeMetric(mesh, lengths)


@dataclass(frozen=True)
class DoubleCorrespondence:
    """Element maps from an open mesh to its double: ``vertex_front`` is the
    identity, ``vertex_back[v]`` is the mirrored copy (itself on the
    boundary), and similarly for edges."""

    vertex_back: np.ndarray
    edge_front: np.ndarray
    edge_back: np.ndarray


def double_mesh(mesh, lengths):
    """Glue a mirrored copy of an open mesh along its boundary.

    Returns the closed mesh, the doubled edge lengths, and the element
    correspondence. Interior vertices and all interior edges are duplicated
    (so the double may contain multi-edges); copied edges carry equal
    lengths. The connectivity is assembled directly at the halfedge level
    because multi-edges make a face-list reconstruction ambiguous.
    """
    if mesh.is_closed:
        raise AlreadyClosed("mesh has no boundary")
    lengths = np.asarray(lengths, dtype=np.float64)
    if lengths.shape != (mesh.n_edges,):
        raise MeshError("lengths must have one entry per edge")

    on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    for h in mesh.boundary_halfedges():
        on_boundary[mesh.tip[h]] = True
        on_boundary[mesh.origin(h)] = True

    vertex_back = np.arange(mesh.n_vertices, dtype=np.int64)
    next_id = mesh.n_vertices
    for v in range(mesh.n_vertices):
        if not on_boundary[v]:
            vertex_back[v] = next_id
            next_id += 1

    # Halfedge h = 3f+m mirrors to 3(F+f) + (2-m): the back copy of face f
    # reverses orientation, so corner halfedges map in reverse order.
    n_h = mesh.n_halfedges
    n_f = mesh.n_faces

    def mirror(h):
        f, m = divmod(h, 3)
        return 3 * (n_f + f) + (2 - m)

    next2 = np.empty(2 * n_h, dtype=np.int64)
    twin2 = np.empty(2 * n_h, dtype=np.int64)
    tip2 = np.empty(2 * n_h, dtype=np.int64)
    face2 = np.empty(2 * n_h, dtype=np.int64)
    src_he = np.empty(2 * n_h, dtype=np.int64)  # original halfedge per new one
    for h in range(n_h):
        g = mirror(h)
        next2[h] = mesh.next_he[h]
        tip2[h] = mesh.tip[h]
        face2[h] = mesh.face[h]
        src_he[h] = h
        f, m = divmod(h, 3)
        next2[g] = 3 * (n_f + f) + (2 - m + 1) % 3
        tip2[g] = vertex_back[mesh.origin(h)]
        face2[g] = n_f + f
        src_he[g] = h
        t = mesh.twin[h]
        if t >= 0:
            twin2[h] = t
            twin2[g] = mirror(t)
        else:
            twin2[h] = g
            twin2[g] = h

    edge2 = np.full(2 * n_h, -1, dtype=np.int64)
    he_of_edge2 = []
    for h in range(2 * n_h):
        if edge2[h] >= 0:
            continue
        edge2[h] = len(he_of_edge2)
        edge2[twin2[h]] = len(he_of_edge2)
        he_of_edge2.append(h)
    he_of_face2 = np.arange(2 * n_f, dtype=np.int64) * 3

    out = HalfedgeMesh(next_id, next2, twin2, tip2, edge2, face2,
                       np.asarray(he_of_edge2), he_of_face2, mesh.n_components)
    out.check_invariants()

    out_lengths = np.empty(out.n_edges, dtype=np.float64)
    out_lengths[edge2] = lengths[mesh.edge[src_he]]

    edge_front = np.full(mesh.n_edges, -1, dtype=np.int64)
    edge_back = np.full(mesh.n_edges, -1, dtype=np.int64)
    for h in range(n_h):
        edge_front[mesh.edge[h]] = edge2[h]
        edge_back[mesh.edge[h]] = edge2[mirror(h)]

    corr = DoubleCorrespondence(vertex_back, edge_front, edge_back)
    return out, out_lengths, corr


@dataclass(frozen=True)
class PrescriptionReport:
    passed: bool
    gauss_bonnet_residual: float
    euler_characteristic: int


GAUSS_BONNET_TOL = 1e-9


def validate_prescription(mesh, theta_hat):
    """Check a target-angle vector: positivity and the discrete Gauss-Bonnet
    identity sum(2*pi - theta_hat) == 2*pi*chi for closed surfaces."""
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    if theta_hat.shape != (mesh.n_vertices,):
        raise MeshError("theta_hat must have one entry per vertex")
    if np.any(~np.isfinite(theta_hat)) or np.any(theta_hat <= 0):
        raise NonpositiveAngle("target angles must be finite and positive")
    chi = mesh.euler_characteristic
    residual = float(np.sum(TWO_PI - theta_hat) - TWO_PI * chi)
    if abs(residual) > GAUSS_BONNET_TOL:
        raise GaussBonnetViolation(residual)
    return PrescriptionReport(True, residual, chi)


@dataclass(frozen=True)
class ConePrescription:
    """Validated target angles (radians) per vertex."""

    theta_hat: np.ndarray
    report: PrescriptionReport = field(repr=False, compare=False, default=None)

    @classmethod
    def validated(cls, mesh, theta_hat):
        report = validate_prescription(mesh, theta_hat)
        return cls(np.asarray(theta_hat, dtype=np.float64), report)
