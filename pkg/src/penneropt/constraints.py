"""Triangle angles from log lengths, their Jacobian, and the vertex-angle
constraint system.

Angles are computed on a Delaunay connectivity, where the exponentiated
coordinates are guaranteed to satisfy the triangle inequality. The
constraint residual drops one vertex (the highest index): by Gauss-Bonnet
the full system is redundant by exactly one row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import TriangleInequalityViolated
from .penner import make_delaunay

# Angle-derivative scale for lam = 2*ln(length): d(alpha_i)/d(lam_l) is
# -cot(alpha_j)/2 on the adjacent edges and +(cot a_j + cot a_k)/2 opposite.
# Fixed once against central finite differences of the angle computation.
ANGLE_JACOBIAN_SCALE = 0.5


def _face_rel_lengths(mesh, lam):
    """(F, 3) lengths in face-cycle edge order, rescaled per face so the
    computation is overflow-free (angles are scale invariant)."""
    lam_f = np.asarray(lam, dtype=np.float64)[mesh.face_edges()]
    shift = lam_f.mean(axis=1, keepdims=True)
    return np.exp(0.5 * (lam_f - shift))


def corner_angles(mesh, lam):
    """(F, 3) corner angles; entry (f, m) is the angle at corner m of face f
    (at the origin of the m-th face halfedge, opposite edge m+1).

    Uses the half-angle atan2 form of the cosine law, which stays accurate
    near degenerate triangles. Raises TriangleInequalityViolated if the
    exponentiated coordinates are not valid lengths on this connectivity.
    """
    L = _face_rel_lengths(mesh, lam)
    s = 0.5 * L.sum(axis=1, keepdims=True)
    d = s - L  # d[:, m] = s - length of edge m
    if np.any(d <= 0):
        bad = int(np.nonzero(np.any(d <= 0, axis=1))[0][0])
        raise TriangleInequalityViolated(f"face {bad}")
    # Corner m: opposite edge m+1, adjacent edges m and m+2.
    alpha = np.empty_like(L)
    for m in range(3):
        opp = (m + 1) % 3
        adj1 = m
        adj2 = (m + 2) % 3
        alpha[:, m] = 2.0 * np.arctan2(
            np.sqrt(d[:, adj1] * d[:, adj2]), np.sqrt(s[:, 0] * d[:, opp]))
    return alpha


def angle_jacobian(mesh, lam, alpha=None):
    """Sparse (3|F|) x |E| Jacobian of the flat corner-angle vector with
    respect to the log coordinates. Each corner row has exactly three
    nonzeros, on the face's own edges."""
    if alpha is None:
        alpha = corner_angles(mesh, lam)
    cot = 1.0 / np.tan(alpha)
    E3 = mesh.face_edges()
    n_f = mesh.n_faces
    corner_ids = np.arange(3 * n_f).reshape(n_f, 3)

    rows, cols, vals = [], [], []
    for m in range(3):
        j = (m + 1) % 3
        k = (m + 2) % 3
        rows.append(corner_ids[:, m])
        cols.append(E3[:, m])  # edge between corners m and j
        vals.append(-ANGLE_JACOBIAN_SCALE * cot[:, j])
        rows.append(corner_ids[:, m])
        cols.append(E3[:, j])  # opposite edge
        vals.append(ANGLE_JACOBIAN_SCALE * (cot[:, j] + cot[:, k]))
        rows.append(corner_ids[:, m])
        cols.append(E3[:, k])  # edge between corners k and m
        vals.append(-ANGLE_JACOBIAN_SCALE * cot[:, k])
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * n_f, mesh.n_edges))


def corner_vertices(mesh):
    """(F, 3) vertex index of each corner (origin of the corner halfedge)."""
    H = mesh.face_halfedges()
    return mesh.tip[mesh.next_he[mesh.next_he[H]]]


def vertex_angle_sums(mesh, alpha):
    """Total angle at each vertex from (F, 3) corner angles."""
    cv = corner_vertices(mesh).ravel()
    return np.bincount(cv, weights=alpha.ravel(), minlength=mesh.n_vertices)


def summation_matrix(mesh, dropped_vertex=None):
    """0/1 matrix of shape (|V|-1) x 3|F| summing corner angles around each
    retained vertex; the dropped vertex (default: highest index) has no row."""
    if dropped_vertex is None:
        dropped_vertex = mesh.n_vertices - 1
    cv = corner_vertices(mesh).ravel()
    keep = cv != dropped_vertex
    rows = cv[keep]
    rows = np.where(rows > dropped_vertex, rows - 1, rows)
    cols = np.nonzero(keep)[0]
    return sparse.csr_matrix(
        (np.ones(len(cols)), (rows, cols)),
        shape=(mesh.n_vertices - 1, 3 * mesh.n_faces))


@dataclass(frozen=True)
class ConstraintSystem:
    """Retained-vertex angle constraints against a target prescription."""

    theta_hat: np.ndarray
    dropped_vertex: int

    @classmethod
    def for_mesh(cls, mesh, theta_hat):
        return cls(np.asarray(theta_hat, dtype=np.float64), mesh.n_vertices - 1)

    def drop(self, full):
        return np.delete(full, self.dropped_vertex)


@dataclass(frozen=True)
class ConstraintEvaluation:
    """Residual and Jacobian of the angle constraints at one coordinate
    vector, plus the Delaunay bookkeeping that produced them."""

    residual: np.ndarray          # retained rows, length |V|-1
    jacobian: sparse.csr_matrix   # (|V|-1) x |E|
    residual_full: np.ndarray     # all vertices
    flip_count: int

    @property
    def max_abs(self):
        return float(np.max(np.abs(self.residual_full)))


def constraint_residual_and_jacobian(mesh0, lam, theta_hat, system=None):
    """F(lam) = S*alpha(Del(M0, lam)) - theta_hat and its Jacobian
    S * (d alpha) * D, assembled on the temporary Delaunay connectivity.
    The flips are internal; the reference connectivity is untouched."""
    if system is None:
        system = ConstraintSystem.for_mesh(mesh0, theta_hat)
    seq = make_delaunay(mesh0, lam, with_differential=True)
    alpha = corner_angles(seq.mesh, seq.lam)
    theta = vertex_angle_sums(seq.mesh, alpha)
    residual_full = theta - np.asarray(theta_hat, dtype=np.float64)
    grad_alpha = angle_jacobian(seq.mesh, seq.lam, alpha)
    S = summation_matrix(seq.mesh, system.dropped_vertex)
    jac = S @ (grad_alpha @ seq.differential.matrix)
    return ConstraintEvaluation(
        residual=system.drop(residual_full),
        jacobian=sparse.csr_matrix(jac),
        residual_full=residual_full,
        flip_count=seq.flip_count,
    )


def constraint_residual(mesh0, lam, theta_hat):
    """Residual only (no differential); cheaper for line searches."""
    seq = make_delaunay(mesh0, lam)
    alpha = corner_angles(seq.mesh, seq.lam)
    theta = vertex_angle_sums(seq.mesh, alpha)
    return theta - np.asarray(theta_hat, dtype=np.float64)
