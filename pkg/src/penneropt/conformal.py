"""Conformal scaling structure and the exact projection onto prescribed
vertex angles.

A conformal rescaling adds u_i + u_j to the log coordinate of edge (i, j),
i.e. lam' = lam + B u for the edge/vertex incidence matrix B. The projection
solves F(lam + B u) = 0 by a Newton iteration whose Hessian is the intrinsic
cotangent Laplacian assembled on the current Delaunay connectivity; on a
Delaunay triangulation the weights are nonnegative, so the reduced system is
symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .constraints import corner_angles, corner_vertices, vertex_angle_sums
from .errors import SingularNormalEquations
from .penner import make_delaunay

DEFAULT_EPS_CONSTRAINT = 1e-10
DEFAULT_MAX_NEWTON = 100
_ARMIJO = 1e-4
_MAX_HALVINGS = 40


def scaling_matrix(mesh):
    """|E| x |V| matrix B with (B u)_ij = u_i + u_j; a loop edge gets a 2."""
    ends = mesh.edge_endpoints()
    rows = np.repeat(np.arange(mesh.n_edges), 2)
    return sparse.csr_matrix(
        (np.ones(2 * mesh.n_edges), (rows, ends.ravel())),
        shape=(mesh.n_edges, mesh.n_vertices))


def apply_scaling(lam, B, u):
    """lam' = lam + B u."""
    return np.asarray(lam, dtype=np.float64) + B @ np.asarray(u, dtype=np.float64)


class ScalingStructure:
    """B plus a cached factorization of B^T B for repeated least-squares
    solves on a fixed connectivity."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.B = scaling_matrix(mesh)
        self._btb_solve = None

    def _factorize(self):
        if self._btb_solve is None:
            btb = sparse.csc_matrix(self.B.T @ self.B)
            try:
                self._btb_solve = splu(btb)
            except RuntimeError as exc:
                raise SingularNormalEquations(str(exc)) from exc
        return self._btb_solve

    def best_fit(self, diff):
        """argmin_u ||diff - B u||^2 via the normal equations.

        On a triangle mesh every vertex lies in a 3-cycle, so B has a trivial
        kernel and the normal equations are nonsingular; a singular system is
        reported rather than regularized.
        """
        solve = self._factorize()
        u = solve.solve(self.B.T @ np.asarray(diff, dtype=np.float64))
        if not np.all(np.isfinite(u)):
            raise SingularNormalEquations("non-finite least-squares solution")
        return u


def best_fit_scale_factors(mesh, lam, lam0, structure=None):
    """Least-squares vertex scale factors of lam relative to lam0."""
    if structure is None:
        structure = ScalingStructure(mesh)
    return structure.best_fit(np.asarray(lam) - np.asarray(lam0))


@dataclass(frozen=True)
class ProjectionResult:
    lam: np.ndarray
    u: np.ndarray
    iterations: int
    max_residual: float
    converged: bool


def _cot_laplacian(mesh, alpha):
    """Negative Jacobian of the vertex angle sums with respect to u: the
    half-cotangent-weight Laplacian, assembled per corner so repeated vertex
    or edge indices (loops, multi-edges) accumulate correctly."""
    cot = 0.5 / np.tan(alpha)
    cv = corner_vertices(mesh)
    n_v = mesh.n_vertices
    rows, cols, vals = [], [], []
    for m in range(3):
        i = cv[:, m]
        j = cv[:, (m + 1) % 3]
        k = cv[:, (m + 2) % 3]
        cj = cot[:, (m + 1) % 3]
        ck = cot[:, (m + 2) % 3]
        rows.extend([i, i, i])
        cols.extend([i, j, k])
        vals.extend([cj + ck, -ck, -cj])
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_v, n_v))


def conformal_project(mesh0, lam, theta_hat, eps_c=DEFAULT_EPS_CONSTRAINT,
                      max_iter=DEFAULT_MAX_NEWTON):
    """Project a metric onto the prescribed vertex angles by a conformal
    rescaling, returned in Penner coordinates of the reference connectivity.

    Newton steps on the scale factors with Armijo backtracking on the
    residual norm; the scale factor of the last vertex is pinned during the
    solve to remove the global-scale direction, and the reported u is
    re-centered to mean zero. Non-convergence is reported in the result, not
    raised.
    """
    lam = np.asarray(lam, dtype=np.float64)
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    n_v = mesh0.n_vertices
    pinned = n_v - 1
    B = scaling_matrix(mesh0)
    u = np.zeros(n_v)

    def residual_and_state(u_vec):
        seq = make_delaunay(mesh0, lam + B @ u_vec)
        alpha = corner_angles(seq.mesh, seq.lam)
        theta = vertex_angle_sums(seq.mesh, alpha)
        return theta - theta_hat, seq, alpha

    F, seq, alpha = residual_and_state(u)
    best = (np.max(np.abs(F)), u.copy())
    iterations = 0
    for _ in range(max_iter):
        max_res = float(np.max(np.abs(F)))
        if max_res <= eps_c:
            break
        L = _cot_laplacian(seq.mesh, alpha)
        keep = np.arange(n_v) != pinned
        L_red = sparse.csc_matrix(L[keep][:, keep])
        try:
            delta_red = splu(L_red).solve(F[keep])
        except RuntimeError as exc:
            raise SingularNormalEquations(f"Newton system singular: {exc}") from exc
        delta = np.zeros(n_v)
        delta[keep] = delta_red

        # Backtracking on ||F||^2; the Newton direction of the convex energy
        # makes this a strict descent away from the solution.
        norm0 = float(F @ F)
        beta = 1.0
        for _ in range(_MAX_HALVINGS):
            F_try, seq_try, alpha_try = residual_and_state(u + beta * delta)
            if float(F_try @ F_try) <= norm0 * (1.0 - 2.0 * _ARMIJO * beta):
                break
            beta *= 0.5
        u = u + beta * delta
        F, seq, alpha = F_try, seq_try, alpha_try
        iterations += 1
        if np.max(np.abs(F)) < best[0]:
            best = (float(np.max(np.abs(F))), u.copy())

    max_res = float(np.max(np.abs(F)))
    converged = max_res <= eps_c
    if not converged:
        max_res, u = best
    u_centered = u - u.mean()
    return ProjectionResult(
        lam=lam + B @ u_centered,
        u=u_centered,
        iterations=iterations,
        max_residual=max_res,
        converged=converged,
    )
