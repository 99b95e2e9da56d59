"""Penner coordinates: Ptolemy flips, the ideal Delaunay test, the flip
algorithm, and its differential.

Coordinates are logarithmic, ``lam = 2*ln(length)``, stored per edge of a
reference connectivity. They are unconstrained: arbitrary real vectors are
valid and the flip algorithm recovers a connectivity on which the
exponentiated values are honest edge lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import FlipLimitExceeded, SelfAdjacentFlip
from .mesh import HalfedgeMesh

# Co-circular configurations (slack within this tolerance of zero) count as
# Delaunay so cell-boundary ties never trigger flips.
DELAUNAY_TOL = 1e-12

# Default flip budget per make_delaunay call, in units of edge count.
FLIP_LIMIT_FACTOR = 100


def _quad(mesh, e):
    """Halfedges and edge ids of the quad around edge e.

    Returns (h0, h1, a, b, c, d): h0 the canonical halfedge, h1 its twin,
    and the edge ids of next(h0), next^2(h0), next(h1), next^2(h1). The
    (a, c) and (b, d) pairs are opposite sides of the quad.
    """
    h0 = int(mesh.he_of_edge[e])
    h1 = int(mesh.twin[h0])
    n, edge = mesh.next_he, mesh.edge
    ha = int(n[h0])
    hb = int(n[ha])
    hc = int(n[h1])
    hd = int(n[hc])
    return h0, h1, int(edge[ha]), int(edge[hb]), int(edge[hc]), int(edge[hd])


def shear(mesh, lam, e):
    """Standard shear x = l_a*l_c / (l_b*l_d) of the quad around edge e,
    computed as exp((lam_a - lam_b + lam_c - lam_d)/2)."""
    _, _, a, b, c, d = _quad(mesh, e)
    return math.exp(0.5 * (lam[a] - lam[b] + lam[c] - lam[d]))


def delaunay_slack(mesh, lam, e):
    """Value of the ideal Delaunay expression for edge e: the sum of the two
    cosine-law terms. Nonnegative means the edge is Delaunay. Well defined
    for arbitrary coordinates; evaluated scale-invariantly."""
    _, _, a, b, c, d = _quad(mesh, e)
    la, lb, lc, ld, le = lam[a], lam[b], lam[c], lam[d], lam[e]
    shift = 0.2 * (la + lb + lc + ld + le)
    La = math.exp(la - shift)
    Lb = math.exp(lb - shift)
    Lc = math.exp(lc - shift)
    Ld = math.exp(ld - shift)
    Le = math.exp(le - shift)
    return (La + Lb - Le) / (2.0 * math.sqrt(La * Lb)) \
        + (Lc + Ld - Le) / (2.0 * math.sqrt(Lc * Ld))


def is_ideal_delaunay(mesh, lam, e, tol=DELAUNAY_TOL):
    """True iff edge e satisfies the ideal Delaunay condition (ties count
    as Delaunay)."""
    return delaunay_slack(mesh, lam, e) >= -tol


def ptolemy_flip(mesh, lam, e):
    """Flip edge e with the Ptolemy length update, returning a new
    (mesh, lam) pair. Raises SelfAdjacentFlip if both sides of e are the
    same face."""
    mesh = mesh.copy()
    lam = np.array(lam, dtype=np.float64)
    _flip_in_place(mesh, lam, e)
    return mesh, lam


def _ptolemy_new_lam(lam, e, a, b, c, d):
    """Overflow-free Ptolemy update 2*ln(l_a*l_c + l_b*l_d) - lam_e."""
    p = 0.5 * (lam[a] + lam[c])
    q = 0.5 * (lam[b] + lam[d])
    m = p if p > q else q
    return 2.0 * (m + math.log(math.exp(p - m) + math.exp(q - m))) - lam[e]


def _flip_in_place(mesh, lam, e):
    """Combinatorial flip of e plus the Ptolemy coordinate update.

    The flipped edge keeps its id; the two faces keep theirs, re-anchored at
    the flipped halfedges. Returns the pre-flip quad edge ids (a, b, c, d).
    """
    h0, h1, a, b, c, d = _quad(mesh, e)
    nxt, twin, tip, edge, face = mesh.next_he, mesh.twin, mesh.tip, mesh.edge, mesh.face
    if face[h0] == face[h1]:
        raise SelfAdjacentFlip(f"edge {e} is adjacent to face {face[h0]} on both sides")

    ha = nxt[h0]
    hb = nxt[ha]
    hc = nxt[h1]
    hd = nxt[hc]
    f0 = face[h0]
    f1 = face[h1]
    k = tip[ha]  # apex of the h0 side
    l = tip[hc]  # apex of the h1 side

    lam[e] = _ptolemy_new_lam(lam, e, a, b, c, d)

    # New faces: f0 = (k -> l -> j), f1 = (l -> k -> i).
    tip[h0] = l
    tip[h1] = k
    nxt[h0] = hd
    nxt[hd] = ha
    nxt[ha] = h0
    nxt[h1] = hb
    nxt[hb] = hc
    nxt[hc] = h1
    face[hd] = f0
    face[ha] = f0
    face[hb] = f1
    face[hc] = f1
    mesh.he_of_face[f0] = h0
    mesh.he_of_face[f1] = h1
    return a, b, c, d


def flip_differential_row(x):
    """Jacobian row of the logarithmic Ptolemy update for one flip, for the
    edges (e, a, b, c, d), expressed through the shear x > 0:

        [-1, x/(1+x), 1/(1+x), x/(1+x), 1/(1+x)]

    The remaining rows of the per-flip matrix are the identity. The row
    matches finite differences of the flip update; its off-diagonal entries
    are half the raw cotangent-convention constants (see the angle Jacobian
    for the analogous normalization).
    """
    if not x > 0:
        raise ValueError("shear must be positive")
    sa = x / (1.0 + x)
    sb = 1.0 / (1.0 + x)
    return np.array([-1.0, sa, sb, sa, sb])


@dataclass(frozen=True)
class FlipDifferential:
    """Sparse |E| x |E| Jacobian of the flip-to-Delaunay map, the ordered
    product of per-flip row updates."""

    matrix: sparse.csr_matrix


@dataclass(frozen=True)
class FlipSequence:
    """Ordered Ptolemy flips from a reference connectivity to its Delaunay
    cell: replaying ``edges`` from the inputs reproduces (mesh, lam)."""

    edges: tuple
    mesh: HalfedgeMesh
    lam: np.ndarray
    differential: FlipDifferential | None = None

    @property
    def flip_count(self):
        return len(self.edges)


def make_delaunay(mesh, lam, with_differential=False, max_flips=None, tol=DELAUNAY_TOL):
    """Run the flip algorithm until every edge is ideal-Delaunay.

    Edges failing the condition are processed in FIFO order; after each flip
    the four quad sides are re-tested. Self-adjacent edges always satisfy
    the condition, so the flip inside the loop is always defined. Raises
    FlipLimitExceeded past ``max_flips`` (default 100*|E|).
    """
    lam = np.array(lam, dtype=np.float64)
    if lam.shape != (mesh.n_edges,):
        raise ValueError("lam must have one entry per edge")
    if not np.all(np.isfinite(lam)):
        raise ValueError("lam must be finite")
    if not mesh.is_closed:
        raise ValueError("flip algorithm requires a closed mesh")
    mesh = mesh.copy()
    n_e = mesh.n_edges
    if max_flips is None:
        max_flips = FLIP_LIMIT_FACTOR * n_e

    # Hot loop on plain lists + math scalars.
    nxt = mesh.next_he.tolist()
    twin = mesh.twin.tolist()
    tip = mesh.tip.tolist()
    edge = mesh.edge.tolist()
    face = mesh.face.tolist()
    he_of_edge = mesh.he_of_edge.tolist()
    he_of_face = mesh.he_of_face.tolist()
    lam_l = lam.tolist()
    exp = math.exp
    sqrt = math.sqrt
    log_ = math.log

    def quad(e):
        h0 = he_of_edge[e]
        h1 = twin[h0]
        ha = nxt[h0]
        hb = nxt[ha]
        hc = nxt[h1]
        hd = nxt[hc]
        return h0, h1, ha, hb, hc, hd

    def slack(e):
        h0, h1, ha, hb, hc, hd = quad(e)
        la = lam_l[edge[ha]]
        lb = lam_l[edge[hb]]
        lc = lam_l[edge[hc]]
        ld = lam_l[edge[hd]]
        le = lam_l[e]
        shift = 0.2 * (la + lb + lc + ld + le)
        La = exp(la - shift)
        Lb = exp(lb - shift)
        Lc = exp(lc - shift)
        Ld = exp(ld - shift)
        Le = exp(le - shift)
        return (La + Lb - Le) / (2.0 * sqrt(La * Lb)) + (Lc + Ld - Le) / (2.0 * sqrt(Lc * Ld))

    rows = [{i: 1.0} for i in range(n_e)] if with_differential else None

    queue = [e for e in range(n_e) if slack(e) < -tol]
    in_queue = [False] * n_e
    for e in queue:
        in_queue[e] = True
    head = 0
    flips = []

    while head < len(queue):
        e = queue[head]
        head += 1
        in_queue[e] = False
        if slack(e) >= -tol:
            continue
        if len(flips) >= max_flips:
            raise FlipLimitExceeded(f"exceeded {max_flips} flips on {n_e} edges")
        h0, h1, ha, hb, hc, hd = quad(e)
        a, b, c, d = edge[ha], edge[hb], edge[hc], edge[hd]
        f0, f1 = face[h0], face[h1]
        k = tip[ha]
        l = tip[hc]

        if rows is not None:
            t = 0.5 * (lam_l[a] + lam_l[c] - lam_l[b] - lam_l[d])
            # x/(1+x) and 1/(1+x) evaluated overflow-free
            if t >= 0:
                sb = 1.0 / (1.0 + exp(t))
                sa = 1.0 - sb
            else:
                sa = 1.0 / (1.0 + exp(-t))
                sb = 1.0 - sa
            new_row = {}
            for coeff, src in ((-1.0, e), (sa, a), (sb, b), (sa, c), (sb, d)):
                for col, val in rows[src].items():
                    new_row[col] = new_row.get(col, 0.0) + coeff * val
            rows[e] = new_row

        # Ptolemy update.
        p = 0.5 * (lam_l[a] + lam_l[c])
        q = 0.5 * (lam_l[b] + lam_l[d])
        m = p if p > q else q
        lam_l[e] = 2.0 * (m + log_(exp(p - m) + exp(q - m))) - lam_l[e]

        # Combinatorial flip (same update as _flip_in_place).
        tip[h0] = l
        tip[h1] = k
        nxt[h0] = hd
        nxt[hd] = ha
        nxt[ha] = h0
        nxt[h1] = hb
        nxt[hb] = hc
        nxt[hc] = h1
        face[hd] = f0
        face[ha] = f0
        face[hb] = f1
        face[hc] = f1
        he_of_face[f0] = h0
        he_of_face[f1] = h1
        flips.append(e)

        for ne in (a, b, c, d):
            if not in_queue[ne] and slack(ne) < -tol:
                in_queue[ne] = True
                queue.append(ne)

    out = HalfedgeMesh(mesh.n_vertices, nxt, twin, tip, edge, face,
                       he_of_edge, he_of_face, mesh.n_components)
    lam_out = np.asarray(lam_l, dtype=np.float64)

    differential = None
    if with_differential:
        data, ri, ci = [], [], []
        for i, row in enumerate(rows):
            for col, val in row.items():
                ri.append(i)
                ci.append(col)
                data.append(val)
        differential = FlipDifferential(
            sparse.csr_matrix((data, (ri, ci)), shape=(n_e, n_e)))

    return FlipSequence(tuple(flips), out, lam_out, differential)


def replay_flips(mesh, lam, edges):
    """Re-apply a recorded flip sequence; used to check reproducibility and
    to drive point transfer."""
    mesh = mesh.copy()
    lam = np.array(lam, dtype=np.float64)
    for e in edges:
        _flip_in_place(mesh, lam, int(e))
    return mesh, lam
