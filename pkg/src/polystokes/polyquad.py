"""Quadrature on mesh entities and orthonormal polynomial bases.

Polynomials on an entity Y are written in the scaled local coordinate
``xi = A (x - c_Y) / h_Y`` of its :class:`~polystokes.mesh.Frame`.  Vector
polynomials on faces carry two components along the face axes (e1, e2), on
elements three Cartesian components.  Every basis is L2(Y)-orthonormal, so
projections reduce to moment evaluations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
import scipy.linalg as sla
from scipy.special import roots_jacobi, roots_legendre

from .mesh import Frame, PolyMesh

MAX_DEGREE = 40
EDGE, FACE, ELEMENT = "edge", "face", "element"
_DIM = {EDGE: 1, FACE: 2, ELEMENT: 3}


class BasisError(RuntimeError):
    """Spanning set rank disagrees with the closed-form space dimension."""


# ----------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int


def _gauss_jacobi01(n, alpha):
    # nodes/weights on [0, 1] for the weight (1 - u)**alpha
    t, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (1.0 + t), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int):
    """Collapsed Gauss-Jacobi rule on the unit reference simplex."""
    if degree < 0 or degree > MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} (max {MAX_DEGREE})")
    n = max(1, -(-(degree + 1) // 2))
    if dim == 1:
        t, w = roots_legendre(n)
        return 0.5 * (t + 1.0)[:, None], 0.5 * w
    u, wu = _gauss_jacobi01(n, dim - 1)
    if dim == 2:
        v, wv = _gauss_jacobi01(n, 0)
        U, Vv = np.meshgrid(u, v, indexing="ij")
        pts = np.column_stack([U.ravel(), ((1 - U) * Vv).ravel()])
        return pts, np.outer(wu, wv).ravel()
    v, wv = _gauss_jacobi01(n, 1)
    s, ws = _gauss_jacobi01(n, 0)
    U, Vv, S = np.meshgrid(u, v, s, indexing="ij")
    pts = np.column_stack([U.ravel(), ((1 - U) * Vv).ravel(), ((1 - U) * (1 - Vv) * S).ravel()])
    return pts, np.einsum("i,j,k->ijk", wu, wv, ws).ravel()


def _map_simplices(simplices, degree):
    dim = len(simplices[0]) - 1
    ref_pts, ref_w = simplex_rule(dim, degree)
    pts, wts = [], []
    for S in simplices:
        S = np.asarray(S)
        J = (S[1:] - S[0]).T  # 3 x dim
        if dim == 1:
            meas = np.linalg.norm(J)
        elif dim == 2:
            meas = np.linalg.norm(np.cross(J[:, 0], J[:, 1]))
        else:
            meas = abs(np.linalg.det(J))
        pts.append(S[0] + ref_pts @ J.T)
        wts.append(ref_w * meas)
    return np.vstack(pts), np.concatenate(wts)


def make_quadrature(mesh: PolyMesh, kind: str, idx: int, degree: int) -> QuadratureRule:
    """Quadrature rule of exactness ``degree`` on one entity (cached on the mesh)."""
    cache = mesh.__dict__.setdefault("_quad_cache", {})
    key = (kind, idx, degree)
    rule = cache.get(key)
    if rule is None:
        if kind == EDGE:
            a, b = mesh.edges[idx]
            simplices = [mesh.vertices[[a, b]]]
        elif kind == FACE:
            simplices = mesh.face_fan(idx)
        elif kind == ELEMENT:
            simplices = mesh.element_fan(idx)
        else:
            raise ValueError(f"unknown entity kind {kind!r}")
        pts, wts = _map_simplices(simplices, degree)
        rule = QuadratureRule(pts, wts, degree)
        cache[key] = rule
    return rule


def entity_frame(mesh: PolyMesh, kind: str, idx: int) -> Frame:
    if kind == EDGE:
        return mesh.edge_frame(idx)
    if kind == FACE:
        return mesh.face_frames[idx]
    return mesh.element_frame(idx)


# ----------------------------------------------------------------------
# monomial algebra in scaled local coordinates
# ----------------------------------------------------------------------
@lru_cache(maxsize=None)
def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    """Exponent table sorted by total degree (graded), shape (nmon, dim)."""
    if degree < 0:
        return np.zeros((0, dim), dtype=int)
    out = []
    for d in range(degree + 1):
        block = [e for e in itertools.product(range(d + 1), repeat=dim) if sum(e) == d]
        out.extend(sorted(block, reverse=True))
    return np.array(out, dtype=int).reshape(-1, dim)


def dim_P(dim: int, degree: int) -> int:
    return comb(degree + dim, dim) if degree >= 0 else 0


@lru_cache(maxsize=None)
def _exp_index(dim, degree):
    return {tuple(e): i for i, e in enumerate(monomial_exponents(dim, degree))}


@lru_cache(maxsize=None)
def derivative_matrix(dim: int, degree: int, axis: int) -> np.ndarray:
    """``D`` with ``coef @ D`` the coefficients of d/dxi_axis (same table)."""
    E = monomial_exponents(dim, degree)
    index = _exp_index(dim, degree)
    D = np.zeros((len(E), len(E)))
    for i, e in enumerate(E):
        if e[axis] > 0:
            f = list(e)
            f[axis] -= 1
            D[i, index[tuple(f)]] = e[axis]
    return D


@lru_cache(maxsize=None)
def multiply_matrix(dim: int, degree: int, axis: int) -> np.ndarray:
    """``X`` with ``coef @ X`` the coefficients of xi_axis * p (p of degree < degree)."""
    E = monomial_exponents(dim, degree)
    index = _exp_index(dim, degree)
    X = np.zeros((len(E), len(E)))
    for i, e in enumerate(E):
        if sum(e) < degree:
            f = list(e)
            f[axis] += 1
            X[i, index[tuple(f)]] = 1.0
    return X


def eval_monomials(xi: np.ndarray, degree: int) -> np.ndarray:
    """Values of all monomials of degree <= ``degree`` at local points, (npts, nmon)."""
    dim = xi.shape[1]
    E = monomial_exponents(dim, degree)
    out = np.ones((xi.shape[0], len(E)))
    # powers table to avoid repeated pow calls
    pw = np.ones((degree + 1, xi.shape[0], dim))
    for p in range(1, degree + 1):
        pw[p] = pw[p - 1] * xi
    for a in range(dim):
        out *= pw[E[:, a], :, a].T
    return out


def _combine(M, coef):
    # (npts, nmon) x (n, ncomp, nmon) -> (npts, n, ncomp)
    n, c, m = coef.shape
    return (M @ coef.reshape(n * c, m).T).reshape(M.shape[0], n, c)


def gram(V, weights, W=None):
    """Weighted pairing matrix sum_p w_p V_p,i . W_p,j of sampled (vector) values."""
    W = V if W is None else W
    if V.shape[1] == 0 or W.shape[1] == 0:
        return np.zeros((V.shape[1], W.shape[1]))
    if V.ndim == 2:
        return (V * weights[:, None]).T @ W
    a = (V * weights[:, None, None]).transpose(1, 0, 2).reshape(V.shape[1], -1)
    return a @ W.transpose(1, 0, 2).reshape(W.shape[1], -1).T


# ----------------------------------------------------------------------
# polynomial spaces
# ----------------------------------------------------------------------
@dataclass
class SpaceBasis:
    """Orthonormal basis of a (scalar or vector) polynomial space on an entity.

    ``coef`` has shape (n, ncomp, nmon) over monomials of degree <= ``degree``.
    """

    kind: str
    idx: int
    tag: str
    level: int
    frame: Frame
    degree: int
    coef: np.ndarray

    @property
    def n(self) -> int:
        return self.coef.shape[0]

    @property
    def ncomp(self) -> int:
        return self.coef.shape[1]

    @property
    def dim(self) -> int:
        return _DIM[self.kind]

    def _xi(self, pts):
        return self.frame.local(pts)

    def values(self, pts):
        """(npts, n) for scalars, (npts, n, ncomp) local components for vectors."""
        M = eval_monomials(self._xi(pts), self.degree)
        V = _combine(M, self.coef)
        return V[:, :, 0] if self.ncomp == 1 else V

    def derivatives(self, pts):
        """Local-coordinate derivatives, shape (npts, n, ncomp, dim)."""
        M = eval_monomials(self._xi(pts), self.degree)
        out = np.empty((M.shape[0], self.n, self.ncomp, self.dim))
        for a in range(self.dim):
            Da = derivative_matrix(self.dim, self.degree, a)
            out[..., a] = _combine(M, (self.coef @ Da) / self.frame.scale)
        return out

    def grad(self, pts):
        """Gradient of scalar members in local components, (npts, n, dim)."""
        return self.derivatives(pts)[:, :, 0, :]

    def div(self, pts):
        d = self.derivatives(pts)
        return np.einsum("picc->pi", d)

    def curl(self, pts):
        d = self.derivatives(pts)
        return np.stack([d[:, :, 2, 1] - d[:, :, 1, 2],
                         d[:, :, 0, 2] - d[:, :, 2, 0],
                         d[:, :, 1, 0] - d[:, :, 0, 1]], axis=-1)

    def rot(self, pts):
        """Scalar face rotor of vector members: d1 v2 - d2 v1."""
        d = self.derivatives(pts)
        return d[:, :, 1, 0] - d[:, :, 0, 1]

    def vrot(self, pts):
        """Vector face rotor of scalar members: grad r rotated by -pi/2."""
        g = self.grad(pts)
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)

    def to_physical(self, local):
        """Map local vector components (..., ncomp) to Cartesian (..., 3)."""
        return local @ self.frame.axes


def space_dimension(kind: str, tag: str, l: int) -> int:
    """Closed-form dimension of a polynomial (sub)space."""
    n = _DIM[kind]
    P = lambda d: dim_P(n, d)
    if l < 0:
        return 0
    if tag == "P":
        return P(l)
    if tag == "P0":
        return P(l) - 1
    if tag == "vP":
        return n * P(l)
    if n == 2:
        table = {"G": P(l + 1) - 1, "Gc": P(l - 1), "R": P(l + 1) - 1, "Rc": P(l - 1)}
    elif n == 3:
        table = {"G": P(l + 1) - 1, "Rc": P(l - 1),
                 "R": 3 * P(l) - P(l - 1), "Gc": 3 * P(l) - P(l + 1) + 1}
    else:
        raise ValueError(f"tag {tag!r} not defined on edges")
    if tag == "RT":
        return space_dimension(kind, "R", l - 1) + table["Rc"]
    return table[tag]


def _spanning_set(dim, tag, l):
    """Spanning coefficients (ns, ncomp, nmon) over monomials of degree <= L."""
    if tag == "RT":
        a, L1 = _spanning_set(dim, "R", l - 1)
        b, L2 = _spanning_set(dim, "Rc", l)
        L = max(L1, L2)
        return np.concatenate([_lift(a, dim, L1, L), _lift(b, dim, L2, L)]), L
    L = l + 1 if tag in ("G", "R") else l
    nm = dim_P(dim, L)
    eye = np.eye(nm)
    lower = np.arange(dim_P(dim, l - 1))
    if tag in ("P", "P0"):
        start = 1 if tag == "P0" else 0
        return eye[start:, None, :], L
    if tag == "vP":
        S = np.zeros((dim * nm, dim, nm))
        for j in range(dim):
            S[j * nm:(j + 1) * nm, j, :] = eye
        return S, L
    D = [derivative_matrix(dim, L, a) for a in range(dim)]
    X = [multiply_matrix(dim, L, a) for a in range(dim)]
    rows = []
    if tag == "G":
        for m in range(1, nm):
            rows.append(np.array([D[a][m] for a in range(dim)]))
        return np.array(rows), L
    if tag == "Rc":
        for m in lower:
            rows.append(np.array([X[a][m] for a in range(dim)]))
        return np.array(rows).reshape(-1, dim, nm), L
    if dim == 2:
        if tag == "R":
            for m in range(1, nm):
                rows.append(np.array([D[1][m], -D[0][m]]))
            return np.array(rows), L
        if tag == "Gc":
            for m in lower:
                rows.append(np.array([X[1][m], -X[0][m]]))
            return np.array(rows).reshape(-1, 2, nm), L
    if dim == 3:
        if tag == "R":
            for m in range(1, nm):
                for j in range(3):
                    # curl(m e_j) = grad m x e_j
                    g = [D[a][m] for a in range(3)]
                    c = [np.zeros(nm) for _ in range(3)]
                    j1, j2 = (j + 1) % 3, (j + 2) % 3
                    c[j1] = g[j2]
                    c[j2] = -g[j1]
                    rows.append(np.array(c))
            return np.array(rows), L
        if tag == "Gc":
            for m in lower:
                for j in range(3):
                    # xi x (m e_j)
                    c = [np.zeros(nm) for _ in range(3)]
                    j1, j2 = (j + 1) % 3, (j + 2) % 3
                    c[j1] = X[j2][m]
                    c[j2] = -X[j1][m]
                    rows.append(np.array(c))
            return np.array(rows).reshape(-1, 3, nm), L
    raise ValueError(f"unknown space tag {tag!r}")


def _lift(S, dim, L, Lnew):
    if L == Lnew:
        return S
    out = np.zeros(S.shape[:2] + (dim_P(dim, Lnew),))
    out[..., :S.shape[2]] = S
    return out


def orthonormalize(S, values_fn, weights, expected, rank_tol=1e-9, keep_order=True):
    """L2-orthonormal basis of span(S) by pivoted QR + two Cholesky passes.

    ``values_fn(C)`` returns (npts, n, ncomp) values of coefficient stack C.
    """
    sw = np.sqrt(weights)
    V = values_fn(S)
    A = (sw[:, None, None] * V).transpose(0, 2, 1).reshape(-1, S.shape[0])
    # blocked unpivoted QR compresses the tall sample matrix first
    R0 = sla.qr(A, mode="r", overwrite_a=True)[0][: A.shape[1]]
    _, R, piv = sla.qr(R0, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rank_tol * diag[0])) if diag.size else 0
    if rank != expected:
        raise BasisError(f"spanning set rank {rank} differs from dimension {expected}")
    sel = np.sort(piv[:rank]) if keep_order else piv[:rank]
    C = S[sel]
    for _ in range(2):
        G = gram(values_fn(C), weights)
        Lc = np.linalg.cholesky(G)
        C = np.einsum("ij,jcm->icm", np.linalg.inv(Lc), C)
    return C


def basis_quad_degree(level):
    return 2 * level + 2


def build_basis(mesh: PolyMesh, kind: str, idx: int, tag: str, l: int, quad_degree=None) -> SpaceBasis:
    """Orthonormal basis of the space ``tag`` of degree ``l`` on one entity (cached)."""
    cache = mesh.__dict__.setdefault("_basis_cache", {})
    key = (kind, idx, tag, l)
    if key in cache:
        return cache[key]
    dim = _DIM[kind]
    frame = entity_frame(mesh, kind, idx)
    expected = space_dimension(kind, tag, l)
    if expected == 0:
        ncomp = 1 if tag in ("P", "P0") else dim
        b = SpaceBasis(kind, idx, tag, l, frame, 0, np.zeros((0, ncomp, 1)))
        cache[key] = b
        return b
    if tag == "P0":
        # orthonormal P^l basis starts with the constant; the rest has zero mean
        full = build_basis(mesh, kind, idx, "P", l, quad_degree)
        b = SpaceBasis(kind, idx, tag, l, frame, full.degree, full.coef[1:])
        cache[key] = b
        return b
    S, L = _spanning_set(dim, tag, l)
    qd = quad_degree if quad_degree is not None else max(2 * L, 2)
    shared = mesh.__dict__.setdefault("_basis_shared", {})
    skey = (mesh.signature(kind, idx), tag, l, qd)
    if skey in shared:
        b = SpaceBasis(kind, idx, tag, l, frame, L, shared[skey])
        cache[key] = b
        return b
    rule = make_quadrature(mesh, kind, idx, qd)
    M = eval_monomials(frame.local(rule.points), L)
    values_fn = lambda C: _combine(M, C)
    C = orthonormalize(S, values_fn, rule.weights, expected)
    shared[skey] = C
    b = SpaceBasis(kind, idx, tag, l, frame, L, C)
    cache[key] = b
    return b


def l2_project(basis: SpaceBasis, rule: QuadratureRule, values) -> np.ndarray:
    """Coefficients of the L2 projection of sampled ``values`` onto ``basis``.

    ``values`` has shape (npts,) for scalar spaces, or (npts, 3) Cartesian
    vectors for vector spaces (the tangential part is taken on faces).
    """
    phi = basis.values(rule.points)
    values = np.asarray(values, dtype=float)
    if basis.ncomp == 1:
        return phi.T @ (rule.weights * values)
    local = values @ basis.frame.axes.T
    return np.einsum("p,pic,pc->i", rule.weights, phi, local)
