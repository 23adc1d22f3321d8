"""Discrete de Rham spaces on polyhedral meshes.

Three fully discrete spaces are built from polynomial moments attached to
mesh entities:

* ``Xgrad``: vertex values, ``P^{k-1}`` moments on edges, faces and elements;
* ``Xcurl``: ``P^k`` tangential moments on edges, ``R^{k-1} + Rc^k`` moments on
  faces and elements;
* ``Xdiv``: ``P^k`` normal moments on faces, ``G^{k-1} + Gc^k`` moments on
  elements.

Every component is stored as coefficients in an L2-orthonormal basis, so
projections are moment evaluations.  Local operators are dense matrices
acting on the closure DoFs of an entity, identified by their global indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .mesh import PolyMesh
from .polyquad import (EDGE, ELEMENT, FACE, build_basis, gram, l2_project,
                       make_quadrature, space_dimension)

VERTEX = "vertex"


class DofLayout:
    """Entity-blocked layout of a global DoF vector."""

    def __init__(self, name: str, k: int, blocks):
        self.name = name
        self.k = k
        self.blocks = {}
        off = 0
        for kind, count, size in blocks:
            self.blocks[kind] = (off, count, size)
            off += count * size
        self.ndofs = off

    def dofs(self, kind: str, i: int) -> np.ndarray:
        off, _, size = self.blocks[kind]
        return np.arange(off + i * size, off + (i + 1) * size)

    def size(self, kind: str) -> int:
        return self.blocks[kind][2]

    def range(self, kind: str) -> np.ndarray:
        off, count, size = self.blocks[kind]
        return np.arange(off, off + count * size)

    def __repr__(self):
        return f"DofLayout({self.name}, k={self.k}, ndofs={self.ndofs})"


@dataclass
class LocalOperator:
    """Dense matrix from closure DoFs (global indices ``dofs``) to coefficients."""

    dofs: np.ndarray
    matrix: np.ndarray

    def apply(self, x):
        return self.matrix @ np.asarray(x)[self.dofs]


def embed(M, cols, dofs_index):
    """Scatter the columns of ``M`` (global ids ``cols``) into a closure matrix."""
    out = np.zeros((M.shape[0], len(dofs_index)))
    np.add.at(out, (slice(None), [dofs_index[c] for c in cols]), M)
    return out


def closure_dofs(layout: DofLayout, mesh: PolyMesh, kind: str, i: int) -> np.ndarray:
    """Global DoFs of an entity and of the entities on its boundary.

    Faces list vertices and edges in loop order; elements list sorted
    vertices, sorted edges, then faces in element order.
    """
    if kind == FACE:
        groups = [(VERTEX, mesh.face_vertices[i]), (EDGE, mesh.face_edges[i]), (FACE, [i])]
    elif kind == ELEMENT:
        groups = [(VERTEX, mesh.element_vertices[i]), (EDGE, mesh.element_edges[i]),
                  (FACE, mesh.element_faces[i]), (ELEMENT, [i])]
    else:
        raise ValueError(f"closure not defined for {kind!r}")
    parts = [layout.dofs(kd, j) for kd, ids in groups if kd in layout.blocks for j in ids]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


def phys(basis, pts):
    """Basis values at ``pts``; vector bases are mapped to Cartesian components."""
    v = basis.values(pts)
    return v if basis.ncomp == 1 else basis.to_physical(v)


def _index(dofs):
    return {int(g): i for i, g in enumerate(dofs)}


def _solve(A, B, what):
    try:
        return sla.solve(A, B)
    except (sla.LinAlgError, ValueError) as exc:
        raise np.linalg.LinAlgError(f"singular test system in {what}") from exc


class EdgeSkeleton:
    """Per-edge ``P^{k+1}`` reconstruction from vertex values and ``P^{k-1}`` moments.

    ``trace(e, pts)`` returns the value matrix at ``pts`` acting on the edge
    closure DoFs ``[q(v_lo), q(v_hi), moments]`` together with their global
    indices in the Xgrad-type layout.
    """

    def __init__(self, mesh, k, layout, qdeg, moment_kind="edge"):
        self.mesh, self.k, self.layout, self.qdeg = mesh, k, layout, qdeg
        self.moment_kind = moment_kind
        self._cache = {}

    def _setup(self, e):
        if e not in self._cache:
            m, k = self.mesh, self.k
            B = build_basis(m, EDGE, e, "P", k + 1)
            lo = build_basis(m, EDGE, e, "P", k - 1)
            rule = make_quadrature(m, EDGE, e, self.qdeg)
            a, b = m.edges[e]
            N = np.vstack([B.values(m.vertices[[a, b]]),
                           gram(lo.values(rule.points), rule.weights, B.values(rule.points))])
            R = np.linalg.inv(N)
            g = np.concatenate([self.layout.dofs(VERTEX, a), self.layout.dofs(VERTEX, b),
                                self.layout.dofs(self.moment_kind, e)])
            self._cache[e] = (B, R, g)
        return self._cache[e]

    def coefficients(self, e):
        """(basis, matrix dofs -> P^{k+1}(E) coefficients, global dof ids)."""
        return self._setup(e)

    def trace(self, e, pts):
        B, R, g = self._setup(e)
        return B.values(pts) @ R, g

    def derivative(self, e, pts):
        B, R, g = self._setup(e)
        dB = B.grad(pts)[:, :, 0]
        return dB @ R, g


class DDRComplex:
    """DDR sequence of degree ``k`` on a mesh, with local operators cached per entity."""

    def __init__(self, mesh: PolyMesh, k: int, sigma: float = 0.1, qdeg: int | None = None):
        if k < 0:
            raise ValueError("k must be >= 0")
        self.mesh, self.k, self.sigma = mesh, k, sigma
        self.qdeg = 2 * k + 4 if qdeg is None else qdeg
        nV, nE, nF, nT = mesh.n_vertices, mesh.n_edges, mesh.n_faces, mesh.n_elements
        dim = lambda kind, tag, l: space_dimension(kind, tag, l)
        self.grad_layout = DofLayout("Xgrad", k, [
            (VERTEX, nV, 1), (EDGE, nE, k), (FACE, nF, dim(FACE, "P", k - 1)),
            (ELEMENT, nT, dim(ELEMENT, "P", k - 1))])
        self.curl_layout = DofLayout("Xcurl", k, [
            (EDGE, nE, k + 1), (FACE, nF, dim(FACE, "R", k - 1) + dim(FACE, "Rc", k)),
            (ELEMENT, nT, dim(ELEMENT, "R", k - 1) + dim(ELEMENT, "Rc", k))])
        self.div_layout = DofLayout("Xdiv", k, [
            (FACE, nF, dim(FACE, "P", k)),
            (ELEMENT, nT, dim(ELEMENT, "G", k - 1) + dim(ELEMENT, "Gc", k))])
        self.skeleton = EdgeSkeleton(mesh, k, self.grad_layout, self.qdeg)
        self._face = {}
        self._elem = {}
        # operator matrices shared between translated copies of an entity
        self._shared = {}

    # -- bases and rules --------------------------------------------------
    def basis(self, kind, i, tag, l):
        return build_basis(self.mesh, kind, i, tag, l)

    def rule(self, kind, i, deg=None):
        return make_quadrature(self.mesh, kind, i, self.qdeg if deg is None else deg)

    def dim_P(self, kind, l):
        return space_dimension(kind, "P", l)

    # -- closures ----------------------------------------------------------
    def grad_closure(self, kind, i):
        if kind == EDGE:
            return self.skeleton.coefficients(i)[2]
        return closure_dofs(self.grad_layout, self.mesh, kind, i)

    def curl_closure(self, kind, i):
        return closure_dofs(self.curl_layout, self.mesh, kind, i)

    def div_closure(self, t):
        return closure_dofs(self.div_layout, self.mesh, ELEMENT, t)

    # -- edge operators --------------------------------------------------------
    def edge_gradient(self, e) -> LocalOperator:
        """G_E: derivative of the edge reconstruction, in the P^k(E) basis."""
        rule = self.rule(EDGE, e)
        Pk = self.basis(EDGE, e, "P", self.k)
        dQ, g = self.skeleton.derivative(e, rule.points)
        return LocalOperator(g, gram(Pk.values(rule.points), rule.weights, dQ))

    # -- face operators ---------------------------------------------------------
    def face_ops(self, f):
        if f not in self._face:
            sig = self.mesh.signature(FACE, f)
            if sig in self._shared:
                ops = dict(self._shared[sig])
                ops["grad_dofs"] = self.grad_closure(FACE, f)
                ops["curl_dofs"] = self.curl_closure(FACE, f)
            else:
                ops = {**self._face_grad(f), **self._face_curl(f)}
                self._shared[sig] = ops
            self._face[f] = ops
        return self._face[f]

    def _face_grad(self, f):
        m, k = self.mesh, self.k
        dofs = self.grad_closure(FACE, f)
        idx = _index(dofs)
        rule = self.rule(FACE, f)
        pts, w = rule.points, rule.weights
        vP = self.basis(FACE, f, "vP", k)
        qF = self.basis(FACE, f, "P", k - 1)
        Rc = self.basis(FACE, f, "Rc", k + 2)
        Pk1 = self.basis(FACE, f, "P", k + 1)
        n_cl = len(dofs)
        cG = np.zeros((vP.n, n_cl))
        cG[:, [idx[g] for g in self.grad_layout.dofs(FACE, f)]] = -gram(vP.div(pts), w, qF.values(pts))
        bnd_vP = np.zeros((vP.n, n_cl))
        bnd_Rc = np.zeros((Rc.n, n_cl))
        for e, om, nfe in zip(m.face_edges[f], m.face_edge_orient[f], m.face_edge_normals[f]):
            er = self.rule(EDGE, e)
            Q, g = self.skeleton.trace(e, er.points)
            bnd_vP += om * embed(gram(phys(vP, er.points) @ nfe, er.weights, Q), g, idx)
            bnd_Rc += om * embed(gram(phys(Rc, er.points) @ nfe, er.weights, Q), g, idx)
        cG += bnd_vP
        A = gram(Rc.div(pts), w, Pk1.values(pts))
        rhs = -gram(phys(Rc, pts), w, phys(vP, pts)) @ cG + bnd_Rc
        gamma = _solve(A, rhs, "face scalar trace")
        return {"grad_dofs": dofs, "cG": cG, "gamma": gamma}

    def _face_curl(self, f):
        m, k = self.mesh, self.k
        L = self.curl_layout
        dofs = self.curl_closure(FACE, f)
        idx = _index(dofs)
        rule = self.rule(FACE, f)
        pts, w = rule.points, rule.weights
        R = self.basis(FACE, f, "R", k - 1)
        Rc = self.basis(FACE, f, "Rc", k)
        Pk = self.basis(FACE, f, "P", k)
        Pk1 = self.basis(FACE, f, "P", k + 1)
        vP = self.basis(FACE, f, "vP", k)
        face_cols = [idx[g] for g in L.dofs(FACE, f)]
        rcols, rccols = face_cols[:R.n], face_cols[R.n:]
        n_cl = len(dofs)
        # face curl in P^k(F)
        C = np.zeros((Pk.n, n_cl))
        C[:, rcols] = gram(_vrot_phys(Pk, pts), w, phys(R, pts))
        bnd = np.zeros((Pk1.n, n_cl))
        for e, om in zip(m.face_edges[f], m.face_edge_orient[f]):
            er = self.rule(EDGE, e)
            PE = self.basis(EDGE, e, "P", k)
            cols = [idx[g] for g in L.dofs(EDGE, e)]
            C[:, cols] -= om * gram(Pk.values(er.points), er.weights, PE.values(er.points))
            bnd[:, cols] += om * gram(Pk1.values(er.points), er.weights, PE.values(er.points))
        # tangential trace tested on vrot P^{k+1}(F) (constants dropped) and Rc^k(F)
        vrot = _vrot_phys(Pk1, pts)[:, 1:]
        M = np.vstack([gram(vrot, w, phys(vP, pts)), gram(phys(Rc, pts), w, phys(vP, pts))])
        rhs_r = gram(Pk1.values(pts)[:, 1:], w, Pk.values(pts)) @ C + bnd[1:]
        rhs_c = np.zeros((Rc.n, n_cl))
        rhs_c[:, rccols] = np.eye(Rc.n)
        gamma_t = _solve(M, np.vstack([rhs_r, rhs_c]), "face tangential trace")
        return {"curl_dofs": dofs, "C": C, "gamma_t": gamma_t}

    # -- element operators -----------------------------------------------------
    def element_ops(self, t):
        if t not in self._elem:
            sig = self.mesh.signature(ELEMENT, t)
            if sig in self._shared:
                ops = dict(self._shared[sig])
                ops["grad_dofs"] = self.grad_closure(ELEMENT, t)
                ops["curl_dofs"] = self.curl_closure(ELEMENT, t)
                ops["div_dofs"] = self.div_closure(t)
            else:
                ops = {}
                ops.update(self._element_grad(t))
                ops.update(self._element_curl(t))
                ops.update(self._element_div(t))
                self._shared[sig] = ops
            self._elem[t] = ops
        return self._elem[t]

    def _element_grad(self, t):
        m, k = self.mesh, self.k
        hT = m.element_diams[t]
        dofs = self.grad_closure(ELEMENT, t)
        idx = _index(dofs)
        rule = self.rule(ELEMENT, t)
        pts, w = rule.points, rule.weights
        vP = self.basis(ELEMENT, t, "vP", k)
        qT = self.basis(ELEMENT, t, "P", k - 1)
        Rc = self.basis(ELEMENT, t, "Rc", k + 2)
        Pk1 = self.basis(ELEMENT, t, "P", k + 1)
        n_cl = len(dofs)
        cG = np.zeros((vP.n, n_cl))
        cG[:, [idx[g] for g in self.grad_layout.dofs(ELEMENT, t)]] = -gram(vP.div(pts), w, qT.values(pts))
        bnd_Rc = np.zeros((Rc.n, n_cl))
        face_gamma = []
        for f, om in zip(m.element_faces[t], m.element_face_orient[t]):
            fo = self.face_ops(f)
            fr = self.rule(FACE, f)
            nF = m.face_normals[f]
            gam = self.basis(FACE, f, "P", k + 1).values(fr.points) @ embed(fo["gamma"], fo["grad_dofs"], idx)
            face_gamma.append((f, fr, gam))
            cG += om * gram(phys(vP, fr.points) @ nF, fr.weights, gam)
            bnd_Rc += om * gram(phys(Rc, fr.points) @ nF, fr.weights, gam)
        A = gram(Rc.div(pts), w, Pk1.values(pts))
        rhs = -gram(phys(Rc, pts), w, phys(vP, pts)) @ cG + bnd_Rc
        P = _solve(A, rhs, "scalar potential")
        # stabilisation
        S = np.zeros((n_cl, n_cl))
        for f, fr, gam in face_gamma:
            d = Pk1.values(fr.points) @ P - gam
            S += hT * gram(d, fr.weights)
        for e in m.element_edges[t]:
            er = self.rule(EDGE, e)
            Q, g = self.skeleton.trace(e, er.points)
            d = Pk1.values(er.points) @ P - embed(Q, g, idx)
            S += hT ** 2 * gram(d, er.weights)
        return {"grad_dofs": dofs, "cG": cG, "Pgrad": P, "Sgrad": S}

    def _element_curl(self, t):
        m, k = self.mesh, self.k
        L = self.curl_layout
        hT = m.element_diams[t]
        dofs = self.curl_closure(ELEMENT, t)
        idx = _index(dofs)
        rule = self.rule(ELEMENT, t)
        pts, w = rule.points, rule.weights
        vP = self.basis(ELEMENT, t, "vP", k)
        R = self.basis(ELEMENT, t, "R", k - 1)
        Rc = self.basis(ELEMENT, t, "Rc", k)
        Gc1 = self.basis(ELEMENT, t, "Gc", k + 1)
        cols = [idx[g] for g in L.dofs(ELEMENT, t)]
        n_cl = len(dofs)
        cC = np.zeros((vP.n, n_cl))
        cC[:, cols[:R.n]] = gram(vP.curl(pts), w, phys(R, pts))
        bnd_G = np.zeros((Gc1.n, n_cl))
        face_gamma = []
        for f, om in zip(m.element_faces[t], m.element_face_orient[t]):
            fo = self.face_ops(f)
            fr = self.rule(FACE, f)
            nF = m.face_normals[f]
            vPF = self.basis(FACE, f, "vP", k)
            gam = np.einsum("pic,ij->pjc", phys(vPF, fr.points),
                            embed(fo["gamma_t"], fo["curl_dofs"], idx))
            face_gamma.append((f, fr, gam))
            cC += om * gram(np.cross(phys(vP, fr.points), nF), fr.weights, gam)
            bnd_G += om * gram(np.cross(phys(Gc1, fr.points), nF), fr.weights, gam)
        # potential tested on curl Gc^{k+1}(T) and Rc^k(T)
        M = np.vstack([gram(Gc1.curl(pts), w, phys(vP, pts)), gram(phys(Rc, pts), w, phys(vP, pts))])
        rhs_a = gram(phys(Gc1, pts), w, phys(vP, pts)) @ cC - bnd_G
        rhs_b = np.zeros((Rc.n, n_cl))
        rhs_b[:, cols[R.n:]] = np.eye(Rc.n)
        P = _solve(M, np.vstack([rhs_a, rhs_b]), "vector potential (curl)")
        S = np.zeros((n_cl, n_cl))
        for f, fr, gam in face_gamma:
            nF = m.face_normals[f]
            pv = np.einsum("pic,ij->pjc", phys(vP, fr.points), P)
            pt = pv - nF * np.einsum("pjc,c->pj", pv, nF)[..., None]
            S += hT * gram(pt - gam, fr.weights)
        for e in m.element_edges[t]:
            er = self.rule(EDGE, e)
            tE = m.edge_tangents[e]
            PE = self.basis(EDGE, e, "P", k)
            vE = embed(PE.values(er.points), L.dofs(EDGE, e), idx)
            d = (phys(vP, er.points) @ tE) @ P - vE
            S += hT ** 2 * gram(d, er.weights)
        return {"curl_dofs": dofs, "cC": cC, "Pcurl": P, "Scurl": S}

    def _element_div(self, t):
        m, k = self.mesh, self.k
        L = self.div_layout
        hT = m.element_diams[t]
        dofs = self.div_closure(t)
        idx = _index(dofs)
        rule = self.rule(ELEMENT, t)
        pts, w = rule.points, rule.weights
        vP = self.basis(ELEMENT, t, "vP", k)
        G = self.basis(ELEMENT, t, "G", k - 1)
        Gc = self.basis(ELEMENT, t, "Gc", k)
        Pk = self.basis(ELEMENT, t, "P", k)
        Pk1 = self.basis(ELEMENT, t, "P", k + 1)
        cols = [idx[g] for g in L.dofs(ELEMENT, t)]
        n_cl = len(dofs)
        D = np.zeros((Pk.n, n_cl))
        D[:, cols[:G.n]] = -gram(Pk.grad(pts), w, phys(G, pts))
        bnd = np.zeros((Pk1.n, n_cl))
        face_w = []
        for f, om in zip(m.element_faces[t], m.element_face_orient[t]):
            fr = self.rule(FACE, f)
            PF = self.basis(FACE, f, "P", k)
            wF = embed(PF.values(fr.points), L.dofs(FACE, f), idx)
            face_w.append((f, fr, wF))
            D += om * gram(Pk.values(fr.points), fr.weights, wF)
            bnd += om * gram(Pk1.values(fr.points), fr.weights, wF)
        M = np.vstack([gram(Pk1.grad(pts)[:, 1:], w, phys(vP, pts)), gram(phys(Gc, pts), w, phys(vP, pts))])
        rhs_a = -gram(Pk1.values(pts)[:, 1:], w, Pk.values(pts)) @ D + bnd[1:]
        rhs_b = np.zeros((Gc.n, n_cl))
        rhs_b[:, cols[G.n:]] = np.eye(Gc.n)
        P = _solve(M, np.vstack([rhs_a, rhs_b]), "vector potential (div)")
        S = np.zeros((n_cl, n_cl))
        for f, fr, wF in face_w:
            d = (phys(vP, fr.points) @ m.face_normals[f]) @ P - wF
            S += hT * gram(d, fr.weights)
        return {"div_dofs": dofs, "D": D, "Pdiv": P, "Sdiv": S}

    # -- public local operators --------------------------------------------------
    def face_curl(self, f) -> LocalOperator:
        fo = self.face_ops(f)
        return LocalOperator(fo["curl_dofs"], fo["C"])

    def tangential_trace(self, f) -> LocalOperator:
        fo = self.face_ops(f)
        return LocalOperator(fo["curl_dofs"], fo["gamma_t"])

    def face_gradient(self, f) -> LocalOperator:
        fo = self.face_ops(f)
        return LocalOperator(fo["grad_dofs"], fo["cG"])

    def scalar_trace(self, f) -> LocalOperator:
        fo = self.face_ops(f)
        return LocalOperator(fo["grad_dofs"], fo["gamma"])

    def element_gradient(self, t) -> LocalOperator:
        eo = self.element_ops(t)
        return LocalOperator(eo["grad_dofs"], eo["cG"])

    def element_curl(self, t) -> LocalOperator:
        eo = self.element_ops(t)
        return LocalOperator(eo["curl_dofs"], eo["cC"])

    def divergence(self, t) -> LocalOperator:
        eo = self.element_ops(t)
        return LocalOperator(eo["div_dofs"], eo["D"])

    def potential(self, space, t) -> LocalOperator:
        eo = self.element_ops(t)
        key = {"grad": "grad_dofs", "curl": "curl_dofs", "div": "div_dofs"}[space]
        return LocalOperator(eo[key], eo["P" + space])

    def stabilization(self, space, t) -> LocalOperator:
        eo = self.element_ops(t)
        key = {"grad": "grad_dofs", "curl": "curl_dofs", "div": "div_dofs"}[space]
        return LocalOperator(eo[key], eo["S" + space])

    def local_product_matrix(self, space, t, sigma=None) -> LocalOperator:
        """Matrix of (P a, P b)_T + sigma s_T(a, b) on the element closure."""
        sigma = self.sigma if sigma is None else sigma
        P = self.potential(space, t)
        S = self.stabilization(space, t)
        return LocalOperator(P.dofs, P.matrix.T @ P.matrix + sigma * S.matrix)

    def local_product(self, space, t, a, b, sigma=None) -> float:
        M = self.local_product_matrix(space, t, sigma)
        return float(np.asarray(a)[M.dofs] @ M.matrix @ np.asarray(b)[M.dofs])

    # -- discrete gradient / curl blocks ---------------------------------------------
    def _proj_rows(self, kind, i, tags):
        k = self.k
        vP = self.basis(kind, i, "vP", k)
        rule = self.rule(kind, i)
        blocks = [self.basis(kind, i, tag, l) for tag, l in tags]
        return np.vstack([gram(phys(b, rule.points), rule.weights, phys(vP, rule.points)) for b in blocks])

    def local_uG(self, kind, i) -> LocalOperator:
        """Block of the discrete gradient attached to one entity."""
        k = self.k
        if kind == EDGE:
            return self.edge_gradient(i)
        ops = self.face_ops(i) if kind == FACE else self.element_ops(i)
        proj = self._proj_rows(kind, i, [("R", k - 1), ("Rc", k)])
        return LocalOperator(ops["grad_dofs"], proj @ ops["cG"])

    def local_uC(self, kind, i) -> LocalOperator:
        """Block of the discrete curl attached to one entity."""
        k = self.k
        if kind == FACE:
            return self.face_curl(i)
        eo = self.element_ops(i)
        proj = self._proj_rows(ELEMENT, i, [("G", k - 1), ("Gc", k)])
        return LocalOperator(eo["curl_dofs"], proj @ eo["cC"])

    # -- global operators ------------------------------------------------------------
    def gradient_matrix(self):
        """Sparse uG: Xgrad -> Xcurl."""
        m, Lc = self.mesh, self.curl_layout
        blocks = [(Lc.dofs(EDGE, e), self.local_uG(EDGE, e)) for e in range(m.n_edges)]
        blocks += [(Lc.dofs(FACE, f), self.local_uG(FACE, f)) for f in range(m.n_faces)]
        blocks += [(Lc.dofs(ELEMENT, t), self.local_uG(ELEMENT, t)) for t in range(m.n_elements)]
        return _rows_to_sparse(blocks, Lc.ndofs, self.grad_layout.ndofs)

    def curl_matrix(self):
        """Sparse uC: Xcurl -> Xdiv."""
        m, Ld = self.mesh, self.div_layout
        blocks = [(Ld.dofs(FACE, f), self.local_uC(FACE, f)) for f in range(m.n_faces)]
        blocks += [(Ld.dofs(ELEMENT, t), self.local_uC(ELEMENT, t)) for t in range(m.n_elements)]
        return _rows_to_sparse(blocks, Ld.ndofs, self.curl_layout.ndofs)

    def divergence_matrix(self):
        """Sparse broken divergence: Xdiv -> P^k(T_h) (element-blocked)."""
        m = self.mesh
        nP = self.dim_P(ELEMENT, self.k)
        blocks = [(np.arange(t * nP, (t + 1) * nP), self.divergence(t)) for t in range(m.n_elements)]
        return _rows_to_sparse(blocks, m.n_elements * nP, self.div_layout.ndofs)

    def mass_matrix(self, space, sigma=None):
        """Sparse matrix of the global discrete L2-product of ``space``."""
        layout = {"grad": self.grad_layout, "curl": self.curl_layout, "div": self.div_layout}[space]
        rows, cols, vals = [], [], []
        for t in range(self.mesh.n_elements):
            M = self.local_product_matrix(space, t, sigma)
            r, c = np.meshgrid(M.dofs, M.dofs, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(M.matrix.ravel())
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(layout.ndofs, layout.ndofs))
        return A.tocsr()

    # -- interpolators ----------------------------------------------------------------
    def interpolate_grad(self, q, qdeg=None) -> np.ndarray:
        """Igrad q for a callable scalar field ``q(points) -> values``."""
        m, k, L = self.mesh, self.k, self.grad_layout
        qdeg = self.qdeg if qdeg is None else qdeg
        x = np.zeros(L.ndofs)
        x[L.range(VERTEX)] = q(m.vertices)
        for kind, count in ((EDGE, m.n_edges), (FACE, m.n_faces), (ELEMENT, m.n_elements)):
            if L.size(kind) == 0:
                continue
            for i in range(count):
                r = make_quadrature(m, kind, i, qdeg)
                x[L.dofs(kind, i)] = l2_project(self.basis(kind, i, "P", k - 1), r, q(r.points))
        return x

    def interpolate_curl(self, v, qdeg=None) -> np.ndarray:
        """Icurl v for a callable vector field ``v(points) -> (npts, 3)``."""
        m, k, L = self.mesh, self.k, self.curl_layout
        qdeg = self.qdeg if qdeg is None else qdeg
        x = np.zeros(L.ndofs)
        for e in range(m.n_edges):
            r = make_quadrature(m, EDGE, e, qdeg)
            x[L.dofs(EDGE, e)] = l2_project(self.basis(EDGE, e, "P", k), r, v(r.points) @ m.edge_tangents[e])
        for kind, count in ((FACE, m.n_faces), (ELEMENT, m.n_elements)):
            for i in range(count):
                r = make_quadrature(m, kind, i, qdeg)
                vals = v(r.points)
                x[L.dofs(kind, i)] = np.concatenate([
                    l2_project(self.basis(kind, i, "R", k - 1), r, vals),
                    l2_project(self.basis(kind, i, "Rc", k), r, vals)])
        return x

    def interpolate_div(self, w, qdeg=None) -> np.ndarray:
        """Idiv w for a callable vector field ``w(points) -> (npts, 3)``."""
        m, k, L = self.mesh, self.k, self.div_layout
        qdeg = self.qdeg if qdeg is None else qdeg
        x = np.zeros(L.ndofs)
        for f in range(m.n_faces):
            r = make_quadrature(m, FACE, f, qdeg)
            x[L.dofs(FACE, f)] = l2_project(self.basis(FACE, f, "P", k), r, w(r.points) @ m.face_normals[f])
        for t in range(m.n_elements):
            r = make_quadrature(m, ELEMENT, t, qdeg)
            vals = w(r.points)
            x[L.dofs(ELEMENT, t)] = np.concatenate([
                l2_project(self.basis(ELEMENT, t, "G", k - 1), r, vals),
                l2_project(self.basis(ELEMENT, t, "Gc", k), r, vals)])
        return x

    # -- norms ---------------------------------------------------------------------------
    def norms(self, v=None, q=None):
        """Discrete L2 norms and graph norms of a velocity/pressure pair."""
        out = {}
        if v is not None:
            Mc, Md, C = self.mass_matrix("curl"), self.mass_matrix("div"), self.curl_matrix()
            cv = C @ v
            out["curl"] = float(np.sqrt(max(v @ (Mc @ v), 0.0)))
            out["curl_graph"] = float(np.sqrt(max(v @ (Mc @ v) + cv @ (Md @ cv), 0.0)))
        if q is not None:
            Mg, Mc, G = self.mass_matrix("grad"), self.mass_matrix("curl"), self.gradient_matrix()
            gq = G @ q
            out["grad"] = float(np.sqrt(max(q @ (Mg @ q), 0.0)))
            out["grad_graph"] = float(np.sqrt(max(q @ (Mg @ q) + gq @ (Mc @ gq), 0.0)))
        out["total"] = float(np.sqrt(out.get("curl_graph", 0.0) ** 2 + out.get("grad_graph", 0.0) ** 2))
        return out

    def dimensions(self):
        nP = self.dim_P(ELEMENT, self.k) * self.mesh.n_elements
        return {"Xgrad": self.grad_layout.ndofs, "Xcurl": self.curl_layout.ndofs,
                "Xdiv": self.div_layout.ndofs, "Pk": nP}


def _vrot_phys(basis, pts):
    return basis.to_physical(basis.vrot(pts))


def _rows_to_sparse(blocks, nrows, ncols):
    rows, cols, vals = [], [], []
    for row_ids, op in blocks:
        if len(row_ids) == 0:
            continue
        r, c = np.meshgrid(row_ids, op.dofs, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(op.matrix.ravel())
    if not rows:
        return sp.csr_matrix((nrows, ncols))
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nrows, ncols)).tocsr()
    A.eliminate_zeros()
    return A
