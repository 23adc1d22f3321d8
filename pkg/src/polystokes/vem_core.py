"""Fully discrete virtual element complex on polyhedral meshes.

The three spaces store the DoF images of the nodal, edge and face virtual
element spaces (plain, non-serendipity faces):

* ``Vn``: vertex values, ``P^{k-1}`` edge moments, ``Rc^{k+1}(F)`` moments of
  the face gradient and ``Rc^k(T)`` moments of the element gradient;
* ``Ve``: ``P^k`` tangential edge moments, zero-mean face rotor moments and
  ``Rc^{k+1}(F)`` tangential moments, ``Gc^{k+1}(T)`` moments of the curl and
  ``Rc^k(T)`` moments of the field;
* ``Vf``: ``P^k`` normal face moments, zero-mean divergence moments and
  ``Gc^{k+1}(T)`` moments of the field.

All blocks are coefficients in L2-orthonormal bases; zero-mean spaces use
the orthonormal ``P^l`` basis without its leading constant.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .ddr_core import (VERTEX, DofLayout, EdgeSkeleton, LocalOperator, _index,
                       _rows_to_sparse, _solve, _vrot_phys, closure_dofs, embed, phys)
from .mesh import PolyMesh
from .polyquad import (EDGE, ELEMENT, FACE, build_basis, gram, l2_project,
                       make_quadrature, space_dimension)


class VEMComplex:
    """Discrete VEM sequence of degree ``k`` with cached local operators."""

    def __init__(self, mesh: PolyMesh, k: int, sigma: float = 0.1, qdeg: int | None = None):
        if k < 0:
            raise ValueError("k must be >= 0")
        self.mesh, self.k, self.sigma = mesh, k, sigma
        self.qdeg = 2 * k + 4 if qdeg is None else qdeg
        nV, nE, nF, nT = mesh.n_vertices, mesh.n_edges, mesh.n_faces, mesh.n_elements
        dim = space_dimension
        self.nodal_layout = DofLayout("Vn", k, [
            (VERTEX, nV, 1), (EDGE, nE, k), (FACE, nF, dim(FACE, "Rc", k + 1)),
            (ELEMENT, nT, dim(ELEMENT, "Rc", k))])
        self.edge_layout = DofLayout("Ve", k, [
            (EDGE, nE, k + 1), (FACE, nF, dim(FACE, "P0", k) + dim(FACE, "Rc", k + 1)),
            (ELEMENT, nT, dim(ELEMENT, "Gc", k + 1) + dim(ELEMENT, "Rc", k))])
        self.face_layout = DofLayout("Vf", k, [
            (FACE, nF, dim(FACE, "P", k)),
            (ELEMENT, nT, dim(ELEMENT, "P0", k) + dim(ELEMENT, "Gc", k + 1))])
        self.skeleton = EdgeSkeleton(mesh, k, self.nodal_layout, self.qdeg)
        self._face = {}
        self._elem = {}
        self._shared = {}

    def basis(self, kind, i, tag, l):
        return build_basis(self.mesh, kind, i, tag, l)

    def rule(self, kind, i, deg=None):
        return make_quadrature(self.mesh, kind, i, self.qdeg if deg is None else deg)

    def layout(self, space):
        return {"n": self.nodal_layout, "e": self.edge_layout, "f": self.face_layout}[space]

    def closure(self, space, kind, i):
        if space == "n" and kind == EDGE:
            return self.skeleton.coefficients(i)[2]
        return closure_dofs(self.layout(space), self.mesh, kind, i)

    # -- face operators on Ve(F) ----------------------------------------------
    def face_ops(self, f):
        if f not in self._face:
            sig = self.mesh.signature(FACE, f)
            if sig in self._shared:
                ops = dict(self._shared[sig], dofs=self.closure("e", FACE, f))
            else:
                ops = self._shared[sig] = self._build_face(f)
            self._face[f] = ops
        return self._face[f]

    def _edge_moment_rows(self, f, idx, test, values_of):
        """Sum over edges of omega_FE * int_E v_E * (test values) as closure rows."""
        m, L = self.mesh, self.edge_layout
        out = np.zeros((test, len(idx)))
        for e, om in zip(m.face_edges[f], m.face_edge_orient[f]):
            er = self.rule(EDGE, e)
            PE = self.basis(EDGE, e, "P", self.k)
            cols = [idx[g] for g in L.dofs(EDGE, e)]
            out[:, cols] += om * gram(values_of(e, er.points), er.weights, PE.values(er.points))
        return out

    def _build_face(self, f):
        m, k, L = self.mesh, self.k, self.edge_layout
        dofs = self.closure("e", FACE, f)
        idx = _index(dofs)
        n_cl = len(dofs)
        rule = self.rule(FACE, f)
        pts, w = rule.points, rule.weights
        area = m.face_areas[f]
        Pk = self.basis(FACE, f, "P", k)
        P0 = self.basis(FACE, f, "P0", k)
        Rc1 = self.basis(FACE, f, "Rc", k + 1)
        face_cols = [idx[g] for g in L.dofs(FACE, f)]
        ccols, rcols = face_cols[:P0.n], face_cols[P0.n:]
        ones = lambda e, p: np.ones((len(p), 1))
        circ = self._edge_moment_rows(f, idx, 1, ones)[0]
        # full face curl in P^k(F); omega_FE t_E runs clockwise about n_F, so the
        # circulation enters with a minus sign
        C = np.zeros((Pk.n, n_cl))
        C[:, ccols] = gram(Pk.values(pts), w, P0.values(pts))
        C -= np.outer(Pk.values(pts).T @ w / area, circ)
        Pi_S = self._serendipity(f, idx, n_cl, ccols, rcols)
        # tangent trace in RT^{k+1}(F), tested on vrot P0^{k+1}(F) and Rc^{k+1}(F)
        RT = self.basis(FACE, f, "RT", k + 1)
        Pk1 = self.basis(FACE, f, "P", k + 1)
        vrot = _vrot_phys(Pk1, pts)[:, 1:]
        M = np.vstack([gram(vrot, w, phys(RT, pts)), gram(phys(Rc1, pts), w, phys(RT, pts))])
        rhs_r = gram(Pk1.values(pts)[:, 1:], w, P0.values(pts))
        rhs_r = embed(rhs_r, L.dofs(FACE, f)[:P0.n], idx)
        rhs_r += self._edge_moment_rows(f, idx, Pk1.n, lambda e, p: Pk1.values(p))[1:]
        vPF = self.basis(FACE, f, "vP", k)
        if k >= 1:
            rhs_w = gram(phys(Rc1, pts), w, phys(vPF, pts)) @ Pi_S
        else:
            # the Rc^1 moment condition cannot be met in vP^0: use the moments themselves
            rhs_w = np.zeros((Rc1.n, n_cl))
            rhs_w[:, rcols] = np.eye(Rc1.n)
        gamma = _solve(M, np.vstack([rhs_r, rhs_w]), "VEM face tangent trace")
        # L2 projection of the tangential trace on vP^{k+1}(F) from the DoFs
        vP1 = self.basis(FACE, f, "vP", k + 1)
        Pk2 = self.basis(FACE, f, "P", k + 2)
        M2 = np.vstack([gram(_vrot_phys(Pk2, pts)[:, 1:], w, phys(vP1, pts)),
                        gram(phys(Rc1, pts), w, phys(vP1, pts))])
        rhs2_r = gram(Pk2.values(pts)[:, 1:], w, Pk.values(pts)) @ C
        rhs2_r += self._edge_moment_rows(f, idx, Pk2.n, lambda e, p: Pk2.values(p))[1:]
        rhs2_w = np.zeros((Rc1.n, n_cl))
        rhs2_w[:, rcols] = np.eye(Rc1.n)
        proj = _solve(M2, np.vstack([rhs2_r, rhs2_w]), "VEM face projection")
        return {"dofs": dofs, "C": C, "PiS": Pi_S, "gamma": gamma, "proj": proj}

    def _serendipity(self, f, idx, n_cl, ccols, rcols):
        """Least-squares edge serendipity operator onto vP^k(F)."""
        m, k = self.mesh, self.k
        rule = self.rule(FACE, f)
        pts, w = rule.points, rule.weights
        vP = self.basis(FACE, f, "vP", k)
        G = self.basis(FACE, f, "G", k)
        Q0 = self.basis(FACE, f, "P0", k - 1)
        P0 = self.basis(FACE, f, "P0", k)
        Rc1 = self.basis(FACE, f, "Rc", k + 1)
        L = self.edge_layout
        # tangential matching on the boundary (omega_FE**2 = 1) and boundary mean
        A1 = np.zeros((G.n, vP.n))
        A2 = np.zeros((1, vP.n))
        b1 = np.zeros((G.n, n_cl))
        b2 = np.zeros((1, n_cl))
        for e, om in zip(m.face_edges[f], m.face_edge_orient[f]):
            er = self.rule(EDGE, e)
            tE = m.edge_tangents[e]
            gt = phys(G, er.points) @ tE
            vt = phys(vP, er.points) @ tE
            PE = self.basis(EDGE, e, "P", k).values(er.points)
            cols = [idx[g] for g in L.dofs(EDGE, e)]
            A1 += gram(gt, er.weights, vt)
            b1[:, cols] += gram(gt, er.weights, PE)
            A2 += om * (er.weights @ vt)
            b2[:, cols] += om * (er.weights @ PE)
        A3 = gram(Q0.values(pts), w, vP.rot(pts))
        b3 = np.zeros((Q0.n, n_cl))
        b3[:, ccols] = gram(Q0.values(pts), w, P0.values(pts))
        A4 = gram(phys(Rc1, pts), w, phys(vP, pts))
        b4 = np.zeros((Rc1.n, n_cl))
        b4[:, rcols] = np.eye(Rc1.n)
        A_all = np.vstack([A1, A2, A3, A4])
        tol = 1e-10 * max(1.0, np.linalg.norm(A_all, 2))
        if np.linalg.matrix_rank(A_all, tol=tol) < vP.n:
            raise np.linalg.LinAlgError(f"rank-deficient serendipity conditions on face {f}")
        A_ls, b_ls = np.vstack([A1, A2, A3]), np.vstack([b1, b2, b3])
        # moment conditions exact on the range of A4 (quadrilaterals at even k lose one
        # direction by symmetry), the rest in the least-squares sense on its null space
        u, s, vt = np.linalg.svd(A4)
        r = int(np.sum(s > tol))
        x0 = vt[:r].T @ ((u[:, :r].T @ b4) / s[:r, None])
        N = vt[r:].T
        if N.shape[1] == 0:
            return x0
        y = np.linalg.lstsq(A_ls @ N, b_ls - A_ls @ x0, rcond=None)[0]
        return x0 + N @ y

    # -- element operators ----------------------------------------------------
    def element_ops(self, t):
        if t not in self._elem:
            sig = self.mesh.signature(ELEMENT, t)
            if sig in self._shared:
                ops = dict(self._shared[sig], e_dofs=self.closure("e", ELEMENT, t),
                           f_dofs=self.closure("f", ELEMENT, t))
            else:
                ops = {}
                ops.update(self._element_edge(t))
                ops.update(self._element_face(t))
                self._shared[sig] = ops
            self._elem[t] = ops
        return self._elem[t]

    def _element_edge(self, t):
        m, k, L = self.mesh, self.k, self.edge_layout
        hT = m.element_diams[t]
        dofs = self.closure("e", ELEMENT, t)
        idx = _index(dofs)
        n_cl = len(dofs)
        rule = self.rule(ELEMENT, t)
        pts, w = rule.points, rule.weights
        vP = self.basis(ELEMENT, t, "vP", k)
        Gc1 = self.basis(ELEMENT, t, "Gc", k + 1)
        Rc = self.basis(ELEMENT, t, "Rc", k)
        cols = [idx[g] for g in L.dofs(ELEMENT, t)]
        bnd = np.zeros((Gc1.n, n_cl))
        face_proj = []
        for f, om in zip(m.element_faces[t], m.element_face_orient[t]):
            fo = self.face_ops(f)
            fr = self.rule(FACE, f)
            RT = self.basis(FACE, f, "RT", k + 1)
            gam = np.einsum("pic,ij->pjc", phys(RT, fr.points), embed(fo["gamma"], fo["dofs"], idx))
            bnd += om * gram(np.cross(phys(Gc1, fr.points), m.face_normals[f]), fr.weights, gam)
            face_proj.append(embed(fo["proj"], fo["dofs"], idx))
        M = np.vstack([gram(Gc1.curl(pts), w, phys(vP, pts)), gram(phys(Rc, pts), w, phys(vP, pts))])
        rhs_a = -bnd
        rhs_a[:, cols[:Gc1.n]] += np.eye(Gc1.n)
        rhs_b = np.zeros((Rc.n, n_cl))
        rhs_b[:, cols[Gc1.n:]] = np.eye(Rc.n)
        P = _solve(M, np.vstack([rhs_a, rhs_b]), "VEM edge potential")
        # interpolator of vP^k(T) into the closure DoFs
        I = np.zeros((n_cl, vP.n))
        for e in m.element_edges[t]:
            er = self.rule(EDGE, e)
            PE = self.basis(EDGE, e, "P", k)
            I[[idx[g] for g in L.dofs(EDGE, e)]] = gram(PE.values(er.points), er.weights,
                                                     phys(vP, er.points) @ m.edge_tangents[e])
        for f in m.element_faces[t]:
            fr = self.rule(FACE, f)
            P0F = self.basis(FACE, f, "P0", k)
            Rc1F = self.basis(FACE, f, "Rc", k + 1)
            fc = [idx[g] for g in L.dofs(FACE, f)]
            I[fc[:P0F.n]] = gram(P0F.values(fr.points), fr.weights, vP.curl(fr.points) @ m.face_normals[f])
            I[fc[P0F.n:]] = gram(phys(Rc1F, fr.points), fr.weights, phys(vP, fr.points))
        I[cols[:Gc1.n]] = gram(phys(Gc1, pts), w, vP.curl(pts))
        I[cols[Gc1.n:]] = gram(phys(Rc, pts), w, phys(vP, pts))
        # DoF-level stabilization: edge moments and face projections
        S = np.zeros((n_cl, n_cl))
        for e in m.element_edges[t]:
            ec = [idx[g] for g in L.dofs(EDGE, e)]
            S[ec, ec] += hT ** 2
        for Pf in face_proj:
            S += hT * Pf.T @ Pf
        return {"e_dofs": dofs, "Pe": P, "Ie": I, "Se": S}

    def _element_face(self, t):
        m, k, L = self.mesh, self.k, self.face_layout
        hT = m.element_diams[t]
        dofs = self.closure("f", ELEMENT, t)
        idx = _index(dofs)
        n_cl = len(dofs)
        rule = self.rule(ELEMENT, t)
        pts, w = rule.points, rule.weights
        vol = m.element_volumes[t]
        vP = self.basis(ELEMENT, t, "vP", k)
        Pk = self.basis(ELEMENT, t, "P", k)
        P0 = self.basis(ELEMENT, t, "P0", k)
        Pk1 = self.basis(ELEMENT, t, "P", k + 1)
        Gc1 = self.basis(ELEMENT, t, "Gc", k + 1)
        Gc = self.basis(ELEMENT, t, "Gc", k)
        cols = [idx[g] for g in L.dofs(ELEMENT, t)]
        dcols, gcols = cols[:P0.n], cols[P0.n:]
        flux = np.zeros(n_cl)
        bnd = np.zeros((Pk1.n, n_cl))
        fcols_all = []
        for f, om in zip(m.element_faces[t], m.element_face_orient[t]):
            fr = self.rule(FACE, f)
            PF = self.basis(FACE, f, "P", k).values(fr.points)
            fc = [idx[g] for g in L.dofs(FACE, f)]
            fcols_all.extend(fc)
            flux[fc] += om * (fr.weights @ PF)
            bnd[:, fc] += om * gram(Pk1.values(fr.points), fr.weights, PF)
        D = np.zeros((Pk.n, n_cl))
        D[:, dcols] = gram(Pk.values(pts), w, P0.values(pts))
        D += np.outer(Pk.values(pts).T @ w / vol, flux)
        Dw = np.zeros((P0.n, n_cl))
        Dw[:, dcols] = np.eye(P0.n)
        M = np.vstack([gram(Pk1.grad(pts)[:, 1:], w, phys(vP, pts)), gram(phys(Gc, pts), w, phys(vP, pts))])
        rhs_a = -gram(Pk1.values(pts)[:, 1:], w, P0.values(pts)) @ Dw + bnd[1:]
        rhs_b = np.zeros((Gc.n, n_cl))
        rhs_b[:, gcols] = gram(phys(Gc, pts), w, phys(Gc1, pts))
        P = _solve(M, np.vstack([rhs_a, rhs_b]), "VEM face potential")
        I = np.zeros((n_cl, vP.n))
        for f in m.element_faces[t]:
            fr = self.rule(FACE, f)
            PF = self.basis(FACE, f, "P", k)
            I[[idx[g] for g in L.dofs(FACE, f)]] = gram(PF.values(fr.points), fr.weights,
                                                     phys(vP, fr.points) @ m.face_normals[f])
        I[dcols] = gram(P0.values(pts), w, vP.div(pts))
        I[gcols] = gram(phys(Gc1, pts), w, phys(vP, pts))
        S = np.zeros((n_cl, n_cl))
        S[fcols_all, fcols_all] = hT
        S[gcols, gcols] = 1.0
        return {"f_dofs": dofs, "D": D, "Pf": P, "If": I, "Sf": S}

    # -- public local operators ------------------------------------------------
    def serendipity_edge_projector(self, f) -> LocalOperator:
        fo = self.face_ops(f)
        return LocalOperator(fo["dofs"], fo["PiS"])

    def tangential_trace(self, f) -> LocalOperator:
        fo = self.face_ops(f)
        return LocalOperator(fo["dofs"], fo["gamma"])

    def face_curl(self, f) -> LocalOperator:
        fo = self.face_ops(f)
        return LocalOperator(fo["dofs"], fo["C"])

    def face_projection(self, f) -> LocalOperator:
        """L2 projection of the tangential trace onto vP^{k+1}(F)."""
        fo = self.face_ops(f)
        return LocalOperator(fo["dofs"], fo["proj"])

    def divergence(self, t) -> LocalOperator:
        eo = self.element_ops(t)
        return LocalOperator(eo["f_dofs"], eo["D"])

    def potential(self, space, t) -> LocalOperator:
        eo = self.element_ops(t)
        return LocalOperator(eo[space + "_dofs"], eo["P" + space])

    def local_interpolator(self, space, t) -> LocalOperator:
        """Matrix from vP^k(T) coefficients to closure DoFs; ``dofs`` are the closure ids."""
        eo = self.element_ops(t)
        return LocalOperator(eo[space + "_dofs"], eo["I" + space])

    def stabilization(self, space, t) -> LocalOperator:
        eo = self.element_ops(t)
        return LocalOperator(eo[space + "_dofs"], eo["S" + space])

    def local_product_matrix(self, space, t, sigma=None) -> LocalOperator:
        """Matrix of int P a . P b + sigma s(a - I P a, b - I P b) on the closure."""
        sigma = self.sigma if sigma is None else sigma
        eo = self.element_ops(t)
        P, I, S = eo["P" + space], eo["I" + space], eo["S" + space]
        R = np.eye(P.shape[1]) - I @ P
        return LocalOperator(eo[space + "_dofs"], P.T @ P + sigma * R.T @ S @ R)

    def local_product(self, space, t, a, b, sigma=None) -> float:
        M = self.local_product_matrix(space, t, sigma)
        return float(np.asarray(a)[M.dofs] @ M.matrix @ np.asarray(b)[M.dofs])

    # -- global operators -------------------------------------------------------
    def gradient_matrix(self):
        """Sparse discrete gradient Vn -> Ve."""
        m, Ln, Le = self.mesh, self.nodal_layout, self.edge_layout
        rows, cols, vals = [], [], []
        blocks = []
        for e in range(m.n_edges):
            rule = self.rule(EDGE, e)
            dQ, g = self.skeleton.derivative(e, rule.points)
            PE = self.basis(EDGE, e, "P", self.k)
            blocks.append((Le.dofs(EDGE, e), LocalOperator(g, gram(PE.values(rule.points), rule.weights, dQ))))
        A = _rows_to_sparse(blocks, Le.ndofs, Ln.ndofs).tocoo()
        rows, cols, vals = [A.row], [A.col], [A.data]
        n0 = space_dimension(FACE, "P0", self.k)
        for f in range(m.n_faces):
            r = Le.dofs(FACE, f)[n0:]
            rows.append(r)
            cols.append(Ln.dofs(FACE, f))
            vals.append(np.ones(len(r)))
        nG = space_dimension(ELEMENT, "Gc", self.k + 1)
        for t in range(m.n_elements):
            r = Le.dofs(ELEMENT, t)[nG:]
            rows.append(r)
            cols.append(Ln.dofs(ELEMENT, t))
            vals.append(np.ones(len(r)))
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(Le.ndofs, Ln.ndofs)).tocsr()

    def curl_matrix(self):
        """Sparse discrete curl Ve -> Vf."""
        m, Le, Lf = self.mesh, self.edge_layout, self.face_layout
        blocks = [(Lf.dofs(FACE, f), self.face_curl(f)) for f in range(m.n_faces)]
        A = _rows_to_sparse(blocks, Lf.ndofs, Le.ndofs).tocoo()
        rows, cols, vals = [A.row], [A.col], [A.data]
        n0 = space_dimension(ELEMENT, "P0", self.k)
        nG = space_dimension(ELEMENT, "Gc", self.k + 1)
        for t in range(m.n_elements):
            rows.append(Lf.dofs(ELEMENT, t)[n0:])
            cols.append(Le.dofs(ELEMENT, t)[:nG])
            vals.append(np.ones(nG))
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(Lf.ndofs, Le.ndofs)).tocsr()

    def divergence_matrix(self):
        """Sparse divergence Vf -> P^k(T_h) (element-blocked)."""
        nP = space_dimension(ELEMENT, "P", self.k)
        blocks = [(np.arange(t * nP, (t + 1) * nP), self.divergence(t)) for t in range(self.mesh.n_elements)]
        return _rows_to_sparse(blocks, self.mesh.n_elements * nP, self.face_layout.ndofs)

    def mass_matrix(self, space, sigma=None):
        """Sparse global discrete L2-product on ``space`` ('e' or 'f')."""
        rows, cols, vals = [], [], []
        for t in range(self.mesh.n_elements):
            M = self.local_product_matrix(space, t, sigma)
            r, c = np.meshgrid(M.dofs, M.dofs, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(M.matrix.ravel())
        n = self.layout(space).ndofs
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n)).tocsr()

    def mean_functional(self) -> np.ndarray:
        """Row vector on Vn giving int q for k >= 1, the vertex sum for k = 0."""
        m, k, L = self.mesh, self.k, self.nodal_layout
        ell = np.zeros(L.ndofs)
        if k == 0:
            ell[L.range(VERTEX)] = 1.0
            return ell
        face_int = {}
        for f in range(m.n_faces):
            # int_F q = (-int grad_F q . x_F + sum_E omega (x_F . n_FE) int_E q) / 2
            row = np.zeros(L.ndofs)
            fr = self.rule(FACE, f)
            c = m.face_centers[f]
            Rc1 = self.basis(FACE, f, "Rc", k + 1)
            row[L.dofs(FACE, f)] -= 0.5 * np.einsum("p,pic,pc->i", fr.weights, phys(Rc1, fr.points),
                                                     fr.points - c)
            for e, om, nfe in zip(m.face_edges[f], m.face_edge_orient[f], m.face_edge_normals[f]):
                er = self.rule(EDGE, e)
                Q, g = self.skeleton.trace(e, er.points)
                dist = (m.edge_midpoints[e] - c) @ nfe
                np.add.at(row, g, 0.5 * om * dist * (er.weights @ Q))
            face_int[f] = row
        for t in range(m.n_elements):
            tr = self.rule(ELEMENT, t)
            c = m.element_centers[t]
            Rc = self.basis(ELEMENT, t, "Rc", k)
            ell[L.dofs(ELEMENT, t)] -= np.einsum("p,pic,pc->i", tr.weights, phys(Rc, tr.points),
                                                  tr.points - c) / 3.0
            for f, om in zip(m.element_faces[t], m.element_face_orient[t]):
                dist = (m.face_centers[f] - c) @ m.face_normals[f]
                ell += om * dist * face_int[f] / 3.0
        return ell

    # -- interpolators -------------------------------------------------------------
    def interpolate_nodal(self, q, qdeg=None) -> np.ndarray:
        """I^n q for a callable scalar field; gradient moments via integration by parts."""
        m, k, L = self.mesh, self.k, self.nodal_layout
        qdeg = self.qdeg if qdeg is None else qdeg
        x = np.zeros(L.ndofs)
        x[L.range(VERTEX)] = q(m.vertices)
        if k > 0:
            for e in range(m.n_edges):
                r = make_quadrature(m, EDGE, e, qdeg)
                x[L.dofs(EDGE, e)] = l2_project(self.basis(EDGE, e, "P", k - 1), r, q(r.points))
        for f in range(m.n_faces):
            Rc1 = self.basis(FACE, f, "Rc", k + 1)
            r = make_quadrature(m, FACE, f, qdeg)
            val = -Rc1.div(r.points).T @ (r.weights * q(r.points))
            for e, om, nfe in zip(m.face_edges[f], m.face_edge_orient[f], m.face_edge_normals[f]):
                er = make_quadrature(m, EDGE, e, qdeg)
                val += om * (phys(Rc1, er.points) @ nfe).T @ (er.weights * q(er.points))
            x[L.dofs(FACE, f)] = val
        if L.size(ELEMENT):
            for t in range(m.n_elements):
                Rc = self.basis(ELEMENT, t, "Rc", k)
                r = make_quadrature(m, ELEMENT, t, qdeg)
                val = -Rc.div(r.points).T @ (r.weights * q(r.points))
                for f, om in zip(m.element_faces[t], m.element_face_orient[t]):
                    fr = make_quadrature(m, FACE, f, qdeg)
                    val += om * (phys(Rc, fr.points) @ m.face_normals[f]).T @ (fr.weights * q(fr.points))
                x[L.dofs(ELEMENT, t)] = val
        return x

    def interpolate_edge(self, v, curl_v, qdeg=None) -> np.ndarray:
        """I^e v for callable fields ``v`` and its curl ``curl_v`` (both (npts, 3))."""
        m, k, L = self.mesh, self.k, self.edge_layout
        qdeg = self.qdeg if qdeg is None else qdeg
        x = np.zeros(L.ndofs)
        for e in range(m.n_edges):
            r = make_quadrature(m, EDGE, e, qdeg)
            x[L.dofs(EDGE, e)] = l2_project(self.basis(EDGE, e, "P", k), r, v(r.points) @ m.edge_tangents[e])
        for f in range(m.n_faces):
            r = make_quadrature(m, FACE, f, qdeg)
            x[L.dofs(FACE, f)] = np.concatenate([
                l2_project(self.basis(FACE, f, "P0", k), r, curl_v(r.points) @ m.face_normals[f]),
                l2_project(self.basis(FACE, f, "Rc", k + 1), r, v(r.points))])
        for t in range(m.n_elements):
            r = make_quadrature(m, ELEMENT, t, qdeg)
            x[L.dofs(ELEMENT, t)] = np.concatenate([
                l2_project(self.basis(ELEMENT, t, "Gc", k + 1), r, curl_v(r.points)),
                l2_project(self.basis(ELEMENT, t, "Rc", k), r, v(r.points))])
        return x

    def interpolate_face(self, w, div_w, qdeg=None) -> np.ndarray:
        """I^f w for callable fields ``w`` ((npts, 3)) and ``div_w`` ((npts,))."""
        m, k, L = self.mesh, self.k, self.face_layout
        qdeg = self.qdeg if qdeg is None else qdeg
        x = np.zeros(L.ndofs)
        for f in range(m.n_faces):
            r = make_quadrature(m, FACE, f, qdeg)
            x[L.dofs(FACE, f)] = l2_project(self.basis(FACE, f, "P", k), r, w(r.points) @ m.face_normals[f])
        for t in range(m.n_elements):
            r = make_quadrature(m, ELEMENT, t, qdeg)
            x[L.dofs(ELEMENT, t)] = np.concatenate([
                l2_project(self.basis(ELEMENT, t, "P0", k), r, div_w(r.points)),
                l2_project(self.basis(ELEMENT, t, "Gc", k + 1), r, w(r.points))])
        return x

    def interpolate(self, space, *fields, qdeg=None) -> np.ndarray:
        fn = {"n": self.interpolate_nodal, "e": self.interpolate_edge, "f": self.interpolate_face}[space]
        return fn(*fields, qdeg=qdeg)

    def dimensions(self):
        nP = space_dimension(ELEMENT, "P", self.k) * self.mesh.n_elements
        return {"Vn": self.nodal_layout.ndofs, "Ve": self.edge_layout.ndofs,
                "Vf": self.face_layout.ndofs, "Pk": nP}
