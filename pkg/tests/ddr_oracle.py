"""Independent raw-monomial assembly of DDR local operators on a single tetrahedron.

Polynomials are coefficient vectors over global monomials x^a y^b z^c; all
integrals are exact, from the closed-form simplex moments
int_ref s^beta = beta! / (|beta| + d)!.  Orientations are recomputed from the
geometry.  Only the DoF bases (what a DoF number means) and the DoF layout
are taken from the implementation.
"""

from __future__ import annotations

import itertools
from math import factorial

import numpy as np

from polystokes.ddr_core import VERTEX
from polystokes.polyquad import EDGE, ELEMENT, FACE, build_basis, monomial_exponents


class Monomials:
    def __init__(self, degree):
        self.degree = degree
        self.exps = [e for d in range(degree + 1) for e in itertools.product(range(d + 1), repeat=3)
                     if sum(e) == d]
        self.index = {e: i for i, e in enumerate(self.exps)}
        self.N = len(self.exps)
        self.D = []
        for ax in range(3):
            M = np.zeros((self.N, self.N))
            for i, e in enumerate(self.exps):
                if e[ax]:
                    f = list(e)
                    f[ax] -= 1
                    M[i, self.index[tuple(f)]] = e[ax]
            self.D.append(M)

    def const(self, c=1.0):
        p = np.zeros(self.N)
        p[0] = c
        return p

    def linear(self, c0, g):
        p = self.const(c0)
        for ax in range(3):
            u = [0, 0, 0]
            u[ax] = 1
            p[self.index[tuple(u)]] = g[ax]
        return p

    def mul(self, p, q):
        out = np.zeros(self.N)
        for i in np.flatnonzero(p):
            for j in np.flatnonzero(q):
                e = tuple(a + b for a, b in zip(self.exps[i], self.exps[j]))
                if sum(e) > self.degree:
                    raise ValueError("product exceeds the degree bound")
                out[self.index[e]] += p[i] * q[j]
        return out

    def value(self, p, x):
        return sum(c * np.prod(np.asarray(x) ** np.array(e)) for c, e in zip(p, self.exps))

    def deriv(self, A, ax):
        return A @ self.D[ax]


def simplex_moments(vertices, degree):
    """Exact integrals of x^e, |e| <= degree, over the simplex spanned by ``vertices``."""
    V = np.asarray(vertices, dtype=float)
    d = len(V) - 1
    J = (V[1:] - V[0]).T
    if d == 1:
        meas = np.linalg.norm(J[:, 0])
    elif d == 2:
        meas = np.linalg.norm(np.cross(J[:, 0], J[:, 1]))
    else:
        meas = abs(np.linalg.det(J))
    S = Monomials(degree)
    ref = np.array([np.prod([factorial(b) for b in e]) / factorial(sum(e) + d)
                    if all(e[i] == 0 for i in range(d, 3)) else 0.0 for e in S.exps])
    lin = [S.linear(V[0, i], np.r_[J[i], np.zeros(3 - d)]) for i in range(3)]
    power = {(0, 0, 0): S.const()}
    out = {}
    for e in S.exps:
        if e not in power:
            ax = next(i for i in range(3) if e[i])
            f = list(e)
            f[ax] -= 1
            power[e] = S.mul(power[tuple(f)], lin[ax])
        out[e] = meas * (power[e] @ ref)
    return out


class Entity:
    """Moment matrix H with H[i, j] = int x^(e_i + e_j) over one simplex."""

    def __init__(self, mono: Monomials, vertices):
        mom = simplex_moments(vertices, 2 * mono.degree)
        self.H = np.array([[mom[tuple(a + b for a, b in zip(ei, ej))] for ej in mono.exps]
                           for ei in mono.exps])

    def gram(self, A, B):
        if A.ndim == 2:
            return A @ self.H @ B.T
        return np.einsum("icn,nm,jcm->ij", A, self.H, B)


class RawDDR:
    def __init__(self, mesh, cx, degree=6):
        self.mesh, self.cx, self.k = mesh, cx, cx.k
        self.S = Monomials(degree)
        V = mesh.vertices
        self.edge = [Entity(self.S, V[list(e)]) for e in mesh.edges]
        self.face = [Entity(self.S, V[loop]) for loop in mesh.face_vertices]
        self.elem = Entity(self.S, V[mesh.element_vertices[0]])
        self.xT = V[mesh.element_vertices[0]].mean(axis=0)

    # -- geometry recomputed from vertices ---------------------------------------
    def tangent(self, e):
        a, b = self.mesh.edges[e]
        t = self.mesh.vertices[b] - self.mesh.vertices[a]
        return t / np.linalg.norm(t)

    def face_normal(self, f):
        axes = build_basis(self.mesh, FACE, f, "P", 0).frame.axes
        return np.cross(axes[0], axes[1])

    def face_center(self, f):
        return self.mesh.vertices[self.mesh.face_vertices[f]].mean(axis=0)

    def edge_outward(self, f, e):
        nF, tE = self.face_normal(f), self.tangent(e)
        a, b = self.mesh.edges[e]
        d = 0.5 * (self.mesh.vertices[a] + self.mesh.vertices[b]) - self.face_center(f)
        o = np.cross(tE, nF)
        return o if o @ d > 0 else -o

    def omega_FE(self, f, e):
        """+1 when t_E runs clockwise about n_F."""
        return float(np.sign(self.tangent(e) @ np.cross(self.edge_outward(f, e), self.face_normal(f))))

    def omega_TF(self, f):
        return float(np.sign(self.face_normal(f) @ (self.face_center(f) - self.xT)))

    # -- polynomial families -------------------------------------------------------
    def basis(self, kind, i, tag, l):
        """Implementation basis as global polynomials: (n, N) or (n, 3, N)."""
        S = self.S
        B = build_basis(self.mesh, kind, i, tag, l)
        fr = B.frame
        xi = [S.linear(-(ax @ fr.center) / fr.scale, ax / fr.scale) for ax in fr.axes]
        mons = []
        for e in monomial_exponents(len(fr.axes), B.degree):
            p = S.const()
            for j, a in enumerate(e):
                for _ in range(a):
                    p = S.mul(p, xi[j])
            mons.append(p)
        mons = np.array(mons).reshape(-1, S.N)
        local = np.einsum("icm,mn->icn", B.coef, mons)
        if B.ncomp == 1:
            return local[:, 0, :]
        return np.einsum("icn,cd->idn", local, fr.axes)

    def raw_scalar(self, center, axes, lo, hi):
        """Unscaled local monomials of degree lo..hi in the coordinates ``axes``."""
        S = self.S
        xi = [S.linear(-(ax @ center), ax) for ax in axes]
        out = []
        for e in monomial_exponents(len(axes), hi):
            if lo <= sum(e):
                p = S.const()
                for j, a in enumerate(e):
                    for _ in range(a):
                        p = S.mul(p, xi[j])
                out.append(p)
        return np.array(out).reshape(-1, S.N)

    def times_position(self, scalars, center, axes=np.eye(3)):
        """Family P (x - center) q for scalar q, with P the projector onto span(axes)."""
        S = self.S
        proj = np.asarray(axes).T @ np.asarray(axes)
        pos = [S.linear(-(proj[c] @ center), proj[c]) for c in range(3)]
        return np.array([[S.mul(q, pos[c]) for c in range(3)] for q in scalars]).reshape(-1, 3, S.N)

    def cross_position(self, vectors, center):
        """Family (x - center) x v."""
        S = self.S
        pos = [S.linear(-center[c], np.eye(3)[c]) for c in range(3)]
        out = []
        for v in vectors:
            out.append([S.mul(pos[1], v[2]) - S.mul(pos[2], v[1]),
                        S.mul(pos[2], v[0]) - S.mul(pos[0], v[2]),
                        S.mul(pos[0], v[1]) - S.mul(pos[1], v[0])])
        return np.array(out).reshape(-1, 3, S.N)

    def grad(self, A):
        return np.stack([self.S.deriv(A, c) for c in range(3)], axis=1)

    def div(self, A):
        return sum(self.S.deriv(A[:, c], c) for c in range(3))

    def curl(self, A):
        d = self.S.deriv
        return np.stack([d(A[:, 2], 1) - d(A[:, 1], 2), d(A[:, 0], 2) - d(A[:, 2], 0),
                         d(A[:, 1], 0) - d(A[:, 0], 1)], axis=1)

    @staticmethod
    def dot(A, n):
        return np.einsum("icn,c->in", A, n)

    @staticmethod
    def cross(A, n):
        return np.stack([A[:, 1] * n[2] - A[:, 2] * n[1], A[:, 2] * n[0] - A[:, 0] * n[2],
                         A[:, 0] * n[1] - A[:, 1] * n[0]], axis=1)

    def vrot(self, A, f):
        return self.cross(self.grad(A), self.face_normal(f))

    @staticmethod
    def solve(M, R):
        X, *_ = np.linalg.lstsq(M, R, rcond=None)
        return X

    @staticmethod
    def expand(B, X):
        """Functions sum_i X[i, col] B_i, one per column: (ncols, ...)."""
        return np.tensordot(X.T, B, axes=1)

    # -- scatter helpers ------------------------------------------------------------
    @staticmethod
    def cols(dofs, layout, kind, i):
        pos = {int(g): c for c, g in enumerate(dofs)}
        return [pos[int(g)] for g in layout.dofs(kind, i)]

    def dof_functions(self, B, dofs, layout, kind, i, offset=0):
        """Functions whose DoF coefficients sit at layout block (kind, i), rows offset.."""
        n = len(B)
        X = np.zeros((n, len(dofs)))
        c = self.cols(dofs, layout, kind, i)[offset:offset + n]
        X[np.arange(n), c] = 1.0
        return self.expand(B, X)

    # -- Xgrad ------------------------------------------------------------------------
    def edge_reconstruction(self, e, dofs):
        """Q_E in P^{k+1}(E) as functions of the Xgrad closure ``dofs``."""
        S, k, L = self.S, self.k, self.cx.grad_layout
        a, b = self.mesh.edges[e]
        t, xa = self.tangent(e), self.mesh.vertices[a]
        s = S.linear(-(t @ xa), t)
        raw = [S.const()]
        for _ in range(k + 1):
            raw.append(S.mul(raw[-1], s))
        raw = np.array(raw)
        lo = self.basis(EDGE, e, "P", k - 1)
        N = np.vstack([[S.value(p, self.mesh.vertices[v]) for p in raw] for v in (a, b)]
                      + ([self.edge[e].gram(lo, raw)] if len(lo) else []))
        R = np.zeros((len(N), len(dofs)))
        R[0, self.cols(dofs, L, VERTEX, a)[0]] = 1.0
        R[1, self.cols(dofs, L, VERTEX, b)[0]] = 1.0
        for j, c in enumerate(self.cols(dofs, L, EDGE, e)):
            R[2 + j, c] = 1.0
        return self.expand(raw, np.linalg.solve(N, R))

    def edge_gradient(self, e, dofs):
        Q = self.edge_reconstruction(e, dofs)
        PE = self.basis(EDGE, e, "P", self.k)
        dQ = self.dot(self.grad(Q), self.tangent(e))
        return np.linalg.solve(self.edge[e].gram(PE, PE), self.edge[e].gram(PE, dQ))

    def face_gradient(self, f, dofs):
        """(cG_F as functions, gamma_F as functions) for the Xgrad closure ``dofs``."""
        k, L, F = self.k, self.cx.grad_layout, self.face[f]
        vP = self.basis(FACE, f, "vP", k)
        qF = self.dof_functions(self.basis(FACE, f, "P", k - 1), dofs, L, FACE, f)
        nF, xF = self.face_normal(f), self.face_center(f)
        axes = build_basis(self.mesh, FACE, f, "P", 0).frame.axes
        Rc = self.times_position(self.raw_scalar(xF, axes, 0, k + 1), xF, axes)

        def boundary(W):
            out = 0.0
            for e in self.mesh.face_edges[f]:
                Q = self.edge_reconstruction(e, dofs)
                out = out + self.edge[e].gram(self.dot(W, self.edge_outward(f, e)), Q)
            return out

        rhs = boundary(vP)
        if len(qF):
            rhs = rhs - F.gram(self.div(vP), qF)
        cG = self.expand(vP, np.linalg.solve(F.gram(vP, vP), rhs))
        PF = self.raw_scalar(xF, axes, 0, k + 1)
        A = F.gram(self.div(Rc), PF)
        gamma = self.expand(PF, self.solve(A, -F.gram(Rc, cG) + boundary(Rc)))
        return cG, gamma

    # -- Xcurl --------------------------------------------------------------------------
    def face_curl(self, f, dofs):
        k, L, F = self.k, self.cx.curl_layout, self.face[f]
        Pk = self.basis(FACE, f, "P", k)
        R = self.basis(FACE, f, "R", k - 1)
        rhs = np.zeros((len(Pk), len(dofs)))
        if len(R):
            vR = self.dof_functions(R, dofs, L, FACE, f)
            rhs += F.gram(self.vrot(Pk, f), vR)
        for e in self.mesh.face_edges[f]:
            vE = self.dof_functions(self.basis(EDGE, e, "P", k), dofs, L, EDGE, e)
            rhs -= self.omega_FE(f, e) * self.edge[e].gram(Pk, vE)
        return self.expand(Pk, np.linalg.solve(F.gram(Pk, Pk), rhs))

    def tangential_trace(self, f, dofs):
        k, L, F = self.k, self.cx.curl_layout, self.face[f]
        vP = self.basis(FACE, f, "vP", k)
        Rc = self.basis(FACE, f, "Rc", k)
        R = self.basis(FACE, f, "R", k - 1)
        axes = build_basis(self.mesh, FACE, f, "P", 0).frame.axes
        r = self.raw_scalar(self.face_center(f), axes, 1, k + 1)
        C = self.face_curl(f, dofs)
        rhs = F.gram(r, C)
        for e in self.mesh.face_edges[f]:
            vE = self.dof_functions(self.basis(EDGE, e, "P", k), dofs, L, EDGE, e)
            rhs = rhs + self.omega_FE(f, e) * self.edge[e].gram(r, vE)
        M = [F.gram(self.vrot(r, f), vP)]
        rows = [rhs]
        if len(Rc):
            M.append(F.gram(Rc, vP))
            rows.append(F.gram(Rc, self.dof_functions(Rc, dofs, L, FACE, f, offset=len(R))))
        return self.expand(vP, self.solve(np.vstack(M), np.vstack(rows)))

    # -- element operators --------------------------------------------------------------
    def _faces(self):
        return self.mesh.element_faces[0]

    def element_gradient(self, dofs):
        k, L, T = self.k, self.cx.grad_layout, self.elem
        vP = self.basis(ELEMENT, 0, "vP", k)
        qT = self.dof_functions(self.basis(ELEMENT, 0, "P", k - 1), dofs, L, ELEMENT, 0)
        Rc = self.times_position(self.raw_scalar(self.xT, np.eye(3), 0, k + 1), self.xT)
        PT = self.raw_scalar(self.xT, np.eye(3), 0, k + 1)
        gammas = {f: self.face_gradient(f, dofs)[1] for f in self._faces()}

        def boundary(W):
            return sum(self.omega_TF(f) * self.face[f].gram(self.dot(W, self.face_normal(f)), gammas[f])
                       for f in self._faces())

        rhs = boundary(vP)
        if len(qT):
            rhs = rhs - T.gram(self.div(vP), qT)
        cG = self.expand(vP, np.linalg.solve(T.gram(vP, vP), rhs))
        P = self.expand(PT, self.solve(T.gram(self.div(Rc), PT), -T.gram(Rc, cG) + boundary(Rc)))
        hT = self.mesh.element_diams[0]
        S = 0.0
        for f in self._faces():
            d = P - gammas[f]
            S = S + hT * self.face[f].gram(d, d)
        for e in self.mesh.element_edges[0]:
            d = P - self.edge_reconstruction(e, dofs)
            S = S + hT ** 2 * self.edge[e].gram(d, d)
        return cG, P, S

    def element_curl(self, dofs):
        k, L, T = self.k, self.cx.curl_layout, self.elem
        vP = self.basis(ELEMENT, 0, "vP", k)
        R = self.basis(ELEMENT, 0, "R", k - 1)
        Rc = self.basis(ELEMENT, 0, "Rc", k)
        traces = {f: self.tangential_trace(f, dofs) for f in self._faces()}

        def boundary(W):
            return sum(self.omega_TF(f) * self.face[f].gram(self.cross(W, self.face_normal(f)), traces[f])
                       for f in self._faces())

        rhs = boundary(vP)
        if len(R):
            rhs = rhs + T.gram(self.curl(vP), self.dof_functions(R, dofs, L, ELEMENT, 0))
        cC = self.expand(vP, np.linalg.solve(T.gram(vP, vP), rhs))
        Z = self.cross_position(self.basis(ELEMENT, 0, "vP", k), self.xT)
        M, rows = [T.gram(self.curl(Z), vP)], [T.gram(Z, cC) - boundary(Z)]
        if len(Rc):
            M.append(T.gram(Rc, vP))
            rows.append(T.gram(Rc, self.dof_functions(Rc, dofs, L, ELEMENT, 0, offset=len(R))))
        P = self.expand(vP, self.solve(np.vstack(M), np.vstack(rows)))
        hT = self.mesh.element_diams[0]
        S = 0.0
        for f in self._faces():
            n = self.face_normal(f)
            Pt = P - np.einsum("jn,c->jcn", self.dot(P, n), n)
            d = Pt - traces[f]
            S = S + hT * self.face[f].gram(d, d)
        for e in self.mesh.element_edges[0]:
            vE = self.dof_functions(self.basis(EDGE, e, "P", k), dofs, L, EDGE, e)
            d = self.dot(P, self.tangent(e)) - vE
            S = S + hT ** 2 * self.edge[e].gram(d, d)
        return cC, P, S

    def element_divergence(self, dofs):
        k, L, T = self.k, self.cx.div_layout, self.elem
        vP = self.basis(ELEMENT, 0, "vP", k)
        Pk = self.basis(ELEMENT, 0, "P", k)
        G = self.basis(ELEMENT, 0, "G", k - 1)
        Gc = self.basis(ELEMENT, 0, "Gc", k)
        flux = {f: self.dof_functions(self.basis(FACE, f, "P", k), dofs, L, FACE, f)
                for f in self._faces()}

        def boundary(W):
            return sum(self.omega_TF(f) * self.face[f].gram(W, flux[f]) for f in self._faces())

        rhs = boundary(Pk)
        if len(G):
            rhs = rhs - T.gram(self.grad(Pk), self.dof_functions(G, dofs, L, ELEMENT, 0))
        D = self.expand(Pk, np.linalg.solve(T.gram(Pk, Pk), rhs))
        r = self.raw_scalar(self.xT, np.eye(3), 1, k + 1)
        M, rows = [T.gram(self.grad(r), vP)], [-T.gram(r, D) + boundary(r)]
        if len(Gc):
            M.append(T.gram(Gc, vP))
            rows.append(T.gram(Gc, self.dof_functions(Gc, dofs, L, ELEMENT, 0, offset=len(G))))
        P = self.expand(vP, self.solve(np.vstack(M), np.vstack(rows)))
        hT = self.mesh.element_diams[0]
        S = 0.0
        for f in self._faces():
            d = self.dot(P, self.face_normal(f)) - flux[f]
            S = S + hT * self.face[f].gram(d, d)
        return D, P, S

    # -- coefficients in the implementation bases -----------------------------------------
    def coefficients(self, ent, B, funcs):
        return np.linalg.solve(ent.gram(B, B), ent.gram(B, funcs))


def compare_operators(mesh, cx):
    """Largest entrywise difference per local operator between ``cx`` and the raw assembly."""
    o = RawDDR(mesh, cx)
    k = cx.k
    diff = lambda A, B: float(np.abs(np.asarray(A) - np.asarray(B)).max(initial=0.0))
    out = {}
    for e in range(mesh.n_edges):
        op = cx.edge_gradient(e)
        out[f"edge_gradient[{e}]"] = diff(op.matrix, o.edge_gradient(e, op.dofs))
    for f in range(mesh.n_faces):
        F = o.face[f]
        op = cx.face_gradient(f)
        cG, gamma = o.face_gradient(f, op.dofs)
        out[f"face_gradient[{f}]"] = diff(op.matrix, o.coefficients(F, o.basis(FACE, f, "vP", k), cG))
        out[f"scalar_trace[{f}]"] = diff(cx.scalar_trace(f).matrix,
                                         o.coefficients(F, o.basis(FACE, f, "P", k + 1), gamma))
        op = cx.face_curl(f)
        out[f"face_curl[{f}]"] = diff(op.matrix, o.coefficients(F, o.basis(FACE, f, "P", k),
                                                                o.face_curl(f, op.dofs)))
        op = cx.tangential_trace(f)
        out[f"tangential_trace[{f}]"] = diff(op.matrix, o.coefficients(F, o.basis(FACE, f, "vP", k),
                                                                       o.tangential_trace(f, op.dofs)))
    T = o.elem
    vP = o.basis(ELEMENT, 0, "vP", k)
    op = cx.element_gradient(0)
    cG, P, S = o.element_gradient(op.dofs)
    out["element_gradient"] = diff(op.matrix, o.coefficients(T, vP, cG))
    out["potential_grad"] = diff(cx.potential("grad", 0).matrix,
                                 o.coefficients(T, o.basis(ELEMENT, 0, "P", k + 1), P))
    out["stabilization_grad"] = diff(cx.stabilization("grad", 0).matrix, S)
    op = cx.element_curl(0)
    cC, P, S = o.element_curl(op.dofs)
    out["element_curl"] = diff(op.matrix, o.coefficients(T, vP, cC))
    out["potential_curl"] = diff(cx.potential("curl", 0).matrix, o.coefficients(T, vP, P))
    out["stabilization_curl"] = diff(cx.stabilization("curl", 0).matrix, S)
    op = cx.divergence(0)
    D, P, S = o.element_divergence(op.dofs)
    out["divergence"] = diff(op.matrix, o.coefficients(T, o.basis(ELEMENT, 0, "P", k), D))
    out["potential_div"] = diff(cx.potential("div", 0).matrix, o.coefficients(T, vP, P))
    out["stabilization_div"] = diff(cx.stabilization("div", 0).matrix, S)
    return out
