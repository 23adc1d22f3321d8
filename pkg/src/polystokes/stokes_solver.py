"""Assembly and solution of the curl-curl Stokes saddle-point systems.

Both schemes share the algebraic form

    a_h(u, v) + b_h(p, v) = l_h(v),    -b_h(q, u) = 0,

with ``a_h(u, v) = (C u, C v)`` in the face/div space and
``b_h(q, v) = (G q, v)`` in the edge/curl space.  The pressure mean is fixed
by a scalar multiplier.  The second block row is negated so the assembled
matrix

    [[A, B^T, 0], [B, 0, L^T], [0, L, 0]]

is symmetric; its solution is that of the original system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ddr_core import DDRComplex
from .mesh import PolyMesh
from .polyquad import ELEMENT, MAX_DEGREE
from .vem_core import VEMComplex

log = logging.getLogger(__name__)

SCHEMES = ("ddr", "vem")
RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    """Singular system or unmet residual target."""


def load_degree(k: int) -> int:
    """Quadrature degree for interpolating smooth loads and exact fields.

    Gradient loads must interpolate to (nearly) exact discrete gradients, so
    the moments are integrated well beyond the operator degree.
    """
    return min(2 * k + 16, MAX_DEGREE)


def make_complex(scheme: str, mesh: PolyMesh, k: int, sigma: float = 0.1):
    if scheme == "ddr":
        return DDRComplex(mesh, k, sigma=sigma)
    if scheme == "vem":
        return VEMComplex(mesh, k, sigma=sigma)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


class SchemeView:
    """Uniform access to the spaces and operators of either complex."""

    def __init__(self, scheme: str, cx):
        self.scheme, self.cx = scheme, cx
        if scheme == "ddr":
            self.velocity_layout, self.pressure_layout = cx.curl_layout, cx.grad_layout
            self._spaces = ("curl", "div", "grad")
        else:
            self.velocity_layout, self.pressure_layout = cx.edge_layout, cx.nodal_layout
            self._spaces = ("e", "f", None)
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def G(self):
        return self._get("G", self.cx.gradient_matrix)

    @property
    def C(self):
        return self._get("C", self.cx.curl_matrix)

    @property
    def M_velocity(self):
        return self._get("Mv", lambda: self.cx.mass_matrix(self._spaces[0]))

    @property
    def M_flux(self):
        return self._get("Mf", lambda: self.cx.mass_matrix(self._spaces[1]))

    def mean_row(self):
        """Row vector L on the pressure DoFs defining the zero-mean condition."""
        if self.scheme == "ddr":
            one = self.cx.interpolate_grad(lambda x: np.ones(len(x)))
            return self.cx.mass_matrix("grad") @ one
        return self.cx.mean_functional()

    def interpolate_velocity(self, v, curl_v, qdeg=None):
        if self.scheme == "ddr":
            return self.cx.interpolate_curl(v, qdeg=qdeg)
        return self.cx.interpolate_edge(v, curl_v, qdeg=qdeg)

    def interpolate_pressure(self, q, qdeg=None):
        if self.scheme == "ddr":
            return self.cx.interpolate_grad(q, qdeg=qdeg)
        return self.cx.interpolate_nodal(q, qdeg=qdeg)

    def interior_groups(self, n_u):
        """Per-element interior unknowns (velocity and pressure element blocks)."""
        Lu, Lp = self.velocity_layout, self.pressure_layout
        groups = []
        for t in range(self.cx.mesh.n_elements):
            g = np.concatenate([Lu.dofs(ELEMENT, t), n_u + Lp.dofs(ELEMENT, t)])
            if len(g):
                groups.append(g)
        return groups


@dataclass
class SaddleSystem:
    scheme: str
    k: int
    sigma: float
    view: SchemeView
    A: sp.csr_matrix
    B: sp.csr_matrix
    L: np.ndarray
    load: np.ndarray
    matrix: sp.csr_matrix = field(init=False)
    rhs: np.ndarray = field(init=False)

    def __post_init__(self):
        n_p = self.B.shape[0]
        Lrow = sp.csr_matrix(self.L.reshape(1, -1))
        self.matrix = sp.bmat([[self.A, self.B.T, None],
                               [self.B, None, Lrow.T],
                               [None, Lrow, sp.csr_matrix((1, 1))]], format="csr")
        self.rhs = np.concatenate([self.load, np.zeros(n_p + 1)])

    @property
    def n_u(self):
        return self.A.shape[0]

    @property
    def n_p(self):
        return self.B.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[0]

    def split(self, x):
        return x[:self.n_u], x[self.n_u:self.n_u + self.n_p], float(x[-1])


@dataclass
class StokesSolution:
    velocity: np.ndarray
    pressure: np.ndarray
    multiplier: float
    residual: float
    condensed: bool = False


def assemble(scheme: str, mesh: PolyMesh, k: int, f, curl_f=None, sigma: float = 0.1,
             load_qdeg: int | None = None, cx=None) -> SaddleSystem:
    """Assemble the saddle-point system for a load ``f`` (and its curl for VEM).

    ``cx`` may pass a prebuilt complex to reuse cached local operators.
    """
    if cx is None:
        cx = make_complex(scheme, mesh, k, sigma)
    if scheme == "vem" and curl_f is None:
        raise ValueError("the VEM load needs curl f")
    view = SchemeView(scheme, cx)
    C, G = view.C, view.G
    A = (C.T @ view.M_flux @ C).tocsr()
    Mv = view.M_velocity
    B = (G.T @ Mv).tocsr()
    qd = load_qdeg if load_qdeg is not None else load_degree(k)
    load = Mv @ view.interpolate_velocity(f, curl_f, qdeg=qd)
    return SaddleSystem(scheme, k, sigma, view, A, B, view.mean_row(), load)


def _lu_solve(K, b, what="saddle-point system"):
    """General sparse LU with partial pivoting and a few refinement steps."""
    if not np.any(b):
        return np.zeros_like(b)
    try:
        lu = spla.splu(K.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"singular {what}: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverError(f"singular {what}")
    for _ in range(3):
        r = b - K @ x
        if np.linalg.norm(r) <= 1e-14 * np.linalg.norm(b):
            break
        x += lu.solve(r)
    return x


def _spd_factor(K, what):
    # symmetric mode keeps the fill-reducing ordering of A + A^T; no pivoting is needed
    try:
        lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise SolverError(f"singular {what}: {exc}") from exc
    return lu


class HodgeSolver:
    """Approximate inverse of the saddle-point matrix through two SPD solves.

    Pressure: G^T M G p = G^T (load), since G^T A = (C G)^T M C = 0.
    Velocity: A u = r on the M-orthogonal complement of gradients, by CG
    preconditioned with (A + M)^{-1}; the Friedrichs inequality bounds the
    preconditioned spectrum away from zero independently of h.
    """

    def __init__(self, system: SaddleSystem):
        self.system = system
        view = system.view
        self.A, self.B, self.G = system.A, system.B, view.G
        self.L = system.L
        self.M = view.M_velocity
        Kp = (self.G.T @ self.M @ self.G).tocsr()
        self.Kp_lu = _spd_factor(Kp[1:, 1:], "pressure Laplacian")
        self.AM_lu = _spd_factor(self.A + self.M, "velocity operator")
        # interpolate of the constant 1: spans the kernel of G
        self.one = view.interpolate_pressure(lambda x: np.ones(len(x)))
        self.Lsum = float(self.L @ self.one)
        if abs(self.Lsum) < 1e-300:
            raise SolverError("mean-value functional vanishes on constants")

    def _laplace(self, g):
        x = np.zeros(len(g))
        x[1:] = self.Kp_lu.solve(g[1:])
        return x

    def apply(self, ru, rp, rm, atol=0.0):
        mu = (self.one @ rp) / self.Lsum
        phi = self._laplace(rp - self.L * mu)
        u_g = self.G @ phi
        r = ru - self.A @ u_g
        p = self._laplace(self.G.T @ r)
        p += (rm - self.L @ p) / self.Lsum * self.one
        r = r - self.B.T @ p
        n_u = len(ru)
        prec = spla.LinearOperator((n_u, n_u), matvec=self.AM_lu.solve, dtype=float)
        u0 = np.zeros(n_u)
        if np.any(r):
            u0, info = spla.cg(self.A, r, M=prec, rtol=1e-12, atol=atol, maxiter=200)
            if info < 0:
                raise SolverError("CG breakdown in the velocity solve")
        return u_g + u0, p, mu


def _hodge_solve(system, b, tol):
    K = system.matrix
    if not np.any(b):
        return np.zeros_like(b)
    hs = HodgeSolver(system)
    n_u, n_p = system.n_u, system.n_p
    x = np.zeros_like(b)
    nb = np.linalg.norm(b)
    for _ in range(8):
        r = b - K @ x
        if np.linalg.norm(r) <= 1e-2 * tol * nb:
            break
        du, dp, dm = hs.apply(r[:n_u], r[n_u:n_u + n_p], r[-1], atol=1e-3 * tol * nb)
        x += np.concatenate([du, dp, [dm]])
    return x


def relative_residual(K, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(b - K @ x)
    return float(r / nb) if nb > 0 else float(r)


@dataclass
class CondensedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    skeleton: np.ndarray
    interior: np.ndarray
    K_ii_inv: sp.csr_matrix
    K_ib: sp.csr_matrix
    b_i: np.ndarray

    def expand(self, x_b, n):
        x = np.zeros(n)
        x[self.skeleton] = x_b
        x[self.interior] = self.K_ii_inv @ (self.b_i - self.K_ib @ x_b)
        return x


def condense(system: SaddleSystem) -> CondensedSystem:
    """Schur complement of the element-interior unknowns onto the skeleton."""
    K, b = system.matrix.tocsr(), system.rhs
    groups = system.view.interior_groups(system.n_u)
    interior = np.concatenate(groups) if groups else np.zeros(0, dtype=int)
    mask = np.ones(K.shape[0], dtype=bool)
    mask[interior] = False
    skeleton = np.flatnonzero(mask)
    # local inverses of the block-diagonal interior matrix
    pos = np.empty(K.shape[0], dtype=int)
    pos[interior] = np.arange(len(interior))
    rows, cols, vals = [], [], []
    for g in groups:
        blk = K[g][:, g].toarray()
        try:
            inv = np.linalg.inv(blk)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular interior block in static condensation") from exc
        if not np.all(np.isfinite(inv)) or np.linalg.cond(blk) > 1e14:
            raise SolverError("singular interior block in static condensation")
        r, c = np.meshgrid(pos[g], pos[g], indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(inv.ravel())
    n_i = len(interior)
    if n_i:
        Kii_inv = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(n_i, n_i)).tocsr()
    else:
        Kii_inv = sp.csr_matrix((0, 0))
    K_bb = K[skeleton][:, skeleton]
    K_bi = K[skeleton][:, interior]
    K_ib = K[interior][:, skeleton]
    b_i = b[interior]
    S = (K_bb - K_bi @ Kii_inv @ K_ib).tocsr()
    rhs = b[skeleton] - K_bi @ (Kii_inv @ b_i)
    return CondensedSystem(S, rhs, skeleton, interior, Kii_inv, K_ib.tocsr(), b_i)


def solve(system: SaddleSystem, condense_interior: bool = False, tol: float = RESIDUAL_TOL) -> StokesSolution:
    """Solve with a residual check.

    The default path combines sparse factorizations of the pressure Laplacian
    and of A + M with preconditioned CG, inside iterative refinement on the
    full system.  ``condense_interior`` instead eliminates element unknowns
    and factors the skeleton Schur complement with pivoted sparse LU.
    """
    K, b = system.matrix, system.rhs
    if condense_interior:
        cs = condense(system)
        x_b = _lu_solve(cs.matrix, cs.rhs, "condensed system")
        x = cs.expand(x_b, K.shape[0])
    else:
        x = _hodge_solve(system, b, tol)
    res = relative_residual(K, x, b)
    if res > tol:
        raise SolverError(f"relative residual {res:.3e} above target {tol:.1e}")
    u, p, mult = system.split(x)
    log.debug("solved %s k=%d dim=%d residual=%.2e", system.scheme, system.k, system.dim, res)
    return StokesSolution(u, p, mult, res, condense_interior)


def incompressibility_defect(system: SaddleSystem, sol: StokesSolution) -> float:
    """max_q |b_h(q, u_h)| over the pressure DoF basis, relative to the velocity norm."""
    bu = system.B @ sol.velocity
    nu = np.sqrt(max(sol.velocity @ (system.view.M_velocity @ sol.velocity), 0.0))
    return float(np.abs(bu).max() / nu) if nu > 0 else float(np.abs(bu).max())
