"""Manufactured Stokes solutions, error indicators and study drivers."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .ddr_core import phys
from .mesh import PolyMesh, mesh_from_spec
from .polyquad import ELEMENT, build_basis, make_quadrature
from .stokes_solver import assemble, load_degree, make_complex, solve

log = logging.getLogger(__name__)

PI = math.pi
TWO_PI = 2.0 * math.pi
REPORT_HEADER = ["MeshSize", "SystemDim", "Ed_u", "Ed_p", "Ec_u", "Ec_p", "WallSeconds"]
RATE_HEADER = ["Rate_Ed_u", "Rate_Ed_p", "Rate_Ec_u", "Rate_Ec_p"]
ROBUST_HEADER = ["Lambda", "Ratio_Ed_u", "Ratio_Ed_p", "Ratio_Ec_u", "Ratio_Ec_p"]
ERROR_KEYS = ("Ed_u", "Ed_p", "Ec_u", "Ec_p")


def _trig(x):
    a = TWO_PI * np.asarray(x, dtype=float)
    return np.sin(a), np.cos(a)


@dataclass(frozen=True)
class ManufacturedCase:
    """Trigonometric solution on the unit cube with tangential boundary conditions.

    ``u`` is divergence free, so curl curl u = -Laplace u = 12 pi^2 u and the
    load is f = 12 pi^2 u + lam grad p0.
    """

    lam: float = 1.0

    def u(self, x):
        s, c = _trig(x)
        return np.stack([0.5 * s[:, 0] * c[:, 1] * c[:, 2],
                         0.5 * c[:, 0] * s[:, 1] * c[:, 2],
                         -c[:, 0] * c[:, 1] * s[:, 2]], axis=1)

    def curl_u(self, x):
        s, c = _trig(x)
        return 3 * PI * np.stack([c[:, 0] * s[:, 1] * s[:, 2],
                                  -s[:, 0] * c[:, 1] * s[:, 2],
                                  np.zeros(len(s))], axis=1)

    def curl_curl_u(self, x):
        return 12 * PI ** 2 * self.u(x)

    @staticmethod
    def p0(x):
        s, _ = _trig(x)
        return s[:, 0] * s[:, 1] * s[:, 2]

    @staticmethod
    def grad_p0(x):
        s, c = _trig(x)
        return TWO_PI * np.stack([c[:, 0] * s[:, 1] * s[:, 2],
                                  s[:, 0] * c[:, 1] * s[:, 2],
                                  s[:, 0] * s[:, 1] * c[:, 2]], axis=1)

    def p(self, x):
        return self.lam * self.p0(x)

    def grad_p(self, x):
        return self.lam * self.grad_p0(x)

    def f(self, x):
        return self.curl_curl_u(x) + self.grad_p(x)

    def curl_f(self, x):
        return 12 * PI ** 2 * self.curl_u(x)


def manufactured(lam: float = 1.0) -> ManufacturedCase:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return ManufacturedCase(float(lam))


@dataclass
class ErrorReport:
    scheme: str
    k: int
    lam: float
    h: float
    system_dim: int
    Ed_u: float
    Ed_p: float
    Ec_u: float
    Ec_p: float
    wall: float = 0.0

    def row(self, timing=True):
        return [self.h, self.system_dim, self.Ed_u, self.Ed_p, self.Ec_u, self.Ec_p,
                self.wall if timing else 0.0]

    def errors(self):
        return {key: getattr(self, key) for key in ERROR_KEYS}


def _dnorm(v, M):
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def _element_l2(mesh, t, coef_list, exact_list, qdeg):
    """sum over pairs of int_T |sum coef_i phi_i - exact|^2 with vP^k basis values."""
    rule = make_quadrature(mesh, ELEMENT, t, qdeg)
    total = 0.0
    for (vP, c), ex in zip(coef_list, exact_list):
        vals = np.einsum("pic,i->pc", phys(vP, rule.points), c)
        total += rule.weights @ np.sum((vals - ex(rule.points)) ** 2, axis=1)
    return total


def compute_errors(system, sol, case: ManufacturedCase, qdeg: int | None = None) -> ErrorReport:
    """Discrete and continuous error indicators of a solved system."""
    view, cx = system.view, system.view.cx
    mesh, k = cx.mesh, cx.k
    qdeg = 2 * k + 6 if qdeg is None else qdeg
    iq = load_degree(k)
    u_h, p_h = sol.velocity, sol.pressure
    C, G = view.C, view.G
    Mv, Mf = view.M_velocity, view.M_flux
    uI = view.interpolate_velocity(case.u, case.curl_u, qdeg=iq)
    pI = view.interpolate_pressure(case.p, qdeg=iq)
    du = u_h - uI
    Cdu = C @ du
    Ed_u = math.sqrt(_dnorm(du, Mv) ** 2 + _dnorm(Cdu, Mf) ** 2)
    Ed_p = _dnorm(G @ (p_h - pI), Mv)
    Cu, Gp = C @ u_h, G @ p_h
    eu = ep = 0.0
    for t in range(mesh.n_elements):
        vP = build_basis(mesh, ELEMENT, t, "vP", k)
        if system.scheme == "ddr":
            Pu = cx.potential("curl", t).apply(u_h)
            cu = cx.element_curl(t).apply(u_h)
            gp = cx.element_gradient(t).apply(p_h)
        else:
            Pu = cx.potential("e", t).apply(u_h)
            cu = cx.potential("f", t).apply(Cu)
            gp = cx.potential("e", t).apply(Gp)
        eu += _element_l2(mesh, t, [(vP, Pu), (vP, cu)], [case.u, case.curl_u], qdeg)
        ep += _element_l2(mesh, t, [(vP, gp)], [case.grad_p], qdeg)
    return ErrorReport(system.scheme, k, case.lam, mesh.h, system.dim,
                       Ed_u, Ed_p, math.sqrt(eu), math.sqrt(ep))


@dataclass
class ComplexCheck:
    scheme: str
    k: int
    dims: dict
    alternating_sum: int
    curl_grad: float
    div_curl: float

    def passed(self, tol=1e-11):
        return self.alternating_sum == 1 and self.curl_grad <= tol and self.div_curl <= tol


def check_complex(scheme: str, mesh: PolyMesh, k: int, n_vectors: int = 20, seed: int = 0) -> ComplexCheck:
    """Worst relative defects |CGq|/|q| and |DCv|/|v| over random vectors, plus dimensions."""
    cx = make_complex(scheme, mesh, k)
    G, C, D = cx.gradient_matrix(), cx.curl_matrix(), cx.divergence_matrix()
    rng = np.random.default_rng(seed)
    cg = dc = 0.0
    for _ in range(n_vectors):
        q = rng.standard_normal(G.shape[1])
        v = rng.standard_normal(C.shape[1])
        cg = max(cg, np.linalg.norm(C @ (G @ q)) / np.linalg.norm(q))
        dc = max(dc, np.linalg.norm(D @ (C @ v)) / np.linalg.norm(v))
    dims = cx.dimensions()
    n = list(dims.values())
    return ComplexCheck(scheme, k, dims, n[0] - n[1] + n[2] - n[3], float(cg), float(dc))


def run_case(scheme: str, mesh: PolyMesh, k: int, lam: float = 1.0, sigma: float = 0.1,
             condense: bool = False) -> tuple[ErrorReport, object, object]:
    """Assemble, solve and measure one (scheme, mesh, k, lam) configuration."""
    case = manufactured(lam)
    t0 = time.perf_counter()
    system = assemble(scheme, mesh, k, case.f, case.curl_f, sigma=sigma)
    sol = solve(system, condense_interior=condense)
    wall = time.perf_counter() - t0
    rep = compute_errors(system, sol, case)
    rep.wall = wall
    log.info("%s k=%d lam=%g h=%.4f dim=%d Ec_u=%.3e Ec_p=%.3e (%.1fs)", scheme, k, lam,
             rep.h, rep.system_dim, rep.Ec_u, rep.Ec_p, wall)
    return rep, system, sol


def rates(reports):
    """Pairwise log-ratio orders for consecutive reports (first entry is None)."""
    out = [None]
    for a, b in zip(reports[:-1], reports[1:]):
        lh = math.log(a.h / b.h)
        out.append({key: math.log(getattr(a, key) / getattr(b, key)) / lh
                    if getattr(a, key) > 0 and getattr(b, key) > 0 else float("nan")
                    for key in ERROR_KEYS})
    return out


def parse_family(spec: str):
    """'tets:2,4,8' -> ['tets:2', 'tets:4', 'tets:8']; other strings are split on commas."""
    if ":" in spec and "," in spec.split(":", 1)[1]:
        kind, sizes = spec.split(":", 1)
        return [f"{kind}:{n}" for n in sizes.split(",") if n]
    return [s for s in spec.split(",") if s]


def run_convergence(scheme: str, family, ks, lam: float = 1.0, sigma: float = 0.1,
                    condense: bool = False):
    """Dict k -> (reports, rates) over a mesh family (list of mesh specs or meshes)."""
    if len(family) < 3:
        raise ValueError("a convergence study needs at least 3 meshes")
    meshes = [mesh_from_spec(m) if isinstance(m, str) else m for m in family]
    out = {}
    for k in ks:
        reps = [run_case(scheme, m, k, lam, sigma, condense)[0] for m in meshes]
        out[k] = (reps, rates(reps))
    return out


def run_robustness(scheme: str, family, k: int, lams=(1.0, 1e5), sigma: float = 0.1):
    """Per mesh: reports for each lambda and ratios of the last to the first."""
    meshes = [mesh_from_spec(m) if isinstance(m, str) else m for m in family]
    rows = []
    for m in meshes:
        reps = [run_case(scheme, m, k, lam, sigma)[0] for lam in lams]
        ratio = {key: getattr(reps[-1], key) / getattr(reps[0], key) for key in ERROR_KEYS}
        rows.append((reps, ratio))
    return rows


def irrotational_velocity(scheme: str, mesh: PolyMesh, k: int, lam: float = 1.0, sigma: float = 0.1):
    """Solve with f = lam grad p0 only; return (|u_h|, |I psi|) in discrete norms."""
    case = manufactured(lam)
    zero = lambda x: np.zeros((len(x), 3))
    cx = make_complex(scheme, mesh, k, sigma)
    system = assemble(scheme, mesh, k, case.grad_p, zero, sigma=sigma, cx=cx)
    sol = solve(system)
    view = system.view
    u_norm = _dnorm(sol.velocity, view.M_velocity)
    psi = view.interpolate_pressure(case.p)
    psi_norm = _dnorm(view.G @ psi, view.M_velocity)
    return u_norm, psi_norm, system, sol


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return f"{float(x):.10e}"


def write_report_csv(path, reports, timing=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow([_fmt(v) for v in r.row(timing)])


def write_rates_csv(path, study, timing=True):
    """Rows grouped by k in ascending order; rates are within each k group."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER + RATE_HEADER)
        for k in sorted(study):
            reps, rts = study[k]
            for r, rt in zip(reps, rts):
                tail = [""] * 4 if rt is None else [_fmt(rt[key]) for key in ERROR_KEYS]
                w.writerow([_fmt(v) for v in r.row(timing)] + tail)


def write_robust_csv(path, rows, timing=True):
    """One row per (mesh, lambda); ratios filled on the non-reference lambda rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER + ROBUST_HEADER)
        for reps, ratio in rows:
            for i, r in enumerate(reps):
                tail = [""] * 4 if i == 0 else [_fmt(ratio[key]) for key in ERROR_KEYS]
                w.writerow([_fmt(v) for v in r.row(timing)] + [_fmt(r.lam)] + tail)
