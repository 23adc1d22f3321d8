import numpy as np
import pytest

from fields import trig_grad_q, trig_q, zero_vector
from polystokes.stokes_solver import (SolverError, assemble, condense, incompressibility_defect,
                                      load_degree, make_complex, relative_residual, solve)
from polystokes.verify import manufactured

SCHEMES = ["ddr", "vem"]


def stokes(scheme, mesh, k, lam=1.0):
    case = manufactured(lam)
    return assemble(scheme, mesh, k, case.f, case.curl_f)


def dnorm(x, M):
    return float(np.sqrt(x @ (M @ x)))


@pytest.mark.parametrize("scheme", SCHEMES)
@pytest.mark.parametrize("k", [0, 1])
def test_block_structure(tets1, scheme, k):
    system = stokes(scheme, tets1, k)
    K = system.matrix
    assert abs(K - K.T).max() < 1e-12
    n_u, n_p = system.n_u, system.n_p
    assert K.shape == (n_u + n_p + 1,) * 2
    assert K[:n_u, n_u + n_p:].nnz == 0
    assert K[n_u:n_u + n_p, n_u:n_u + n_p].nnz == 0


@pytest.mark.parametrize("scheme", SCHEMES)
def test_viscous_form_matches_local_products(imported, scheme):
    system = stokes(scheme, imported, 1)
    cx, C = system.view.cx, system.view.C
    space = "div" if scheme == "ddr" else "f"
    rng = np.random.default_rng(0)
    v, w = rng.standard_normal((2, system.n_u))
    direct = sum(cx.local_product(space, t, C @ v, C @ w) for t in range(imported.n_elements))
    assert v @ (system.A @ w) == pytest.approx(direct, rel=1e-11)
    eig = np.linalg.eigvalsh(system.A.toarray())
    assert eig.min() > -1e-10 * eig.max()


def test_ddr_multiplier_is_mean_of_constant(tets1):
    system = stokes("ddr", tets1, 1)
    cx = system.view.cx
    one = cx.interpolate_grad(lambda x: np.ones(len(x)))
    q = np.random.default_rng(1).standard_normal(system.n_p)
    assert system.L @ q == pytest.approx(q @ (cx.mass_matrix("grad") @ one), rel=1e-12)


def test_lowest_order_ddr_dimension(tets1):
    system = stokes("ddr", tets1, 0)
    assert system.dim == tets1.n_edges + tets1.n_vertices + 1


@pytest.mark.parametrize("scheme", SCHEMES)
def test_zero_load(tets1, scheme):
    system = assemble(scheme, tets1, 1, zero_vector, zero_vector)
    assert not np.any(system.rhs)
    sol = solve(system)
    assert not np.any(sol.velocity) and not np.any(sol.pressure)


@pytest.mark.parametrize("scheme", SCHEMES)
@pytest.mark.parametrize("k", [0, 1, 2])
def test_residual_and_incompressibility(tets1, scheme, k):
    system = stokes(scheme, tets1, k)
    sol = solve(system)
    assert sol.residual <= 1e-10
    assert relative_residual(system.matrix, np.concatenate([sol.velocity, sol.pressure, [sol.multiplier]]),
                             system.rhs) <= 1e-10
    assert incompressibility_defect(system, sol) <= 1e-9
    assert abs(system.L @ sol.pressure) <= 1e-10 * max(1.0, np.abs(sol.pressure).max())


@pytest.mark.parametrize("scheme", SCHEMES)
def test_repeat_solve_identical(tets1, scheme):
    system = stokes(scheme, tets1, 1)
    a, b = solve(system), solve(system)
    assert np.array_equal(a.velocity, b.velocity) and np.array_equal(a.pressure, b.pressure)


def test_gradient_load_commutes(tets2):
    # the DDR load of grad psi equals b_h(I psi, .) up to quadrature
    system = assemble("ddr", tets2, 1, trig_grad_q)
    view = system.view
    lhs = system.load
    rhs = system.B.T @ view.interpolate_pressure(trig_q, qdeg=load_degree(1))
    assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(lhs).max()


@pytest.mark.parametrize("scheme", SCHEMES)
@pytest.mark.parametrize("k", [0, 1])
def test_gradient_load_gives_zero_velocity(tets2, scheme, k):
    system = assemble(scheme, tets2, k, trig_grad_q, zero_vector)
    sol = solve(system)
    view = system.view
    psi = view.interpolate_pressure(trig_q, qdeg=load_degree(k))
    assert dnorm(sol.velocity, view.M_velocity) <= 1e-8 * dnorm(view.G @ psi, view.M_velocity)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_pressure_shift(tets2, scheme):
    k = 1
    case = manufactured(1.0)
    cx = make_complex(scheme, tets2, k)
    base = solve(assemble(scheme, tets2, k, case.f, case.curl_f, cx=cx))
    shifted = solve(assemble(scheme, tets2, k, lambda x: case.f(x) + trig_grad_q(x), case.curl_f, cx=cx))
    view = assemble(scheme, tets2, k, case.f, case.curl_f, cx=cx).view
    Mv = view.M_velocity
    assert dnorm(shifted.velocity - base.velocity, Mv) <= 1e-8 * dnorm(base.velocity, Mv)
    # the pressure moves by I psi up to a constant, which G annihilates
    Ipsi = view.interpolate_pressure(trig_q, qdeg=load_degree(k))
    dp = shifted.pressure - base.pressure - Ipsi
    assert dnorm(view.G @ dp, Mv) <= 1e-8 * dnorm(view.G @ Ipsi, Mv)


def test_condensation_noop_lowest_order_ddr(tets1):
    system = stokes("ddr", tets1, 0)
    cs = condense(system)
    assert len(cs.interior) == 0 and cs.matrix.shape == system.matrix.shape


@pytest.mark.parametrize("scheme", SCHEMES)
@pytest.mark.parametrize("k", [1, 2])
def test_condensed_matches_full(tets1, scheme, k):
    system = stokes(scheme, tets1, k)
    cs = condense(system)
    assert cs.matrix.shape[0] < system.dim
    full, red = solve(system), solve(system, condense_interior=True)
    assert red.condensed and red.residual <= 1e-10
    x = np.concatenate([full.velocity, full.pressure])
    y = np.concatenate([red.velocity, red.pressure])
    assert np.abs(x - y).max() <= 1e-9 * max(1.0, np.abs(x).max())


def test_unknown_scheme(tets1):
    with pytest.raises(ValueError):
        make_complex("fem", tets1, 0)


def test_vem_load_needs_curl(tets1):
    with pytest.raises(ValueError):
        assemble("vem", tets1, 0, zero_vector)


def test_residual_target_enforced(tets1):
    system = stokes("ddr", tets1, 0)
    with pytest.raises(SolverError):
        solve(system, tol=1e-30)
