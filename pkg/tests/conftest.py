from pathlib import Path

import numpy as np
import pytest

from polystokes.mesh import generate_distorted_tet_mesh, load_mesh, mesh_from_cells, mesh_from_spec

DATA = Path(__file__).parent / "data"
ACCEPTANCE_LINES = []


def reference_tet():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    return mesh_from_cells(V, [[[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]])


@pytest.fixture(scope="session")
def ref_tet():
    return reference_tet()


@pytest.fixture(scope="session")
def tets1():
    return mesh_from_spec("tets:1")


@pytest.fixture(scope="session")
def tets2():
    return mesh_from_spec("tets:2")


@pytest.fixture(scope="session")
def cube():
    return mesh_from_spec("hex:1")


@pytest.fixture(scope="session")
def distorted():
    return generate_distorted_tet_mesh(2, amplitude=0.3, seed=7)


@pytest.fixture(scope="session")
def imported():
    return load_mesh(DATA / "mixed_polyhedra.mesh")


@pytest.fixture
def acceptance_line():
    """Record a one-line verdict that is echoed in the terminal summary."""
    def record(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
