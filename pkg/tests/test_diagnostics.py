import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyshell.diagnostics import EnergyBreakdown, assemble_breakdown, csv_schema_line, reynolds_check
from polyshell.polymer_model import INV_E
from polyshell.spatial import SlabMesh


def rest_breakdown(previous=None, **inc):
    mesh = SlabMesh(4, 2)
    g = mesh.reference()
    psi = np.ones((mesh.ncells, 2, 4))
    w = np.full((2, 4), 1 / 8)
    return assemble_breakdown(0.0, 0.0, np.zeros(4), 0.0, 0.0, np.ones(mesh.ncells), g.volumes, psi, w, 2.0,
                              previous, **inc)


def test_rest_breakdown_values():
    b = rest_breakdown()
    assert b.relative_entropy == pytest.approx(2.0 * INV_E, rel=1e-14)
    assert b.xi_sup_sq == 1.0 and b.xi_l2_half == pytest.approx(0.5)
    assert b.energy == pytest.approx(1.0 + 2.0 * INV_E)
    assert b.dissipation == 0.0 and b.work == 0.0


def test_increments_accumulate():
    a = rest_breakdown(viscous=1.0, fluid_work=0.5)
    b = rest_breakdown(a, viscous=0.25, shell_work=0.1, numerical=1e-3)
    assert b.viscous == 1.25 and b.work == pytest.approx(0.6)
    assert b.numerical == 1e-3 and b.dissipation == 1.25
    with pytest.raises(KeyError):
        rest_breakdown(bogus=1.0)


def test_entropy_value_path():
    b = assemble_breakdown(0.0, 0.0, np.zeros(0), 0.0, 0.0, np.zeros(0), np.zeros(0), None, None, 3.0,
                           entropy_value=0.5)
    assert b.relative_entropy == 1.5 and b.shell_kinetic == 0.0 and b.xi_sup_sq == 0.0


def test_csv_row_round_trip():
    b = rest_breakdown(viscous=1 / 3)
    names = EnergyBreakdown.csv_header().split(",")
    vals = [float(v) for v in b.csv_row().split(",")]
    assert len(names) == len(vals) and names[-1] == "energy"
    assert dict(zip(names, vals))["viscous"] == 1 / 3
    assert vals[-1] == b.energy
    assert csv_schema_line().startswith("# polyshell-diagnostics schema=")


@given(st.integers(0, 2**31 - 1))
def test_reynolds_zero_for_uniform_values(seed):
    """Spatially uniform values c(t): every term reduces to volume changes, which cancel."""
    mesh = SlabMesh(8, 4)
    rng = np.random.default_rng(seed)
    geoms = [mesh.geometry(0.05 * rng.uniform(-1, 1) * np.sin(2 * np.pi * mesh.x)) for _ in range(4)]
    values = [np.full(mesh.ncells, c) for c in rng.uniform(0, 2, 4)]
    assert np.max(np.abs(reynolds_check(values, geoms, 0.1))) < 1e-13


def test_reynolds_zero_on_fixed_mesh():
    mesh = SlabMesh(8, 4)
    g = mesh.reference()
    rng = np.random.default_rng(1)
    values = [rng.uniform(0, 1, mesh.ncells) for _ in range(3)]
    assert np.max(np.abs(reynolds_check(values, [g, g, g], 0.1))) < 1e-14
