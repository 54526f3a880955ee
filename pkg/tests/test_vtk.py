import numpy as np

from gwtransport.bench import build_scenario, forward2d_scenario
from gwtransport.fem_core import build_layout
from gwtransport.mesh import GridSpec, build_structured
from gwtransport.transport import DiscreteField
from gwtransport.vtk import write_field, write_flow


def _section(text, key):
    lines = text.splitlines()
    i = next(j for j, line in enumerate(lines) if line.startswith(key))
    return lines[i], lines[i + 1:]


def test_field_file_layout(tmp_path):
    mesh = build_structured(GridSpec((1.0, 1.0), (2, 2))).adapt([0])
    lay = build_layout(mesh, "dg", 1)
    write_field(tmp_path / "u.vtk", DiscreteField(mesh, lay, np.arange(lay.n_dofs, dtype=float)))
    text = (tmp_path / "u.vtk").read_text()
    head, rest = _section(text, "POINTS")
    assert head == "POINTS 28 double"
    assert _section(text, "CELL_TYPES")[0] == "CELL_TYPES 7"
    assert set(_section(text, "CELL_TYPES")[1][:7]) == {"8"}
    assert "SCALARS u double 1" in text and "SCALARS u_mean double 1" in text
    _, vals = _section(text, "SCALARS u_mean")
    # cell means of the corner values 4c..4c+3
    np.testing.assert_allclose([float(v) for v in vals[1:8]], 4 * np.arange(7) + 1.5)


def test_flow_file(tmp_path):
    s = build_scenario(forward2d_scenario("desk", seed=1))
    write_flow(tmp_path / "f.vtk", s.mesh, s.head, s.velocity, s.conductivity)
    text = (tmp_path / "f.vtk").read_text()
    for name in ("SCALARS phi", "VECTORS q", "SCALARS K", "SCALARS Y"):
        assert name in text
