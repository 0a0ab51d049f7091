import io

import numpy as np
import pytest

from frameflow.fields import (FormField, StripGrid, VelocityField, component_name, form_components,
                              read_form_csv, write_form_csv, write_velocity_csv)


def test_grid_geometry():
    g = StripGrid(33, 17, 4.0, 2.0)
    assert g.hx == 4.0 / 33 and g.hy == 0.125
    pts = g.points()
    assert pts.shape == (33 * 17, 2)
    np.testing.assert_array_equal(pts[:33, 1], 0.0)
    np.testing.assert_array_equal(pts[33, :], [0.0, 0.125])
    js, is_ = g.subgrid(4, 4)
    assert len(js) == 5 and len(is_) == 9
    g3 = StripGrid(2, 3, 1.0, 1.0, dim=3)
    assert g3.points().shape == (6, 3) and not np.any(g3.points()[:, 1])
    with pytest.raises(ValueError):
        StripGrid(0, 3, 1.0, 1.0)
    with pytest.raises(ValueError):
        StripGrid(2, 3, 1.0, 1.0, dim=4)


def test_components():
    assert form_components(3, 2) == [(0, 1), (0, 2), (1, 2)]
    assert form_components(2, 0) == [()]
    assert component_name((0, 2)) == "w13"


def test_form_field_shape_check():
    g = StripGrid(3, 4, 1.0, 1.0)
    with pytest.raises(ValueError):
        FormField(g, 2, np.zeros((2, 4, 3)))
    ff = FormField(g, 2, np.ones((1, 4, 3)))
    m = ff.to_matrix()
    assert m[0, 0, 0, 1] == 1 and m[0, 0, 1, 0] == -1


def test_csv_round_trip(tmp_path, rs):
    g = StripGrid(5, 4, 2.0, 1.5, dim=3)
    ff = FormField(g, 2, rs.normal(size=(3, 4, 5)), np.abs(rs.normal(size=(3, 4, 5))))
    p = tmp_path / "f.csv"
    write_form_csv(p, ff)
    back = read_form_csv(p, g, 2)
    np.testing.assert_array_equal(back.values, ff.values)
    np.testing.assert_array_equal(back.stderr, ff.stderr)
    header = p.read_text().splitlines()[0]
    assert header == "x,y,z,w12,w12_stderr,w13,w13_stderr,w23,w23_stderr"
    buf = io.StringIO()
    write_form_csv(buf, ff, with_stderr=False)
    assert buf.getvalue().splitlines()[0] == "x,y,z,w12,w13,w23"


def test_velocity_field_and_csv(tmp_path):
    g = StripGrid(4, 3, 2.0, 1.0)
    vf = VelocityField.from_function(g, [0.0, 1.0], lambda t, p: np.stack([t + p[:, 1], -p[:, 0]], 1))
    assert vf.values.shape == (2, 2, 3, 4)
    np.testing.assert_allclose(vf.as_function()(0.5, np.array([0.5, 0.5])), [1.0, -0.5])
    with pytest.raises(ValueError):
        VelocityField(g, [1.0, 0.0], vf.values)
    write_velocity_csv(tmp_path / "u.csv", g, vf.values[0])
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x,y,u1,u2" and len(lines) == 13
