import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import hjlax as hj


def kink(X):
    return -np.abs(X[..., 0])


def test_nodes_are_reproduced_exactly():
    g = hj.GridSpec(box=[(-3.0, 3.0)], num=[13]).build(kink)
    nodes = g.nodes()
    assert np.allclose(g(nodes), g.values.ravel(), atol=0)


def test_multilinear_is_exact_on_affine_2d():
    spec = hj.GridSpec(box=[(-1.0, 2.0), (0.0, 1.0)], num=[7, 5])
    g = spec.build(lambda X: 2.0 * X[..., 0] - 3.0 * X[..., 1] + 0.5)
    rng = np.random.default_rng(0)
    pts = rng.uniform([-1.0, 0.0], [2.0, 1.0], size=(50, 2))
    expect = 2.0 * pts[:, 0] - 3.0 * pts[:, 1] + 0.5
    assert np.allclose(g(pts), expect, atol=1e-12)


def test_constant_extension_outside_box():
    g = hj.GridSpec(box=[(-3.0, 3.0)], num=[7]).build(kink)
    assert g(np.array([[5.0]]))[0] == pytest.approx(-3.0)
    assert g(np.array([[-9.0]]))[0] == pytest.approx(-3.0)


def test_periodic_wraparound():
    g = hj.GridSpec(box=[(-np.pi, np.pi)], num=[16],
                    boundary="periodic").build(lambda X: np.sin(X[..., 0]))
    q = np.array([[0.3], [0.3 + 2 * np.pi], [0.3 - 4 * np.pi]])
    vals = g(q)
    assert np.allclose(vals, vals[0], atol=1e-12)
    # interpolation across the seam uses the wrapped neighbor: the query sits
    # 0.75 h past the last node (at pi - h), so that node gets weight 0.25
    h = g.spacing[0]
    seam = np.array([[np.pi - 0.25 * h]])
    last = np.sin(np.pi - h)
    wrapped = np.sin(-np.pi)
    assert g(seam)[0] == pytest.approx(0.25 * last + 0.75 * wrapped, abs=1e-12)


def test_lipschitz_of_kink_is_one():
    g = hj.GridSpec(box=[(-3.0, 3.0)], num=[25]).build(kink)
    assert g.lipschitz() == pytest.approx(1.0, abs=1e-12)


def test_interp_error_estimate_scales_with_spacing():
    # centered kink: second difference h |slope jump| gives estimate h/4
    for num, h in ((7, 1.0), (13, 0.5)):
        g = hj.GridSpec(box=[(-3.0, 3.0)], num=[num]).build(kink)
        assert g.interp_error_estimate() == pytest.approx(h / 4.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.9, 2.9))
def test_interp_between_nodes_of_smooth_profile(xq):
    g = hj.GridSpec(box=[(-3.0, 3.0)], num=[241]).build(
        lambda X: np.cos(X[..., 0]))
    err = abs(float(g(np.array([[xq]]))[0]) - np.cos(xq))
    assert err <= g.interp_error_estimate() * 1.0001 + 1e-12


def test_csv_header_roundtrip_is_exact(tmp_path):
    g = hj.GridSpec(box=[(-2.0, 2.0), (-1.0, 1.0)], num=[9, 5]).build(
        lambda X: np.sin(3 * X[..., 0]) * X[..., 1] + np.pi)
    csv = os.path.join(tmp_path, "u.csv")
    hdr = os.path.join(tmp_path, "u.json")
    g.to_csv(csv)
    g.to_json_header(hdr)
    g2 = hj.GridFunction.from_csv(csv, hdr)
    assert np.array_equal(g.values, g2.values)
    assert g2.boundary == g.boundary
    assert np.array_equal(g2.box, g.box)
    with open(hdr) as fh:
        meta = json.load(fh)
    assert meta["num"] == [9, 5]
    assert "lipschitz" in meta


def test_nearest_node_and_node_point():
    g = hj.GridSpec(box=[(-3.0, 3.0)], num=[7]).build(kink)
    idx = g.nearest_node(np.array([0.4]))
    assert np.allclose(g.node_point(idx), [0.0])
    idx2 = g.nearest_node(np.array([0.6]))
    assert np.allclose(g.node_point(idx2), [1.0])


def test_with_values_keeps_geometry():
    g = hj.GridSpec(box=[(-1.0, 1.0)], num=[5]).build(kink)
    g2 = g.with_values(g.values * 2.0)
    assert np.allclose(g2.values, g.values * 2.0)
    assert np.array_equal(g2.box, g.box)


def test_shape_mismatch_rejected():
    with pytest.raises(Exception):
        hj.GridFunction(box=np.array([[-1.0, 1.0]]), values=np.zeros((3, 3)),
                        boundary="constant")
