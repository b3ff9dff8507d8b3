"""Discounted-equation solver: fixed points, contraction, calibrated curves."""
import json

import numpy as np
import pytest

import hjlax as hj
from hjlax.discounted import (backward_calibrated_curve, differentiability_mask,
                              discounted_step, lift_to_evolution,
                              solve_discounted)
from hjlax.errors import (BoxExhausted, ConfigError, OutOfWindow,
                          SingularStart)
from hjlax.gridfn import GridSpec
from hjlax.lagrangian import discount_lift, mechanical_lagrangian

LAM = 0.5


def const_lagrangian(a):
    # L = v^2/2 + a via a zero-amplitude potential with shift -a
    return mechanical_lagrangian(dim=1, potential="cos", coeff=0.0, shift=-a)


@pytest.fixture(scope="module")
def cos_sol():
    L = mechanical_lagrangian(dim=1, potential="cos", coeff=-1.0)
    grid = GridSpec(box=[(-np.pi, np.pi)], num=[512], boundary="periodic")
    return L, solve_discounted(L, LAM, grid, dt=0.05, tol_fp=1e-9)


@pytest.fixture(scope="module")
def dw_sol():
    L = mechanical_lagrangian(dim=1, potential="double_well", coeff=-1.0,
                              shift=-0.25)
    grid = GridSpec(box=[(-2.0, 2.0)], num=[81], boundary="constant")
    return L, solve_discounted(L, LAM, grid, dt=0.05, tol_fp=1e-10)


def test_constant_solution_exact():
    a = 0.7
    grid = GridSpec(box=[(-2.0, 2.0)], num=[81], boundary="constant")
    sol = solve_discounted(const_lagrangian(a), LAM, grid, dt=0.05)
    assert np.abs(sol.u.values - a / LAM).max() <= 1e-14
    assert sol.residual <= 1e-14
    # the field is a genuine fixed point of the one-step operator
    again = discounted_step(const_lagrangian(a), LAM, sol.u, 0.05)
    assert np.abs(again.values - sol.u.values).max() <= 1e-12


def test_constant_shift_property():
    a, c = 0.7, 0.31
    grid = GridSpec(box=[(-2.0, 2.0)], num=[81], boundary="constant")
    s1 = solve_discounted(const_lagrangian(a), LAM, grid, dt=0.05)
    s2 = solve_discounted(const_lagrangian(a + c), LAM, grid, dt=0.05)
    assert np.abs((s2.u.values - s1.u.values) - c / LAM).max() <= 1e-13


def test_cos_grid_refinement(cos_sol):
    L, fine = cos_sol
    coarse = solve_discounted(
        L, LAM, GridSpec(box=[(-np.pi, np.pi)], num=[128], boundary="periodic"),
        dt=0.05, tol_fp=1e-9)
    diff = np.abs(coarse.u.values - fine.u(coarse.u.nodes())).max()
    assert diff <= 8e-3          # measured 5.2e-3, interpolation-limited


def test_contraction_factor_measured(cos_sol):
    _, sol = cos_sol
    assert abs(sol.measured_contraction / sol.contraction_factor - 1.0) <= 0.01


def test_fixed_point_defect_bound(cos_sol):
    _, sol = cos_sol
    assert sol.fp_defect <= (1.0 - sol.contraction_factor) * 1e-9 * (1 + 1e-9)


def test_pairwise_contraction_and_monotonicity():
    L = mechanical_lagrangian(dim=1, potential="cos", coeff=-1.0)
    grid = GridSpec(box=[(-np.pi, np.pi)], num=[64], boundary="periodic")
    base = grid.build(lambda p: np.cos(p[:, 0]))
    rng = np.random.default_rng(7)
    beta = np.exp(-LAM * 0.1)
    for _ in range(5):
        u = base.with_values(rng.normal(size=base.values.shape))
        w = base.with_values(rng.normal(size=base.values.shape))
        tu = discounted_step(L, LAM, u, 0.1)
        tw = discounted_step(L, LAM, w, 0.1)
        gap = np.abs(tu.values - tw.values).max()
        assert gap <= beta * np.abs(u.values - w.values).max() + 1e-12
        # monotonicity: lifting w above u lifts the image
        above = w.with_values(np.maximum(u.values, w.values) + 0.0)
        t_above = discounted_step(L, LAM, above, 0.1)
        assert np.all(t_above.values >= tu.values - 1e-12)


def test_residual_consistency_under_refinement(cos_sol):
    L, fine = cos_sol
    coarse = solve_discounted(
        L, LAM, GridSpec(box=[(-np.pi, np.pi)], num=[128], boundary="periodic"),
        dt=0.1, tol_fp=1e-9)
    c_coarse = coarse.residual / (0.1 + coarse.u.spacing[0])
    c_fine = fine.residual / (0.05 + fine.u.spacing[0])
    assert fine.residual <= coarse.residual
    assert c_fine <= 1.5 * c_coarse
    assert coarse.residual <= coarse.residual_tol
    assert fine.residual <= fine.residual_tol


def test_diff_mask_flags_the_kink(dw_sol):
    _, sol = dw_sol
    mask = sol.diff_mask
    n = mask.size
    # rim nodes lack a one-sided slope; the ridge kink sits at the center node
    assert not mask[0] and not mask[n - 1] and not mask[n // 2]
    assert mask.sum() == n - 3
    assert sol.residual <= sol.residual_tol


def test_differentiability_mask_threshold(dw_sol):
    _, sol = dw_sol
    mask, jump = differentiability_mask(sol.u)
    center = sol.u.values.size // 2
    assert jump[center] > 10 * np.median(jump[np.isfinite(jump)])
    assert not mask[center]


def test_validation_errors():
    L = mechanical_lagrangian(dim=1, potential="cos", coeff=-1.0)
    grid = GridSpec(box=[(-np.pi, np.pi)], num=[64], boundary="periodic")
    with pytest.raises(ConfigError):
        solve_discounted(L, 0.0, grid, dt=0.05)
    with pytest.raises(ConfigError):
        solve_discounted(L, LAM, grid, dt=0.0)
    lifted = discount_lift(L, 1.0, horizon=1.0)
    with pytest.raises(ConfigError):
        solve_discounted(lifted, LAM, grid, dt=0.05)
    with pytest.raises(ConfigError):
        # guard against an exploding foot lattice
        from hjlax.discounted import _velocity_lattice
        _velocity_lattice(np.array([1e-6]), 0.05, np.array([2.0]))
    with pytest.raises(hj.NonConvergence):
        solve_discounted(L, LAM, grid, dt=0.05, max_iter=5)


def test_box_exhausted_for_outward_drift():
    # reversing the double-well sign rewards running toward the box edge
    L = mechanical_lagrangian(dim=1, potential="double_well", coeff=1.0)
    grid = GridSpec(box=[(-2.0, 2.0)], num=[81], boundary="constant")
    with pytest.raises(BoxExhausted):
        solve_discounted(L, LAM, grid, dt=0.05, tol_fp=1e-8)


def test_lift_to_evolution(dw_sol):
    _, sol = dw_sol
    t0 = lift_to_evolution(sol, 0.0)
    assert np.array_equal(t0.values, sol.u.values)
    tln2 = lift_to_evolution(sol, np.log(2.0) / LAM)
    assert np.abs(tln2.values - 2.0 * sol.u.values).max() <= 1e-12
    with pytest.raises(OutOfWindow):
        lift_to_evolution(sol, 1.5, horizon=1.0)


def test_backward_curve_constant_case():
    a = 0.7
    L = const_lagrangian(a)
    grid = GridSpec(box=[(-2.0, 2.0)], num=[81], boundary="constant")
    sol = solve_discounted(L, LAM, grid, dt=0.05)
    cc = backward_calibrated_curve(sol, L, np.array([0.5]), tau=1.0,
                                   horizon=1.0, dt=1 / 32)
    assert np.abs(cc.curve.points - 0.5).max() <= 1e-10
    assert np.abs(cc.momenta).max() <= 1e-10
    assert cc.calibration_defect <= 1e-10


def test_backward_curve_cos_attractor(cos_sol):
    L, sol = cos_sol
    cc = backward_calibrated_curve(sol, L, np.array([1.5]), tau=1.0,
                                   horizon=1.0, dt=1 / 64)
    assert cc.calibration_defect <= 1e-3
    # the past of the curve sits closer to the equilibrium at pi
    first, last = cc.curve.points[0, 0], cc.curve.points[-1, 0]
    assert abs(last - cc.x[0]) <= 1e-9     # terminal point = snapped start node
    assert 2.0 < first < np.pi


def test_backward_curve_defect_drops_with_solver_dt():
    L = mechanical_lagrangian(dim=1, potential="cos", coeff=-1.0)
    grid = GridSpec(box=[(-np.pi, np.pi)], num=[512], boundary="periodic")
    defects = []
    for dtv in (0.4, 0.2):
        sol = solve_discounted(L, LAM, grid, dt=dtv, tol_fp=1e-9)
        cc = backward_calibrated_curve(sol, L, np.array([1.5]), tau=1.0,
                                       horizon=1.0, dt=1 / 64)
        defects.append(cc.calibration_defect)
    assert defects[1] <= defects[0] / 1.8   # at least first order (measured ~3.8x)


def test_backward_curve_singular_start(cos_sol):
    L, sol = cos_sol
    with pytest.raises(SingularStart):
        backward_calibrated_curve(sol, L, np.array([0.0]), tau=1.0, horizon=0.5)


def test_calibrated_curve_csv(tmp_path, cos_sol):
    L, sol = cos_sol
    cc = backward_calibrated_curve(sol, L, np.array([1.5]), tau=1.0,
                                   horizon=0.5, dt=1 / 16)
    path = tmp_path / "curve.csv"
    cc.to_csv(str(path))
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "t,x1,p1"
    assert len(lines) == len(cc.curve.times) + 1
    t, x, p = (float(f) for f in lines[-1].split(","))
    assert t == 1.0 and abs(x - cc.x[0]) <= 1e-9
    cc.to_csv(str(path))
    assert path.read_text().strip().split("\n") == lines   # deterministic


def test_metadata_serializable(tmp_path, dw_sol):
    _, sol = dw_sol
    path = tmp_path / "meta.json"
    hj.dump_json(sol.metadata(), str(path))
    meta = json.loads(path.read_text())
    assert meta["lambda"] == LAM and meta["dt"] == 0.05
    assert meta["iterations"] == sol.iterations
