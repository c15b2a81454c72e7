import numpy as np

import frozen
import oracles


def test_lp3_dual_sweep_reproduces_frozen_value():
    assert abs(oracles.dual_norm_by_sweep(3.0, [1, 1]) - frozen.LP3_DUAL_OF_ONES) < 1e-12


def test_polytope_gauge_reproduces_frozen_value():
    G = [[1, 0], [0, 1], [-1, 0], [0, -1]]
    assert oracles.polytope_gauge(G, [1, 1]) == frozen.L1_POLYTOPE_GAUGE_ONES


def test_brute_gradient_sets_reproduce_frozen_values():
    assert tuple(oracles.brute_gradient_set_linf([2, 1])[0]) == frozen.LINF_GRADIENT_AT_2_1
    pts = oracles.brute_gradient_set_linf([1, 0])
    assert (tuple(pts[0]), tuple(pts[-1])) == frozen.LINF_GRADIENT_AT_1_0
    assert np.all(pts[:, 0] == 1.0)


def test_linf_dpm_brute_reproduces_frozen_value():
    assert oracles.linf_dpm_brute([0.3, -0.7]) == frozen.LINF_DPM_EXAMPLE


def test_quadratures_reproduce_frozen_values():
    assert abs(oracles.disk_mean_abs_x1_over_diameter() - frozen.DISK_POINCARE_RATIO) < 1e-12
    assert abs(oracles.disk_mean_abs_x1_over_diameter() - 2 / (3 * np.pi)) < 1e-10
    assert abs(oracles.square_integral_x2_plus_y2() - frozen.SQUARE_X2_Y2) < 1e-12


def test_parallelogram_oracle_reproduces_frozen_values():
    assert oracles.parallelogram_defect_lp(3.0, [1, 0], [0, 1]) == frozen.LP3_PARALLELOGRAM_DEFECT
    assert oracles.parallelogram_defect_lp(np.inf, [1, 0], [0, 1]) == frozen.LINF_PARALLELOGRAM_DEFECT
    assert oracles.parallelogram_defect_lp(2.0, [1, 0], [0, 1]) < 1e-12
