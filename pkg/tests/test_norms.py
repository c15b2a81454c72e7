import numpy as np
import pytest

import frozen
import oracles
from pharmlab.norms import (
    NormSpec,
    eval_dual_norm,
    eval_norm,
    fenchel_gap,
    gradient_set,
    gradient_support,
    is_dual_differentiable,
)

L1_BALL = [[1, 0], [0, 1], [-1, 0], [0, -1]]

ALL_NORMS = [
    NormSpec.lp(2, 1.5),
    NormSpec.lp(2, 2.0),
    NormSpec.lp(2, 3.0),
    NormSpec.lp(2, np.inf),
    NormSpec.lp(2, 1.0),
    NormSpec.weighted_lp(3.0, [1.0, 2.0]),
    NormSpec.ellipsoidal([[2.0, 0.5], [0.5, 1.0]]),
    NormSpec.l1_polytope(2),
    NormSpec.polyhedral([[1, 0], [0.5, 1], [-0.5, 1], [-1, 0], [-0.5, -1], [0.5, -1]]),
]


def test_eval_norm_examples():
    assert eval_norm(NormSpec.lp(2, 2), [3, 4]) == pytest.approx(5.0, abs=1e-15)
    assert eval_norm(NormSpec.lp(2, np.inf), [1, -2]) == 2.0
    assert eval_norm(NormSpec.polyhedral(L1_BALL), [1, 1]) == pytest.approx(frozen.L1_POLYTOPE_GAUGE_ONES, abs=1e-9)


def test_eval_norm_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_norm(NormSpec.lp(2, 2), [1, 2, 3])
    with pytest.raises(ValueError):
        eval_dual_norm(NormSpec.lp(3, 2), [1, 2])


def test_eval_dual_norm_examples():
    assert eval_dual_norm(NormSpec.lp(2, np.inf), [1, 1]) == 2.0
    assert eval_dual_norm(NormSpec.lp(2, 2), [3, 4]) == pytest.approx(5.0, abs=1e-15)
    assert eval_dual_norm(NormSpec.lp(2, 3), [1, 1]) == pytest.approx(frozen.LP3_DUAL_OF_ONES, rel=1e-13)


def test_polyhedral_gauge_matches_hull_facets():
    G = [[1, 0], [0.5, 1], [-0.5, 1], [-1, 0], [-0.5, -1], [0.5, -1]]
    n = NormSpec.polyhedral(G)
    rng = np.random.default_rng(4)
    for v in rng.normal(size=(40, 2)):
        assert eval_norm(n, v) == pytest.approx(oracles.polytope_gauge(G, v), rel=1e-8, abs=1e-12)


def test_lp_dual_matches_angular_sweep():
    rng = np.random.default_rng(5)
    for p in (1.5, 3.0, 4.0):
        for xi in rng.normal(size=(3, 2)):
            assert eval_dual_norm(NormSpec.lp(2, p), xi) == pytest.approx(oracles.dual_norm_by_sweep(p, xi), rel=1e-9)


def test_gradient_set_linf_axis_is_segment():
    gs = gradient_set(NormSpec.lp(2, np.inf), [1, 0])
    assert not gs.is_singleton
    pts = sorted(map(tuple, np.round(gs.points, 12)))
    assert pts == sorted(frozen.LINF_GRADIENT_AT_1_0)


def test_gradient_set_linf_generic_point_matches_brute_force():
    gs = gradient_set(NormSpec.lp(2, np.inf), [2, 1])
    assert gs.is_singleton
    np.testing.assert_allclose(gs.vector, frozen.LINF_GRADIENT_AT_2_1, atol=1e-12)


def test_gradient_set_euclidean_and_zero():
    gs = gradient_set(NormSpec.lp(2, 2), [3, 4])
    assert gs.is_singleton
    np.testing.assert_allclose(gs.vector, [3, 4], atol=1e-12)
    z = gradient_set(NormSpec.lp(2, np.inf), [0, 0])
    assert z.is_singleton and np.all(z.vector == 0)


def test_is_dual_differentiable_examples():
    assert not is_dual_differentiable(NormSpec.lp(2, np.inf), [1, 0])
    assert is_dual_differentiable(NormSpec.lp(2, 2), [0.3, -2])
    assert not is_dual_differentiable(NormSpec.polyhedral(L1_BALL), [1, 1])
    pts = gradient_set(NormSpec.polyhedral(L1_BALL), [1, 1]).points
    assert len(pts) == 2


@pytest.mark.parametrize("n", ALL_NORMS, ids=lambda n: n.label)
def test_gradient_set_members_satisfy_fenchel_equality(n):
    rng = np.random.default_rng(11)
    for xi in np.vstack([np.eye(2), [[1, 1], [1, -1]], rng.normal(size=(20, 2))]):
        gs = gradient_set(n, xi)
        a = eval_dual_norm(n, xi)
        for w in gs.points:
            assert abs(float(fenchel_gap(n, xi, w))) <= 1e-9 * max(1.0, a * a)
            assert abs(eval_norm(n, w) - a) <= 1e-10 * max(1.0, a)


@pytest.mark.parametrize("n", ALL_NORMS, ids=lambda n: n.label)
def test_fenchel_inequality_for_arbitrary_vectors(n):
    rng = np.random.default_rng(12)
    for xi, w in zip(rng.normal(size=(50, 2)), rng.normal(size=(50, 2))):
        assert fenchel_gap(n, xi, w) <= 1e-12


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, np.inf])
def test_lp_duality_roundtrip(p):
    n = NormSpec.lp(2, p)
    rng = np.random.default_rng(13)
    for v in rng.normal(size=(20, 2)):
        assert eval_dual_norm(n.dual(), v) == pytest.approx(eval_norm(n, v), rel=1e-12)


@pytest.mark.parametrize("n", ALL_NORMS, ids=lambda n: n.label)
def test_gradient_set_homogeneity(n):
    rng = np.random.default_rng(14)
    for xi in np.vstack([[1, 0], rng.normal(size=(5, 2))]):
        a = gradient_set(n, xi).points
        b = gradient_set(n, 2.5 * xi).points
        key = lambda P: P[np.lexsort(P.T[::-1])]  # noqa: E731
        np.testing.assert_allclose(key(b), 2.5 * key(a), atol=1e-10)


def test_gradient_support_is_max_and_min_over_extreme_points():
    n = NormSpec.lp(2, np.inf)
    hi, lo = gradient_support(n, np.array([[1.0, 0.0]]), np.array([[0.3, -0.7]]))
    assert (float(hi[0]), float(lo[0])) == pytest.approx(frozen.LINF_DPM_EXAMPLE, abs=1e-15)


def test_polyhedral_rejects_non_vertices():
    with pytest.raises(ValueError):
        NormSpec.polyhedral([[1, 0], [0, 1], [-1, 0], [0, -1], [0.2, 0.2], [-0.2, -0.2]])
