import numpy as np
import pytest
import scipy.sparse as sp

import oracles
from pharmlab.dcalc import ScalarMap
from pharmlab.divergence import (
    SignedMeasure,
    check_chain_rule,
    check_leibniz,
    check_linearity_h,
    check_local_to_global,
    divergence_bounds,
    extract_divergence,
    hat_pairings,
    membership,
    selection_witness,
    split_omega,
    subdifferential_witnesses,
)
from pharmlab.norms import NormSpec
from pharmlab.spaces import GraphDomain, GridDomain, make_test_functions


def _hat(dom, x0):
    c = dom.coords
    r = np.max(np.abs(c - np.asarray(x0)), axis=1)
    f = np.maximum(0.0, 0.25 - r)
    f[dom.boundary] = 0.0
    return f


def test_euclidean_half_r_squared_has_density_two_in_the_bulk():
    n = 11
    dom = GridDomain.unit_box(n, 2, NormSpec.lp(2, 2))
    x = dom.coords
    dens = extract_divergence(dom, np.ones(dom.n_sites), 0.5 * (x ** 2).sum(1)).density.reshape(n, n)
    np.testing.assert_allclose(dens[2:-2, 2:-2], 2.0, atol=1e-10)
    # one-sided differences at the boundary drop a quarter per axis on the first layer
    assert dens[1, 5] == pytest.approx(1.75)
    assert dens[1, 1] == pytest.approx(1.5)
    assert np.all(dens[0] == 0)


def test_graph_divergence_is_weighted_laplacian_with_half_measure():
    C = sp.diags([np.ones(4), np.ones(4)], [1, -1], shape=(5, 5)).toarray() * np.array([1, 2, 3, 2, 1.0])[:, None]
    C = np.maximum(C, C.T)
    dom = GraphDomain(C, np.full(5, 0.5), boundary=np.array([1, 0, 0, 0, 1], bool))
    g = np.array([0.0, 1.0, 4.0, 2.0, 3.0])
    mu = extract_divergence(dom, np.ones(5), g)
    want = oracles.graph_laplacian_mass(C, g)
    np.testing.assert_allclose(mu.mass[1:4], want[1:4], atol=1e-12)


def test_extraction_refuses_non_strictly_convex_norm():
    dom = GridDomain.unit_box(7, 2, NormSpec.lp(2, np.inf))
    with pytest.raises(ValueError):
        extract_divergence(dom, np.ones(dom.n_sites), dom.coords[:, 0])


def test_bounds_width_zero_on_strictly_convex_and_positive_on_linf():
    g_of = lambda d: d.coords[:, 0] + 0.3 * d.coords[:, 1] ** 2  # noqa: E731
    euc = GridDomain.unit_box(9, 2, NormSpec.lp(2, 3))
    iv = divergence_bounds(euc, np.ones(euc.n_sites), g_of(euc), _hat(euc, (0.5, 0.5)))
    assert iv.width == pytest.approx(0.0, abs=1e-12)
    linf = GridDomain.unit_box(9, 2, NormSpec.lp(2, np.inf))
    iv = divergence_bounds(linf, np.ones(linf.n_sites), linf.coords[:, 0], _hat(linf, (0.5, 0.5)))
    assert iv.width > 1e-3


def test_bounds_reject_test_functions_touching_the_boundary():
    dom = GridDomain.unit_box(7, 2, NormSpec.lp(2, 2))
    with pytest.raises(ValueError):
        divergence_bounds(dom, np.ones(dom.n_sites), dom.coords[:, 0], np.ones(dom.n_sites))


def test_extracted_measure_is_member_and_shift_is_not():
    dom = GridDomain.unit_box(9, 2, NormSpec.lp(2, 3))
    x = dom.coords
    g = np.sin(2 * x[:, 0]) + x[:, 1] ** 2
    h = 1.0 + 0.5 * x[:, 0]
    mu = extract_divergence(dom, h, g)
    assert membership(dom, mu, h, g).member
    bumped = SignedMeasure(mu.density + 1e-3 * mu.support, mu.measure, mu.support)
    rep = membership(dom, bumped, h, g)
    assert not rep.member and rep.sufficient


@pytest.mark.parametrize("norm", [NormSpec.lp(2, np.inf), NormSpec.l1_polytope(2)], ids=lambda n: n.label)
def test_lp_witnesses_attain_the_upper_bound_and_match_selection(norm):
    dom = GridDomain.unit_box(9, 2, norm)
    x = dom.coords
    g = x[:, 0] + 0.5 * x[:, 1] ** 2
    h = np.ones(dom.n_sites)
    dirs = [_hat(dom, (0.5, 0.5)), -_hat(dom, (0.5, 0.5))]
    fam = make_test_functions(dom, count=6)
    wits = subdifferential_witnesses(dom, h, g, dirs, testfns=fam)
    for f, w in zip(dirs, wits):
        iv = divergence_bounds(dom, h, g, f)
        sel = selection_witness(dom, h, g, f)
        assert w.pair(f) == pytest.approx(iv.hi, abs=1e-9)
        assert sel.pair(f) == pytest.approx(iv.hi, abs=1e-9)
        assert membership(dom, w, h, g, testfns=fam).member
        assert membership(dom, sel, h, g, testfns=fam).member


def test_hat_pairings_match_generic_bounds():
    dom = GridDomain.unit_box(7, 2, NormSpec.lp(2, np.inf))
    x = dom.coords
    g = x[:, 0] ** 2 - x[:, 1]
    h = 1.0 + x[:, 1]
    sites, A, B = hat_pairings(dom, h, g)
    fam = make_test_functions(dom, count=0)
    for k, s in enumerate(sites):
        iv = divergence_bounds(dom, h, g, fam[k])
        assert (-iv.lo, -iv.hi) == pytest.approx((A[k], B[k]), abs=1e-12)


def test_calculus_rules_on_euclidean_grid():
    dom = GridDomain.unit_box(11, 2, NormSpec.lp(2, 2))
    x = dom.coords
    g = 0.5 * x[:, 0] + 0.25 * x[:, 1]
    assert check_linearity_h(dom, 1 + x[:, 0], np.cos(x[:, 1]), g).passed
    assert check_leibniz(dom, 1 + x[:, 0], np.full(dom.n_sites, 2.0), g).passed
    assert check_chain_rule(dom, np.ones(dom.n_sites), g, ScalarMap.affine(3.0, 1.0)).passed


def test_local_to_global_split():
    dom = GridDomain.unit_box(13, 2, NormSpec.lp(2, 2))
    x = dom.coords
    g = x[:, 0] ** 2 + x[:, 1]
    parts = split_omega(dom, overlap=3)
    assert len(parts) == 2 and np.all(parts[0] | parts[1])
    assert check_local_to_global(dom, np.ones(dom.n_sites), g, parts).passed
