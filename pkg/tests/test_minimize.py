import numpy as np
import pytest

from pharmlab.minimize import (
    EnergySpec,
    _pairings,
    certify_minimizer,
    certify_subminimizer,
    certify_superminimizer,
    energy_perturbation_oracle,
    first_order_residual,
    minimize_p_energy,
    p_energy,
)
from pharmlab.norms import NormSpec
from pharmlab.spaces import GraphDomain, GridDomain, make_test_functions


def _line(n=33):
    return GridDomain((n,), 1.0 / (n - 1), NormSpec.lp(1, 2))


def test_energy_of_affine_field():
    dom = _line()
    g = 2.0 * dom.coords[:, 0]
    assert p_energy(dom, EnergySpec(2, g), g) == pytest.approx(2.0, rel=1e-13)
    assert p_energy(dom, EnergySpec(3, g), g) == pytest.approx(8.0 / 3.0, rel=1e-13)


def test_energy_rejects_boundary_mismatch_and_bad_exponent():
    dom = _line()
    g = dom.coords[:, 0]
    with pytest.raises(ValueError):
        p_energy(dom, EnergySpec(2, g), g + 1.0)
    for p in (1.0, np.inf, 0.5):
        with pytest.raises(ValueError):
            EnergySpec(p, g)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_one_dimensional_minimizer_is_affine(p):
    dom = _line()
    x = dom.coords[:, 0]
    bnd = np.where(dom.boundary, 1.0 + 2.0 * x, 0.0)
    rep = minimize_p_energy(dom, EnergySpec(p, bnd))
    np.testing.assert_allclose(rep.minimizer, 1.0 + 2.0 * x, atol=1e-7)
    assert rep.converged


def test_direct_solve_reproduces_discrete_harmonic_xy():
    dom = GridDomain.unit_box(15, 2, NormSpec.lp(2, 2))
    x = dom.coords
    xy = x[:, 0] * x[:, 1]
    rep = minimize_p_energy(dom, EnergySpec(2, np.where(dom.boundary, xy, 0.0)))
    assert rep.method == "direct"
    np.testing.assert_allclose(rep.minimizer, xy, atol=1e-12)


def test_smoothed_route_certifies_on_lp3():
    dom = GridDomain.unit_box(11, 2, NormSpec.lp(2, 3))
    x = dom.coords
    b = x[:, 0] + 0.5 * x[:, 1] + 0.15 * np.sin(2 * np.pi * x[:, 0] * x[:, 1])
    spec = EnergySpec(2.5, b)
    rep = minimize_p_energy(dom, spec)
    assert rep.method == "lbfgs-smoothed" and rep.converged
    assert rep.energy <= rep.initial_energy
    cert = certify_minimizer(dom, spec, rep.minimizer)
    assert cert.passed
    fam = make_test_functions(dom, count=4)
    bad = certify_minimizer(dom, spec, rep.minimizer + 0.05 * fam[len(fam) - 1])
    assert not bad.passed


def test_graph_minimizer_converges():
    dom = GraphDomain.lattice((8, 8), seed=3)
    rng = np.random.default_rng(0)
    spec = EnergySpec(1.5, rng.normal(size=dom.n_sites))
    rep = minimize_p_energy(dom, spec)
    assert rep.converged
    assert certify_minimizer(dom, spec, rep.minimizer).passed


def test_minimizer_of_positive_source_is_superharmonic():
    dom = GridDomain.unit_box(13, 2, NormSpec.lp(2, 2))
    spec = EnergySpec(2, np.zeros(dom.n_sites), source=np.ones(dom.n_sites))
    g = minimize_p_energy(dom, spec).minimizer
    plain = spec.without_source()
    sup = certify_superminimizer(dom, plain, g)
    assert sup.passed and sup.mu_sign_ok
    assert not certify_subminimizer(dom, plain, g).passed
    assert not certify_minimizer(dom, plain, g).passed
    assert certify_minimizer(dom, spec, g).passed


def test_signed_test_functions_are_rejected_for_one_sided_certificates():
    dom = GridDomain.unit_box(9, 2, NormSpec.lp(2, 2))
    spec = EnergySpec(2, np.zeros(dom.n_sites))
    f = np.zeros(dom.n_sites)
    f[40] = -1.0
    with pytest.raises(ValueError):
        certify_superminimizer(dom, spec, np.zeros(dom.n_sites), testfns=[f])


@pytest.mark.parametrize("norm", [NormSpec.lp(2, 3), NormSpec.lp(2, np.inf)], ids=lambda n: n.label)
def test_pairings_match_energy_quotients(norm):
    dom = GridDomain.unit_box(9, 2, norm)
    x = dom.coords
    g = x[:, 0] + 0.3 * np.cos(2 * x[:, 1])
    spec = EnergySpec(2.5, g)
    fam = make_test_functions(dom, count=5, seed=2)
    P, M = _pairings(dom, spec, g, list(fam.bumps))
    for k, f in enumerate(fam.bumps):
        right, left = energy_perturbation_oracle(dom, spec, g, f, 1e-2 * 0.25 ** np.arange(9))
        assert np.all(np.diff(right) <= 1e-8)
        assert right[-1] == pytest.approx(P[k], abs=1e-5)
        assert left[-1] == pytest.approx(M[k], abs=1e-5)


def test_residual_zero_for_exact_solution():
    dom = _line(17)
    x = dom.coords[:, 0]
    assert first_order_residual(dom, EnergySpec(2, x), x) <= 1e-12
