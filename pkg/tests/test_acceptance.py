"""Acceptance criteria 1-9.

Each test records one line per criterion (several for the per-norm batteries)
in ``VERDICTS``; ``conftest.py`` prints them after the run. Running this file
directly (``python3 tests/test_acceptance.py``) does the same.
"""

import filecmp
import sys
from pathlib import Path

import numpy as np
import pytest

import frozen
from pharmlab.cli import run_config
from pharmlab.config import load_config
from pharmlab.dcalc import (
    ScalarMap,
    calculus_suite,
    detect_hilbertianity,
    detect_strict_convexity,
    dpm_pointwise,
    energy2,
    oracle_agreement,
)
from pharmlab.divergence import (
    check_chain_rule,
    check_leibniz,
    check_linearity_g,
    check_linearity_h,
    check_local_to_global,
    divergence_bounds,
    split_omega,
    subdifferential_witnesses,
)
from pharmlab.minimize import (
    EnergySpec,
    certify_minimizer,
    certify_subminimizer,
    certify_superminimizer,
    minimize_p_energy,
    p_energy,
)
from pharmlab.norms import NormSpec
from pharmlab.potential import (
    LineSpec,
    busemann_harmonicity_experiment,
    composition_battery,
    maximum_principle_search,
    sheaf_experiment,
    split_cover,
)
from pharmlab.spaces import GraphDomain, GridDomain, Jet, make_test_functions

VERDICTS: list[str] = []

BATTERY = [
    NormSpec.lp(2, 1.5), NormSpec.lp(2, 2.0), NormSpec.lp(2, 3.0), NormSpec.lp(2, np.inf),
    NormSpec.l1_polytope(2), NormSpec.ellipsoidal([[2.0, 0.5], [0.5, 1.0]]),
]
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def record(criterion: str, name: str, passed: bool, detail: str) -> bool:
    VERDICTS.append(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {name} ({detail})")
    return passed


def _boundary(dom):
    x = dom.coords
    return x[:, 0] + 0.5 * x[:, 1] + 0.15 * np.sin(2 * np.pi * x[:, 0] * x[:, 1])


# -- 1 -----------------------------------------------------------------------------------

def test_criterion_1_calculus_identities():
    per_norm = 170
    total, worst, failed = 0, 0.0, []
    for k, n in enumerate(BATTERY):
        reps = calculus_suite(GridDomain.unit_box(8, 2, n), per_norm, seed=k)
        total += per_norm
        worst = max(worst, max(r.max_violation for r in reps))
        failed += [f"{n.label}:{r.identity}" for r in reps if not r.passed]
    ok = record("1", "calculus identities", not failed and total >= 1000,
                f"{total} instances x 11 identities, worst {worst:.2e}, tol 1e-9, failures {failed or 'none'}")
    assert ok


# -- 2 -----------------------------------------------------------------------------------

@pytest.mark.parametrize("norm", BATTERY, ids=lambda n: n.label)
def test_criterion_2_oracle_agreement(norm):
    err, rise = oracle_agreement(norm, samples=2000, seed=7)
    ok = record("2", f"oracle agreement {norm.label}", err <= 1e-5 and rise <= 1e-9,
                f"max rel err {err:.2e} <= 1e-5, monotonicity rise {rise:.2e} <= 1e-9")
    assert ok


# -- 3 -----------------------------------------------------------------------------------

def _parallelogram(dom):
    x = dom.coords
    f, g = x[:, 0], x[:, 1]
    return abs(energy2(dom, f + g) + energy2(dom, f - g) - 2 * energy2(dom, f) - 2 * energy2(dom, g))


def test_criterion_3_classification():
    checks = []
    for n in (NormSpec.lp(2, 2.0), NormSpec.ellipsoidal([[2.0, 0.5], [0.5, 1.0]])):
        dom = GridDomain.unit_box(9, 2, n)
        h = detect_hilbertianity(dom)
        sc = detect_strict_convexity(n).strictly_convex
        checks.append(record("3", f"{n.label} Hilbertian", h.hilbertian and sc,
                             f"parallelogram defect {h.parallelogram_defect:.1e}, strictly convex {sc}"))
    for p in (1.5, 3.0):
        n = NormSpec.lp(2, p)
        dom = GridDomain.unit_box(9, 2, n)
        sc = detect_strict_convexity(n).strictly_convex
        h = detect_hilbertianity(dom)
        d = _parallelogram(dom)
        want = frozen.LP3_PARALLELOGRAM_DEFECT if p == 3.0 else None
        ok = sc and not h.hilbertian and d > 1e-3 and (want is None or abs(d - want) <= 1e-9)
        checks.append(record("3", f"lp({p:g}) strictly convex, not Hilbertian", ok,
                             f"defect {d:.6f} on f=x1, g=x2 (> 1e-3)"))
    stated_df, stated_dg = np.array([0.0, 1.0]), np.array([1.0, 0.0])
    n = NormSpec.lp(2, np.inf)
    hi, lo = dpm_pointwise(n, stated_df, stated_dg)
    sc = detect_strict_convexity(n).strictly_convex
    checks.append(record("3", "lp(inf) not strictly convex", not sc and abs(hi - lo - 2.0) <= 1e-9,
                         f"gap {hi - lo:g} at df=(0,1), dg=(1,0)"))
    # the L1 ball as primal norm: its dual is smooth at dg=(1,0); the kink sits at dg=(1,1)
    for n in (NormSpec.lp(2, 1.0), NormSpec.l1_polytope(2)):
        sc = detect_strict_convexity(n).strictly_convex
        hi0, lo0 = dpm_pointwise(n, stated_df, stated_dg)
        hi, lo = dpm_pointwise(n, np.array([1.0, -1.0]), np.array([1.0, 1.0]))
        checks.append(record("3", f"{n.label} (L1 ball) not strictly convex", not sc and abs(hi - lo - 2.0) <= 1e-9,
                             f"gap {hi - lo:g} at df=(1,-1), dg=(1,1); gap {hi0 - lo0:g} at df=(0,1), dg=(1,0)"))
    assert all(checks)


# -- 4 -----------------------------------------------------------------------------------

def _instances():
    out = []
    for n in (NormSpec.lp(2, 2.0), NormSpec.lp(2, 1.5), NormSpec.lp(2, 3.0)):
        dom = GridDomain.unit_box(13, 2, n)
        for p in (1.5, 2.0, 3.0):
            out.append((f"grid {n.label} p={p:g}", dom, EnergySpec(p, _boundary(dom))))
    rng = np.random.default_rng(11)
    graph = GraphDomain.lattice((10, 10), seed=5)
    bnd = graph.coords[:, 0] + 0.5 * graph.coords[:, 1] + 0.3 * rng.normal(size=graph.n_sites)
    for p in (1.5, 2.0, 3.0):
        out.append((f"graph p={p:g}", graph, EnergySpec(p, bnd)))
    return out


def test_criterion_4_minimizer_equivalence():
    rows = []
    for name, dom, spec in _instances():
        g = minimize_p_energy(dom, spec).minimizer
        E = p_energy(dom, spec, g)
        forward = certify_minimizer(dom, spec, g)
        fam = make_test_functions(dom, count=20, seed=3)
        rng = np.random.default_rng(5)
        amp = 0.02 * float(np.ptp(g))
        # reverse direction: every perturbation fails and indeed has higher energy
        rejected, energy_up, min_rise = 0, 0, np.inf
        for phi in fam.bumps:
            pert = g + amp * rng.choice([-1.0, 1.0]) * phi / np.max(np.abs(phi))
            rejected += not certify_minimizer(dom, spec, pert, testfns=fam).passed
            rise = p_energy(dom, spec, pert) - E
            energy_up += rise > 0
            min_rise = min(min_rise, rise)
        rows.append((name, forward.passed, forward.margin / forward.tol, rejected, energy_up, min_rise))
    bad = [r[0] for r in rows if not (r[1] and r[3] == 20 and r[4] == 20)]
    worst = max(r[2] for r in rows)
    ok = record("4", "minimizer certificate equivalence", len(rows) == 12 and not bad,
                f"{len(rows)} instances, solver output certified (worst margin/tol {worst:.2f}), "
                f"20/20 perturbations rejected with higher energy, failures {bad or 'none'}")
    assert ok


# -- 5 -----------------------------------------------------------------------------------

def test_criterion_5_super_and_sub():
    checks = []
    for n in (NormSpec.lp(2, 2.0), NormSpec.lp(2, 3.0)):
        dom = GridDomain.unit_box(13, 2, n)
        solved = minimize_p_energy(dom, EnergySpec(2, np.zeros(dom.n_sites), source=np.ones(dom.n_sites)))
        g = solved.minimizer
        spec = EnergySpec(2, g)
        sup, sub = certify_superminimizer(dom, spec, g), certify_subminimizer(dom, spec, g)
        checks.append(record("5", f"{n.label} laplace g = -1 is super, not sub",
                             sup.passed and not sub.passed and sup.mu_sign_ok is True,
                             f"super margin {sup.margin:.1e}, sub margin {sub.margin:.1e}, "
                             f"max positive mu density {sup.mu_extreme:.1e} (tol 1e-7)"))
        dom2 = GridDomain.centered_box(13, 2, 1.0, n)
        k = np.maximum(dom2.coords[:, 0], 0.0)
        spec2 = EnergySpec(2, k)
        sub2, sup2 = certify_subminimizer(dom2, spec2, k), certify_superminimizer(dom2, spec2, k)
        checks.append(record("5", f"{n.label} max(x1,0) is sub, not super",
                             sub2.passed and not sup2.passed and sub2.mu_sign_ok is True,
                             f"sub margin {sub2.margin:.1e}, super margin {sup2.margin:.1e}, "
                             f"max negative mu density {sub2.mu_extreme:.1e} (tol 1e-7)"))
    assert all(checks)


# -- 6 -----------------------------------------------------------------------------------

def _centre_hat(dom):
    fam = make_test_functions(dom, count=0)
    centre = np.argmin(np.sum((dom.coords - 0.5) ** 2, axis=1))
    return fam[int(np.flatnonzero(fam.hat_sites == centre)[0])]


def test_criterion_6_multivaluedness():
    checks = []
    for n, expect_width in ((NormSpec.lp(2, np.inf), True), (NormSpec.lp(2, 2.0), False)):
        dom = GridDomain.unit_box(9, 2, n)
        g = dom.coords[:, 0]
        h = np.ones(dom.n_sites)
        hat = _centre_hat(dom)
        iv = divergence_bounds(dom, h, g, hat)
        up, down = subdifferential_witnesses(dom, h, g, [hat, -hat])
        spread = up.pair(hat) - down.pair(hat)
        if expect_width:
            ok = iv.width > 0 and abs(spread - iv.width) <= 1e-7
            detail = f"pairing spread {spread:.10f} vs bounds width {iv.width:.10f}"
        else:
            diff = float(np.max(np.abs(up.density - down.density)))
            ok = diff <= 1e-8 and iv.width <= 1e-12
            detail = f"two witnesses differ by {diff:.1e} (<= 1e-8), width {iv.width:.1e}"
        checks.append(record("6", f"{n.label} g = x1 witnesses", ok, detail))
    assert all(checks)


# -- 7 -----------------------------------------------------------------------------------

def test_criterion_7_divergence_calculus():
    checks = []
    for n in (NormSpec.lp(2, 2.0), NormSpec.lp(2, 3.0)):
        dom = GridDomain.unit_box(17, 2, n)
        x = dom.coords
        hilbertian = n.label == "lp(2)"
        if hilbertian:
            g, h1, h2 = 0.5 * x[:, 0] + 0.25 * x[:, 1], 1 + x[:, 0] + 0.5 * x[:, 1] ** 2, np.full(dom.n_sites, 2.0)
        else:
            g, h1, h2 = x[:, 1] + 0.3 * x[:, 1] ** 2, 1 + 0.5 * x[:, 0], 1 + 0.3 * np.cos(x[:, 1])
        jet = Jet(np.sin(x[:, 0]) + x[:, 1] ** 2, np.stack([np.cos(x[:, 0]), 2 * x[:, 1]], 1))
        g1, g2 = np.sin(2 * x[:, 0]) + x[:, 1], x[:, 0] * x[:, 1]
        h = 1 + 0.2 * x[:, 0]
        reps = [check_chain_rule(dom, h, jet, ScalarMap.tanh(1.5)), check_leibniz(dom, h1, h2, g),
                check_linearity_h(dom, h1, h2, g), check_linearity_g(dom, h, g1, g2, hilbertian=hilbertian),
                check_local_to_global(dom, h, g1, split_omega(dom))]
        for r in reps:
            checks.append(record("7", f"{n.label} {r.rule}", r.passed,
                                 f"gap {r.max_gap:.1e} <= 1e-7 x scale {r.scale:.2f}"))
    assert all(checks)


# -- 8 -----------------------------------------------------------------------------------

def test_criterion_8_sheaf():
    dom = GridDomain.unit_box(15, 2, NormSpec.lp(2, 3.0))
    g = minimize_p_energy(dom, EnergySpec(2, _boundary(dom))).minimizer
    cover = split_cover(dom, overlap=2)
    good = sheaf_experiment(dom, EnergySpec(2, g), cover, g)
    x = dom.coords
    bad_g = g + np.maximum(0.0, 0.01 - ((x[:, 0] - 0.9) ** 2 + (x[:, 1] - 0.5) ** 2))
    bad = sheaf_experiment(dom, EnergySpec(2, bad_g), cover, bad_g)
    ok = (good.global_pass and all(good.local_pass) and good.passed
          and not bad.global_pass and not all(bad.local_pass) and bad.passed)
    assert record("8", "sheaf PASS/FAIL pair", ok,
                  f"minimizer global {good.global_pass} local {good.local_pass}; "
                  f"perturbed global {bad.global_pass} local {bad.local_pass}; glue mismatch {good.glue_mismatch:.1e}")


def test_criterion_8_composition():
    verdicts = composition_battery()
    cases = sorted({v.case for v in verdicts})
    ok = len(verdicts) == 32 and all(v.passed for v in verdicts) and cases == ["i", "ii", "iii", "iv"]
    worst = max(v.margin / v.tol for v in verdicts)
    assert record("8", "composition battery", ok,
                  f"{len(verdicts)} instances over cases {','.join(cases)}, worst margin/tol {worst:.2f}")


def test_criterion_8_maximum_principle():
    doms = [GridDomain.unit_box(13, 2, NormSpec.lp(2, 2.0)),
            GridDomain.unit_box(13, 2, NormSpec.lp(2, 3.0)),
            GridDomain.unit_box(11, 2, NormSpec.weighted_lp(2.0, [1.0, 2.5])),
            GraphDomain.lattice((10, 10), seed=3)]
    rep = maximum_principle_search(doms, count=12)
    assert record("8", "strong maximum principle search", rep.passed,
                  f"{rep.n_candidates} candidates, {rep.n_premise} certified super, "
                  f"{rep.n_interior_min} with interior minimum, counterexamples {rep.counterexamples or 'none'}")


def test_criterion_8_busemann():
    dom = GridDomain.centered_box(17, 2, 1.0, NormSpec.lp(2, 2.0))
    euc = busemann_harmonicity_experiment(dom, LineSpec.through(dom.norm, [0.0, 0.0], [0.6, 0.8]))
    ok_e = euc.sum_sup <= 1e-7 and all(euc.certified)
    a = record("8", "Busemann Euclidean", ok_e, f"sup |b+ + b-| {euc.sum_sup:.1e}, certified {euc.certified}")
    dom1 = GridDomain.centered_box(17, 2, 1.0, NormSpec.lp(2, 1.0))
    l1 = busemann_harmonicity_experiment(dom1, LineSpec.through(dom1.norm, [0.0, 0.0], [1.0, 0.0]),
                                         closed_form_sum=lambda x: 2 * np.abs(x[:, 1]))
    b = record("8", "Busemann L1 plane", l1.closed_form_gap <= 1e-7,
               f"max |b+ + b- - 2|x2|| = {l1.closed_form_gap:.1e}")
    assert a and b


# -- 9 -----------------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path, monkeypatch):
    roots = [tmp_path / "a", tmp_path / "b"]
    names = sorted(p for p in CONFIGS.glob("*.cfg") if not p.name.startswith("invalid"))
    for root in roots:
        monkeypatch.setenv("PHARMLAB_OUTPUT_ROOT", str(root))
        for cfg in names:
            run_config(load_config(cfg))
    files = sorted(p.relative_to(roots[0]) for p in roots[0].rglob("*") if p.is_file())
    same = [f for f in files if filecmp.cmp(roots[0] / f, roots[1] / f, shallow=False)]
    csvs = [f for f in files if f.suffix == ".csv"]
    ok = len(same) == len(files) and len(csvs) > 0
    assert record("9", "determinism", ok,
                  f"{len(names)} configs run twice, {len(same)}/{len(files)} files byte-identical ({len(csvs)} CSV)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
