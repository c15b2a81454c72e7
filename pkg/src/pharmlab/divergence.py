"""Distributional divergence div(h grad g) on finite models.

For a test function f supported in the strict interior of omega put

    A(f) = sum D^{sign h} f(grad g) h m,    B(f) = sum D^{-sign h} f(grad g) h m.

A signed measure mu belongs to div(h grad g) when ``-A(f) <= mu(f) <= -B(f)``
for every test function. ``A`` is sublinear and ``-B(f) = A(-f)``, so the
admissible set is the subdifferential at 0 of ``f -> A(-f)``, a convex set of
functionals on the strict interior. It is a single point when the gradient
set of g is single valued wherever ``h`` and ``f`` see it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .dcalc import _graph_pairing_coefficients, detect_strict_convexity, dpm_field
from .norms import gradient_set, gradient_support
from .spaces import (
    Domain,
    GraphDomain,
    GridDomain,
    Jet,
    TestFamily,
    as_covectors,
    check_field,
    make_test_functions,
    modulus,
    strict_interior,
)

MEMBERSHIP_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    """Density with respect to the site measure; ``mass = density * m``."""

    density: np.ndarray
    measure: np.ndarray
    support: np.ndarray | None = None

    @property
    def mass(self) -> np.ndarray:
        return self.density * self.measure

    def pair(self, f) -> float:
        return float(np.dot(np.asarray(f, dtype=float), self.mass))

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.mass))

    def __add__(self, other: "SignedMeasure") -> "SignedMeasure":
        return SignedMeasure(self.density + other.density, self.measure, self.support)

    def scale(self, t: float) -> "SignedMeasure":
        return SignedMeasure(t * self.density, self.measure, self.support)


@dataclass(frozen=True)
class DivergenceInterval:
    """Admissible range ``[lo, hi] = [-A(f), -B(f)]`` of mu(f) for one test function."""

    testfn: int
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class MembershipReport:
    member: bool
    worst_violation: float
    worst_test: int
    n_tests: int
    sufficient: bool
    note: str = ""


def _weight(dom: Domain, h) -> np.ndarray:
    return check_field(dom, h, "h") * dom.measure


def _check_support(dom: Domain, f, omega=None) -> np.ndarray:
    f = check_field(dom, f, "test function")
    S = strict_interior(dom, omega)
    if np.any(f[~S] != 0):
        raise ValueError("test function support leaves the strict interior of omega")
    return f


def pairing_bounds(dom: Domain, h, g, f, omega=None) -> tuple[float, float]:
    """``(A(f), B(f))`` for one test function, with ``A >= B``."""
    f = _check_support(dom, f, omega)
    d = dpm_field(dom, f, g)
    hm = _weight(dom, h)
    a, b = hm * d.plus, hm * d.minus
    return float(np.sum(np.maximum(a, b))), float(np.sum(np.minimum(a, b)))


def divergence_bounds(dom: Domain, h, g, f, omega=None, testfn: int = -1) -> DivergenceInterval:
    """The interval ``[-A(f), -B(f)]`` that mu(f) must lie in."""
    A, B = pairing_bounds(dom, h, g, f, omega)
    return DivergenceInterval(testfn, -A, -B)


def _axis_supports(dom: GridDomain, g) -> tuple[np.ndarray, np.ndarray]:
    """Per-site max and min of each coordinate over the gradient set of g."""
    dg = as_covectors(dom, g)
    n, d = dom.n_sites, dom.dim
    wmax, wmin = np.zeros((n, d)), np.zeros((n, d))
    for i in range(d):
        e = np.zeros((n, d))
        e[:, i] = 1.0
        wmax[:, i], wmin[:, i] = gradient_support(dom.norm, dg, e)
    return wmax, wmin


def hat_pairings(dom: Domain, h, g, omega=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(sites, A(hat), B(hat))`` for the hat at every strict-interior site.

    Uses the stencil structure: the differential of a hat at an interior site
    is nonzero along a single axis at each neighbouring site.
    """
    S = strict_interior(dom, omega)
    sites = np.flatnonzero(S)
    hm = _weight(dom, h)
    n = dom.n_sites
    if isinstance(dom, GridDomain):
        wmax, wmin = _axis_supports(dom, g)
        A = np.zeros(n)
        B = np.zeros(n)
        for i, op in enumerate(dom.diff_ops):
            coo = op.tocoo()
            y, x, c = coo.row, coo.col, coo.data
            plus = np.where(c > 0, c * wmax[y, i], c * wmin[y, i])
            minus = np.where(c > 0, c * wmin[y, i], c * wmax[y, i])
            a, b = hm[y] * plus, hm[y] * minus
            A += np.bincount(x, np.maximum(a, b), minlength=n)
            B += np.bincount(x, np.minimum(a, b), minlength=n)
        return sites, A[sites], B[sites]
    k, _ = _graph_pairing_coefficients(dom, g)
    src, dst, _ = dom.edges
    own = -hm * np.bincount(src, k, minlength=n)
    other = np.bincount(dst, hm[src] * k, minlength=n)
    A = own + other
    return sites, A[sites], A[sites].copy()


def _family(dom: Domain, omega, testfns, count: int = 32, seed: int = 0) -> TestFamily:
    if testfns is None:
        return make_test_functions(dom, omega, count=count, seed=seed)
    return testfns


def _bump_list(family) -> tuple[np.ndarray | None, list]:
    """Split a family into hat sites (if it is a TestFamily) and explicit fields."""
    if isinstance(family, TestFamily):
        return family.hat_sites, list(family.bumps)
    return None, list(family)


def membership(dom: Domain, mu: SignedMeasure, h, g, testfns=None, omega=None,
               tol: float = MEMBERSHIP_TOL) -> MembershipReport:
    """Check ``-A(f) <= mu(f) <= -B(f) + tol`` on every supplied test function.

    Exact on the hat basis when the gradient of g is single valued; otherwise a
    necessary condition only, since the admissible set is cut by infinitely
    many test functions.
    """
    family = _family(dom, omega, testfns)
    hats, fields = _bump_list(family)
    viol, where = [], []
    if hats is not None and hats.size:
        sites, A, B = hat_pairings(dom, h, g, omega)
        pos = {s: j for j, s in enumerate(sites)}
        idx = np.array([pos[s] for s in hats])
        L = mu.mass[hats]
        v = np.maximum(-A[idx] - L, L + B[idx])
        viol.append(v)
        where.append(np.arange(hats.size))
    offset = 0 if hats is None else hats.size
    if fields:
        v = []
        for f in fields:
            A, B = pairing_bounds(dom, h, g, f, omega)
            L = mu.pair(f)
            v.append(max(-A - L, L + B))
        viol.append(np.array(v))
        where.append(offset + np.arange(len(fields)))
    viol = np.concatenate(viol) if viol else np.zeros(0)
    where = np.concatenate(where) if where else np.zeros(0, int)
    k = int(np.argmax(viol)) if viol.size else -1
    worst = float(viol[k]) if viol.size else 0.0
    single = _single_valued(dom)
    note = "" if single else "multivalued gradient: a passing check is necessary, not sufficient"
    return MembershipReport(worst <= tol, worst, int(where[k]) if k >= 0 else -1, int(viol.size), single, note)


def _single_valued(dom: Domain) -> bool:
    if isinstance(dom, GraphDomain):
        return True
    cache = dom.norm._cache
    if "strictly_convex" not in cache:
        cache["strictly_convex"] = detect_strict_convexity(dom.norm).strictly_convex
    return cache["strictly_convex"]


def extract_divergence(dom: Domain, h, g, omega=None, check: bool = True) -> SignedMeasure:
    """The unique element of div(h grad g) on a strictly convex model.

    The mass at a strict-interior site is ``-A(hat)``; other sites carry zero.

    Raises
    ------
    ValueError
        If the model norm is not strictly convex (the set is not a singleton).
    RuntimeError
        If the extracted measure fails the membership check.
    """
    if not _single_valued(dom):
        raise ValueError("divergence is not unique on a norm that is not strictly convex; "
                         "use subdifferential_witnesses")
    sites, A, _ = hat_pairings(dom, h, g, omega)
    dens = np.zeros(dom.n_sites)
    dens[sites] = -A / dom.measure[sites]
    support = np.zeros(dom.n_sites, bool)
    support[sites] = True
    mu = SignedMeasure(dens, dom.measure, support)
    if check:
        rep = membership(dom, mu, h, g, omega=omega, tol=MEMBERSHIP_TOL * max(1.0, float(np.max(np.abs(A), initial=0.0))))
        if not rep.member:
            raise RuntimeError(f"extracted measure violates its own bounds by {rep.worst_violation:.3e}")
    return mu


def selection_witness(dom: GridDomain, h, g, direction, omega=None) -> SignedMeasure:
    """Element of div(h grad g) maximizing mu(direction), built from a pointwise selection.

    Every selection w(y) in the gradient set of g gives the member
    ``f -> -sum <Df, w> h m``. Choosing at each site the extreme point that
    minimizes ``h <D direction, w>`` attains the maximum ``-B(direction)``.
    """
    f = _check_support(dom, direction, omega)
    dg = as_covectors(dom, g)
    df = as_covectors(dom, f)
    hv = check_field(dom, h, "h")
    S = strict_interior(dom, omega)
    sites = np.flatnonzero(S)
    W = np.zeros_like(dg)
    for y in range(dom.n_sites):
        if not np.any(dg[y]):
            continue
        pts = np.atleast_2d(gradient_set(dom.norm, dg[y]).points)
        vals = hv[y] * (pts @ df[y])
        W[y] = pts[int(np.argmin(vals))]
    flux = W * (hv * dom.measure)[:, None]
    mass = -sum(op.T @ flux[:, i] for i, op in enumerate(dom.diff_ops))
    dens = np.zeros(dom.n_sites)
    dens[sites] = mass[sites] / dom.measure[sites]
    support = np.zeros(dom.n_sites, bool)
    support[sites] = True
    return SignedMeasure(dens, dom.measure, support)


def subdifferential_witnesses(dom: Domain, h, g, directions, omega=None, testfns=None) -> list[SignedMeasure]:
    """One admissible measure per direction, maximizing its pairing with that direction.

    Solves a linear program over the hat masses with the hat bounds, the
    bump bounds and the bounds of every direction as constraints.

    Raises
    ------
    RuntimeError
        If the linear program is infeasible, which the existence of the
        divergence rules out.
    """
    family = _family(dom, omega, testfns)
    sites, A, B = hat_pairings(dom, h, g, omega)
    hats, fields = _bump_list(family)
    directions = [_check_support(dom, f, omega) for f in directions]
    rows, lo, hi, size = [], [], [], []
    weight = np.abs(_weight(dom, h)) * modulus(dom, g)
    for f in fields + directions:
        a, b = pairing_bounds(dom, h, g, f, omega)
        rows.append(f[sites])
        lo.append(-a)
        hi.append(-b)
        size.append(float(np.sum(weight * modulus(dom, f))))
    scale = float(np.max(np.abs(np.r_[A, B, lo, hi, size]), initial=0.0))
    if scale == 0.0:
        zero = SignedMeasure(np.zeros(dom.n_sites), dom.measure, strict_interior(dom, omega))
        return [zero for _ in directions]
    bounds = list(zip(-A / scale, -B / scale))
    M = np.array(rows) if rows else np.zeros((0, sites.size))
    A_ub = np.vstack([M, -M]) if rows else None
    # each row's bounds are sums of rounded terms of size |h| m |Dg| |Df|
    slack = 1e-10 * np.array(size) / scale
    b_ub = np.r_[np.array(hi) / scale + slack, -np.array(lo) / scale + slack] if rows else None
    out = []
    for f in directions:
        res = linprog(-f[sites], A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs-ds",
                      options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
        if res.status != 0:
            raise RuntimeError(f"witness linear program failed: {res.message}")
        dens = np.zeros(dom.n_sites)
        dens[sites] = res.x * scale / dom.measure[sites]
        support = np.zeros(dom.n_sites, bool)
        support[sites] = True
        out.append(SignedMeasure(dens, dom.measure, support))
    return out


# -- calculus rules ----------------------------------------------------------------

@dataclass
class RuleReport:
    rule: str
    max_gap: float
    scale: float
    tol: float
    note: str = ""
    columns: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return self.max_gap <= self.tol * self.scale

    def row(self) -> dict:
        return {"rule": self.rule, "max_gap": self.max_gap, "scale": self.scale,
                "tol": self.tol, "passed": self.passed, "note": self.note}


RULE_TOL = 1e-7


def _density_gap(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    gap = float(np.max(np.abs(a - b)[mask], initial=0.0))
    scale = max(1.0, float(np.max(np.abs(a[mask]), initial=0.0)), float(np.max(np.abs(b[mask]), initial=0.0)))
    return gap, scale


def check_chain_rule(dom: Domain, h, g, phi, omega=None, testfns=None) -> RuleReport:
    """div(h grad(phi o g)) against div(h phi'(g) grad g).

    ``g`` is taken as a Jet so the differential of ``phi o g`` is exact. On
    multivalued models both sides are compared as intervals on every test
    function; on strictly convex ones also as densities.
    """
    if isinstance(dom, GraphDomain):
        raise TypeError("the exact chain rule needs analytic differentials (grid model)")
    G = g if isinstance(g, Jet) else Jet(check_field(dom, g), as_covectors(dom, g))
    left_g = G.compose(phi)
    hv = check_field(dom, h, "h")
    right_h = hv * phi.derivative(G.values)
    s1, A1, B1 = hat_pairings(dom, hv, left_g, omega)
    s2, A2, B2 = hat_pairings(dom, right_h, G, omega)
    gaps = [np.abs(A1 - A2), np.abs(B1 - B2)]
    _, fields = _bump_list(_family(dom, omega, testfns))
    for f in fields:
        a1, b1 = pairing_bounds(dom, hv, left_g, f, omega)
        a2, b2 = pairing_bounds(dom, right_h, G, f, omega)
        gaps.append(np.array([abs(a1 - a2), abs(b1 - b2)]))
    gap = float(max(np.max(x, initial=0.0) for x in gaps))
    scale = max(1.0, float(np.max(np.abs(np.r_[A1, B1]), initial=0.0)))
    note = "intervals"
    if _single_valued(dom):
        m1 = extract_divergence(dom, hv, left_g, omega)
        m2 = extract_divergence(dom, right_h, G, omega)
        dgap, dscale = _density_gap(m1.density, m2.density, m1.support)
        gap, scale, note = max(gap / scale, dgap / dscale), 1.0, "intervals and densities"
    else:
        gap, scale = gap / scale, 1.0
    return RuleReport("chain-rule", gap, scale, RULE_TOL, f"phi={getattr(phi, 'name', 'phi')} {note}")


def check_leibniz(dom: Domain, h1, h2, g, omega=None) -> RuleReport:
    """div(h1 h2 grad g) against ``D h1(grad g) h2 m + h1 div(h2 grad g)``."""
    mu = extract_divergence(dom, h2, g, omega)
    d = dpm_field(dom, h1, g).plus
    h1v, h2v = check_field(dom, h1, "h1"), check_field(dom, h2, "h2")
    tilde = d * h2v + h1v * mu.density
    direct = extract_divergence(dom, h1v * h2v, g, omega)
    gap, scale = _density_gap(direct.density, tilde, mu.support)
    return RuleReport("leibniz", gap, scale, RULE_TOL, columns={"direct": direct.density, "formula": tilde})


def check_linearity_h(dom: Domain, h1, h2, g, alpha: float = 0.7, beta: float = -1.3, omega=None) -> RuleReport:
    a = extract_divergence(dom, h1, g, omega)
    b = extract_divergence(dom, h2, g, omega)
    c = extract_divergence(dom, alpha * check_field(dom, h1) + beta * check_field(dom, h2), g, omega)
    gap, scale = _density_gap(c.density, alpha * a.density + beta * b.density, a.support)
    return RuleReport("linearity-h", gap, scale, RULE_TOL, f"alpha={alpha:g} beta={beta:g}")


def _lin_g(dom: Domain, g1, g2, b1: float, b2: float):
    if isinstance(g1, Jet) or isinstance(g2, Jet):
        J1 = g1 if isinstance(g1, Jet) else Jet(check_field(dom, g1), as_covectors(dom, g1))
        J2 = g2 if isinstance(g2, Jet) else Jet(check_field(dom, g2), as_covectors(dom, g2))
        return J1.scale(b1) + J2.scale(b2)
    return b1 * check_field(dom, g1) + b2 * check_field(dom, g2)


def check_linearity_g(dom: Domain, h, g1, g2, beta1: float = 0.6, beta2: float = 1.7,
                      omega=None, hilbertian: bool = True) -> RuleReport:
    """Linearity in g on Hilbertian models; positive 1-homogeneity in g otherwise."""
    m1 = extract_divergence(dom, h, g1, omega)
    if hilbertian:
        m2 = extract_divergence(dom, h, g2, omega)
        c = extract_divergence(dom, h, _lin_g(dom, g1, g2, beta1, beta2), omega)
        gap, scale = _density_gap(c.density, beta1 * m1.density + beta2 * m2.density, m1.support)
        return RuleReport("linearity-g", gap, scale, RULE_TOL, f"beta=({beta1:g},{beta2:g})")
    t = abs(beta2)
    c = extract_divergence(dom, h, _lin_g(dom, g1, g1, t, 0.0), omega)
    gap, scale = _density_gap(c.density, t * m1.density, m1.support)
    return RuleReport("homogeneity-g", gap, scale, RULE_TOL, f"t={t:g} (not Hilbertian)")


def check_gradient_leibniz(dom: Domain, h, g1, g2, omega=None) -> RuleReport:
    """div(h grad(g1 g2)) against div(h g1 grad g2) + div(h g2 grad g1), Hilbertian models."""
    J1 = g1 if isinstance(g1, Jet) else Jet(check_field(dom, g1), as_covectors(dom, g1))
    J2 = g2 if isinstance(g2, Jet) else Jet(check_field(dom, g2), as_covectors(dom, g2))
    hv = check_field(dom, h)
    whole = extract_divergence(dom, hv, J1 * J2, omega)
    a = extract_divergence(dom, hv * J1.values, J2, omega)
    b = extract_divergence(dom, hv * J2.values, J1, omega)
    gap, scale = _density_gap(whole.density, a.density + b.density, whole.support)
    return RuleReport("leibniz-gradients", gap, scale, RULE_TOL)


def split_omega(dom: GridDomain, omega=None, axis: int = 0, overlap: int = 3) -> list[np.ndarray]:
    """Two halves of omega along an axis, overlapping by ``overlap`` layers each side of the middle."""
    om = dom.omega if omega is None else np.asarray(omega, bool)
    idx = dom.index[:, axis]
    sel = idx[om]
    mid = (sel.min() + sel.max()) // 2
    return [om & (idx <= mid + overlap), om & (idx >= mid - overlap)]


def check_local_to_global(dom: Domain, h, g, parts: list[np.ndarray], omega=None) -> RuleReport:
    """Glue the divergences of overlapping parts and compare with the whole.

    Checks that the parts agree where their strict interiors overlap and that
    the glued measure is the divergence on omega.
    """
    whole = extract_divergence(dom, h, g, omega)
    locals_ = [extract_divergence(dom, h, g, P) for P in parts]
    cover = np.zeros(dom.n_sites, bool)
    glued = np.zeros(dom.n_sites)
    overlap_gap = 0.0
    for mu in locals_:
        seen = cover & mu.support
        if np.any(seen):
            overlap_gap = max(overlap_gap, float(np.max(np.abs(glued[seen] - mu.density[seen]))))
        glued = np.where(mu.support & ~cover, mu.density, glued)
        cover |= mu.support
    missing = whole.support & ~cover
    if np.any(missing):
        raise ValueError("the parts do not cover the strict interior of omega")
    gap, scale = _density_gap(whole.density, glued, whole.support)
    return RuleReport("local-to-global", max(gap, overlap_gap), scale, RULE_TOL,
                      f"overlap disagreement {overlap_gap:.3e}")


def local_to_global_experiment(dom: GridDomain, h, g, direction, parts: list[np.ndarray], omega=None) -> dict:
    """Glue interval witnesses of the parts on a multivalued model and test membership on omega.

    Nothing is asserted: the statement is open without strict convexity. The
    returned record holds the membership violation of the glued measure.
    """
    glued = np.zeros(dom.n_sites)
    cover = np.zeros(dom.n_sites, bool)
    widths = []
    for P in parts:
        S = strict_interior(dom, P)
        f = np.where(S, direction, 0.0)
        mu = selection_witness(dom, h, g, f, P)
        glued = np.where(mu.support & ~cover, mu.density, glued)
        cover |= mu.support
        iv = divergence_bounds(dom, h, g, f, P)
        widths.append(iv.width)
    rep = membership(dom, SignedMeasure(glued, dom.measure, cover), h, g, omega=omega)
    return {"glued_violation": rep.worst_violation, "member_on_family": rep.member,
            "part_widths": widths, "n_tests": rep.n_tests}


def verify_divergence_calculus(dom: Domain, h, h1, h2, g, g1, g2, phi, omega=None) -> list[RuleReport]:
    """Chain rule, Leibniz, linearity in h and g and local-to-global on one model.

    The chain rule runs on every norm; the other rules need a strictly convex
    model and are skipped otherwise. Linearity in g is replaced by positive
    homogeneity when the model is not Hilbertian.
    """
    from .dcalc import detect_hilbertianity

    out = [check_chain_rule(dom, h, g, phi, omega)]
    if not _single_valued(dom):
        return out
    hilb = detect_hilbertianity(dom).hilbertian
    out.append(check_leibniz(dom, h1, h2, g, omega))
    out.append(check_linearity_h(dom, h1, h2, g, omega=omega))
    out.append(check_linearity_g(dom, h, g1, g2, omega=omega, hilbertian=hilb))
    if hilb:
        out.append(check_gradient_leibniz(dom, h, g1, g2, omega))
    if isinstance(dom, GridDomain):
        out.append(check_local_to_global(dom, h, g, split_omega(dom, omega), omega))
    return out
