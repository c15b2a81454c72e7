"""Potential-theoretic experiments on finite models.

Sheaf behaviour of minimizers, composition of sub/superminimizers with
monotone convex maps, the strong minimum principle, Busemann functions of
straight lines and a Poincare-ratio diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dcalc import ScalarMap, detect_hilbertianity, detect_strict_convexity
from .divergence import extract_divergence
from .minimize import (
    EnergySpec,
    certify_minimizer,
    certify_subminimizer,
    certify_superminimizer,
    weight_field,
)
from .norms import NormSpec, eval_norm
from .spaces import (
    Domain,
    GraphDomain,
    GridDomain,
    check_field,
    modulus,
    resolve_omega,
    strict_interior,
)

BUSEMANN_TAIL_TOL = 1e-9
DEFAULT_T_MAX = 1e10


# -- sheaf property -----------------------------------------------------------------


@dataclass
class SheafReport:
    """Global and local certificates plus the glued divergence."""

    global_pass: bool
    local_pass: list
    glue_mismatch: float
    glued_residual: float
    scale: float
    forward_ok: bool
    reverse_ok: bool
    margins: dict = field(default_factory=dict)

    @property
    def glue_ok(self) -> bool:
        return self.glue_mismatch <= 1e-7 * self.scale

    @property
    def passed(self) -> bool:
        return self.forward_ok and self.reverse_ok and self.glue_ok

    def row(self) -> dict:
        return {
            "global": self.global_pass,
            "local": ";".join(str(b) for b in self.local_pass),
            "glue_mismatch": self.glue_mismatch,
            "glued_residual": self.glued_residual,
            "passed": self.passed,
        }


def _require_single_valued(dom: Domain) -> None:
    if isinstance(dom, GridDomain) and not detect_strict_convexity(dom.norm).strictly_convex:
        raise ValueError("the sheaf experiment needs a strictly convex norm")


def sheaf_experiment(dom: Domain, spec: EnergySpec, omegas, g) -> SheafReport:
    """Compare minimality of ``g`` on ``Omega`` with minimality on each part of a cover.

    Parameters
    ----------
    dom : Domain
    spec : EnergySpec
        Exponent, source and the set ``Omega`` (``spec.omega`` or ``dom.omega``).
    omegas : list of bool arrays
        Cover of ``Omega``. Every strict-interior site of ``Omega`` must be a
        strict-interior site of some part, otherwise gluing is undefined.
    g : array

    Returns
    -------
    SheafReport
        ``forward_ok`` says global PASS implies every local PASS,
        ``reverse_ok`` says all local PASS implies global PASS. The local
        divergences of ``|Dg|^(p-2) grad g`` are glued and compared on overlaps.
    """
    _require_single_valued(dom)
    g = check_field(dom, g, "g")
    om = resolve_omega(dom, spec.omega)
    parts = [np.asarray(w, bool).reshape(-1) for w in omegas]
    if not parts:
        raise ValueError("empty cover")
    union = np.zeros_like(om)
    for w in parts:
        if np.any(w & ~om):
            raise ValueError("cover parts must lie inside omega")
        union |= w
    if np.any(union != om):
        raise ValueError("the parts do not cover omega")
    core = strict_interior(dom, om)
    covered = np.zeros_like(om)
    for w in parts:
        covered |= strict_interior(dom, w)
    if np.any(core & ~covered):
        raise ValueError("non-overlapping cover: seam sites belong to no part's interior")

    base = EnergySpec(spec.p, g, om, spec.source)
    glob = certify_minimizer(dom, base, g)
    locs = [certify_minimizer(dom, base.with_omega(w), g) for w in parts]

    w_field = weight_field(dom, g, spec.p)
    glued = np.full(dom.n_sites, np.nan)
    mismatch = 0.0
    for w in parts:
        mu = extract_divergence(dom, w_field, g, w, check=False)
        s = mu.support
        seen = s & ~np.isnan(glued)
        if np.any(seen):
            mismatch = max(mismatch, float(np.max(np.abs(glued[seen] - mu.density[seen]))))
        glued[s] = mu.density[s]
    src = np.zeros(dom.n_sites) if spec.source is None else spec.source
    residual = float(np.max(np.abs(glued[core] + src[core]), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(glued[core]), initial=0.0)))
    all_local = all(v.passed for v in locs)
    return SheafReport(
        global_pass=glob.passed,
        local_pass=[v.passed for v in locs],
        glue_mismatch=mismatch,
        glued_residual=residual,
        scale=scale,
        forward_ok=(not glob.passed) or all_local,
        reverse_ok=(not all_local) or glob.passed,
        margins={"global": glob.margin, "local": [v.margin for v in locs], "tol": glob.tol},
    )


# -- composition ----------------------------------------------------------------------

CASES = {
    # case: (premise, convex?, nondecreasing?, conclusion)
    "i": ("super", True, False, "sub"),
    "ii": ("super", False, True, "super"),
    "iii": ("sub", True, True, "sub"),
    "iv": ("sub", False, False, "super"),
}


@dataclass
class CompositionVerdict:
    case: str
    phi: str
    premise_margin: float
    passed: bool
    margin: float
    tol: float

    def row(self) -> dict:
        return {"case": self.case, "phi": self.phi, "premise_margin": self.premise_margin,
                "margin": self.margin, "tol": self.tol, "passed": self.passed}


def check_shape(phi: ScalarMap, lo: float, hi: float, convex: bool, nondecreasing: bool,
                samples: int = 2001) -> None:
    """Reject ``phi`` if sampled values on ``[lo, hi]`` contradict the declared shape."""
    if hi <= lo:
        hi = lo + 1.0
    t = np.linspace(lo, hi, samples)
    v = phi(t)
    d = phi.derivative(t)
    scale = 1.0 + float(np.max(np.abs(v)))
    tol = 1e-12 * scale
    sgn = 1.0 if nondecreasing else -1.0
    if np.any(sgn * np.diff(v) < -tol) or np.any(sgn * d < -1e-12 * (1.0 + np.max(np.abs(d)))):
        raise ValueError(f"{phi.name} is not {'nondecreasing' if nondecreasing else 'nonincreasing'} on the range of g")
    second = v[:-2] - 2 * v[1:-1] + v[2:]
    csgn = 1.0 if convex else -1.0
    if np.any(csgn * second < -4 * tol):
        raise ValueError(f"{phi.name} is not {'convex' if convex else 'concave'} on the range of g")


def compose_experiment(dom: Domain, spec: EnergySpec, g, phi: ScalarMap, case: str) -> CompositionVerdict:
    """Certify ``phi o g`` according to one of the four monotone/convex cases.

    ``i``: g super, phi convex nonincreasing, conclusion sub.
    ``ii``: g super, phi concave nondecreasing, conclusion super.
    ``iii``: g sub, phi convex nondecreasing, conclusion sub.
    ``iv``: g sub, phi concave nonincreasing, conclusion super.

    The source term of ``spec`` is ignored; boundary data are taken from the
    fields themselves.
    """
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {sorted(CASES)}")
    premise, convex, nondecreasing, conclusion = CASES[case]
    g = check_field(dom, g, "g")
    om = resolve_omega(dom, spec.omega)
    check_shape(phi, float(np.min(g[om])), float(np.max(g[om])), convex, nondecreasing)

    certify = {"super": certify_superminimizer, "sub": certify_subminimizer}
    pre = certify[premise](dom, EnergySpec(spec.p, g, om), g, check_measure=False)
    if not pre.passed:
        raise ValueError(f"g is not a certified {premise}minimizer (margin {pre.margin:.3e})")
    pg = np.asarray(phi(g), dtype=float)
    post = certify[conclusion](dom, EnergySpec(spec.p, pg, om), pg, check_measure=False)
    return CompositionVerdict(case, phi.name, pre.margin, post.passed, post.margin, post.tol)


def convex_nonincreasing_maps() -> list[ScalarMap]:
    """Eight convex nonincreasing Lipschitz maps; reflections give the other cases."""
    sp = lambda t: np.logaddexp(0.0, -t)  # noqa: E731
    return [
        ScalarMap(lambda t: -t, lambda t: -np.ones_like(t), (), "-t"),
        ScalarMap.negative_part(0.0),
        ScalarMap.negative_part(0.3),
        ScalarMap(lambda t: np.exp(-t), lambda t: -np.exp(-t), (), "exp(-t)"),
        ScalarMap(sp, lambda t: -1.0 / (1.0 + np.exp(t)), (), "log(1+exp(-t))"),
        ScalarMap(lambda t: np.maximum(0.2 - t, 0.0) ** 2, lambda t: -2 * np.maximum(0.2 - t, 0.0), (), "max(0.2-t,0)^2"),
        ScalarMap(lambda t: np.maximum(-t, -3 * t), lambda t: np.where(t < 0, -3.0, -1.0), (0.0,), "max(-t,-3t)"),
        ScalarMap(lambda t: 1.0 - 2.0 * t, lambda t: np.full_like(t, -2.0), (), "1-2t"),
    ]


def reflect(phi: ScalarMap, case: str) -> ScalarMap:
    """Turn a convex nonincreasing map into one with the shape required by ``case``."""
    f, d = phi.fn, phi.deriv
    if case == "i":
        return phi
    if case == "ii":
        return ScalarMap(lambda t: -f(t), lambda t: -d(t), phi.kinks, f"-({phi.name})")
    if case == "iii":
        return ScalarMap(lambda t: f(-t), lambda t: -d(-t), tuple(-k for k in phi.kinks), f"({phi.name})(-t)")
    if case == "iv":
        return ScalarMap(lambda t: -f(-t), lambda t: d(-t), tuple(-k for k in phi.kinks), f"-({phi.name})(-t)")
    raise ValueError(f"unknown case {case!r}")


# -- strong minimum principle -------------------------------------------------------


@dataclass
class MaxPrincipleVerdict:
    premise: bool
    interior_min: bool
    oscillation: float
    scale: float
    outcome: str
    depths: int

    @property
    def passed(self) -> bool:
        return self.outcome != "violation"

    def row(self) -> dict:
        return {"premise": self.premise, "interior_min": self.interior_min,
                "oscillation": self.oscillation, "outcome": self.outcome}


def nested_subdomains(dom: Domain, omega=None, max_depth: int | None = None) -> list[np.ndarray]:
    """``Omega`` followed by successive strict interiors while they still have interior sites."""
    out = [resolve_omega(dom, omega)]
    while max_depth is None or len(out) <= max_depth:
        nxt = strict_interior(dom, out[-1])
        if not np.any(strict_interior(dom, nxt)):
            break
        out.append(nxt)
    return out


def maximum_principle_experiment(dom: Domain, g, omega=None, max_depth: int | None = None) -> MaxPrincipleVerdict:
    """Check that a 2-superminimizer with an interior minimum is constant.

    The premise is certification as superminimizer on every set of the nested
    family. Outcomes: ``"premise-false"``, ``"boundary-min"`` (premise holds,
    minimum only on the ring, vacuous), ``"constant"`` and ``"violation"``.
    """
    g = check_field(dom, g, "g")
    om = resolve_omega(dom, omega)
    family = nested_subdomains(dom, om, max_depth)
    premise = True
    for w in family:
        if not certify_superminimizer(dom, EnergySpec(2.0, g, w), g, check_measure=False).passed:
            premise = False
            break
    vals = g[om]
    scale = max(1.0, float(np.max(np.abs(vals))))
    osc = float(np.max(vals) - np.min(vals))
    core = strict_interior(dom, om)
    gmin = float(np.min(vals))
    interior_min = bool(np.any(core & (g <= gmin + 1e-12 * scale)))
    if not premise:
        outcome = "premise-false"
    elif not interior_min:
        outcome = "boundary-min"
    elif osc <= 1e-8 * scale:
        outcome = "constant"
    else:
        outcome = "violation"
    return MaxPrincipleVerdict(premise, interior_min, osc, scale, outcome, len(family))


def _smooth_boundary(dom: Domain, rng: np.random.Generator) -> np.ndarray:
    x = dom.coords
    a = rng.normal(size=x.shape[1])
    b = rng.normal(size=x.shape[1])
    return x @ a + 0.3 * np.sin(x @ b + rng.uniform(0, np.pi))


def superharmonic_family(dom: Domain, count: int = 12, seed: int = 0) -> list[np.ndarray]:
    """Solutions of the 2-Laplace equation with nonnegative sources and smooth boundary data.

    Sources are strictly positive on half of the members and zero on the rest,
    so the family mixes harmonic and strictly superharmonic fields.
    """
    from .minimize import minimize_p_energy

    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        bnd = _smooth_boundary(dom, rng)
        src = rng.uniform(0.2, 2.0, dom.n_sites) if k % 2 == 0 else None
        rep = minimize_p_energy(dom, EnergySpec(2.0, bnd, None, src))
        out.append(rep.minimizer)
    return out


@dataclass
class SearchReport:
    """Enumeration over candidate fields; ``counterexamples`` lists violating indices."""

    n_candidates: int
    n_premise: int
    n_interior_min: int
    counterexamples: list
    outcomes: list

    @property
    def passed(self) -> bool:
        return not self.counterexamples


def maximum_principle_search(domains, count: int = 12, seed: int = 0) -> SearchReport:
    """Run the experiment over solver-generated superharmonic fields and fields with interior minima.

    Candidates per domain: the superharmonic family, its negatives (which
    mostly attain interior minima), a bowl ``|x - c|^2`` and a constant.
    Fields annihilated by the central-difference stencil are not candidates.
    """
    outcomes = []
    for dom in domains:
        fam = superharmonic_family(dom, count, seed)
        x = dom.coords
        bowl = np.sum((x - x.mean(axis=0)) ** 2, axis=1)
        for g in fam + [-g for g in fam] + [bowl, np.full(dom.n_sites, 1.5)]:
            outcomes.append(maximum_principle_experiment(dom, g))
    bad = [i for i, v in enumerate(outcomes) if v.outcome == "violation"]
    return SearchReport(len(outcomes), sum(v.premise for v in outcomes),
                        sum(v.interior_min for v in outcomes), bad, outcomes)


def checkerboard(dom: GridDomain) -> np.ndarray:
    """Alternating +-1 field; central differences annihilate it away from the grid boundary."""
    return np.where(dom.index.sum(axis=1) % 2 == 0, 1.0, -1.0)


# -- Busemann functions ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LineSpec:
    """Straight line ``t -> base + t * direction`` with a unit direction."""

    base: np.ndarray
    direction: np.ndarray
    norm: NormSpec
    t_max: float = DEFAULT_T_MAX

    def __post_init__(self):
        b = np.asarray(self.base, dtype=float).reshape(-1)
        u = np.asarray(self.direction, dtype=float).reshape(-1)
        if b.shape != (self.norm.dim,) or u.shape != (self.norm.dim,):
            raise ValueError("base and direction must match the norm dimension")
        if abs(eval_norm(self.norm, u) - 1.0) > 1e-12:
            raise ValueError("direction must have norm 1")
        object.__setattr__(self, "base", b)
        object.__setattr__(self, "direction", u)

    @classmethod
    def through(cls, norm: NormSpec, base, direction, t_max: float = DEFAULT_T_MAX) -> "LineSpec":
        """Normalize ``direction`` before building the line."""
        u = np.asarray(direction, dtype=float)
        return cls(base, u / eval_norm(norm, u), norm, t_max)

    def reversed(self) -> "LineSpec":
        return LineSpec(self.base, -self.direction, self.norm, self.t_max)

    def point(self, t: float) -> np.ndarray:
        return self.base + t * self.direction


@dataclass
class BusemannPair:
    bplus: np.ndarray
    bminus: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.bplus + self.bminus

    def check(self, tol: float = 1e-9) -> bool:
        """Triangle inequality ``b+ + b- >= 0``."""
        return bool(np.all(self.total >= -tol))


def _coordinate_excess(y: np.ndarray, u: np.ndarray, t: float, weights: np.ndarray) -> np.ndarray:
    """``a_i (|t u_i - y_i| - t |u_i|)`` without cancellation once ``t |u_i| >= |y_i|``."""
    far = t * np.abs(u) >= np.abs(y)
    exact = -np.sign(u) * y
    direct = np.abs(t * u - y) - t * np.abs(u)
    return weights * np.where(far & (u != 0), exact, direct)


def line_excess(norm: NormSpec, y, u, t: float) -> np.ndarray:
    """``|y - t u| - t`` for unit ``u``, rows of ``y`` being points relative to the base.

    Evaluated without the catastrophic cancellation of the naive difference at
    large ``t``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u = np.asarray(u, dtype=float)
    if t == 0:
        return np.asarray(eval_norm(norm, y), dtype=float)
    if norm.is_lp_family:
        p = norm.exponent
        a = np.ones(norm.dim) if norm.weights is None else norm.weights
        if p == 1.0:
            return _coordinate_excess(y, u, t, a).sum(axis=1)
        if np.isinf(p):
            # t (|u_i| a_i - 1) vanishes on active coordinates
            far = t * np.abs(u) >= np.abs(y)
            exact = a * (-np.sign(u) * y) + t * (a * np.abs(u) - 1.0)
            direct = a * np.abs(t * u - y) - t
            return np.max(np.where(far & (u != 0), exact, direct), axis=1)
        # |u - y/t|_p^p - 1 = sum a_i (|u_i - y_i/t|^p - |u_i|^p)
        z = y / t
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            rel = -z / u
            # log1p only where cancellation bites; elsewhere the plain difference is accurate
            same = (u != 0) & (np.abs(rel) < 0.5)
            powdiff = np.where(same, np.abs(u) ** p * np.expm1(p * np.log1p(np.where(same, rel, 0.0))),
                               np.abs(u - z) ** p - np.abs(u) ** p)
        s = np.sum(a * powdiff, axis=1)
        with np.errstate(divide="ignore"):
            return t * np.expm1(np.log1p(s) / p)
    if norm.kind == "ellipsoidal":
        M = norm.matrix
        num = np.einsum("ki,ij,kj->k", y, M, y) - 2.0 * t * (y @ M @ u)
        return num / (eval_norm(norm, y - t * u) + t)
    return np.asarray(eval_norm(norm, y - t * u), dtype=float) - t


def _norm_gradient(norm: NormSpec, u: np.ndarray) -> np.ndarray | None:
    """Gradient of the norm at a unit vector ``u`` when the norm is smooth there."""
    if norm.kind == "ellipsoidal":
        return norm.matrix @ u
    if norm.is_lp_family and 1.0 < norm.exponent < np.inf:
        a = np.ones(norm.dim) if norm.weights is None else norm.weights
        return a * np.abs(u) ** (norm.exponent - 1.0) * np.sign(u)
    return None


def busemann(dom: GridDomain, line: LineSpec, t_max: float | None = None, tail_tol: float = BUSEMANN_TAIL_TOL,
             return_history: bool = False):
    """Busemann function ``b(x) = lim_t |x - line(t)| - t`` at every site.

    The excess is sampled at ``t = 0, 1, 2, 4, ..., t_max``; it is
    nonincreasing in ``t``. For norms that are smooth at the direction ``u``
    the limit is the linear function ``-<grad|u|, x - base>``, which the
    samples must approach from above; there the samples can converge as slowly
    as ``t^(1-p)``, so the limit is taken from the gradient. For the other
    norms (lp with p in {1, inf}, polyhedral) the stable excess reaches its
    limit at finite ``t`` and the last sample is used.

    Raises
    ------
    ValueError
        If the samples are not monotone, dip below the linear limit, or (on
        non-smooth norms) still move by more than ``tail_tol`` between
        ``t_max / 2`` and ``t_max``.
    """
    if not isinstance(dom, GridDomain):
        raise TypeError("Busemann functions need coordinates and a norm (grid model)")
    if line.norm.dim != dom.dim:
        raise ValueError("line dimension does not match the domain")
    t_max = line.t_max if t_max is None else float(t_max)
    if not t_max >= 1.0:
        raise ValueError("t_max must be at least 1")
    y = dom.coords - line.base
    ts = [0.0] + list(2.0 ** np.arange(0, int(np.floor(np.log2(t_max))) + 1))
    if ts[-1] < t_max:
        ts.append(t_max)
    vals = np.array([line_excess(dom.norm, y, line.direction, t) for t in ts])
    scale = max(1.0, float(np.max(np.abs(vals[-1]))))
    rise = float(np.max(np.diff(vals, axis=0), initial=0.0))
    if rise > tail_tol * scale:
        raise ValueError(f"excess increases along the line by {rise:.3e}; norm evaluation is inconsistent")
    grad = _norm_gradient(dom.norm, line.direction)
    if grad is not None:
        b = -(y @ grad)
        below = float(np.max(b - vals[-1]))
        if below > tail_tol * scale:
            raise ValueError(f"sampled excess lies {below:.3e} below the linear limit")
        tail = float(np.max(vals[-1] - b))
        route = "gradient"
    else:
        tail = float(np.max(np.abs(vals[-1] - vals[-2])))
        if tail > tail_tol * scale:
            raise ValueError(f"t_max={t_max:g} too small: tail increment {tail:.3e} exceeds {tail_tol:g}")
        b = vals.min(axis=0)
        route = "sampled"
    if return_history:
        return b, {"t": np.array(ts), "tail_increment": tail, "max_rise": rise, "route": route}
    return b


def busemann_pair(dom: GridDomain, line: LineSpec, t_max: float | None = None,
                  tail_tol: float = BUSEMANN_TAIL_TOL) -> BusemannPair:
    return BusemannPair(busemann(dom, line, t_max, tail_tol), busemann(dom, line.reversed(), t_max, tail_tol))


@dataclass
class HarmonicityReport:
    hilbertian: bool
    strictly_convex: bool
    sum_sup: float
    sum_min: float
    mu_max: float | None
    certified: tuple | None
    closed_form_gap: float | None
    pair: BusemannPair = field(repr=False)

    @property
    def passed(self) -> bool:
        ok = self.sum_min >= -1e-9
        if self.mu_max is not None:
            ok = ok and self.mu_max <= 1e-7
        if self.hilbertian:
            ok = ok and self.sum_sup <= 1e-7 and all(self.certified)
        if self.closed_form_gap is not None:
            ok = ok and self.closed_form_gap <= 1e-7
        return ok


def busemann_harmonicity_experiment(dom: GridDomain, line: LineSpec, closed_form_sum=None,
                                    omega=None, tail_tol: float = BUSEMANN_TAIL_TOL) -> HarmonicityReport:
    """Busemann pair of a line and its 2-harmonicity.

    On strictly convex norms the extracted divergences of ``grad b+-`` must be
    nonpositive. On Hilbertian models ``b+ = -b-`` and both are certified
    2-minimizers on the strict interior of ``omega``. Otherwise the sum is
    reported (and compared with ``closed_form_sum(coords)`` if given).
    """
    pair = busemann_pair(dom, line, tail_tol=tail_tol)
    om = resolve_omega(dom, omega)
    inner = strict_interior(dom, om)
    hil = detect_hilbertianity(dom).hilbertian
    sc = detect_strict_convexity(dom.norm).strictly_convex
    mu_max = None
    if sc:
        ones = np.ones(dom.n_sites)
        mu_max = max(float(np.max(extract_divergence(dom, ones, b, inner).density, initial=0.0))
                     for b in (pair.bplus, pair.bminus))
    certified = None
    if hil:
        certified = tuple(certify_minimizer(dom, EnergySpec(2.0, b, inner), b).passed
                          for b in (pair.bplus, pair.bminus))
    gap = None
    if closed_form_sum is not None:
        gap = float(np.max(np.abs(pair.total - closed_form_sum(dom.coords))))
    return HarmonicityReport(hil, sc, float(np.max(np.abs(pair.total))), float(np.min(pair.total)),
                             mu_max, certified, gap, pair)


def lipschitz_defect(dom: GridDomain, b, samples: int = 2000, seed: int = 0) -> float:
    """Largest ``|b(x) - b(y)| - |x - y|`` over random site pairs."""
    rng = np.random.default_rng(seed)
    i = rng.integers(0, dom.n_sites, samples)
    j = rng.integers(0, dom.n_sites, samples)
    x = dom.coords
    return float(np.max(np.abs(b[i] - b[j]) - eval_norm(dom.norm, x[i] - x[j])))


# -- Poincare diagnostic --------------------------------------------------------------


@dataclass
class PoincareReport:
    constant: float
    ratios: list
    flagged: list

    def row(self) -> dict:
        return {"constant": self.constant, "n_balls": len(self.ratios), "n_flagged": len(self.flagged)}


def ball_ratio(dom: GridDomain, f, center, radius: float, p0: float) -> tuple[float, float, float]:
    """(mean oscillation, averaged modulus, ratio) on the ball ``|x - center| <= radius``."""
    inside = eval_norm(dom.norm, dom.coords - np.asarray(center, dtype=float)) <= radius * (1 + 1e-12)
    m = dom.measure * inside
    vol = float(m.sum())
    if vol == 0:
        raise ValueError("empty ball")
    fb = float(np.sum(f * m) / vol)
    osc = float(np.sum(np.abs(f - fb) * m) / vol)
    grad = float((np.sum(modulus(dom, f) ** p0 * m) / vol) ** (1.0 / p0))
    if osc == 0:
        return osc, grad, 0.0
    if grad <= 1e-12 * osc / radius:
        return osc, grad, np.inf
    return osc, grad, osc / (2 * radius * grad)


def poincare_diagnostic(dom: GridDomain, p0: float = 2.0, balls=None, fields=None, n_balls: int = 16,
                        seed: int = 0, flag_ratio: float = 10.0) -> PoincareReport:
    """Largest Poincare ratio over sampled balls and fields.

    Parameters
    ----------
    balls : list of (center, radius), optional
        Random balls of radius between 3h and a quarter of the box by default.
    fields : list of (name, array), optional
        Coordinate functions and a smooth random field by default.
    flag_ratio : float
        Ratios above this (or infinite ones) are flagged as sub-resolution
        artifacts and left out of the constant.
    """
    if not isinstance(dom, GridDomain):
        raise TypeError("the Poincare diagnostic needs a grid model")
    rng = np.random.default_rng(seed)
    x = dom.coords
    lo, hi = x.min(axis=0), x.max(axis=0)
    if balls is None:
        rmax = max(3 * dom.spacing, 0.25 * float(np.min(hi - lo)))
        balls = [(rng.uniform(lo, hi), rng.uniform(3 * dom.spacing, rmax)) for _ in range(n_balls)]
    if fields is None:
        a = rng.normal(size=dom.dim)
        fields = [(f"x{k + 1}", x[:, k].copy()) for k in range(dom.dim)]
        fields.append(("smooth", np.sin(x @ a) + 0.5 * x[:, 0] ** 2))
    ratios, flagged = [], []
    for name, f in fields:
        f = check_field(dom, f, name)
        for k, (c, r) in enumerate(balls):
            osc, grad, ratio = ball_ratio(dom, f, c, r, p0)
            rec = {"field": name, "ball": k, "radius": float(r), "oscillation": osc, "gradient": grad, "ratio": ratio}
            (flagged if ratio > flag_ratio else ratios).append(rec)
    const = max((rec["ratio"] for rec in ratios), default=0.0)
    return PoincareReport(float(const), ratios, flagged)


def split_cover(dom: GridDomain, omega=None, axis: int = 0, overlap: int = 3) -> list[np.ndarray]:
    """Two overlapping halves of ``omega`` along ``axis`` (re-exported helper)."""
    from .divergence import split_omega

    return split_omega(dom, omega, axis, overlap)


__all__ = [
    "BusemannPair", "LineSpec", "SheafReport", "CompositionVerdict", "MaxPrincipleVerdict",
    "HarmonicityReport", "PoincareReport", "SearchReport", "sheaf_experiment", "compose_experiment",
    "maximum_principle_experiment", "maximum_principle_search", "busemann", "busemann_pair",
    "busemann_harmonicity_experiment", "poincare_diagnostic", "convex_nonincreasing_maps", "reflect",
    "checkerboard", "nested_subdomains", "superharmonic_family", "line_excess", "lipschitz_defect",
    "split_cover", "ball_ratio", "check_shape", "battery_domains", "composition_battery",
]


def battery_domains() -> list:
    """Quadratic models used by the composition and minimum-principle batteries."""
    return [
        GridDomain.unit_box(17, 2, NormSpec.lp(2, 2.0)),
        GridDomain.unit_box(15, 2, NormSpec.weighted_lp(2.0, [1.0, 2.5])),
        GridDomain.unit_box(33, 1, NormSpec.lp(1, 2.0)),
        GraphDomain.lattice((10, 10), seed=3, p_model=2.0),
    ]


def composition_battery(seed: int = 0) -> list[CompositionVerdict]:
    """Four cases times eight (g, phi) instances on p = 2 models."""
    pool = []
    for k, dom in enumerate(battery_domains()):
        for g in superharmonic_family(dom, 2, seed + k):
            pool.append((dom, g))
    out = []
    for case in ("i", "ii", "iii", "iv"):
        premise = CASES[case][0]
        for (dom, g), phi in zip(pool, convex_nonincreasing_maps()):
            field_ = g if premise == "super" else -g
            out.append(compose_experiment(dom, EnergySpec(2.0, field_), field_, reflect(phi, case), case))
    return out
