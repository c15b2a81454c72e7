"""The pairing D^{+/-} f(grad g) and verifiers for its calculus rules.

``D^+ f(grad g)`` is the right derivative at 0 of ``eps -> |D(g + eps f)|^2 / 2``
and ``D^- f(grad g)`` the left one. On normed grids both are computed on the
covector route, as max/min of ``<df, w>`` over the gradient set of ``dg``.
An independent route evaluates the difference quotients directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .norms import NormSpec, _dual_weights, eval_dual_norm, gradient_support
from .spaces import (
    Domain,
    GraphDomain,
    GridDomain,
    Jet,
    as_covectors,
    check_field,
    edge_differences,
    graph_modulus,
    modulus,
)

IDENTITY_TOL = 1e-9
GAP_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class DpmField:
    """Per-site values of D^+ f(grad g) and D^- f(grad g)."""

    plus: np.ndarray
    minus: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.plus - self.minus


@dataclass
class IdentityReport:
    """Outcome of one sitewise identity or inequality check."""

    identity: str
    max_violation: float
    witness_site: int
    params: str = ""
    tol: float = IDENTITY_TOL
    slack: float = 0.0
    slack_site: int = -1

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol

    def row(self) -> dict:
        return {
            "identity": self.identity,
            "max_violation": self.max_violation,
            "witness_site": self.witness_site,
            "passed": self.passed,
            "slack": self.slack,
            "slack_site": self.slack_site,
            "params": self.params,
        }


# -- pointwise ---------------------------------------------------------------

def dpm_covectors(n: NormSpec, df, dg) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized covector route: rows of ``df`` paired with rows of ``dg``."""
    return gradient_support(n, dg, df)


def dpm_pointwise(n: NormSpec, df, dg) -> tuple[float, float]:
    """(D^+, D^-) for a single pair of covectors; (0, 0) when ``dg = 0``."""
    df = np.asarray(df, dtype=float)
    dg = np.asarray(dg, dtype=float)
    if df.shape != (n.dim,) or dg.shape != (n.dim,):
        raise ValueError(f"covectors must have shape ({n.dim},)")
    hi, lo = gradient_support(n, dg, df)
    return float(hi[0]), float(lo[0])


def default_eps_schedule(df_norm: float = 1.0, dg_norm: float = 1.0, steps: int = 12,
                         ratio: float = 0.25, smallest: float = 1e-7) -> np.ndarray:
    """Geometric schedule ending at ``smallest * |dg|_* / |df|_*``."""
    base = smallest * (dg_norm / df_norm if df_norm > 0 and dg_norm > 0 else 1.0)
    return base * ratio ** -np.arange(steps - 1, -1, -1.0)


def _stable_lp_dual(n: NormSpec) -> bool:
    return n.is_lp_family and 1.0 < n.exponent < np.inf


def oracle_eps_floor(n: NormSpec) -> float:
    """Smallest relative eps of the quotient schedule.

    On lp duals the increment is evaluated without cancellation, so eps can go
    far lower; that shrinks the eps^(q-1) bias at zero coordinates of dg.
    """
    return 1e-13 if _stable_lp_dual(n) else 1e-7


def half_square_increment(n: NormSpec, dg, df, eps):
    """``|dg + eps df|_*^2 / 2 - |dg|_*^2 / 2`` along the last axis.

    On lp duals (1 < q < inf) each coordinate uses
    ``|x|^q expm1(q log1p(r))`` when ``r = eps df / dg`` is small and the total
    uses ``expm1((2/q) log1p(dS / S))``, so no digits cancel. Other norms use
    the plain difference in the dtype of the inputs.
    """
    base = 0.5 * np.asarray(eval_dual_norm(n, dg)) ** 2
    if not _stable_lp_dual(n):
        return 0.5 * np.asarray(eval_dual_norm(n, dg + eps * df)) ** 2 - base
    q = n.dual_exponent
    b = _dual_weights(n.weights, n.exponent).astype(dg.dtype)
    ax = np.abs(dg)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = eps * df / dg
        small = (dg != 0) & (np.abs(r) < 0.5)
        term = np.where(small, ax ** q * np.expm1(q * np.log1p(np.where(small, r, 0))),
                        np.abs(dg + eps * df) ** q - ax ** q)
    S = np.sum(b * ax ** q, axis=-1)
    dS = np.sum(b * term, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(S > 0, base * np.expm1((2.0 / q) * np.log1p(dS / np.where(S > 0, S, 1))), 0.5 * dS ** (2.0 / q))
    return rel


def quotient_sequences(n: NormSpec, df, dg, eps_schedule) -> tuple[np.ndarray, np.ndarray]:
    """Difference quotients of ``eps -> |dg + eps df|_*^2 / 2`` for eps > 0 and eps < 0.

    Returns arrays of shape ``(len(schedule),)`` or ``(k, len(schedule))``.
    """
    # extended precision keeps cancellation noise far below the monotonicity tolerance
    eps = np.asarray(eps_schedule, dtype=np.longdouble)
    df = np.asarray(df, dtype=np.longdouble)
    dg = np.asarray(dg, dtype=np.longdouble)
    right = [half_square_increment(n, dg, df, e) / e for e in eps]
    left = [half_square_increment(n, dg, df, -e) / (-e) for e in eps]
    return np.stack(right, axis=-1).astype(float), np.stack(left, axis=-1).astype(float)


def dpm_quotient_oracle(n: NormSpec, df, dg, eps_schedule=None, check_tol: float = 1e-9) -> tuple[float, float]:
    """(D^+, D^-) as difference quotients at the smallest |eps| of the schedule.

    Raises
    ------
    RuntimeError
        If the eps > 0 quotients increase by more than ``check_tol`` (relative to
        ``|df|_* |dg|_*``) along the decreasing schedule, which convexity forbids.
    """
    df = np.asarray(df, dtype=float)
    dg = np.asarray(dg, dtype=float)
    a, b = float(eval_dual_norm(n, df)), float(eval_dual_norm(n, dg))
    if a == 0 or b == 0:
        return 0.0, 0.0
    eps = default_eps_schedule(a, b, smallest=oracle_eps_floor(n)) if eps_schedule is None \
        else np.asarray(eps_schedule, dtype=float)
    if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("eps schedule must be nonempty, positive and strictly decreasing")
    right, left = quotient_sequences(n, df, dg, eps)
    rise = np.max(np.diff(right), initial=0.0)
    if rise > check_tol * a * b:
        raise RuntimeError(f"quotients not monotone (rise {rise:.3e}); norm evaluation is inconsistent")
    return float(right[-1]), float(left[-1])


# -- fields ------------------------------------------------------------------

def _graph_pairing_coefficients(dom: GraphDomain, g) -> tuple[np.ndarray, np.ndarray]:
    """Edge coefficients k_e with D f(grad g)(x) = sum_{e from x} k_e (f(dst) - f(src)).

    This is the eps -> 0 limit of the quotients of |D(g + eps f)|^2 / 2, which is
    differentiable for p_model > 1.
    """
    a = edge_differences(dom, g)
    src, _, c = dom.edges
    pm = dom.p_model
    N = graph_modulus(dom, a)
    Ns = N[src]
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(Ns > 0, Ns ** (2.0 - pm) * c * np.sign(a) * np.abs(a) ** (pm - 1.0), 0.0)
    return k, N


def dpm_field(dom: Domain, f, g) -> DpmField:
    """Sitewise D^{+/-} f(grad g); zero where |Dg| = 0.

    Grid domains accept scalar fields, covector fields or Jets; graph domains
    accept scalar fields.
    """
    if isinstance(dom, GridDomain):
        hi, lo = dpm_covectors(dom.norm, as_covectors(dom, f), as_covectors(dom, g))
        return DpmField(hi, lo)
    k, _ = _graph_pairing_coefficients(dom, g)
    src, _, _ = dom.edges
    v = np.bincount(src, weights=k * edge_differences(dom, f), minlength=dom.n_sites)
    return DpmField(v, v.copy())


def graph_quotient_field(dom: GraphDomain, f, g, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Finite-eps one-sided quotients of |D(g + eps f)|^2 / 2 on a graph."""
    f = check_field(dom, f)
    g = check_field(dom, g)
    base = 0.5 * modulus(dom, g) ** 2
    right = (0.5 * modulus(dom, g + eps * f) ** 2 - base) / eps
    left = (0.5 * modulus(dom, g - eps * f) ** 2 - base) / (-eps)
    return right, left


# -- scalar maps ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarMap:
    """Lipschitz map R -> R with a derivative oracle and its kink points."""

    fn: object
    deriv: object
    kinks: tuple = ()
    name: str = "phi"

    def __call__(self, t):
        return self.fn(np.asarray(t, dtype=float))

    def derivative(self, t):
        return self.deriv(np.asarray(t, dtype=float))

    def near_kink(self, t, guard: float = 1e-12) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, bool)
        for k in self.kinks:
            out |= np.abs(t - k) <= guard
        return out

    @classmethod
    def affine(cls, a: float, b: float = 0.0) -> "ScalarMap":
        return cls(lambda t: a * t + b, lambda t: np.full_like(t, a), (), f"{a:g}*t+{b:g}")

    @classmethod
    def absolute(cls) -> "ScalarMap":
        return cls(np.abs, np.sign, (0.0,), "|t|")

    @classmethod
    def positive_part(cls, c: float = 0.0) -> "ScalarMap":
        return cls(lambda t: np.maximum(t, c), lambda t: (t > c).astype(float), (c,), f"max(t,{c:g})")

    @classmethod
    def negative_part(cls, c: float = 0.0) -> "ScalarMap":
        """``max(c - t, 0)``: convex and nonincreasing."""
        return cls(lambda t: np.maximum(c - t, 0.0), lambda t: -(t < c).astype(float), (c,), f"max({c:g}-t,0)")

    @classmethod
    def cap(cls, c: float) -> "ScalarMap":
        """``min(t, c)``: concave and nondecreasing."""
        return cls(lambda t: np.minimum(t, c), lambda t: (t < c).astype(float), (c,), f"min(t,{c:g})")

    @classmethod
    def exp(cls, s: float = 1.0) -> "ScalarMap":
        return cls(lambda t: np.exp(s * t), lambda t: s * np.exp(s * t), (), f"exp({s:g}t)")

    @classmethod
    def tanh(cls, s: float = 1.0) -> "ScalarMap":
        return cls(lambda t: np.tanh(s * t), lambda t: s / np.cosh(s * t) ** 2, (), f"tanh({s:g}t)")

    @classmethod
    def sin(cls) -> "ScalarMap":
        return cls(np.sin, np.cos, (), "sin")


# -- verifiers ------------------------------------------------------------------

def _jet(dom: GridDomain, f) -> Jet:
    if isinstance(f, Jet):
        return f
    v = check_field(dom, f)
    return Jet(v, as_covectors(dom, v))


def _worst(name: str, viol: np.ndarray, tol: float, params: str, slack=None) -> IdentityReport:
    viol = np.where(np.isnan(viol), -np.inf, viol)
    k = int(np.argmax(viol)) if viol.size else -1
    worst = float(max(viol[k], 0.0)) if viol.size else 0.0
    rep = IdentityReport(name, worst, k if worst > 0 else -1, params, tol)
    if slack is not None and slack.size:
        j = int(np.argmax(slack))
        rep.slack, rep.slack_site = float(slack[j]), j
    return rep


def _scale(*parts) -> np.ndarray:
    s = np.ones_like(parts[0])
    for p in parts:
        s = s * p
    return np.maximum(1.0, s)


def verify_chain_rules(dom: GridDomain, f, g, phi: ScalarMap, psi: ScalarMap,
                       tol: float = IDENTITY_TOL) -> list[IdentityReport]:
    """Chain rules in f and in g on the covector route.

    D^{+/-}(phi o f)(grad g) = phi'(f) D^{+/- sign phi'(f)} f(grad g) and
    D^{+/-} f(grad(psi o g)) = psi'(g) D^{+/- sign psi'(g)} f(grad g), skipping
    sites within 1e-12 of a kink of phi (resp. psi).
    """
    n = dom.norm
    F, G = _jet(dom, f), _jet(dom, g)
    hi, lo = dpm_covectors(n, F.covectors, G.covectors)
    scale = _scale(np.atleast_1d(eval_dual_norm(n, F.covectors)), np.atleast_1d(eval_dual_norm(n, G.covectors)))
    params = f"norm={n.label} phi={phi.name} psi={psi.name}"
    reports = []

    d = phi.derivative(F.values)
    h2, l2 = dpm_covectors(n, d[:, None] * F.covectors, G.covectors)
    rhs_hi = np.where(d >= 0, d * hi, d * lo)
    rhs_lo = np.where(d >= 0, d * lo, d * hi)
    skip = phi.near_kink(F.values)
    s = scale * np.maximum(1.0, np.abs(d))
    viol = np.maximum(np.abs(h2 - rhs_hi), np.abs(l2 - rhs_lo)) / s
    reports.append(_worst("chain-rule-f", np.where(skip, 0.0, viol), tol, params))

    d = psi.derivative(G.values)
    h3, l3 = dpm_covectors(n, F.covectors, d[:, None] * G.covectors)
    rhs_hi = np.where(d >= 0, d * hi, d * lo)
    rhs_lo = np.where(d >= 0, d * lo, d * hi)
    skip = psi.near_kink(G.values)
    s = scale * np.maximum(1.0, np.abs(d))
    viol = np.maximum(np.abs(h3 - rhs_hi), np.abs(l3 - rhs_lo)) / s
    reports.append(_worst("chain-rule-g", np.where(skip, 0.0, viol), tol, params))
    return reports


def verify_leibniz(dom: GridDomain, f1, f2, g, tol: float = IDENTITY_TOL) -> list[IdentityReport]:
    """Leibniz inequalities with the sign selection s_i = sign f_i.

    D^+(f1 f2) <= f1 D^{s1} f2 + f2 D^{s2} f1 and the mirrored bound for D^-.
    The largest positive slack and its site are recorded in the report.
    """
    n = dom.norm
    A, B, G = _jet(dom, f1), _jet(dom, f2), _jet(dom, g)
    P = A * B
    dg = G.covectors
    hp, lp_ = dpm_covectors(n, P.covectors, dg)
    h2, l2 = dpm_covectors(n, B.covectors, dg)
    h1, l1 = dpm_covectors(n, A.covectors, dg)
    a, b = A.values, B.values
    up = np.where(a >= 0, a * h2, a * l2) + np.where(b >= 0, b * h1, b * l1)
    down = np.where(a >= 0, a * l2, a * h2) + np.where(b >= 0, b * l1, b * h1)
    scale = _scale(np.atleast_1d(eval_dual_norm(n, P.covectors)) + np.abs(a) * eval_dual_norm(n, B.covectors)
                   + np.abs(b) * eval_dual_norm(n, A.covectors), np.atleast_1d(eval_dual_norm(n, dg)))
    params = f"norm={n.label}"
    return [
        _worst("leibniz-plus", (hp - up) / scale, tol, params, slack=(up - hp) / scale),
        _worst("leibniz-minus", (down - lp_) / scale, tol, params, slack=(lp_ - down) / scale),
    ]


def verify_lipschitz_bound(dom: GridDomain, f1, f2, g, tol: float = IDENTITY_TOL) -> list[IdentityReport]:
    """|D^{+/-} f1 - D^{+/-} f2| <= |D(f1 - f2)| |Dg| and |D^{+/-} f| <= |Df| |Dg|."""
    n = dom.norm
    A, B, G = _jet(dom, f1), _jet(dom, f2), _jet(dom, g)
    dg = G.covectors
    ng = np.atleast_1d(eval_dual_norm(n, dg))
    h1, l1 = dpm_covectors(n, A.covectors, dg)
    h2, l2 = dpm_covectors(n, B.covectors, dg)
    bound = np.atleast_1d(eval_dual_norm(n, A.covectors - B.covectors)) * ng
    scale = _scale(np.atleast_1d(eval_dual_norm(n, A.covectors)) + np.atleast_1d(eval_dual_norm(n, B.covectors)), ng)
    lip = np.maximum(np.abs(h1 - h2), np.abs(l1 - l2)) - bound
    cs = np.maximum(np.abs(h1), np.abs(l1)) - np.atleast_1d(eval_dual_norm(n, A.covectors)) * ng
    params = f"norm={n.label}"
    return [
        _worst("lipschitz", lip / scale, tol, params, slack=-lip / scale),
        _worst("cauchy-schwarz", cs / scale, tol, params, slack=-cs / scale),
    ]


def verify_basic_properties(dom: GridDomain, f, g, f_other, seed: int = 0,
                            tol: float = IDENTITY_TOL) -> list[IdentityReport]:
    """Ordering, self-pairing, sign flips, homogeneity and convexity in f."""
    n = dom.norm
    rng = np.random.default_rng(seed)
    F, G, H = _jet(dom, f), _jet(dom, g), _jet(dom, f_other)
    df, dg, dh = F.covectors, G.covectors, H.covectors
    nf = np.atleast_1d(eval_dual_norm(n, df))
    ng = np.atleast_1d(eval_dual_norm(n, dg))
    scale = _scale(nf + np.atleast_1d(eval_dual_norm(n, dh)), ng)
    hi, lo = dpm_covectors(n, df, dg)
    params = f"norm={n.label}"
    out = [_worst("order", (lo - hi) / scale, tol, params)]

    sh, sl = dpm_covectors(n, dg, dg)
    out.append(_worst("self-pairing", np.maximum(np.abs(sh - ng ** 2), np.abs(sl - ng ** 2)) / _scale(ng, ng), tol, params))

    nh, nl = dpm_covectors(n, -df, dg)
    gh, gl = dpm_covectors(n, df, -dg)
    # exact on the covector route: negation commutes with the support evaluation
    flip = np.maximum.reduce([np.abs(nh + lo), np.abs(nl + hi), np.abs(gh + lo), np.abs(gl + hi)])
    out.append(_worst("sign-flip", flip / scale, tol, params))

    t = np.exp(rng.uniform(-2.0, 2.0))
    th, tl = dpm_covectors(n, t * df, dg)
    uh, ul = dpm_covectors(n, df, t * dg)
    hom = np.maximum.reduce([np.abs(th - t * hi), np.abs(tl - t * lo), np.abs(uh - t * hi), np.abs(ul - t * lo)])
    out.append(_worst("homogeneity", hom / (t * scale), tol, params + f" t={t:.6g}"))

    lam = rng.uniform(0.0, 1.0)
    mh, _ = dpm_covectors(n, (1 - lam) * df + lam * dh, dg)
    hh, _ = dpm_covectors(n, dh, dg)
    conv = mh - ((1 - lam) * hi + lam * hh)
    out.append(_worst("convexity-plus", conv / scale, tol, params + f" lambda={lam:.6g}"))
    return out


def random_jet(dom: GridDomain, rng: np.random.Generator, structured: float = 0.3) -> Jet:
    """Random values and covectors, with a fraction of sites placed on kinks.

    Structured sites get a zeroed coordinate, tied coordinate magnitudes, or a
    vanishing covector, which is where non-smooth norms become multivalued.
    """
    n, d = dom.n_sites, dom.dim
    vals = rng.normal(size=n)
    cov = rng.normal(size=(n, d))
    kind = rng.random(n)
    pick = rng.integers(d, size=n)
    zero = kind < structured * 0.4
    cov[zero, pick[zero]] = 0.0
    tie = (kind >= structured * 0.4) & (kind < structured * 0.8)
    if d > 1:
        cov[tie, :] = np.abs(cov[tie, :1]) * rng.choice([-1.0, 1.0], size=(int(tie.sum()), d))
    cov[(kind >= structured * 0.8) & (kind < structured)] = 0.0
    return Jet(vals, cov)


def calculus_suite(dom: GridDomain, instances: int, seed: int = 0,
                   tol: float = IDENTITY_TOL) -> list[IdentityReport]:
    """Run every sitewise identity on ``instances`` random Jet draws; keep the worst per identity."""
    rng = np.random.default_rng(seed)
    maps = [ScalarMap.affine(2.0), ScalarMap.affine(-1.0), ScalarMap.absolute(), ScalarMap.tanh(1.5),
            ScalarMap.positive_part(0.1), ScalarMap.sin()]
    best: dict[str, IdentityReport] = {}
    for k in range(instances):
        f, g, h = random_jet(dom, rng), random_jet(dom, rng), random_jet(dom, rng)
        phi, psi = maps[k % len(maps)], maps[(k // len(maps) + 1) % len(maps)]
        reps = (verify_chain_rules(dom, f, g, phi, psi, tol)
                + verify_leibniz(dom, f, h, g, tol)
                + verify_lipschitz_bound(dom, f, h, g, tol)
                + verify_basic_properties(dom, f, g, h, seed=seed + k, tol=tol))
        for r in reps:
            cur = best.get(r.identity)
            if cur is None or r.max_violation > cur.max_violation or (
                    r.max_violation == cur.max_violation and r.slack > cur.slack):
                r.params = f"{r.params} instance={k}"
                best[r.identity] = r
    return list(best.values())


def oracle_agreement(n: NormSpec, samples: int, seed: int = 0) -> tuple[float, float]:
    """Worst relative disagreement between the covector route and the quotient oracle.

    Returns ``(max relative error, max monotonicity rise)`` over random pairs,
    including pairs placed on kinks of the dual norm.
    """
    rng = np.random.default_rng(seed)
    tmp = GridDomain(shape=(2,) * n.dim, spacing=1.0, norm=n)
    worst_err, worst_rise = 0.0, 0.0
    for _ in range(max(1, samples // tmp.n_sites)):
        F, G = random_jet(tmp, rng, 0.5), random_jet(tmp, rng, 0.5)
        for df, dg in zip(F.covectors, G.covectors):
            a, b = float(eval_dual_norm(n, df)), float(eval_dual_norm(n, dg))
            if a == 0 or b == 0:
                continue
            hi, lo = dpm_pointwise(n, df, dg)
            right, left = quotient_sequences(n, df, dg, default_eps_schedule(a, b, smallest=oracle_eps_floor(n)))
            worst_err = max(worst_err, abs(right[-1] - hi) / (a * b), abs(left[-1] - lo) / (a * b))
            worst_rise = max(worst_rise, float(np.max(np.diff(right), initial=0.0)) / (a * b))
    return worst_err, worst_rise


@dataclass
class ConvexityVerdict:
    strictly_convex: bool
    gap: float
    witness_df: np.ndarray = field(default_factory=lambda: np.zeros(0))
    witness_dg: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _structured_covectors(d: int) -> np.ndarray:
    """Axis vectors first, then every {-1,0,1} pattern (d <= 4) in a fixed order."""
    eye = np.eye(d)
    rows = [eye[i] for i in range(d)]
    if d <= 4:
        import itertools
        for pat in itertools.product((0.0, 1.0, -1.0), repeat=d):
            v = np.array(pat)
            if np.any(v) and not any(np.array_equal(v, r) for r in rows):
                rows.append(v)
    return np.array(rows)


def detect_strict_convexity(n: NormSpec, samples: int = 2000, seed: int = 0) -> ConvexityVerdict:
    """Largest normalized gap (D^+ - D^-) / (|df|_* |dg|_*) over structured and random pairs.

    Strictly convex iff the gap stays below 1e-8. Structured covectors (axes
    and sign patterns) come first so that kinks of non-smooth duals are hit.
    """
    rng = np.random.default_rng(seed)
    S = _structured_covectors(n.dim)
    pairs_dg = [np.repeat(S, len(S), axis=0), rng.normal(size=(samples, n.dim))]
    pairs_df = [np.tile(S, (len(S), 1)), rng.normal(size=(samples, n.dim))]
    if n.kind == "polyhedral" and n.dim > 1:
        from scipy.spatial import ConvexHull
        # facet normals of the primal ball expose whole facets: the kinks of the dual
        normals = ConvexHull(n.generators).equations[:, :-1]
        pairs_dg.append(np.repeat(normals, 4, axis=0))
        pairs_df.append(rng.normal(size=(4 * len(normals), n.dim)))
    dg = np.vstack(pairs_dg)
    df = np.vstack(pairs_df)
    hi, lo = dpm_covectors(n, df, dg)
    denom = np.atleast_1d(eval_dual_norm(n, df)) * np.atleast_1d(eval_dual_norm(n, dg))
    gap = np.where(denom > 0, (hi - lo) / np.where(denom > 0, denom, 1.0), 0.0)
    k = int(np.argmax(gap))
    return ConvexityVerdict(bool(gap[k] <= GAP_TOL), float(gap[k]), df[k].copy(), dg[k].copy())


@dataclass
class HilbertianityVerdict:
    hilbertian: bool
    parallelogram_defect: float
    symmetry_defect: float
    witness: str


def _smooth_fields(dom: Domain, rng: np.random.Generator, count: int) -> list[tuple[str, np.ndarray]]:
    out = []
    x = dom.coords
    if isinstance(dom, GridDomain) and dom.dim >= 2:
        out.append(("x1", x[:, 0].copy()))
        out.append(("x2", x[:, 1].copy()))
    for k in range(count):
        w = rng.normal(size=x.shape[1])
        ph = rng.uniform(0, 2 * np.pi)
        scale = np.ptp(x, axis=0).max() or 1.0
        out.append((f"random{k}", np.sin(x @ w / scale * 2.0 + ph) + rng.normal() * (x @ w) / scale))
    return out


def energy2(dom: Domain, f) -> float:
    return float(np.sum(modulus(dom, f) ** 2 * dom.measure))


def detect_hilbertianity(dom: Domain, samples: int = 16, seed: int = 0, tol: float = 1e-9) -> HilbertianityVerdict:
    """Parallelogram rule for sum |Df|^2 m and symmetry of D f(grad g) in (f, g)."""
    rng = np.random.default_rng(seed)
    fields = _smooth_fields(dom, rng, samples)
    worst_p, worst_s, witness = 0.0, 0.0, ""
    for i in range(len(fields)):
        for j in range(i + 1, min(len(fields), i + 4)):
            (nf, f), (ng, g) = fields[i], fields[j]
            ef, eg = energy2(dom, f), energy2(dom, g)
            if ef + eg == 0:
                continue
            defect = abs(energy2(dom, f + g) + energy2(dom, f - g) - 2 * ef - 2 * eg) / (2 * ef + 2 * eg)
            a, b = dpm_field(dom, f, g), dpm_field(dom, g, f)
            sc = np.maximum(modulus(dom, f) * modulus(dom, g), 1e-300)
            live = sc > 1e-12 * sc.max()
            sym = float(np.max(np.maximum(np.abs(a.plus - b.plus), np.abs(a.minus - b.minus))[live] / sc[live],
                               initial=0.0))
            if defect > worst_p:
                worst_p, witness = defect, f"f={nf}, g={ng}"
            worst_s = max(worst_s, sym)
    return HilbertianityVerdict(bool(worst_p <= tol and worst_s <= tol), worst_p, worst_s, witness)


def verify_semicontinuity(dom: Domain, f, g, perturbation, p: float = 2.0, terms: int = 40,
                          tol: float = 1e-6) -> IdentityReport:
    """Integrated upper semicontinuity along g_n = g + perturbation / n.

    Checks max over the last half of the sequence of
    ``sum D^+ f(grad g_n) |Dg_n|^(p-2) m`` against the value at g plus ``tol``.
    """
    from .minimize import weight_field

    def integral(gg):
        w = weight_field(dom, gg, p)
        return float(np.sum(dpm_field(dom, f, gg).plus * w * dom.measure))

    target = integral(g)
    vals = np.array([integral(g + perturbation / k) for k in range(1, terms + 1)])
    excess = float(np.max(vals[terms // 2:]) - target)
    return IdentityReport("semicontinuity", max(excess, 0.0), -1, f"p={p:g} terms={terms}", tol)
