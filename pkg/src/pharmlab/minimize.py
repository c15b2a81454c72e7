"""p-energy minimization with fixed boundary data and first-order certification.

The energy of g on omega is ``sum_{x in omega} |Dg|(x)^p m(x) / p`` minus an
optional source pairing ``sum s g m``. Free unknowns are the values on the
strict interior of omega; every other site keeps the boundary data.

Certification uses the one-sided pairings

    P^{+/-}(f) = sum D^{+/-} f(grad g) |Dg|^(p-2) m - sum s f m,

which are the one-sided derivatives of the energy at g in direction f.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize as _scipy_minimize
from scipy.special import logsumexp, softmax

from .dcalc import dpm_field
from .divergence import extract_divergence, hat_pairings, _single_valued
from .norms import NormSpec
from .spaces import (
    Domain,
    GridDomain,
    check_field,
    make_test_functions,
    modulus,
    strict_interior,
)

ZERO_GUARD = 1e-13
DELTA_SCHEDULE = tuple(10.0 ** -k for k in range(2, 9))
CERT_REL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class EnergySpec:
    """Exponent, subdomain, boundary data and optional source density.

    ``boundary`` is a full field; only its values off the strict interior of
    ``omega`` are used. ``source`` adds ``-sum s g m`` to the energy, so a
    minimizer then solves ``div(|Dg|^(p-2) grad g) = -s``.
    """

    p: float
    boundary: np.ndarray
    omega: np.ndarray | None = None
    source: np.ndarray | None = None

    def __post_init__(self):
        if not (1.0 < float(self.p) < np.inf):
            raise ValueError("exponent out of range (1,∞)")
        object.__setattr__(self, "p", float(self.p))
        b = np.asarray(self.boundary, dtype=float).reshape(-1)
        if not np.all(np.isfinite(b)):
            raise ValueError("boundary data must be finite")
        object.__setattr__(self, "boundary", b)
        if self.source is not None:
            object.__setattr__(self, "source", np.asarray(self.source, dtype=float).reshape(-1))

    def without_source(self) -> "EnergySpec":
        return EnergySpec(self.p, self.boundary, self.omega, None)

    def with_omega(self, omega) -> "EnergySpec":
        return EnergySpec(self.p, self.boundary, omega, self.source)


@dataclass
class CertificateVerdict:
    """Outcome of a first-order certification over a test family."""

    passed: bool
    margin: float
    tol: float
    worst_test: int
    kind: str
    n_tests: int
    mu_sign_ok: bool | None = None
    mu_extreme: float | None = None

    def __bool__(self) -> bool:
        return self.passed


@dataclass
class MinimizeReport:
    minimizer: np.ndarray
    energy: float
    initial_energy: float
    iterations: int
    residual: float
    residual_tol: float
    converged: bool
    method: str
    history: list = field(default_factory=list, repr=False)
    certificate: CertificateVerdict | None = None

    @property
    def failed(self) -> bool:
        return not self.converged


def _omega(dom: Domain, spec: EnergySpec) -> np.ndarray:
    return dom.omega if spec.omega is None else np.asarray(spec.omega, bool).reshape(-1)


def free_sites(dom: Domain, spec: EnergySpec) -> np.ndarray:
    return np.flatnonzero(strict_interior(dom, _omega(dom, spec)))


def _check_boundary(dom: Domain, spec: EnergySpec, g: np.ndarray, tol: float = 1e-12) -> None:
    fixed = ~strict_interior(dom, _omega(dom, spec))
    gap = np.max(np.abs(g[fixed] - spec.boundary[fixed]), initial=0.0)
    if gap > tol * max(1.0, float(np.max(np.abs(spec.boundary), initial=0.0))):
        raise ValueError(f"field does not match the boundary data (gap {gap:.3e})")


def weight_field(dom: Domain, g, p: float) -> np.ndarray:
    """``|Dg|^(p-2)`` with a hard zero where ``|Dg| < 1e-13``."""
    mod = modulus(dom, g)
    live = mod >= ZERO_GUARD
    return np.where(live, np.where(live, mod, 1.0) ** (p - 2.0), 0.0)


def _source_term(dom: Domain, spec: EnergySpec, g: np.ndarray) -> float:
    if spec.source is None:
        return 0.0
    om = _omega(dom, spec)
    return float(np.sum((spec.source * g * dom.measure)[om]))


def p_energy(dom: Domain, spec: EnergySpec, g) -> float:
    """``sum_{omega} |Dg|^p m / p - sum_{omega} s g m``.

    Raises
    ------
    ValueError
        If ``g`` leaves the boundary data by more than 1e-12.
    """
    g = check_field(dom, g, "g")
    _check_boundary(dom, spec, g)
    om = _omega(dom, spec)
    mod = modulus(dom, g)
    return float(np.sum((mod ** spec.p * dom.measure)[om]) / spec.p) - _source_term(dom, spec, g)


def energy_scale(dom: Domain, spec: EnergySpec, g) -> float:
    """``sum |Dg|^p m`` over omega, floored at the boundary-data scale."""
    om = _omega(dom, spec)
    e = float(np.sum((modulus(dom, g) ** spec.p * dom.measure)[om]))
    return e if e > 0 else 1.0


# -- smoothed energies --------------------------------------------------------------

def _smooth_dual(n: NormSpec, xi: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """A smooth upper approximation of the dual norm and its gradient in xi.

    Exact (with a subgradient) at ``delta = 0``.
    """
    if n.kind == "ellipsoidal":
        Minv = n._cache["inverse"]
        v = xi @ Minv
        N = np.sqrt(np.maximum(np.einsum("ij,ij->i", v, xi), 0.0))
        safe = np.where(N > 0, N, 1.0)
        return N, np.where(N[:, None] > 0, v / safe[:, None], 0.0)
    if n.kind == "polyhedral":
        z = xi @ n.generators.T
        if delta == 0:
            k = np.argmax(z, axis=1)
            return z[np.arange(len(z)), k], n.generators[k]
        return delta * logsumexp(z / delta, axis=1), softmax(z / delta, axis=1) @ n.generators
    from .norms import _dual_weights

    b = _dual_weights(n.weights, n.exponent)
    q = n.dual_exponent
    s = np.sqrt(xi ** 2 + delta ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ds = np.where(s > 0, xi / np.where(s > 0, s, 1.0), 0.0)
    if np.isinf(q):
        z = b * s
        if delta == 0:
            k = np.argmax(z, axis=1)
            g = np.zeros_like(xi)
            g[np.arange(len(z)), k] = b[k] * np.sign(xi[np.arange(len(z)), k])
            return z[np.arange(len(z)), k], g
        return delta * logsumexp(z / delta, axis=1), softmax(z / delta, axis=1) * b * ds
    if q == 1.0:
        return np.sum(b * s, axis=1), b * ds
    N = np.sum(b * s ** q, axis=1) ** (1.0 / q)
    safe = np.where(N > 0, N, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pw = np.where(s > 0, s ** (q - 1.0), 0.0)
    grad = (safe[:, None] ** (1.0 - q)) * b * pw * ds
    return N, np.where(N[:, None] > 0, grad, 0.0)


class _Problem:
    """Energy and gradient as functions of the free values."""

    def __init__(self, dom: Domain, spec: EnergySpec, base: np.ndarray):
        self.dom, self.spec = dom, spec
        self.om = _omega(dom, spec)
        self.free = free_sites(dom, spec)
        self.base = base.copy()
        self.w = dom.measure * self.om
        self.src = None if spec.source is None else spec.source * dom.measure * self.om
        if isinstance(dom, GridDomain):
            self.ops = dom.diff_ops
        else:
            src, dst, c = dom.edges
            n = dom.n_sites
            rows = np.arange(len(src))
            self.inc = sp.csr_matrix((np.r_[-np.ones(len(src)), np.ones(len(src))],
                                      (np.r_[rows, rows], np.r_[src, dst])), shape=(len(src), n))
            self.src_idx, self.c = src, c

    def field(self, u: np.ndarray) -> np.ndarray:
        g = self.base.copy()
        g[self.free] = u
        return g

    def __call__(self, u: np.ndarray, delta: float) -> tuple[float, np.ndarray]:
        g = self.field(u)
        p = self.spec.p
        if isinstance(self.dom, GridDomain):
            xi = np.stack([op @ g for op in self.ops], axis=1)
            N, dN = _smooth_dual(self.dom.norm, xi, delta)
            r2 = N ** 2 + delta ** 2
            val = r2 ** (p / 2.0) / p
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = np.where(r2 > 0, r2 ** (p / 2.0 - 1.0) * N, 0.0)
            flux = (self.w * coef)[:, None] * dN
            grad = sum(op.T @ flux[:, i] for i, op in enumerate(self.ops))
        else:
            pm = self.dom.p_model
            a = self.inc @ g
            s = (a ** 2 + delta ** 2) ** (pm / 2.0)
            S = np.bincount(self.src_idx, self.c * s, minlength=self.dom.n_sites)
            with np.errstate(divide="ignore", invalid="ignore"):
                N2 = np.where(S > 0, S ** (2.0 / pm), 0.0)
                r2 = N2 + delta ** 2
                val = r2 ** (p / 2.0) / p
                dS = np.where(S > 0, r2 ** (p / 2.0 - 1.0) * S ** (2.0 / pm - 1.0) / pm, 0.0)
                ds = np.where(a ** 2 + delta ** 2 > 0, pm * (a ** 2 + delta ** 2) ** (pm / 2.0 - 1.0) * a, 0.0)
            edge = (self.w * dS)[self.src_idx] * self.c * ds
            grad = self.inc.T @ edge
        E = float(np.sum(self.w * val))
        if self.src is not None:
            E -= float(np.dot(self.src, g))
            grad = grad - self.src
        return E, np.asarray(grad)[self.free]


def _linear_system(dom: Domain, spec: EnergySpec) -> sp.csr_matrix | None:
    """Stiffness matrix K with energy ``g^T K g / 2`` when p = 2 and the model is quadratic."""
    om = _omega(dom, spec)
    w = dom.measure * om
    if isinstance(dom, GridDomain):
        if not dom.norm.is_quadratic:
            return None
        Q = dom.norm.quadratic_form()
        W = sp.diags(w)
        K = sp.csr_matrix((dom.n_sites, dom.n_sites))
        for i, Di in enumerate(dom.diff_ops):
            for j, Dj in enumerate(dom.diff_ops):
                if Q[i, j] != 0:
                    K = K + Q[i, j] * (Di.T @ W @ Dj)
        return K.tocsr()
    if dom.p_model != 2.0:
        return None
    src, dst, c = dom.edges
    rows = np.arange(len(src))
    inc = sp.csr_matrix((np.r_[-np.ones(len(src)), np.ones(len(src))], (np.r_[rows, rows], np.r_[src, dst])),
                        shape=(len(src), dom.n_sites))
    return (inc.T @ sp.diags(c * w[src]) @ inc).tocsr()


def first_order_pairings(dom: Domain, spec: EnergySpec, g, omega=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(sites, P^+(hat), P^-(hat))`` over the hats of the strict interior."""
    om = _omega(dom, spec) if omega is None else omega
    w = weight_field(dom, g, spec.p)
    sites, A, B = hat_pairings(dom, w, g, om)
    if spec.source is not None:
        s = spec.source[sites] * dom.measure[sites]
        A, B = A - s, B - s
    return sites, A, B


def first_order_residual(dom: Domain, spec: EnergySpec, g) -> float:
    """Largest violation of ``P^+(hat) >= 0 >= P^-(hat)`` over the hats."""
    _, P, M = first_order_pairings(dom, spec, g)
    return float(max(np.max(-P, initial=0.0), np.max(M, initial=0.0), 0.0))


def default_residual_tol(dom: Domain, spec: EnergySpec, g) -> float:
    h = dom.spacing if isinstance(dom, GridDomain) else 1.0
    return 1e-8 * energy_scale(dom, spec, g) / h


def minimize_p_energy(dom: Domain, spec: EnergySpec, init=None, *, delta_schedule=DELTA_SCHEDULE,
                      max_iter: int = 20000, residual_tol: float | None = None,
                      direct: bool = True) -> MinimizeReport:
    """Minimize the p-energy over fields that agree with the boundary data off the strict interior.

    p = 2 on a quadratic model is a sparse linear solve. Otherwise L-BFGS runs
    on the energy with the modulus smoothed at level delta (relative to the
    data scale) along ``delta_schedule``, then once more unsmoothed. The
    residual is always measured on the unsmoothed one-sided pairings.
    """
    init = spec.boundary.copy() if init is None else check_field(dom, init, "init")
    _check_boundary(dom, spec, init)
    prob = _Problem(dom, spec, init)
    E0 = p_energy(dom, spec, init)
    free = prob.free
    K = _linear_system(dom, spec) if (spec.p == 2.0 and direct) else None
    history: list[float] = []
    if K is not None:
        fixed = np.setdiff1d(np.arange(dom.n_sites), free)
        rhs = -K[free][:, fixed] @ init[fixed]
        if prob.src is not None:
            rhs = rhs + prob.src[free]
        u = spla.spsolve(K[free][:, free].tocsc(), rhs) if free.size else np.zeros(0)
        g = prob.field(np.atleast_1d(u))
        iters, method = 1, "direct"
        history = [E0, p_energy(dom, spec, g)]
    else:
        scale = float(np.max(modulus(dom, init), initial=0.0)) or 1.0
        u = init[free].copy()
        iters = 0
        for d in tuple(delta_schedule) + (0.0,):
            res = _scipy_minimize(prob, u, args=(d * scale,), jac=True, method="L-BFGS-B",
                                  options={"maxiter": max_iter, "maxcor": 30, "ftol": 0.0, "gtol": 0.0,
                                           "maxls": 50})
            # keep the previous iterate if the unsmoothed polish got worse
            if d == 0.0 and res.fun > prob(u, 0.0)[0]:
                break
            u = res.x
            iters += int(res.nit)
            history.append(prob(u, 0.0)[0])
        g = prob.field(u)
        method = "lbfgs-smoothed"
    E = p_energy(dom, spec, g)
    if E > E0 + 1e-12 * max(1.0, abs(E0)):
        g, E = init.copy(), E0
    resid = first_order_residual(dom, spec, g)
    tol = default_residual_tol(dom, spec, g) if residual_tol is None else residual_tol
    return MinimizeReport(g, E, E0, iters, resid, tol, resid <= tol, method, history)


# -- certification --------------------------------------------------------------------

def _pairings(dom: Domain, spec: EnergySpec, g, testfns) -> tuple[np.ndarray, np.ndarray]:
    """P^+ and P^- for every test function of a family (hats first)."""
    from .spaces import TestFamily

    om = _omega(dom, spec)
    w = weight_field(dom, g, spec.p)
    P, M = [], []
    bumps = testfns
    if isinstance(testfns, TestFamily):
        sites, A, B = first_order_pairings(dom, spec, g, om)
        pos = {s: j for j, s in enumerate(sites)}
        idx = np.array([pos[s] for s in testfns.hat_sites], dtype=int)
        P.append(A[idx])
        M.append(B[idx])
        bumps = testfns.bumps
    vals_p, vals_m = [], []
    for f in bumps:
        d = dpm_field(dom, f, g)
        s = 0.0 if spec.source is None else float(np.sum(spec.source * f * dom.measure))
        vals_p.append(float(np.sum(d.plus * w * dom.measure)) - s)
        vals_m.append(float(np.sum(d.minus * w * dom.measure)) - s)
    P.append(np.array(vals_p))
    M.append(np.array(vals_m))
    return np.concatenate(P), np.concatenate(M)


def _family(dom: Domain, spec: EnergySpec, testfns):
    if testfns is None:
        return make_test_functions(dom, _omega(dom, spec))
    return testfns


def certification_tol(dom: Domain, spec: EnergySpec, g) -> float:
    return CERT_REL_TOL * energy_scale(dom, spec, g)


def _check_signs(testfns, sign: float) -> None:
    from .spaces import TestFamily

    bumps = testfns.bumps if isinstance(testfns, TestFamily) else testfns
    for f in bumps:
        if np.any(sign * np.asarray(f) < 0):
            raise ValueError("test functions must be nonnegative for this certificate")


def certify_minimizer(dom: Domain, spec: EnergySpec, g, testfns=None, tol: float | None = None) -> CertificateVerdict:
    """PASS iff ``P^+(f) >= -tol`` and ``P^-(f) <= tol`` for every test function."""
    g = check_field(dom, g, "g")
    _check_boundary(dom, spec, g)
    fam = _family(dom, spec, testfns)
    tol = certification_tol(dom, spec, g) if tol is None else tol
    P, M = _pairings(dom, spec, g, fam)
    viol = np.maximum(-P, M)
    k = int(np.argmax(viol))
    return CertificateVerdict(bool(viol[k] <= tol), float(viol[k]), tol, k, "minimizer", len(viol))


def _mu_sign(dom: Domain, spec: EnergySpec, g, sign: float) -> tuple[bool | None, float | None]:
    """Sign check of the extracted divergence on strictly convex models (sign -1: mu <= 0)."""
    if not _single_valued(dom):
        return None, None
    w = weight_field(dom, g, spec.p)
    mu = extract_divergence(dom, w, g, _omega(dom, spec))
    dens = mu.density[mu.support]
    if spec.source is not None:
        dens = dens + spec.source[mu.support]
    ext = float(np.max(sign * dens, initial=0.0))
    return ext <= 1e-7 * max(1.0, float(np.max(np.abs(dens), initial=0.0))), ext


def certify_superminimizer(dom: Domain, spec: EnergySpec, g, testfns=None, tol: float | None = None,
                           check_measure: bool = True) -> CertificateVerdict:
    """PASS iff ``P^+(f) >= -tol`` for every nonnegative test function.

    On strictly convex models the extracted divergence is also checked to be
    nonpositive sitewise (reported, not part of the verdict).
    """
    g = check_field(dom, g, "g")
    _check_boundary(dom, spec, g)
    fam = _family(dom, spec, testfns)
    _check_signs(fam, 1.0)
    tol = certification_tol(dom, spec, g) if tol is None else tol
    P, _ = _pairings(dom, spec, g, fam)
    k = int(np.argmax(-P))
    ok, ext = _mu_sign(dom, spec, g, 1.0) if check_measure else (None, None)
    return CertificateVerdict(bool(-P[k] <= tol), float(-P[k]), tol, k, "superminimizer", len(P), ok, ext)


def certify_subminimizer(dom: Domain, spec: EnergySpec, g, testfns=None, tol: float | None = None,
                         check_measure: bool = True) -> CertificateVerdict:
    """PASS iff ``P^-(f) <= tol`` for every nonnegative test function.

    Equivalent to ``P^+(-f) >= -tol``: the energy does not drop along
    nonpositive perturbations.
    """
    g = check_field(dom, g, "g")
    _check_boundary(dom, spec, g)
    fam = _family(dom, spec, testfns)
    _check_signs(fam, 1.0)
    tol = certification_tol(dom, spec, g) if tol is None else tol
    _, M = _pairings(dom, spec, g, fam)
    k = int(np.argmax(M))
    ok, ext = _mu_sign(dom, spec, g, -1.0) if check_measure else (None, None)
    return CertificateVerdict(bool(M[k] <= tol), float(M[k]), tol, k, "subminimizer", len(M), ok, ext)


def energy_perturbation_oracle(dom: Domain, spec: EnergySpec, g, f, eps_schedule=None) -> tuple[np.ndarray, np.ndarray]:
    """Energy difference quotients ``(E(g + eps f) - E(g)) / eps`` for eps > 0 and eps < 0.

    The eps > 0 sequence is nonincreasing along a decreasing schedule by
    convexity of the energy.
    """
    g = check_field(dom, g, "g")
    f = check_field(dom, f, "f")
    if eps_schedule is None:
        eps_schedule = 1e-1 * 0.25 ** np.arange(12)
    eps = np.asarray(eps_schedule, dtype=float)
    fixed = ~strict_interior(dom, _omega(dom, spec))
    if np.any(f[fixed] != 0):
        raise ValueError("perturbation must vanish off the strict interior")
    E0 = p_energy(dom, spec, g)
    right = np.array([(p_energy(dom, spec, g + e * f) - E0) / e for e in eps])
    left = np.array([(p_energy(dom, spec, g - e * f) - E0) / (-e) for e in eps])
    return right, left
