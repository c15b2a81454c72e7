"""Norms on R^d, their duals, and gradient sets of the half squared dual norm.

A :class:`NormSpec` is the primal norm acting on tangent vectors. Covectors
(differentials) are measured with the dual norm, and the gradient set of a
covector ``xi`` is the set of vectors ``w`` with

    <xi, w> >= 0.5 * |xi|_*^2 + 0.5 * |w|^2,

which is the subdifferential of ``0.5 * |.|_*^2`` at ``xi``. It equals
``|xi|_*`` times the face of the primal unit ball exposed by ``xi``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

KINDS = ("lp", "weighted-lp", "ellipsoidal", "polyhedral")

# Relative tolerance used to decide ties in maximizing sets and zero coordinates.
TIE_TOL = 1e-12
# Absolute tolerance used to merge extreme points of a gradient set.
MERGE_TOL = 1e-10


def conjugate_exponent(p: float) -> float:
    """Return q with 1/p + 1/q = 1 (``inf`` for p = 1, 1 for p = inf)."""
    if p == 1.0:
        return np.inf
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


@dataclass(frozen=True, eq=False)
class NormSpec:
    """A norm on R^dim.

    Parameters
    ----------
    dim : int
        Ambient dimension.
    kind : str
        One of ``"lp"``, ``"weighted-lp"``, ``"ellipsoidal"``, ``"polyhedral"``.
    exponent : float
        Exponent p in [1, inf] for the lp kinds.
    weights : ndarray, optional
        Positive coordinate weights a_i for ``weighted-lp``; the norm is
        ``(sum a_i |v_i|^p)^(1/p)``, ``max a_i |v_i|`` for p = inf.
    matrix : ndarray, optional
        SPD matrix M for ``ellipsoidal``; the norm is ``sqrt(v^T M v)``.
    generators : ndarray, optional
        Rows are the vertices of the unit ball for ``polyhedral``; the set must
        be symmetric under v -> -v and span R^dim.
    """

    dim: int
    kind: str
    exponent: float = 2.0
    weights: np.ndarray | None = None
    matrix: np.ndarray | None = None
    generators: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("lp", "weighted-lp"):
            p = float(self.exponent)
            if not (p >= 1.0):
                raise ValueError(f"lp exponent must lie in [1, inf], got {p}")
            object.__setattr__(self, "exponent", p)
            if self.kind == "lp":
                w = np.ones(self.dim)
            else:
                if self.weights is None:
                    raise ValueError("weighted-lp requires weights")
                w = np.asarray(self.weights, dtype=float).reshape(-1)
                if w.shape != (self.dim,) or np.any(~np.isfinite(w)) or np.any(w <= 0):
                    raise ValueError("weights must be dim positive finite numbers")
            object.__setattr__(self, "weights", w)
        elif self.kind == "ellipsoidal":
            if self.matrix is None:
                raise ValueError("ellipsoidal norm requires a matrix")
            M = np.asarray(self.matrix, dtype=float)
            if M.shape != (self.dim, self.dim) or not np.allclose(M, M.T, rtol=0, atol=1e-14 * np.abs(M).max()):
                raise ValueError("matrix must be symmetric of shape (dim, dim)")
            M = 0.5 * (M + M.T)
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise ValueError("matrix must be positive definite") from None
            object.__setattr__(self, "matrix", M)
            self._cache["inverse"] = np.linalg.inv(M)
        else:
            if self.generators is None:
                raise ValueError("polyhedral norm requires generators")
            G = np.asarray(self.generators, dtype=float)
            if G.ndim != 2 or G.shape[1] != self.dim:
                raise ValueError("generators must have shape (k, dim)")
            if np.linalg.matrix_rank(G) < self.dim:
                raise ValueError("generators must span R^dim")
            scale = np.abs(G).max()
            for g in G:
                if np.min(np.abs(G + g).max(axis=1)) > 1e-12 * scale:
                    raise ValueError("generator set must be symmetric under v -> -v")
            object.__setattr__(self, "generators", G)
            for j in range(len(G)):
                rest = np.delete(G, j, axis=0)
                if _gauge(rest, G[j]) <= 1.0 + 1e-9:
                    raise ValueError(f"generator {j} is not a vertex of the unit ball")

    # -- constructors -----------------------------------------------------
    @classmethod
    def lp(cls, dim: int, p: float) -> "NormSpec":
        return cls(dim=dim, kind="lp", exponent=float(p))

    @classmethod
    def weighted_lp(cls, p: float, weights) -> "NormSpec":
        w = np.asarray(weights, dtype=float).reshape(-1)
        return cls(dim=len(w), kind="weighted-lp", exponent=float(p), weights=w)

    @classmethod
    def ellipsoidal(cls, matrix) -> "NormSpec":
        M = np.asarray(matrix, dtype=float)
        return cls(dim=M.shape[0], kind="ellipsoidal", matrix=M)

    @classmethod
    def polyhedral(cls, generators) -> "NormSpec":
        G = np.atleast_2d(np.asarray(generators, dtype=float))
        return cls(dim=G.shape[1], kind="polyhedral", generators=G)

    @classmethod
    def l1_polytope(cls, dim: int) -> "NormSpec":
        """Polyhedral norm whose unit ball is the cross-polytope (the L1 ball)."""
        eye = np.eye(dim)
        return cls.polyhedral(np.vstack([eye, -eye]))

    # -- derived data -----------------------------------------------------
    @property
    def is_lp_family(self) -> bool:
        return self.kind in ("lp", "weighted-lp")

    @property
    def dual_exponent(self) -> float:
        return conjugate_exponent(self.exponent)

    @property
    def is_strictly_convex(self) -> bool:
        """Closed-form answer: strict convexity of the norm (smoothness of the dual)."""
        if self.is_lp_family:
            return 1.0 < self.exponent < np.inf or self.dim == 1
        if self.kind == "ellipsoidal":
            return True
        return self.dim == 1

    @property
    def is_quadratic(self) -> bool:
        """True when the squared norm is a quadratic form."""
        if self.kind == "ellipsoidal":
            return True
        if self.is_lp_family:
            return self.exponent == 2.0 or self.dim == 1
        return self.dim == 1

    def dual(self) -> "NormSpec":
        """The dual norm as a NormSpec (lp kinds and ellipsoidal only)."""
        if self.kind == "lp":
            return NormSpec.lp(self.dim, self.dual_exponent)
        if self.kind == "weighted-lp":
            q = self.dual_exponent
            return NormSpec.weighted_lp(q, _dual_weights(self.weights, self.exponent))
        if self.kind == "ellipsoidal":
            return NormSpec.ellipsoidal(self._cache["inverse"])
        raise ValueError("dual NormSpec is not available for polyhedral norms")

    def quadratic_form(self) -> np.ndarray:
        """Matrix Q with |xi|_*^2 = xi^T Q xi (quadratic norms only)."""
        if not self.is_quadratic:
            raise ValueError(f"{self.label} is not a quadratic norm")
        if self.kind == "ellipsoidal":
            return self._cache["inverse"]
        if self.dim == 1:
            return np.array([[eval_dual_norm(self, np.ones(1)) ** 2]])
        return np.diag(1.0 / self.weights)

    @property
    def label(self) -> str:
        if self.kind == "lp":
            return f"lp({_fmt_exp(self.exponent)})"
        if self.kind == "weighted-lp":
            return f"weighted-lp({_fmt_exp(self.exponent)})"
        if self.kind == "ellipsoidal":
            return "ellipsoidal"
        return f"polyhedral({len(self.generators)})"

    def __repr__(self) -> str:
        return f"NormSpec({self.label}, dim={self.dim})"


def _fmt_exp(p: float) -> str:
    return "inf" if np.isinf(p) else f"{p:g}"


def _dual_weights(a: np.ndarray, p: float) -> np.ndarray:
    """Weights b of the dual of the weighted lp norm with weights a.

    The dual of ``(sum a|v|^p)^(1/p)`` is ``(sum b|xi|^q)^(1/q)`` with
    ``b = a^(1-q)``; for p in {1, inf} the dual weights are ``1/a``.
    """
    if p == 1.0 or np.isinf(p):
        return 1.0 / a
    q = conjugate_exponent(p)
    return a ** (1.0 - q)


def _gauge(G: np.ndarray, v: np.ndarray) -> float:
    """Minkowski functional of conv(rows of G) at v, by linear programming."""
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return 0.0
    res = linprog(
        np.ones(len(G)),
        A_eq=G.T,
        b_eq=v,
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        return np.inf
    if res.status != 0:
        raise RuntimeError(f"gauge LP failed: {res.message}")
    return float(res.fun)


def _check_dim(n: NormSpec, x) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.longdouble:
        x = x.astype(float)
    if x.shape[-1] != n.dim:
        raise ValueError(f"dimension mismatch: norm has dim {n.dim}, got vector of length {x.shape[-1]}")
    return x


def _weighted_pnorm(x: np.ndarray, p: float, w: np.ndarray) -> np.ndarray:
    """(sum_i w_i |x_i|^p)^(1/p) along the last axis, overflow-safe."""
    ax = np.abs(x)
    if np.isinf(p):
        return np.max(ax * w, axis=-1)
    if p == 1.0:
        return np.sum(ax * w, axis=-1)
    scale = np.max(ax * w ** (1.0 / p), axis=-1, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    s = np.sum(w * (ax / safe) ** p, axis=-1) ** (1.0 / p)
    return s * scale[..., 0]


def eval_norm(n: NormSpec, v) -> np.ndarray | float:
    """Primal norm of ``v`` (shape ``(dim,)`` or ``(k, dim)``)."""
    v = _check_dim(n, v)
    if n.is_lp_family:
        out = _weighted_pnorm(v, n.exponent, n.weights)
    elif n.kind == "ellipsoidal":
        out = np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", v, n.matrix, v), 0.0))
    else:
        flat = v.reshape(-1, n.dim)
        out = np.array([_gauge(n.generators, row) for row in flat]).reshape(v.shape[:-1])
    return float(out) if np.ndim(out) == 0 else out


def eval_dual_norm(n: NormSpec, xi) -> np.ndarray | float:
    """Dual norm ``max{<xi, v> : |v| <= 1}`` of ``xi`` (shape ``(dim,)`` or ``(k, dim)``)."""
    xi = _check_dim(n, xi)
    if n.is_lp_family:
        out = _weighted_pnorm(xi, n.dual_exponent, _dual_weights(n.weights, n.exponent))
    elif n.kind == "ellipsoidal":
        Minv = n._cache["inverse"]
        out = np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", xi, Minv, xi), 0.0))
    else:
        out = np.max(xi @ n.generators.T, axis=-1)
    if np.ndim(out) == 0:
        return out if xi.dtype == np.longdouble else float(out)
    return out


def gradient_selection(n: NormSpec, xi) -> np.ndarray:
    """One element of the gradient set at each covector (rows of ``xi``).

    Where the set is not a singleton the returned element is the barycentre of
    the exposed face, which is the minimal-norm choice for the lp(1)/lp(inf)
    kinds.
    """
    xi = np.atleast_2d(_check_dim(n, xi))
    N = np.atleast_1d(eval_dual_norm(n, xi))
    out = np.zeros_like(xi)
    live = N > 0
    if not np.any(live):
        return out
    x, Nl = xi[live], N[live][:, None]
    if n.kind == "ellipsoidal":
        out[live] = x @ n._cache["inverse"]
    elif n.is_lp_family:
        p, a = n.exponent, n.weights
        if np.isinf(p):
            nz = np.abs(x) / a > TIE_TOL * Nl
            out[live] = Nl * np.where(nz, np.sign(x) / a, 0.0)
        elif p == 1.0:
            r = np.abs(x) / a
            act = r >= (1.0 - TIE_TOL) * Nl
            cnt = act.sum(axis=1, keepdims=True)
            out[live] = Nl * np.where(act, np.sign(x) / a, 0.0) / cnt
        else:
            q = n.dual_exponent
            b = _dual_weights(a, p)
            u = x / Nl
            out[live] = Nl * b * np.abs(u) ** (q - 1.0) * np.sign(u)
    else:
        G = n.generators
        vals = x @ G.T
        act = vals >= Nl - TIE_TOL * Nl
        cnt = act.sum(axis=1, keepdims=True)
        out[live] = Nl * (act.astype(float) @ G) / cnt
    return out


def gradient_support(n: NormSpec, xi, eta) -> tuple[np.ndarray, np.ndarray]:
    """Max and min of ``<eta, w>`` over ``w`` in the gradient set of ``xi``.

    Rows of ``xi`` and ``eta`` are paired (broadcasting allowed). Both values
    are zero where ``xi = 0``.
    """
    xi = _check_dim(n, xi)
    eta = _check_dim(n, eta)
    xi, eta = np.broadcast_arrays(np.atleast_2d(xi), np.atleast_2d(eta))
    N = np.atleast_1d(eval_dual_norm(n, xi))
    hi = np.zeros(len(xi))
    lo = np.zeros(len(xi))
    live = N > 0
    if not np.any(live):
        return hi, lo
    x, e, Nl = xi[live], eta[live], N[live]
    if n.kind == "ellipsoidal":
        v = np.einsum("ij,ij->i", e, x @ n._cache["inverse"])
        h = l = v
    elif n.is_lp_family:
        p, a = n.exponent, n.weights
        if np.isinf(p):
            nz = np.abs(x) / a > TIE_TOL * Nl[:, None]
            fixed = np.sum(np.where(nz, np.sign(x) * e / a, 0.0), axis=1)
            free = np.sum(np.where(nz, 0.0, np.abs(e) / a), axis=1)
            h = Nl * (fixed + free)
            l = Nl * (fixed - free)
        elif p == 1.0:
            r = np.abs(x) / a
            act = r >= (1.0 - TIE_TOL) * Nl[:, None]
            vals = np.sign(x) * e / a
            h = Nl * np.max(np.where(act, vals, -np.inf), axis=1)
            l = Nl * np.min(np.where(act, vals, np.inf), axis=1)
        else:
            w = gradient_selection(n, x)
            h = l = np.einsum("ij,ij->i", e, w)
    else:
        G = n.generators
        vals = x @ G.T
        act = vals >= (Nl - TIE_TOL * Nl)[:, None]
        pe = e @ G.T
        h = Nl * np.max(np.where(act, pe, -np.inf), axis=1)
        l = Nl * np.min(np.where(act, pe, np.inf), axis=1)
    hi[live] = h
    lo[live] = l
    return hi, lo


@dataclass(frozen=True, eq=False)
class GradientSet:
    """Gradient set of a covector, stored through its extreme points."""

    covector: np.ndarray
    points: np.ndarray

    @property
    def representation(self) -> str:
        return "singleton" if len(self.points) == 1 else "polytope"

    @property
    def is_singleton(self) -> bool:
        return len(self.points) == 1

    @property
    def vector(self) -> np.ndarray:
        if not self.is_singleton:
            raise ValueError("gradient set is not a singleton")
        return self.points[0]

    def support(self, eta) -> tuple[float, float]:
        """Max and min of ``<eta, w>`` over the set."""
        vals = self.points @ np.asarray(eta, dtype=float)
        return float(vals.max()), float(vals.min())

    def __repr__(self) -> str:
        return f"GradientSet({self.representation}, points={self.points.tolist()})"


def _dedup(points: np.ndarray, tol: float = MERGE_TOL) -> np.ndarray:
    kept: list[np.ndarray] = []
    for pt in points:
        if not any(np.max(np.abs(pt - k)) <= tol for k in kept):
            kept.append(pt)
    return np.array(kept)


def gradient_set(n: NormSpec, xi) -> GradientSet:
    """The gradient set ``{w : <xi,w> >= |xi|_*^2/2 + |w|^2/2}`` of a single covector."""
    xi = _check_dim(n, xi).reshape(-1)
    N = eval_dual_norm(n, xi)
    if N == 0:
        return GradientSet(xi.copy(), np.zeros((1, n.dim)))
    if n.kind == "ellipsoidal" or (n.is_lp_family and 1.0 < n.exponent < np.inf):
        return GradientSet(xi.copy(), gradient_selection(n, xi))
    if n.is_lp_family:
        a = n.weights
        if np.isinf(n.exponent):
            zero = np.abs(xi) / a <= TIE_TOL * N
            base = np.where(zero, 0.0, np.sign(xi) / a)
            idx = np.flatnonzero(zero)
            pts = []
            for signs in itertools.product((-1.0, 1.0), repeat=len(idx)):
                v = base.copy()
                v[idx] = np.array(signs) / a[idx]
                pts.append(N * v)
            pts = np.array(pts)
        else:
            r = np.abs(xi) / a
            act = np.flatnonzero(r >= (1.0 - TIE_TOL) * N)
            pts = np.zeros((len(act), n.dim))
            pts[np.arange(len(act)), act] = N * np.sign(xi[act]) / a[act]
    else:
        G = n.generators
        vals = G @ xi
        pts = N * G[vals >= N - TIE_TOL * N]
    return GradientSet(xi.copy(), _dedup(pts))


def is_dual_differentiable(n: NormSpec, xi) -> bool:
    """True iff the gradient set at ``xi`` is a singleton (up to the merge tolerance)."""
    return gradient_set(n, xi).is_singleton


def fenchel_gap(n: NormSpec, xi, w) -> np.ndarray | float:
    """``<xi,w> - |xi|_*^2/2 - |w|^2/2``; nonpositive, zero exactly on the gradient set."""
    xi = _check_dim(n, xi)
    w = _check_dim(n, w)
    return np.sum(xi * w, axis=-1) - 0.5 * eval_dual_norm(n, xi) ** 2 - 0.5 * eval_norm(n, w) ** 2
