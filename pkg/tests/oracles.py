"""Independent reference computations.

None of these call into the package's norm or calculus code; they use brute
force, scipy geometry or quadrature instead. ``tests/test_oracles.py`` checks
that they still reproduce the literals frozen in ``tests/frozen.py``.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import integrate
from scipy.spatial import ConvexHull


def dual_norm_by_sweep(p: float, xi, samples: int = 200001) -> float:
    """max <xi, v> over the planar lp unit sphere, by a dense angular sweep."""
    th = np.linspace(0.0, 2 * np.pi, samples)
    v = np.stack([np.cos(th), np.sin(th)], axis=1)
    nv = np.sum(np.abs(v) ** p, axis=1) ** (1.0 / p)
    v = v / nv[:, None]
    vals = v @ np.asarray(xi, dtype=float)
    k = int(np.argmax(vals))
    # refine around the best angle with golden-section search
    lo, hi = th[max(k - 1, 0)], th[min(k + 1, samples - 1)]
    f = lambda t: -(np.array([np.cos(t), np.sin(t)]) / np.sum(np.abs([np.cos(t), np.sin(t)]) ** p) ** (1 / p)) @ xi  # noqa: E731
    g = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    for _ in range(200):
        c, d = b - g * (b - a), a + g * (b - a)
        if f(c) < f(d):
            b = d
        else:
            a = c
    return float(-f((a + b) / 2))


def polytope_gauge(generators, v) -> float:
    """Minkowski functional from the facet inequalities of the convex hull."""
    eq = ConvexHull(np.asarray(generators, dtype=float)).equations  # a.x + b <= 0, b < 0
    a, b = eq[:, :-1], eq[:, -1]
    return float(np.max(a @ np.asarray(v, dtype=float) / -b))


def brute_gradient_set_linf(xi, step: float = 1.0 / 64, box: float = 4.0) -> np.ndarray:
    """Maximizers of <xi, w> - |w|_inf^2 / 2 over a planar grid (L-inf primal norm)."""
    xi = np.asarray(xi, dtype=float)
    t = np.arange(-box, box + step / 2, step)
    W = np.array(list(itertools.product(t, t)))
    vals = W @ xi - 0.5 * np.max(np.abs(W), axis=1) ** 2
    best = vals.max()
    return W[vals >= best - 1e-12]


def linf_dpm_brute(df, dg_scale: float = 1.0, samples: int = 20001) -> tuple[float, float]:
    """D+/D- for the L-inf primal norm at dg = (s, 0): extremes of <df, (s, s v2)> over v2 in [-1, 1]."""
    v2 = np.linspace(-1, 1, samples)
    vals = dg_scale * (df[0] + df[1] * v2)
    return float(vals.max()), float(vals.min())


def quotient_plain(dual_norm, df, dg, eps: float) -> tuple[float, float]:
    """One-sided quotients of eps -> |dg + eps df|_*^2 / 2 with a caller-supplied dual norm."""
    df, dg = np.asarray(df, float), np.asarray(dg, float)
    base = 0.5 * dual_norm(dg) ** 2
    right = (0.5 * dual_norm(dg + eps * df) ** 2 - base) / eps
    left = (0.5 * dual_norm(dg - eps * df) ** 2 - base) / (-eps)
    return right, left


def disk_mean_abs_x1_over_diameter() -> float:
    """(mean of |x1| over the unit disk) / 2, by adaptive quadrature."""
    num, _ = integrate.dblquad(lambda y, x: abs(x), -1, 1, lambda x: -np.sqrt(1 - x * x), lambda x: np.sqrt(1 - x * x))
    return float(num / np.pi / 2.0)


def square_integral_x2_plus_y2() -> float:
    val, _ = integrate.dblquad(lambda y, x: x * x + y * y, 0, 1, 0, 1)
    return float(val)


def graph_laplacian_mass(C, g) -> np.ndarray:
    """sum_y c(x, y) (g(y) - g(x)) by explicit double loop."""
    C = np.asarray(C, dtype=float)
    n = len(g)
    out = np.zeros(n)
    for x in range(n):
        for y in range(n):
            if C[x, y] != 0:
                out[x] += C[x, y] * (g[y] - g[x])
    return out


def parallelogram_defect_lp(p: float, f, g) -> float:
    """|E(f+g) + E(f-g) - 2E(f) - 2E(g)| for E(v) = |v|_q^2 with q the dual exponent of p."""
    q = np.inf if p == 1 else (1.0 if np.isinf(p) else p / (p - 1))
    def E(v):
        v = np.asarray(v, dtype=float)
        return (np.max(np.abs(v)) if np.isinf(q) else np.sum(np.abs(v) ** q) ** (1 / q)) ** 2
    f, g = np.asarray(f, float), np.asarray(g, float)
    return float(abs(E(f + g) + E(f - g) - 2 * E(f) - 2 * E(g)))
