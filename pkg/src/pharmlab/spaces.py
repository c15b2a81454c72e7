"""Finite metric measure models: normed grids and weighted graphs.

Fields are plain numpy arrays indexed by site. A scalar field has shape
``(n_sites,)``; a covector field (grid model only) has shape
``(n_sites, dim)``. A :class:`Jet` pairs values with an analytically supplied
differential, which lets pointwise identities be checked without finite
difference error.

Subdomain conventions
---------------------
An ``omega`` mask is a set of sites that includes its own boundary ring. The
*strict interior* of ``omega`` is the set of sites in ``omega`` that are not
model boundary sites and whose whole stencil (grid neighbours, or graph
neighbours) lies in ``omega``. Test functions live on the strict interior;
every other site carries fixed (boundary) data.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path

from .norms import NormSpec, eval_dual_norm

ScalarField = np.ndarray
CovectorField = np.ndarray
ModulusField = np.ndarray


@dataclass(frozen=True, eq=False)
class Jet:
    """Scalar values together with a supplied differential at every site."""

    values: np.ndarray
    covectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        c = np.asarray(self.covectors, dtype=float)
        if c.ndim != 2 or c.shape[0] != v.shape[0]:
            raise ValueError("covectors must have shape (n_sites, dim) matching values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "covectors", c)

    def __neg__(self) -> "Jet":
        return Jet(-self.values, -self.covectors)

    def scale(self, t: float) -> "Jet":
        return Jet(t * self.values, t * self.covectors)

    def __add__(self, other: "Jet") -> "Jet":
        return Jet(self.values + other.values, self.covectors + other.covectors)

    def __sub__(self, other: "Jet") -> "Jet":
        return Jet(self.values - other.values, self.covectors - other.covectors)

    def __mul__(self, other: "Jet") -> "Jet":
        """Product with the Leibniz differential."""
        return Jet(
            self.values * other.values,
            self.values[:, None] * other.covectors + other.values[:, None] * self.covectors,
        )

    def compose(self, phi) -> "Jet":
        """``phi`` applied to the values with the chain-rule differential."""
        return Jet(phi(self.values), phi.derivative(self.values)[:, None] * self.covectors)


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Regular grid over a box in R^dim with a norm and a site density.

    Parameters
    ----------
    shape : tuple of int
        Number of sites per axis (at least 2 each).
    spacing : float
        Grid step h.
    norm : NormSpec
        Primal norm; moduli are dual norms of discrete differentials.
    lower : tuple of float, optional
        Coordinates of the first site, zeros by default.
    density : {"trapezoid", "uniform"} or array
        Site density. ``"trapezoid"`` halves the weight per boundary axis,
        which makes discrete integration by parts exact up to the boundary.
    omega : bool array, optional
        Subdomain mask, all sites by default.
    """

    shape: tuple
    spacing: float
    norm: NormSpec
    lower: tuple | None = None
    density: object = "trapezoid"
    omega: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if any(s < 2 for s in shape):
            raise ValueError("every grid axis needs at least 2 sites")
        if self.norm.dim != len(shape):
            raise ValueError(f"norm dimension {self.norm.dim} does not match grid dimension {len(shape)}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "shape", shape)
        lower = tuple(float(x) for x in (self.lower if self.lower is not None else (0.0,) * len(shape)))
        object.__setattr__(self, "lower", lower)
        n = int(np.prod(shape))
        if isinstance(self.density, str):
            if self.density == "trapezoid":
                dens = np.ones(n)
                for ax, s in enumerate(shape):
                    idx = self.index[:, ax]
                    dens = dens * np.where((idx == 0) | (idx == s - 1), 0.5, 1.0)
            elif self.density == "uniform":
                dens = np.ones(n)
            else:
                raise ValueError(f"unknown density profile {self.density!r}")
        else:
            dens = np.asarray(self.density, dtype=float).reshape(-1)
        if dens.shape != (n,) or np.any(~np.isfinite(dens)) or np.any(dens <= 0):
            raise ValueError("density must be positive and finite at every site")
        object.__setattr__(self, "density", dens)
        om = np.ones(n, bool) if self.omega is None else np.asarray(self.omega, bool).reshape(-1)
        if om.shape != (n,):
            raise ValueError("omega mask has the wrong size")
        object.__setattr__(self, "omega", om)

    @classmethod
    def unit_box(cls, n: int, dim: int, norm: NormSpec | None = None, **kw) -> "GridDomain":
        """``n`` sites per axis on [0, 1]^dim."""
        norm = norm if norm is not None else NormSpec.lp(dim, 2.0)
        return cls(shape=(n,) * dim, spacing=1.0 / (n - 1), norm=norm, **kw)

    @classmethod
    def centered_box(cls, n: int, dim: int, half_width: float, norm: NormSpec | None = None, **kw):
        """``n`` sites per axis on [-half_width, half_width]^dim."""
        norm = norm if norm is not None else NormSpec.lp(dim, 2.0)
        return cls(shape=(n,) * dim, spacing=2.0 * half_width / (n - 1), norm=norm,
                   lower=(-half_width,) * dim, **kw)

    def with_omega(self, omega) -> "GridDomain":
        return GridDomain(self.shape, self.spacing, self.norm, self.lower, self.density, omega)

    def with_norm(self, norm: NormSpec) -> "GridDomain":
        return GridDomain(self.shape, self.spacing, norm, self.lower, self.density, self.omega)

    @property
    def model(self) -> str:
        return "grid"

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def index(self) -> np.ndarray:
        return np.stack(np.unravel_index(np.arange(int(np.prod(self.shape))), self.shape), axis=1)

    @cached_property
    def coords(self) -> np.ndarray:
        return np.asarray(self.lower) + self.spacing * self.index

    @cached_property
    def measure(self) -> np.ndarray:
        return self.spacing ** self.dim * self.density

    @cached_property
    def boundary(self) -> np.ndarray:
        idx = self.index
        return np.any((idx == 0) | (idx == np.asarray(self.shape) - 1), axis=1)

    @cached_property
    def diff_ops(self) -> list:
        """Sparse difference operators, one per axis.

        Central differences where both neighbours exist, one-sided on the
        grid boundary along that axis.
        """
        ops = []
        for ax, s in enumerate(self.shape):
            d = sp.lil_matrix((s, s))
            for i in range(1, s - 1):
                d[i, i - 1] = -0.5
                d[i, i + 1] = 0.5
            d[0, 0], d[0, 1] = -1.0, 1.0
            d[s - 1, s - 2], d[s - 1, s - 1] = -1.0, 1.0
            mats = [sp.identity(k, format="csr") for k in self.shape]
            mats[ax] = d.tocsr()
            op = mats[0]
            for m in mats[1:]:
                op = sp.kron(op, m, format="csr")
            ops.append((op / self.spacing).tocsr())
        return ops

    def neighbours_in(self, mask: np.ndarray) -> np.ndarray:
        """Sites all of whose axis neighbours exist and lie in ``mask``."""
        ok = ~self.boundary
        grid = mask.reshape(self.shape)
        for ax in range(self.dim):
            fwd = np.zeros(self.shape, bool)
            bwd = np.zeros(self.shape, bool)
            sl = [slice(None)] * self.dim
            sl_src = [slice(None)] * self.dim
            sl[ax], sl_src[ax] = slice(0, -1), slice(1, None)
            fwd[tuple(sl)] = grid[tuple(sl_src)]
            bwd[tuple(sl_src)] = grid[tuple(sl)]
            ok = ok & fwd.reshape(-1) & bwd.reshape(-1)
        return ok


@dataclass(frozen=True, eq=False)
class GraphDomain:
    """Connected weighted graph with vertex measure.

    Parameters
    ----------
    conductance : sparse or dense (n, n) array
        Symmetric nonnegative edge conductances c(x, y), zero diagonal.
    measure : array
        Positive vertex measure m(x).
    boundary : bool array, optional
        Designated boundary vertices (never test-function support).
    omega : bool array, optional
        Subdomain mask, all vertices by default.
    p_model : float
        Exponent of the vertex modulus ``(sum_y c |f(y)-f(x)|^p_model)^(1/p_model)``.
    coords : array, optional
        Vertex positions, only used for export.
    """

    conductance: object
    measure: np.ndarray
    boundary: np.ndarray | None = None
    omega: np.ndarray | None = None
    p_model: float = 2.0
    coords: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        C = sp.csr_matrix(self.conductance, dtype=float)
        n = C.shape[0]
        if C.shape != (n, n):
            raise ValueError("conductance must be square")
        C.setdiag(0.0)
        C.eliminate_zeros()
        if (abs(C - C.T) > 1e-14 * max(1.0, abs(C).max())).nnz:
            raise ValueError("conductances must be symmetric")
        if C.nnz and C.data.min() <= 0:
            raise ValueError("conductances must be positive on edges")
        if connected_components(C, directed=False)[0] != 1:
            raise ValueError("graph must be connected")
        m = np.asarray(self.measure, dtype=float).reshape(-1)
        if m.shape != (n,) or np.any(m <= 0) or np.any(~np.isfinite(m)):
            raise ValueError("vertex measure must be positive and finite")
        if not self.p_model > 1.0:
            raise ValueError("p_model must exceed 1")
        object.__setattr__(self, "conductance", C)
        object.__setattr__(self, "measure", m)
        object.__setattr__(self, "p_model", float(self.p_model))
        bd = np.zeros(n, bool) if self.boundary is None else np.asarray(self.boundary, bool).reshape(-1)
        om = np.ones(n, bool) if self.omega is None else np.asarray(self.omega, bool).reshape(-1)
        if bd.shape != (n,) or om.shape != (n,):
            raise ValueError("masks have the wrong size")
        object.__setattr__(self, "boundary", bd)
        object.__setattr__(self, "omega", om)
        xy = np.zeros((n, 1)) if self.coords is None else np.asarray(self.coords, dtype=float).reshape(n, -1)
        object.__setattr__(self, "coords", xy)

    @classmethod
    def lattice(cls, shape, seed: int = 0, spread: float = 0.5, p_model: float = 2.0) -> "GraphDomain":
        """Lattice graph with seeded conductances in [1-spread, 1+spread].

        Outer lattice vertices are marked as boundary; the measure is uniform.
        """
        shape = tuple(int(s) for s in shape)
        n = int(np.prod(shape))
        idx = np.stack(np.unravel_index(np.arange(n), shape), axis=1)
        rng = np.random.default_rng(seed)
        rows, cols = [], []
        for ax in range(len(shape)):
            step = int(np.prod(shape[ax + 1:]))
            src = np.flatnonzero(idx[:, ax] < shape[ax] - 1)
            rows.append(src)
            cols.append(src + step)
        r, c = np.concatenate(rows), np.concatenate(cols)
        w = 1.0 + spread * (2.0 * rng.random(len(r)) - 1.0)
        C = sp.coo_matrix((np.r_[w, w], (np.r_[r, c], np.r_[c, r])), shape=(n, n)).tocsr()
        bd = np.any((idx == 0) | (idx == np.asarray(shape) - 1), axis=1)
        return cls(C, np.ones(n), boundary=bd, p_model=p_model, coords=idx.astype(float))

    @classmethod
    def path(cls, n: int, conductance: float = 1.0, p_model: float = 2.0) -> "GraphDomain":
        """Path graph with the two end vertices as boundary."""
        i = np.arange(n - 1)
        C = sp.coo_matrix((np.full(2 * (n - 1), conductance), (np.r_[i, i + 1], np.r_[i + 1, i])), shape=(n, n))
        bd = np.zeros(n, bool)
        bd[[0, -1]] = True
        return cls(C, np.ones(n), boundary=bd, p_model=p_model, coords=np.arange(n, dtype=float))

    def with_omega(self, omega) -> "GraphDomain":
        return GraphDomain(self.conductance, self.measure, self.boundary, omega, self.p_model, self.coords)

    @property
    def model(self) -> str:
        return "graph"

    @property
    def n_sites(self) -> int:
        return self.conductance.shape[0]

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Oriented edges ``(src, dst, c)``, both orientations, sorted by (src, dst)."""
        coo = self.conductance.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]

    def neighbours_in(self, mask: np.ndarray) -> np.ndarray:
        src, dst, _ = self.edges
        bad = np.zeros(self.n_sites, bool)
        np.logical_or.at(bad, src, ~mask[dst])
        return ~self.boundary & ~bad


Domain = GridDomain | GraphDomain


def check_field(dom: Domain, f, name: str = "field") -> np.ndarray:
    """Validate a scalar field against a domain and return it as float array."""
    if isinstance(f, Jet):
        f = f.values
    a = np.asarray(f, dtype=float)
    if a.shape != (dom.n_sites,):
        raise ValueError(f"{name} must have shape ({dom.n_sites},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite values")
    return a


def as_covectors(dom: GridDomain, f) -> np.ndarray:
    """Covectors of a Jet, a covector array, or the differential of a scalar field."""
    if isinstance(f, Jet):
        return f.covectors
    a = np.asarray(f, dtype=float)
    if a.ndim == 2:
        if a.shape != (dom.n_sites, dom.dim):
            raise ValueError(f"covector field must have shape ({dom.n_sites}, {dom.dim})")
        return a
    return differential(dom, a)


def resolve_omega(dom: Domain, omega=None) -> np.ndarray:
    return dom.omega if omega is None else np.asarray(omega, bool).reshape(-1)


def strict_interior(dom: Domain, omega=None) -> np.ndarray:
    """Mask of sites of ``omega`` whose full stencil lies in ``omega``."""
    om = resolve_omega(dom, omega)
    return om & dom.neighbours_in(om)


def differential(dom: GridDomain, f) -> CovectorField:
    """Discrete differential: central differences, one-sided on the boundary ring."""
    if not isinstance(dom, GridDomain):
        raise TypeError("differential is defined on grid domains only")
    f = check_field(dom, f)
    return np.stack([op @ f for op in dom.diff_ops], axis=1)


def edge_differences(dom: GraphDomain, f) -> np.ndarray:
    """``f(dst) - f(src)`` over the oriented edge list."""
    f = check_field(dom, f)
    src, dst, _ = dom.edges
    return f[dst] - f[src]


def graph_modulus(dom: GraphDomain, diffs: np.ndarray) -> np.ndarray:
    src, _, c = dom.edges
    pm = dom.p_model
    s = np.bincount(src, weights=c * np.abs(diffs) ** pm, minlength=dom.n_sites)
    return s ** (1.0 / pm)


def modulus(dom: Domain, f) -> ModulusField:
    """Per-site modulus |Df|: dual norm of the differential, or the graph edge aggregate."""
    if isinstance(dom, GridDomain):
        return np.atleast_1d(eval_dual_norm(dom.norm, as_covectors(dom, f)))
    return graph_modulus(dom, edge_differences(dom, f))


def integrate(dom: Domain, f, omega=None) -> float:
    """``sum f m`` over ``omega`` (all sites by default)."""
    f = check_field(dom, f)
    mask = np.ones(dom.n_sites, bool) if omega is None else np.asarray(omega, bool)
    return float(np.sum(f[mask] * dom.measure[mask]))


class TestFamily(Sequence):
    """Hat functions on the strict interior followed by seeded smooth bumps.

    Behaves as a read-only list of scalar fields; hats are built on access.
    """

    __test__ = False  # not a pytest class

    def __init__(self, n_sites: int, hat_sites: np.ndarray, bumps: list[np.ndarray]):
        self.n_sites = n_sites
        self.hat_sites = hat_sites
        self.bumps = bumps

    @property
    def n_hats(self) -> int:
        return len(self.hat_sites)

    def __len__(self) -> int:
        return len(self.hat_sites) + len(self.bumps)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        if k < len(self.hat_sites):
            f = np.zeros(self.n_sites)
            f[self.hat_sites[k]] = 1.0
            return f
        return self.bumps[k - len(self.hat_sites)]


def make_test_functions(dom: Domain, omega=None, count: int = 32, seed: int = 0) -> TestFamily:
    """Hats on every strict-interior site plus ``count`` seeded smooth bumps.

    Bumps are products of clamped cosine profiles on grids and clamped cosine
    profiles of hop distance on graphs; all vanish off the strict interior.
    """
    S = strict_interior(dom, omega)
    sites = np.flatnonzero(S)
    if sites.size == 0:
        raise ValueError("omega has an empty strict interior")
    rng = np.random.default_rng(seed)
    bumps = []
    for _ in range(count):
        center = sites[rng.integers(sites.size)]
        if isinstance(dom, GridDomain):
            x = dom.coords
            c = x[center]
            val = np.ones(dom.n_sites)
            for ax, s in enumerate(dom.shape):
                r = dom.spacing * rng.uniform(1.5, max(2.0, 0.3 * s))
                t = np.abs(x[:, ax] - c[ax]) / r
                val *= np.where(t < 1.0, 0.5 * (1.0 + np.cos(np.pi * t)), 0.0)
        else:
            hops = shortest_path(dom.conductance, directed=False, unweighted=True, indices=int(center))
            radius = int(rng.integers(1, 4))
            t = hops / (radius + 1.0)
            val = np.where(t < 1.0, 0.5 * (1.0 + np.cos(np.pi * t)), 0.0)
        bumps.append(np.where(S, val, 0.0))
    return TestFamily(dom.n_sites, sites, bumps)
