"""Estimator-style wrappers around the solver and the divergence extraction.

Both classes follow the ``BaseEstimator`` parameter conventions and opt out
of ``set_output`` wrapping, since their inputs are domains, not arrays. ``fit``
takes a domain plus a field; ``transform`` returns a field on that domain.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .divergence import extract_divergence
from .minimize import DELTA_SCHEDULE, EnergySpec, certify_minimizer, minimize_p_energy
from .spaces import Domain, check_field


class PEnergyMinimizer(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Dirichlet minimizer of the p-energy for given boundary data.

    Parameters
    ----------
    p : float
        Energy exponent in (1, inf).
    omega : bool array, optional
        Subdomain; ``dom.omega`` when omitted.
    source : array, optional
        Source density ``s`` (the minimizer solves ``-div(|Dg|^(p-2) grad g) = s``).
    delta_schedule : sequence of float
        Smoothing continuation for the nonsmooth path.
    max_iter : int
    certify : bool
        Run ``certify_minimizer`` on the result after fitting.

    Attributes
    ----------
    minimizer_ : ndarray
    energy_ : float
    report_ : MinimizeReport
    certificate_ : CertificateVerdict or None
    """

    def __init__(self, p: float = 2.0, omega=None, source=None, delta_schedule=DELTA_SCHEDULE,
                 max_iter: int = 20000, certify: bool = True):
        self.p = p
        self.omega = omega
        self.source = source
        self.delta_schedule = delta_schedule
        self.max_iter = max_iter
        self.certify = certify

    def _spec(self, boundary) -> EnergySpec:
        return EnergySpec(self.p, boundary, self.omega, self.source)

    def fit(self, dom: Domain, boundary, init=None):
        boundary = check_field(dom, boundary, "boundary")
        spec = self._spec(boundary)
        rep = minimize_p_energy(dom, spec, init, delta_schedule=self.delta_schedule, max_iter=self.max_iter)
        self.domain_ = dom
        self.report_ = rep
        self.minimizer_ = rep.minimizer
        self.energy_ = rep.energy
        self.certificate_ = None
        if self.certify:
            # the source pairing belongs to the energy, so certify against the full spec
            self.certificate_ = certify_minimizer(dom, spec, rep.minimizer)
        return self

    def transform(self, dom: Domain | None = None):
        if not hasattr(self, "minimizer_"):
            raise NotFittedError("PEnergyMinimizer is not fitted yet")
        if dom is not None and dom is not self.domain_:
            raise ValueError("transform only evaluates on the fitted domain")
        return self.minimizer_.copy()

    def fit_transform(self, dom: Domain, boundary=None, **fit_params):
        return self.fit(dom, boundary, **fit_params).transform()

    def score(self, dom: Domain | None = None, boundary=None) -> float:
        """Negative energy, so that larger is better."""
        if not hasattr(self, "energy_"):
            raise NotFittedError("PEnergyMinimizer is not fitted yet")
        return -float(self.energy_)


class DivergenceExtractor(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Density of ``div(h grad g)`` on the strict interior of ``omega``.

    Parameters
    ----------
    h : array or float
        Weight field; a scalar is broadcast.
    omega : bool array, optional
    check : bool
        Verify membership of the extracted measure on the default test family.
    """

    def __init__(self, h=1.0, omega=None, check: bool = True):
        self.h = h
        self.omega = omega
        self.check = check

    def fit(self, dom: Domain, g):
        g = check_field(dom, g, "g")
        h = np.broadcast_to(np.asarray(self.h, dtype=float), (dom.n_sites,)).copy()
        self.measure_ = extract_divergence(dom, h, g, self.omega, check=self.check)
        self.domain_ = dom
        return self

    def transform(self, dom: Domain | None = None):
        if not hasattr(self, "measure_"):
            raise NotFittedError("DivergenceExtractor is not fitted yet")
        if dom is not None and dom is not self.domain_:
            raise ValueError("transform only evaluates on the fitted domain")
        return self.measure_.density.copy()

    def fit_transform(self, dom: Domain, g=None, **fit_params):
        return self.fit(dom, g, **fit_params).transform()
