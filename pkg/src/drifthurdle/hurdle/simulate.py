"""Simulation from the hurdle-Gamma model with AR(1) x Matern latent fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special
from scipy.spatial.distance import cdist

from ..errors import NumericalError
from ..gpfield import JITTER_LADDER, matern_correlation
from .data import Dataset
from .model import HurdleModelSpec


@dataclass
class LatentTruth:
    psi: np.ndarray  # (n, T)
    xi: np.ndarray
    eta_z: np.ndarray
    eta_y: np.ndarray

    @property
    def pi(self):
        return special.expit(self.eta_z)

    @property
    def mu(self):
        return np.exp(self.eta_y)

    def time_averaged_mean(self):
        """Per-site ``(1/T) sum_t pi_it mu_it``."""
        return np.mean(self.pi * self.mu, axis=1)


def _corr_chol(dist, nu, rho):
    corr = matern_correlation(dist, nu, np.sqrt(8 * nu) / rho)
    for jitter in JITTER_LADDER:
        try:
            return linalg.cholesky(corr + jitter * np.eye(len(corr)), lower=True)
        except linalg.LinAlgError:
            continue
    raise NumericalError("Matern correlation not positive definite after jitter")


def simulate_ar1_field(dist, nu, rho, sigma, alpha, T, rng):
    """``f_t = alpha f_{t-1} + e_t`` with Matern innovations and a stationary start.

    Returns an ``(n, T)`` array.
    """
    chol = _corr_chol(dist, nu, rho)
    n = len(dist)
    eps = sigma * (chol @ rng.standard_normal((n, T)))
    out = np.empty((n, T))
    out[:, 0] = eps[:, 0] / np.sqrt(1.0 - alpha * alpha)
    for t in range(1, T):
        out[:, t] = alpha * out[:, t - 1] + eps[:, t]
    return out


def matern_covariate(sites, T, rng, rho=0.2, nu=1.0):
    """Unit-variance Matern covariate drawn independently for every time."""
    chol = _corr_chol(cdist(sites, sites), nu, rho)
    return (chol @ rng.standard_normal((len(sites), T)))[:, :, None]


def simulate_hurdle(spec: HurdleModelSpec | None = None, sites=None, T: int = 10, n: int = 100,
                    covariates=None, seed=None):
    """Draw a hurdle-Gamma panel and its latent truth.

    Parameters
    ----------
    spec : HurdleModelSpec
        True parameters; defaults reproduce the simulation-study setting.
    sites : array_like, optional
        ``(n, 2)`` locations; ``n`` uniform sites on the unit square if omitted.
    covariates : callable or array, optional
        ``(n, T, p)`` array, or ``f(sites, T, rng)`` returning one. Defaults to
        a single Matern covariate (range 0.2, unit variance), iid in time.
    """
    spec = spec or HurdleModelSpec()
    rng = np.random.default_rng(seed)
    sites = rng.uniform(size=(n, 2)) if sites is None else np.asarray(sites, dtype=float)
    n = len(sites)
    if covariates is None:
        covariates = matern_covariate
    cov = covariates(sites, T, rng) if callable(covariates) else np.asarray(covariates, dtype=float)
    if cov.ndim == 2:
        cov = cov[:, :, None]
    p = cov.shape[2]
    if len(spec.beta_z) != p + 1:
        raise NumericalError(f"spec has {len(spec.beta_z) - 1} slopes but {p} covariates")
    dist = cdist(sites, sites)
    psi = _field(dist, spec, "psi", T, rng)
    xi = _field(dist, spec, "xi", T, rng)
    bz = np.asarray(spec.beta_z)
    by = np.asarray(spec.beta_y)
    eta_z = bz[0] + cov @ bz[1:] + psi
    eta_y = by[0] + cov @ by[1:] + spec.gamma * psi + xi
    pi = special.expit(eta_z)
    z = (rng.uniform(size=(n, T)) < pi).astype(int)
    mu = np.exp(eta_y)
    y_all = rng.gamma(spec.k, mu / spec.k)
    y = np.where(z == 1, y_all, np.nan)
    data = Dataset(
        site_ids=[f"s{i + 1:03d}" for i in range(n)],
        coords=sites,
        times=np.arange(1, T + 1),
        z=z,
        y=y,
        covariates=cov,
        meta={"simulated": True},
    )
    return data, LatentTruth(psi, xi, eta_z, eta_y)


def _field(dist, spec, name, T, rng):
    sigma = getattr(spec, f"sigma_{name}")
    if sigma == 0:
        return np.zeros((len(dist), T))
    return simulate_ar1_field(dist, spec.nu, getattr(spec, f"rho_{name}"), sigma,
                              getattr(spec, f"alpha_{name}"), T, rng)


def gamma_draws(k, mu, size, seed=None):
    """Gamma draws with shape ``k`` and rate ``k / mu`` (mean ``mu``, variance ``mu^2 / k``)."""
    rng = np.random.default_rng(seed)
    return rng.gamma(k, mu / k, size=size)

