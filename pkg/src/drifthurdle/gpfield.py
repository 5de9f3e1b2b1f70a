"""Matern covariance, Gaussian-field simulation and kriging.

The kriging model is ``y(s) = beta0 + phi(s) + eps(s)`` with ``phi`` a
zero-mean Matern Gaussian process and ``eps`` iid Gaussian noise. It is fitted
by maximum likelihood on the exact dense covariance; the intercept is
profiled out by generalised least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special
from scipy.spatial.distance import cdist

from .errors import FitError, InvalidArgument, NumericalError

JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
LOG_BOUND = (math.log(1e-6), math.log(1e6))


@dataclass(frozen=True)
class MaternParams:
    nu: float
    kappa: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not (self.nu > 0 and self.kappa > 0 and self.sigma2 > 0):
            raise InvalidArgument(f"Matern parameters must be positive: {self}")

    @classmethod
    def from_range(cls, nu, rho, sigma2=1.0):
        return cls(nu, math.sqrt(8 * nu) / rho, sigma2)

    @property
    def range(self):
        return math.sqrt(8 * self.nu) / self.kappa


def _kve(order, x):
    """Exponentially scaled ``K_order(x)``, using the fast special cases."""
    order = abs(order)
    if order == 0:
        return special.k0e(x)
    if order == 1:
        return special.k1e(x)
    if order == 0.5:
        return np.sqrt(np.pi / (2 * x))
    return special.kve(order, x)


def matern_correlation(h, nu, kappa):
    h = np.asarray(h, dtype=float)
    x = kappa * h
    out = np.ones_like(x)
    pos = x > 1e-12
    xp = x[pos]
    # x^nu K_nu(x) with the exponential factored out of kve for large x
    out[pos] = (2.0 ** (1 - nu) / special.gamma(nu)) * np.exp(
        nu * np.log(xp) - xp) * _kve(nu, xp)
    return out


def matern_cov(h, p: MaternParams):
    """``sigma2 / (2^(nu-1) Gamma(nu)) (kappa h)^nu K_nu(kappa h)``; ``sigma2`` at 0."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise InvalidArgument("distances must be non-negative")
    out = p.sigma2 * matern_correlation(h, p.nu, p.kappa)
    return float(out) if out.ndim == 0 else out


def _matern_dlogkappa(h, nu, kappa):
    """Derivative of the Matern correlation with respect to ``log kappa``."""
    x = kappa * np.asarray(h, dtype=float)
    out = np.zeros_like(x)
    pos = x > 1e-12
    xp = x[pos]
    # d/dx [x^nu K_nu(x)] = -x^nu K_{nu-1}(x)
    out[pos] = -(2.0 ** (1 - nu) / special.gamma(nu)) * np.exp(
        (nu + 1) * np.log(xp) - xp) * _kve(nu - 1, xp)
    return out


def _cholesky(k, scale):
    """Lower Cholesky factor, adding ``jitter * scale`` to the diagonal as needed."""
    for jitter in (0.0,) + JITTER_LADDER:
        try:
            a = k if jitter == 0 else k + jitter * scale * np.eye(len(k))
            return linalg.cholesky(a, lower=True), jitter
        except linalg.LinAlgError:
            continue
    raise NumericalError("covariance is not positive definite after jitter escalation")


def simulate_gp(locations, p: MaternParams, seed=None, size=None):
    """Draw from ``N(0, Sigma)`` at ``locations`` (shape ``(n, d)``).

    ``size`` adds a leading replicate axis. A jitter of ``1e-8 sigma2`` (raised
    up to ``1e-4 sigma2`` if needed) is added to the diagonal.
    """
    rng = np.random.default_rng(seed)
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    n = len(locations)
    cov = matern_cov(cdist(locations, locations), p)
    chol = None
    for jitter in JITTER_LADDER:
        try:
            chol = linalg.cholesky(cov + jitter * p.sigma2 * np.eye(n), lower=True)
            break
        except linalg.LinAlgError:
            continue
    if chol is None:
        raise NumericalError("Matern covariance not positive definite after jitter")
    shape = (n,) if size is None else (size, n)
    eps = rng.standard_normal(shape)
    return eps @ chol.T


@dataclass
class KrigingModel:
    """Fitted kriging model; parameters are on the data's own scale."""

    locations: np.ndarray
    values: np.ndarray  # (m, n): replicates share locations
    nu: float
    beta0: float
    sigma2: float
    kappa: float
    nugget: float
    loglik: float
    converged: bool
    grad_norm: float = float("nan")
    starts: list = field(default_factory=list)
    _chol: np.ndarray | None = field(default=None, repr=False)

    @property
    def range(self):
        return math.sqrt(8 * self.nu) / self.kappa

    @property
    def matern(self) -> MaternParams:
        return MaternParams(self.nu, self.kappa, self.sigma2)

    def _factor(self):
        if self._chol is None:
            d = cdist(self.locations, self.locations)
            k = self.sigma2 * matern_correlation(d, self.nu, self.kappa) + self.nugget * np.eye(len(d))
            self._chol, _ = _cholesky(k, self.sigma2 + self.nugget)
        return self._chol

    def to_dict(self):
        return {
            "nu": self.nu, "beta0": self.beta0, "sigma2": self.sigma2,
            "sigma": math.sqrt(self.sigma2), "kappa": self.kappa, "range": self.range,
            "nugget": self.nugget, "loglik": self.loglik, "converged": self.converged,
            "grad_norm": self.grad_norm, "n": int(self.values.shape[1]),
            "replicates": int(self.values.shape[0]),
        }


class _Likelihood:
    """Profiled Gaussian log-likelihood in ``(log sigma2, log kappa, log nugget)``."""

    def __init__(self, dist, y, nu):
        self.y = y  # (m, n)
        self.nu = nu
        self.m, self.n = y.shape
        self.iu = np.triu_indices(self.n, 1)
        self.dvec = dist[self.iu]

    def _symmetric(self, values, diag):
        out = np.empty((self.n, self.n))
        out[self.iu] = values
        out.T[self.iu] = values
        np.fill_diagonal(out, diag)
        return out

    def evaluate(self, theta, grad=True):
        ls2, lk, ln = theta
        s2, kappa, nug = math.exp(ls2), math.exp(lk), math.exp(ln)
        corr = self._symmetric(matern_correlation(self.dvec, self.nu, kappa), 1.0)
        k = s2 * corr + nug * np.eye(self.n)
        try:
            chol = linalg.cholesky(k, lower=True)
        except linalg.LinAlgError:
            return -np.inf, np.zeros(3), None
        ones = np.ones(self.n)
        kinv_1 = linalg.cho_solve((chol, True), ones)
        kinv_y = linalg.cho_solve((chol, True), self.y.T)  # (n, m)
        beta = float(np.sum(ones @ kinv_y) / (self.m * ones @ kinv_1))
        alpha = kinv_y - beta * kinv_1[:, None]
        resid = self.y.T - beta
        logdet = 2 * np.sum(np.log(np.diag(chol)))
        ll = -0.5 * np.sum(resid * alpha) - 0.5 * self.m * logdet \
            - 0.5 * self.m * self.n * math.log(2 * math.pi)
        if not grad:
            return ll, None, beta
        kinv, info = linalg.lapack.dpotri(chol, lower=1)
        if info != 0:
            return -np.inf, np.zeros(3), None
        kinv = np.tril(kinv) + np.tril(kinv, -1).T
        aa = alpha @ alpha.T
        w = aa - self.m * kinv
        dcorr = self._symmetric(_matern_dlogkappa(self.dvec, self.nu, kappa), 0.0)
        g = np.empty(3)
        g[0] = 0.5 * s2 * np.sum(w * corr)
        g[1] = 0.5 * s2 * np.sum(w * dcorr)
        g[2] = 0.5 * nug * np.trace(w)
        return ll, g, beta


def _dedup(locations, values):
    keys, inverse = np.unique(locations, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    if len(keys) == len(locations):
        return locations, values
    counts = np.bincount(inverse)
    out = np.zeros((values.shape[0], len(keys)))
    for r in range(values.shape[0]):
        out[r] = np.bincount(inverse, weights=values[r]) / counts
    return keys, out


def _projected_grad_norm(theta, g, bounds):
    g = g.copy()
    for i, (lo, hi) in enumerate(bounds):
        # ascent direction pushing against an active bound is not a violation
        if theta[i] <= lo + 1e-10 and g[i] < 0:
            g[i] = 0.0
        if theta[i] >= hi - 1e-10 and g[i] > 0:
            g[i] = 0.0
    return float(np.linalg.norm(g))


def fit_kriging(locations, values, nu: float = 1.0, n_starts: int = 3,
                grad_tol: float = 1e-5, step_tol: float = 1e-8) -> KrigingModel:
    """Maximum-likelihood fit of the kriging model.

    ``values`` is ``(n,)`` or ``(m, n)`` for ``m`` independent replicates at the
    same locations. Duplicate locations are merged by averaging. The data are
    rescaled to unit variance internally so the box constraints
    ``[1e-6, 1e6]`` on ``kappa`` and both variances are scale-free; estimates
    are returned on the original scale.
    """
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    y = np.atleast_2d(np.asarray(values, dtype=float))
    if y.shape[1] != len(locations):
        raise InvalidArgument("values and locations differ in length")
    if not np.all(np.isfinite(y)):
        raise InvalidArgument("values must be finite")
    locations, y = _dedup(locations, y)
    m, n = y.shape
    if n < 10:
        raise InvalidArgument(f"kriging needs at least 10 distinct sites, got {n}")

    centre = float(y.mean())
    scale = float(y.std())
    if scale == 0.0:
        scale = 1.0
    ys = (y - centre) / scale
    dist = cdist(locations, locations)
    lik = _Likelihood(dist, ys, nu)
    span = float(dist.max())
    bounds = [LOG_BOUND, LOG_BOUND, LOG_BOUND]

    def start(s2, nug, frac):
        k = math.sqrt(8 * nu) / (frac * span)
        return np.clip(np.log([s2, k, nug]), LOG_BOUND[0], LOG_BOUND[1])

    starts = [start(0.9, 0.1, 0.2), start(0.5, 0.5, 0.5), start(0.99, 0.01, 0.05)]
    starts = starts[:max(n_starts, 1)]
    while len(starts) < n_starts:
        j = len(starts)
        starts.append(start(0.9 * 0.7 ** j, 0.1 * 0.5 ** j, 0.2 / (1 + j)))

    def objective(theta):
        ll, g, _ = lik.evaluate(theta)
        if not np.isfinite(ll):
            return 1e300, np.zeros(3)
        return -ll, -g

    best = None
    trace = []
    for x0 in starts:
        res = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 500, "ftol": 1e-12, "gtol": 1e-7})
        trace.append({"start": x0.tolist(), "loglik": -float(res.fun)})
        if best is None or res.fun < best.fun:
            best = res

    theta = best.x
    converged = False
    gnorm = np.inf
    for _ in range(5):
        _, g, _ = lik.evaluate(theta)
        gnorm = _projected_grad_norm(theta, g, bounds)
        if gnorm < grad_tol:
            converged = True
            break
        res = optimize.minimize(objective, theta, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-10})
        step = float(np.max(np.abs(res.x - theta)))
        theta = res.x if res.fun <= objective(theta)[0] else theta
        if step < step_tol:
            converged = True
            break

    ll, g, beta = lik.evaluate(theta)
    s2, kappa, nug = np.exp(theta)
    model = KrigingModel(
        locations=locations,
        values=y,
        nu=nu,
        beta0=centre + scale * beta,
        sigma2=float(s2 * scale ** 2),
        kappa=float(kappa),
        nugget=float(nug * scale ** 2),
        loglik=float(ll - m * n * math.log(scale)),
        converged=converged,
        grad_norm=gnorm,
        starts=trace,
    )
    if not np.isfinite(ll):
        raise FitError("kriging likelihood is not finite at every start", best=model)
    if not converged:
        raise FitError(f"kriging fit did not converge (gradient norm {gnorm:.2e})", best=model)
    return model


def kriging_standard_errors(model: KrigingModel, step: float = 1e-3):
    """Approximate standard errors of ``kappa`` and ``sigma`` from the observed information.

    Returns ``{"kappa": sd, "sigma": sd}`` or NaNs when the information
    matrix is not positive definite.
    """
    dist = cdist(model.locations, model.locations)
    lik = _Likelihood(dist, model.values, model.nu)
    theta = np.log([model.sigma2, model.kappa, model.nugget])
    hess = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        gp = lik.evaluate(theta + e)[1]
        gm = lik.evaluate(theta - e)[1]
        hess[:, j] = (gp - gm) / (2 * step)
    info = -0.5 * (hess + hess.T)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return {"kappa": float("nan"), "sigma": float("nan")}
    if np.any(np.diag(cov) <= 0):
        return {"kappa": float("nan"), "sigma": float("nan")}
    sd = np.sqrt(np.diag(cov))
    return {"kappa": float(model.kappa * sd[1]),
            "sigma": float(0.5 * math.sqrt(model.sigma2) * sd[0])}


def krige_predict(model: KrigingModel, targets, chunk: int = 4096):
    """Conditional mean and SD of ``beta0 + phi`` at ``targets``.

    The mean has one row per replicate (squeezed for a single replicate);
    the SD is shared.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    chol = model._factor()
    resid = (model.values - model.beta0).T
    alpha = linalg.cho_solve((chol, True), resid)
    means, sds = [], []
    for a in range(0, len(targets), chunk):
        tgt = targets[a:a + chunk]
        kx = model.sigma2 * matern_correlation(cdist(tgt, model.locations), model.nu, model.kappa)
        means.append(model.beta0 + kx @ alpha)
        v = linalg.solve_triangular(chol, kx.T, lower=True)
        var = model.sigma2 - np.sum(v * v, axis=0)
        sds.append(np.sqrt(np.clip(var, 0.0, None)))
    mean = np.concatenate(means, axis=0).T if means else np.empty((resid.shape[1], 0))
    sd = np.concatenate(sds) if sds else np.empty(0)
    if mean.shape[0] == 1:
        mean = mean[0]
    return mean, sd
