"""Hurdle-Gamma model with AR(1) x Matern latent fields and its Laplace engine.

Predictors, for site ``i`` and time ``t``::

    logit(pi_it) = X_it beta_z + psi_it
    log(mu_it)   = X_it beta_y + gamma psi_it + xi_it

with ``z_it ~ Bernoulli(pi_it)`` and ``y_it | z_it = 1 ~ Gamma(k, k / mu_it)``.
Each latent field follows ``f_t = alpha f_{t-1} + e_t`` with ``e_t`` iid in
time, Matern in space, and a stationary start.

The latent Gaussian block stacks the fields time by time, ``[psi_t, xi_t]``,
followed by the coefficients. Its posterior precision is block tridiagonal in
time with a dense border for the coefficients, which the Cholesky
factorisation below exploits.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg, special
from scipy.spatial.distance import cdist

from ..errors import InvalidArgument, NumericalError
from ..gpfield import JITTER_LADDER, matern_correlation
from .data import Dataset

PRIOR_SD_BETA = 100.0
FIELDS = ("psi", "xi")


@dataclass(frozen=True)
class HurdleModelSpec:
    """True or fitted parameter values. Coefficients start with the intercept."""

    beta_z: tuple = (0.5, 0.3)
    beta_y: tuple = (1.0, -0.4)
    k: float = 10.0
    gamma: float = 0.3
    rho_psi: float = 0.25
    sigma_psi: float = 0.44
    alpha_psi: float = 0.40
    rho_xi: float = 0.20
    sigma_xi: float = 0.14
    alpha_xi: float = 0.20
    nu: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "beta_z", tuple(float(b) for b in self.beta_z))
        object.__setattr__(self, "beta_y", tuple(float(b) for b in self.beta_y))
        if len(self.beta_z) != len(self.beta_y):
            raise InvalidArgument("beta_z and beta_y must have the same length")
        if not self.k > 0:
            raise InvalidArgument("Gamma shape k must be positive")
        for f in FIELDS:
            if not (getattr(self, f"rho_{f}") > 0 and getattr(self, f"sigma_{f}") >= 0):
                raise InvalidArgument(f"range and SD of {f} must be positive")
            if not abs(getattr(self, f"alpha_{f}")) < 1:
                raise InvalidArgument(f"|alpha_{f}| must be below 1")
        if not self.nu > 0:
            raise InvalidArgument("Matern smoothness must be positive")

    def to_dict(self):
        d = asdict(self)
        d["beta_z"] = list(self.beta_z)
        d["beta_y"] = list(self.beta_y)
        return d


def ar1_precision(T: int, alpha: float):
    """Diagonal and first off-diagonal of the stationary AR(1) precision (unit innovations).

    For ``T = 1`` this is the scalar ``1 - alpha^2``. ``log|Q| = log(1 - alpha^2)``.
    """
    if T == 1:
        return np.array([1.0 - alpha * alpha]), np.zeros(0)
    diag = np.full(T, 1.0 + alpha * alpha)
    diag[0] = diag[-1] = 1.0
    return diag, np.full(T - 1, -alpha)


def _inv_chol(c):
    """``(inverse, logdet)`` of an SPD matrix, escalating jitter when needed."""
    n = len(c)
    for jitter in (0.0,) + JITTER_LADDER:
        try:
            chol = linalg.cholesky(c + jitter * np.eye(n) if jitter else c, lower=True,
                                   check_finite=False)
            break
        except linalg.LinAlgError:
            continue
    else:
        raise NumericalError("Matern correlation not positive definite after jitter")
    inv = linalg.cho_solve((chol, True), np.eye(n), check_finite=False)
    return 0.5 * (inv + inv.T), 2.0 * np.sum(np.log(np.diag(chol)))


class BorderedBlockCholesky:
    """Cholesky factor of a block-tridiagonal SPD matrix with a dense last border.

    The matrix has diagonal blocks ``D[t]`` (``m x m``), super-diagonal blocks
    ``B[t]`` coupling ``t`` and ``t + 1``, border blocks ``E[t]`` (``nb x m``)
    and a corner ``F`` (``nb x nb``).
    """

    def __init__(self, D, B, E, F):
        T = len(D)
        self.T = T
        self.L, self.M, self.G = [], [], []
        m_prev = g_prev = None
        for t in range(T):
            d = D[t] if m_prev is None else D[t] - m_prev @ m_prev.T
            e = E[t] if g_prev is None else E[t] - g_prev @ m_prev.T
            try:
                lt = linalg.cholesky(d, lower=True, check_finite=False)
            except linalg.LinAlgError:
                raise NumericalError("posterior precision is not positive definite") from None
            g = linalg.solve_triangular(lt, e.T, lower=True, check_finite=False).T
            self.L.append(lt)
            self.G.append(g)
            if t < T - 1:
                m_prev = linalg.solve_triangular(lt, B[t], lower=True, check_finite=False).T
                self.M.append(m_prev)
            g_prev = g
        s = F - sum(g @ g.T for g in self.G)
        try:
            self.Lb = linalg.cholesky(s, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise NumericalError("posterior precision is not positive definite") from None

    @property
    def logdet(self):
        total = sum(np.sum(np.log(np.diag(lt))) for lt in self.L)
        return 2.0 * (total + np.sum(np.log(np.diag(self.Lb))))

    def forward(self, r, rb):
        """Solve ``L v = r``; ``r`` has shape ``(T, m[, k])``."""
        v = np.empty_like(r)
        for t in range(self.T):
            rhs = r[t] if t == 0 else r[t] - self.M[t - 1] @ v[t - 1]
            v[t] = linalg.solve_triangular(self.L[t], rhs, lower=True, check_finite=False)
        rhs = rb - sum(self.G[t] @ v[t] for t in range(self.T))
        vb = linalg.solve_triangular(self.Lb, rhs, lower=True, check_finite=False)
        return v, vb

    def backward(self, v, vb):
        """Solve ``L' x = v``."""
        xb = linalg.solve_triangular(self.Lb, vb, lower=True, trans="T", check_finite=False)
        x = np.empty_like(v)
        for t in range(self.T - 1, -1, -1):
            rhs = v[t] - self.G[t].T @ xb
            if t < self.T - 1:
                rhs = rhs - self.M[t].T @ x[t + 1]
            x[t] = linalg.solve_triangular(self.L[t], rhs, lower=True, trans="T",
                                           check_finite=False)
        return x, xb

    def solve(self, r, rb):
        return self.backward(*self.forward(r, rb))

    def border_cov(self):
        """Marginal covariance of the border variables, ``(Lb Lb')^{-1}``."""
        inv = linalg.solve_triangular(self.Lb, np.eye(len(self.Lb)), lower=True,
                                      check_finite=False)
        return inv.T @ inv


@dataclass
class LatentMode:
    lat: np.ndarray  # (T, nf, n)
    beta: np.ndarray  # (npred, q)
    logpost: float
    loglik: float
    iterations: int
    factor: BorderedBlockCholesky | None = None


class LaplaceEngine:
    """Posterior mode and Laplace marginal likelihood for one dataset.

    Parameters
    ----------
    data : Dataset
        Panel with covariates already on the scale used for fitting.
    temporal : bool
        Estimate AR(1) coefficients. Forced off for ``T = 1``, where the
        fields reduce to independent Matern fields.
    with_gamma : bool, optional
        Include the positive-part predictor. Defaults to whether any ``z``
        is 1.
    with_presence : bool, optional
        Include the presence predictor. Defaults to whether any observed
        ``z`` is 0; without it ``pi`` is fixed at 1, since an all-one
        presence record has no finite maximiser.
    metric : {"planar", "geographic"}
        Distances straight from the coordinates, or in km after an
        equirectangular projection of lon/lat about their centroid.
    """

    def __init__(self, data: Dataset, temporal=True, with_gamma=None, with_presence=None,
                 metric="planar", nu=1.0, prior_sd=PRIOR_SD_BETA, newton_tol=1e-8, max_newton=100):
        self.data = data
        self.n, self.T = data.z.shape
        self.temporal = bool(temporal) and self.T > 1
        obs = data.observed.T
        self.obs = obs
        self.zv = np.where(obs, data.z.T, 0).astype(float)
        self.pos = obs & (data.z.T == 1)
        self.with_gamma = bool(self.pos.any()) if with_gamma is None else bool(with_gamma)
        if with_presence is None:
            with_presence = bool(np.any(obs & (data.z.T == 0))) or not self.with_gamma
        self.with_presence = bool(with_presence)
        if not (self.with_presence or self.with_gamma):
            raise InvalidArgument("model needs a presence or a positive part")
        yv = np.where(self.pos, data.y.T, 1.0)
        self.yv = yv
        self.logy = np.log(yv)
        cov = np.transpose(data.covariates, (1, 0, 2))  # (T, n, p)
        self.X = np.concatenate([np.ones((self.T, self.n, 1)), cov], axis=2)
        self.X[~obs] = 0.0
        self.q = self.X.shape[2]
        self.fields = tuple(f for f, on in zip(FIELDS, (self.with_presence, self.with_gamma)) if on)
        self.nf = len(self.fields)
        self.npred = self.nf
        self.nu = float(nu)
        self.prior_prec = 1.0 / prior_sd ** 2
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        coords = np.asarray(data.coords, dtype=float)
        if metric == "geographic":
            from ..geo import project
            origin = (float(coords[:, 0].mean()), float(coords[:, 1].mean()))
            x, y = project(coords[:, 0], coords[:, 1], origin)
            coords = np.column_stack([x, y])
        elif metric != "planar":
            raise InvalidArgument(f"unknown metric {metric!r}")
        self.metric = metric
        self.dist = cdist(coords, coords)
        self.diameter = float(self.dist.max()) if self.n > 1 else 1.0
        self._last = None

    # hyperparameter layout -------------------------------------------------

    @property
    def theta_names(self):
        names = []
        if self.with_gamma:
            names.append("log_k")
        if self.nf == 2:
            names.append("gamma")
        for f in self.fields:
            names += [f"log_rho_{f}", f"log_sigma_{f}"]
            if self.temporal:
                names.append(f"atanh_alpha_{f}")
        return names

    def unpack(self, theta):
        it = iter(np.asarray(theta, dtype=float))
        h = {"k": math.nan, "gamma": 0.0}
        if self.with_gamma:
            h["k"] = math.exp(next(it))
        if self.nf == 2:
            h["gamma"] = float(next(it))
        for f in self.fields:
            h[f"rho_{f}"] = math.exp(next(it))
            h[f"sigma_{f}"] = math.exp(next(it))
            h[f"alpha_{f}"] = math.tanh(next(it)) if self.temporal else 0.0
        return h

    def pack(self, h):
        out = []
        if self.with_gamma:
            out.append(math.log(h["k"]))
        if self.nf == 2:
            out.append(h["gamma"])
        for f in self.fields:
            out += [math.log(h[f"rho_{f}"]), math.log(h[f"sigma_{f}"])]
            if self.temporal:
                out.append(math.atanh(h[f"alpha_{f}"]))
        return np.array(out)

    def bounds(self):
        b = []
        if self.with_gamma:
            b.append((math.log(0.05), math.log(1e4)))
        if self.nf == 2:
            b.append((-5.0, 5.0))
        for _ in self.fields:
            b += [(math.log(1e-3 * self.diameter), math.log(5.0 * self.diameter)),
                  (math.log(1e-3), math.log(10.0))]
            if self.temporal:
                b.append((-3.0, 3.0))
        return b

    # prior -----------------------------------------------------------------

    def prior(self, h):
        """Per-field scaled inverse correlation, AR(1) bands and ``log|Q|``."""
        parts = []
        logdet = -self.npred * self.q * math.log(1.0 / self.prior_prec)
        for f in self.fields:
            kappa = math.sqrt(8 * self.nu) / h[f"rho_{f}"]
            corr = matern_correlation(self.dist, self.nu, kappa)
            cinv, logdet_c = _inv_chol(corr)
            s2 = h[f"sigma_{f}"] ** 2
            qd, qo = ar1_precision(self.T, h[f"alpha_{f}"])
            parts.append((cinv / s2, qd, qo))
            logdet += self.n * math.log(1.0 - h[f"alpha_{f}"] ** 2) \
                - self.T * (logdet_c + self.n * math.log(s2))
        return parts, logdet

    def loadings(self, gamma):
        return np.array([[1.0, 0.0], [gamma, 1.0]]) if self.nf == 2 else np.array([[1.0]])

    # likelihood ------------------------------------------------------------

    def predictors(self, lat, beta, gamma):
        lam = self.loadings(gamma)
        eta = np.einsum("tnq,pq->ptn", self.X, beta)
        eta += np.einsum("pf,tfn->ptn", lam, lat)
        return eta

    def loglik(self, eta, k, parts=False):
        """Log-likelihood, score and curvature with respect to each predictor."""
        g, w = [], []
        total_z = total_y = 0.0
        if self.with_presence:
            ez = eta[0]
            llz = np.where(self.obs, self.zv * ez - np.logaddexp(0.0, ez), 0.0)
            p = special.expit(ez)
            g.append(np.where(self.obs, self.zv - p, 0.0))
            w.append(np.where(self.obs, p * (1.0 - p), 0.0))
            total_z = float(llz.sum())
        if self.with_gamma:
            ey = eta[-1]
            r = self.yv * np.exp(-ey)
            lly = k * math.log(k) - special.gammaln(k) + (k - 1.0) * self.logy - k * ey - k * r
            total_y = float(np.sum(lly[self.pos]))
            g.append(np.where(self.pos, k * (r - 1.0), 0.0))
            w.append(np.where(self.pos, k * r, 0.0))
        if parts:
            return total_z, total_y
        return total_z + total_y, np.array(g), np.array(w)

    def _apply_prior(self, lat, prior):
        out = np.empty_like(lat)
        for f, (cinv, qd, qo) in enumerate(prior):
            u = lat[:, f, :] @ cinv
            v = qd[:, None] * u
            if self.T > 1:
                v[:-1] += qo[:, None] * u[1:]
                v[1:] += qo[:, None] * u[:-1]
            out[:, f, :] = v
        return out

    def log_joint(self, lat, beta, h, prior):
        """Unnormalised log posterior of the latent block (data + Gaussian prior)."""
        eta = self.predictors(lat, beta, h["gamma"])
        ll = self.loglik(eta, h["k"])[0]
        qlat = self._apply_prior(lat, prior)
        return ll - 0.5 * np.sum(lat * qlat) - 0.5 * self.prior_prec * np.sum(beta * beta)

    def gradient(self, lat, beta, h, prior):
        eta = self.predictors(lat, beta, h["gamma"])
        _, g, _ = self.loglik(eta, h["k"])
        return self._gradient(lat, beta, g, h["gamma"], prior)

    def _gradient(self, lat, beta, g, gamma, prior):
        lam = self.loadings(gamma)
        glat = np.einsum("pf,ptn->tfn", lam, g) - self._apply_prior(lat, prior)
        gbeta = np.einsum("tnq,ptn->pq", self.X, g) - self.prior_prec * beta
        return glat, gbeta

    def factor(self, w, gamma, prior):
        """Bordered block Cholesky of the negative Hessian ``Q + A' W A``."""
        n, T, nf, q = self.n, self.T, self.nf, self.q
        lam = self.loadings(gamma)
        m = nf * n
        idx = np.arange(n)
        D, B, E = [], [], []
        for t in range(T):
            d = np.zeros((m, m))
            for f, (cinv, qd, qo) in enumerate(prior):
                d[f * n:(f + 1) * n, f * n:(f + 1) * n] = qd[t] * cinv
            for a in range(nf):
                for b in range(nf):
                    d[a * n + idx, b * n + idx] += np.einsum("p,p,pn->n", lam[:, a], lam[:, b], w[:, t])
            D.append(d)
            if t < T - 1:
                bt = np.zeros((m, m))
                for f, (cinv, qd, qo) in enumerate(prior):
                    bt[f * n:(f + 1) * n, f * n:(f + 1) * n] = qo[t] * cinv
                B.append(bt)
            e = np.zeros((self.npred * q, m))
            for pr in range(self.npred):
                xw = self.X[t].T * w[pr, t]
                for f in range(nf):
                    if lam[pr, f] != 0.0:
                        e[pr * q:(pr + 1) * q, f * n:(f + 1) * n] = lam[pr, f] * xw
            E.append(e)
        F = self.prior_prec * np.eye(self.npred * q)
        for pr in range(self.npred):
            F[pr * q:(pr + 1) * q, pr * q:(pr + 1) * q] += np.einsum(
                "tnq,tn,tnr->qr", self.X, w[pr], self.X)
        return BorderedBlockCholesky(D, B, E, F)

    # mode and marginal -----------------------------------------------------

    def initial_latent(self):
        lat = np.zeros((self.T, self.nf, self.n))
        beta = np.zeros((self.npred, self.q))
        if self.with_presence:
            zbar = np.clip(self.zv[self.obs].mean(), 0.02, 0.98)
            beta[0, 0] = math.log(zbar / (1 - zbar))
        if self.with_gamma:
            beta[-1, 0] = float(np.mean(self.logy[self.pos]))
        return lat, beta

    def mode(self, h, prior=None, start=None) -> LatentMode:
        """Newton iterations with backtracking for the conditional posterior mode."""
        if prior is None:
            prior = self.prior(h)[0]
        if start is None:
            start = self._last if self._last is not None else self.initial_latent()
        lat, beta = (a.copy() for a in start)
        gamma, k = h["gamma"], h["k"]
        fval = self.log_joint(lat, beta, h, prior)
        for it in range(1, self.max_newton + 1):
            eta = self.predictors(lat, beta, gamma)
            _, g, w = self.loglik(eta, k)
            glat, gbeta = self._gradient(lat, beta, g, gamma, prior)
            fac = self.factor(w, gamma, prior)
            dlat, dbeta = fac.solve(glat.reshape(self.T, -1), gbeta.ravel())
            dlat = dlat.reshape(lat.shape)
            dbeta = dbeta.reshape(beta.shape)
            size = max(np.abs(dlat).max(), np.abs(dbeta).max())
            step = 1.0
            while True:
                new_lat = lat + step * dlat
                new_beta = beta + step * dbeta
                fnew = self.log_joint(new_lat, new_beta, h, prior)
                if fnew >= fval - 1e-10 * abs(fval) or step < 1e-8:
                    break
                step *= 0.5
            lat, beta, fval = new_lat, new_beta, fnew
            if step * size < self.newton_tol:
                eta = self.predictors(lat, beta, gamma)
                ll, _, w = self.loglik(eta, k)
                fac = self.factor(w, gamma, prior)
                self._last = (lat, beta)
                return LatentMode(lat, beta, fval, ll, it, fac)
        raise NumericalError(f"inner Newton did not converge in {self.max_newton} iterations")

    def laplace(self, theta, start=None):
        """Laplace approximation to the log marginal likelihood at ``theta``."""
        h = self.unpack(theta)
        prior, logdet_q = self.prior(h)
        md = self.mode(h, prior, start)
        return md.logpost + 0.5 * logdet_q - 0.5 * md.factor.logdet, md
