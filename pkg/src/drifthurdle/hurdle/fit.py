"""Empirical-Bayes fitting of the hurdle-Gamma model.

Hyperparameters maximise the Laplace approximation to the marginal
likelihood; the latent fields and coefficients are then summarised by the
Gaussian approximation at their conditional mode.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from ..errors import FitError, InvalidArgument, NumericalError
from .data import Dataset, Standardizer
from .model import LaplaceEngine

STRUCTURES = ("st", "spatial")


@dataclass
class HurdleFit:
    structure: str
    theta_names: list
    theta: np.ndarray
    hyper: dict
    hyper_sd: dict
    beta_z: np.ndarray
    beta_y: np.ndarray
    beta_z_sd: np.ndarray
    beta_y_sd: np.ndarray
    log_marginal: float
    converged: bool
    hessian_pd: bool
    message: str = ""
    n_evals: int = 0
    starts: list = field(default_factory=list)
    covariate_names: tuple = ()
    transform: Standardizer | None = None
    metric: str = "planar"
    nu: float = 1.0
    with_gamma: bool = True
    with_presence: bool = True
    warnings: list = field(default_factory=list)
    engine: LaplaceEngine | None = field(default=None, repr=False)

    def engine_for(self, data: Dataset) -> LaplaceEngine:
        return LaplaceEngine(data, temporal=self.structure == "st", with_gamma=self.with_gamma,
                             with_presence=self.with_presence, metric=self.metric, nu=self.nu)

    def to_dict(self):
        def num(v):
            v = float(v)
            return None if not math.isfinite(v) else v
        return {
            "structure": self.structure,
            "theta_names": list(self.theta_names),
            "theta": [num(v) for v in self.theta],
            "hyper": {k: num(v) for k, v in self.hyper.items()},
            "hyper_sd": {k: num(v) for k, v in self.hyper_sd.items()},
            "beta_z": [num(v) for v in self.beta_z],
            "beta_y": [num(v) for v in self.beta_y],
            "beta_z_sd": [num(v) for v in self.beta_z_sd],
            "beta_y_sd": [num(v) for v in self.beta_y_sd],
            "log_marginal": num(self.log_marginal),
            "converged": bool(self.converged),
            "hessian_pd": bool(self.hessian_pd),
            "message": self.message,
            "n_evals": int(self.n_evals),
            "starts": self.starts,
            "covariate_names": list(self.covariate_names),
            "transform": None if self.transform is None else self.transform.to_dict(),
            "metric": self.metric,
            "nu": self.nu,
            "with_gamma": self.with_gamma,
            "with_presence": self.with_presence,
            "warnings": list(self.warnings),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        def arr(v):
            return np.array([math.nan if x is None else x for x in v], dtype=float)
        return cls(
            structure=d["structure"],
            theta_names=list(d["theta_names"]),
            theta=arr(d["theta"]),
            hyper={k: (math.nan if v is None else v) for k, v in d["hyper"].items()},
            hyper_sd={k: (math.nan if v is None else v) for k, v in d["hyper_sd"].items()},
            beta_z=arr(d["beta_z"]),
            beta_y=arr(d["beta_y"]),
            beta_z_sd=arr(d["beta_z_sd"]),
            beta_y_sd=arr(d["beta_y_sd"]),
            log_marginal=math.nan if d["log_marginal"] is None else d["log_marginal"],
            converged=d["converged"],
            hessian_pd=d["hessian_pd"],
            message=d.get("message", ""),
            n_evals=d.get("n_evals", 0),
            starts=d.get("starts", []),
            covariate_names=tuple(d.get("covariate_names", ())),
            transform=None if d.get("transform") is None else Standardizer.from_dict(d["transform"]),
            metric=d.get("metric", "planar"),
            nu=d.get("nu", 1.0),
            with_gamma=d.get("with_gamma", True),
            with_presence=d.get("with_presence", True),
            warnings=list(d.get("warnings", [])),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


class _Objective:
    """Negative Laplace marginal with central finite-difference gradients.

    Every evaluation near a point is warm-started from that point's mode so
    the result does not depend on the order of evaluations.
    """

    def __init__(self, engine: LaplaceEngine, step=1e-4):
        self.engine = engine
        self.step = step
        self.n_evals = 0

    def value(self, theta, start=None):
        self.n_evals += 1
        try:
            lm, md = self.engine.laplace(theta, start=start)
        except NumericalError:
            return math.inf, None
        return -lm, md

    def __call__(self, theta):
        f0, md = self.value(theta)
        if md is None:
            return 1e300, np.zeros_like(theta)
        start = (md.lat, md.beta)
        g = np.empty(len(theta))
        for j in range(len(theta)):
            e = np.zeros(len(theta))
            e[j] = self.step
            fp, _ = self.value(theta + e, start)
            fm, _ = self.value(theta - e, start)
            g[j] = (fp - fm) / (2 * self.step)
        self.engine._last = start
        if not np.all(np.isfinite(g)):
            return 1e300, np.zeros_like(theta)
        return f0, g

    def hessian(self, theta, step=5e-3):
        """Second differences of the objective at ``theta``."""
        _, md = self.value(theta)
        start = (md.lat, md.beta)
        d = len(theta)
        f0 = self.value(theta, start)[0]
        hess = np.empty((d, d))
        unit = np.eye(d) * step
        fp = [self.value(theta + unit[i], start)[0] for i in range(d)]
        fm = [self.value(theta - unit[i], start)[0] for i in range(d)]
        for i in range(d):
            hess[i, i] = (fp[i] - 2 * f0 + fm[i]) / step ** 2
            for j in range(i):
                fpp = self.value(theta + unit[i] + unit[j], start)[0]
                fpm = self.value(theta + unit[i] - unit[j], start)[0]
                fmp = self.value(theta - unit[i] + unit[j], start)[0]
                fmm = self.value(theta - unit[i] - unit[j], start)[0]
                hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * step ** 2)
        return hess


def _variogram_start(engine: LaplaceEngine, rng):
    """Rough moment- and variogram-based hyperparameters from the positives."""
    h = {"k": 5.0, "gamma": 0.0}
    diam = engine.diameter
    rho0 = 0.2 * diam
    if engine.with_gamma:
        pos = engine.pos
        X = engine.X[pos]
        ly = engine.logy[pos]
        coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
        resid = np.zeros_like(engine.logy)
        resid[pos] = ly - X @ coef
        v = float(np.var(resid[pos]))
        # var(log y) for Gamma(k) is trigamma(k); solve roughly for k from y/mu
        ratio = engine.yv[pos] / np.exp(X @ coef)
        vr = float(np.var(ratio))
        h["k"] = float(np.clip(1.0 / vr if vr > 0 else 10.0, 0.5, 100.0))
        s2 = max(v - float(special.polygamma(1, h["k"])), 0.01 ** 2)
        h["sigma_xi"] = math.sqrt(s2)
        rho0 = _empirical_range(engine, resid, pos, diam)
        h["rho_xi"] = rho0
        h["alpha_xi"] = _lag1(resid, pos) if engine.temporal else 0.0
    h["rho_psi"] = rho0
    h["sigma_psi"] = 0.5
    h["alpha_psi"] = 0.3 if engine.temporal else 0.0
    return h


def _empirical_range(engine, resid, pos, diam):
    coords_d = engine.dist
    iu = np.triu_indices(engine.n, 1)
    dists, sq = [], []
    for t in range(engine.T):
        both = pos[t][iu[0]] & pos[t][iu[1]]
        r = resid[t]
        dists.append(coords_d[iu][both])
        sq.append(0.5 * (r[iu[0]][both] - r[iu[1]][both]) ** 2)
    d = np.concatenate(dists)
    g = np.concatenate(sq)
    if len(d) < 20:
        return 0.2 * diam
    edges = np.quantile(d, np.linspace(0, 1, 11))
    centre = 0.5 * (edges[:-1] + edges[1:])
    gam = np.array([g[(d >= a) & (d <= b)].mean() for a, b in zip(edges[:-1], edges[1:])])
    sill = gam[-3:].mean()
    reached = np.flatnonzero(gam >= 0.9 * sill)
    rho = centre[reached[0]] if len(reached) else 0.2 * diam
    return float(np.clip(rho, 0.05 * diam, 0.5 * diam))


def _lag1(resid, pos):
    both = pos[1:] & pos[:-1]
    if both.sum() < 10:
        return 0.3
    a = resid[1:][both]
    b = resid[:-1][both]
    r = np.corrcoef(a, b)[0, 1]
    return float(np.clip(r if np.isfinite(r) else 0.3, -0.8, 0.8))


def _default_start(engine: LaplaceEngine):
    h = {"k": 5.0, "gamma": 0.0}
    rho = 0.2 * engine.diameter
    for f in engine.fields:
        h[f"rho_{f}"] = rho
        h[f"sigma_{f}"] = 0.5 if f == "psi" else 0.3
        h[f"alpha_{f}"] = 0.3 if engine.temporal else 0.0
    return h


def _clip(theta, bounds):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(theta, lo + 1e-6, hi - 1e-6)


def fit_hurdle(data: Dataset, structure: str = "st", n_starts: int = 3, screen_iter: int = 8,
               max_iter: int = 200, metric: str = "planar", nu: float = 1.0, seed: int = 0,
               hessian_step: float = 5e-3) -> HurdleFit:
    """Fit the hurdle-Gamma model by Laplace-approximated empirical Bayes.

    Parameters
    ----------
    data : Dataset
        Panel to fit. Covariates are used as given; standardize beforehand
        (``data.standardized()``) to record a transform.
    structure : {"st", "spatial"}
        Spatio-temporal AR(1) fields, or purely spatial fields (``alpha = 0``).
        A one-period panel is always fitted as spatial.
    n_starts : int
        Starting points (default, variogram-based, perturbed). Each is run
        for ``screen_iter`` quasi-Newton iterations and the best continues.

    Returns
    -------
    HurdleFit
        Point estimates, approximate SDs and the engine positioned at the mode.
    """
    if structure not in STRUCTURES:
        raise InvalidArgument(f"structure must be one of {STRUCTURES}, got {structure!r}")
    notes = []
    with_gamma = bool(np.any(data.observed & (data.z == 1)))
    if not with_gamma:
        msg = "no positive responses: Gamma part skipped"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    with_presence = bool(np.any(data.observed & (data.z == 0))) or not with_gamma
    if not with_presence:
        msg = "every observation is a presence: pi fixed at 1 and the Gamma part fitted alone"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    engine = LaplaceEngine(data, temporal=structure == "st", with_gamma=with_gamma,
                           with_presence=with_presence, metric=metric, nu=nu)
    bounds = engine.bounds()
    rng = np.random.default_rng(seed)
    cand = [_default_start(engine), _variogram_start(engine, rng)]
    starts = [_clip(engine.pack(c), bounds) for c in cand]
    starts.append(_clip(starts[0] + rng.normal(scale=0.3, size=len(starts[0])), bounds))
    starts = starts[:max(1, n_starts)]

    obj = _Objective(engine)
    screened = []
    for s in starts:
        engine._last = None
        res = optimize.minimize(obj, s, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": screen_iter if len(starts) > 1 else max_iter,
                                         "ftol": 1e-12, "gtol": 1e-5})
        screened.append((float(res.fun), res))
    order = sorted(range(len(screened)), key=lambda i: screened[i][0])
    best = screened[order[0]][1]
    start_log = [{"start": i, "neg_log_marginal": screened[i][0]} for i in range(len(screened))]
    if len(starts) > 1:
        engine._last = None
        best = optimize.minimize(obj, best.x, jac=True, method="L-BFGS-B", bounds=bounds,
                                 options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-5})
    if not np.isfinite(best.fun) or best.fun >= 1e299:
        raise FitError("no finite Laplace marginal found from any start")
    theta = np.asarray(best.x, dtype=float)
    lb = np.array([b[0] for b in bounds])
    ub = np.array([b[1] for b in bounds])
    pg = np.where((theta <= lb + 1e-8) & (best.jac > 0), 0.0, best.jac)
    pg = np.where((theta >= ub - 1e-8) & (pg < 0), 0.0, pg)
    converged = bool(best.success) or float(np.max(np.abs(pg))) < 1e-3
    at_bound = [nm for nm, t, a, b in zip(engine.theta_names, theta, lb, ub)
                if t <= a + 1e-6 or t >= b - 1e-6]
    if at_bound:
        msg = f"estimates on the search bound: {', '.join(at_bound)}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    engine._last = None
    lm, md = engine.laplace(theta)

    hyper = engine.unpack(theta)
    hyper_sd = {k: math.nan for k in hyper}
    hessian_pd = False
    try:
        hess = obj.hessian(theta, step=hessian_step)
        cov = np.linalg.inv(hess)
        if np.all(np.isfinite(cov)) and np.all(np.linalg.eigvalsh(0.5 * (hess + hess.T)) > 0):
            hessian_pd = True
            sd_t = np.sqrt(np.diag(cov))
            hyper_sd = _natural_sd(engine, theta, sd_t)
    except (np.linalg.LinAlgError, NumericalError, TypeError):
        pass
    if not hessian_pd:
        msg = "Hessian of the Laplace marginal is not positive definite; hyperparameter SDs omitted"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    engine.mode(hyper, start=(md.lat, md.beta))
    bcov = md.factor.border_cov()
    bsd = np.sqrt(np.diag(bcov)).reshape(md.beta.shape)
    q = engine.q
    nan = np.full(q, np.nan)
    beta_z = md.beta[0] if with_presence else nan
    beta_z_sd = bsd[0] if with_presence else nan
    beta_y = md.beta[-1] if with_gamma else nan
    beta_y_sd = bsd[-1] if with_gamma else nan
    if engine.nf == 2 and _weakly_identified(hyper, hyper_sd):
        msg = ("psi and xi ranges differ by under 20% and the SD of gamma exceeds |gamma|; "
               "the two fields may not be separately identifiable")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    return HurdleFit(
        structure="st" if engine.temporal else "spatial",
        theta_names=engine.theta_names,
        theta=theta,
        hyper=hyper,
        hyper_sd=hyper_sd,
        beta_z=np.asarray(beta_z, dtype=float).copy(),
        beta_y=np.asarray(beta_y, dtype=float).copy(),
        beta_z_sd=np.asarray(beta_z_sd, dtype=float).copy(),
        beta_y_sd=np.asarray(beta_y_sd, dtype=float).copy(),
        log_marginal=float(lm),
        converged=converged,
        hessian_pd=hessian_pd,
        message=str(best.message),
        n_evals=obj.n_evals,
        starts=start_log,
        covariate_names=tuple(data.covariate_names),
        transform=data.transform,
        metric=metric,
        nu=nu,
        with_gamma=with_gamma,
        with_presence=with_presence,
        warnings=notes,
        engine=engine,
    )


def _natural_sd(engine, theta, sd_t):
    """Delta-method SDs on the natural scale from SDs of the transformed values."""
    out = {}
    h = engine.unpack(theta)
    for name, s in zip(engine.theta_names, sd_t):
        if name == "log_k":
            out["k"] = h["k"] * s
        elif name == "gamma":
            out["gamma"] = s
        elif name.startswith("log_"):
            key = name[4:]
            out[key] = h[key] * s
        elif name.startswith("atanh_"):
            key = name[6:]
            out[key] = (1.0 - h[key] ** 2) * s
    for key in h:
        out.setdefault(key, 0.0 if key.startswith("alpha_") else math.nan)
    return out


def _weakly_identified(hyper, hyper_sd):
    rp, rx = hyper.get("rho_psi"), hyper.get("rho_xi")
    if rp is None or rx is None:
        return False
    close = abs(rp - rx) < 0.2 * max(rp, rx)
    return bool(close and hyper_sd.get("gamma", math.nan) > abs(hyper["gamma"]))
