"""Posterior summaries of fitted hurdle models and the time-averaged comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special
from scipy.spatial.distance import cdist

from ..errors import InvalidArgument
from ..geo import project
from ..gpfield import JITTER_LADDER, matern_correlation
from ..metrics import ScoreReport, mask_uncertain, score
from .data import Dataset
from .fit import HurdleFit

QUANTITIES = ("pi", "mu", "hurdle")


@dataclass
class PredictionTargets:
    """Sites and times to predict at, with covariates on the raw scale."""

    site_ids: list
    coords: np.ndarray  # (n, 2)
    times: np.ndarray  # (T,)
    covariates: np.ndarray  # (n, T, p)

    @classmethod
    def from_dataset(cls, data: Dataset):
        return cls(list(data.site_ids), data.coords, data.times, data.covariates)


@dataclass
class PosteriorSummary:
    site_ids: list
    coords: np.ndarray
    times: np.ndarray
    stats: dict  # quantity -> {"mean", "sd", "q025", "q975"} arrays of shape (n, T)
    sd_log_mu: np.ndarray
    mask: np.ndarray
    hyper: dict
    hyper_sd: dict
    samples: dict | None = field(default=None, repr=False)  # quantity -> (S, n, T)

    def rows(self):
        for i, sid in enumerate(self.site_ids):
            for j, t in enumerate(self.times):
                row = {"site_id": sid, "lon": float(self.coords[i, 0]),
                       "lat": float(self.coords[i, 1]), "t": int(t)}
                for qn in QUANTITIES:
                    for stat in ("mean", "sd", "q025", "q975"):
                        row[f"{qn}_{stat}"] = float(self.stats[qn][stat][i, j])
                row["sd_log_mu"] = float(self.sd_log_mu[i, j])
                row["masked"] = int(self.mask[i, j])
                yield row

    def write_csv(self, path):
        rows = list(self.rows())
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = list(rows[0]) if rows else ["site_id", "lon", "lat", "t"]
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(r[k]) for k in header])


def _fmt(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def _summarise(samples):
    return {
        "mean": samples.mean(axis=0),
        "sd": samples.std(axis=0, ddof=1) if len(samples) > 1 else np.zeros(samples.shape[1:]),
        "q025": np.quantile(samples, 0.025, axis=0),
        "q975": np.quantile(samples, 0.975, axis=0),
    }


def _chol_psd(c):
    scale = max(float(np.max(np.diag(c))), 1e-12) if len(c) else 1.0
    for jitter in (0.0,) + JITTER_LADDER:
        try:
            return linalg.cholesky(c + jitter * scale * np.eye(len(c)), lower=True)
        except linalg.LinAlgError:
            continue
    return np.diag(np.sqrt(np.clip(np.diag(c), 0.0, None)))


def _ar1_cov(times_idx, alpha):
    lag = np.abs(np.subtract.outer(times_idx, times_idx))
    return alpha ** lag / (1.0 - alpha * alpha)


def predict(fit: HurdleFit, data: Dataset, targets: PredictionTargets | None = None,
            n_samples: int = 500, seed=0, joint: bool = True, mask_sd: float = 3.0,
            keep_samples: bool = False) -> PosteriorSummary:
    """Posterior summaries of ``pi``, ``mu`` and the hurdle mean ``pi * mu``.

    The latent mode is re-solved at the fitted hyperparameters from the
    training ``data``; samples come from the Gaussian approximation. New
    sites are kriged time by time from the sampled training fields, with
    conditional noise drawn jointly across targets (or per target when
    ``joint`` is false). Targets must use training time labels.

    Parameters
    ----------
    data : Dataset
        Training panel in the scale the model was fitted on.
    targets : PredictionTargets, optional
        Raw-scale covariates; the fit's standardization is applied. Defaults
        to the training sites and times.
    mask_sd : float
        Flag targets whose posterior SD of ``log mu`` exceeds this.
    """
    if n_samples < 1:
        raise InvalidArgument("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    engine = fit.engine if fit.engine is not None and fit.engine.data is data else fit.engine_for(data)
    if engine.theta_names != list(fit.theta_names):
        raise InvalidArgument("fit does not match the training data layout")
    h = engine.unpack(fit.theta)
    prior, _ = engine.prior(h)
    md = engine.mode(h, prior, start=engine.initial_latent())
    fac = md.factor
    T, nf, n, q = engine.T, engine.nf, engine.n, engine.q
    eps = rng.standard_normal((T, nf * n, n_samples))
    epsb = rng.standard_normal((engine.npred * q, n_samples))
    dlat, dbeta = fac.backward(eps, epsb)
    lat = md.lat[None] + np.moveaxis(dlat, 2, 0).reshape(n_samples, T, nf, n)
    beta = md.beta[None] + dbeta.T.reshape(n_samples, engine.npred, q)

    if targets is None:
        targets = PredictionTargets.from_dataset(data)
        cov = data.covariates
        new_lat = np.transpose(lat, (0, 3, 1, 2))  # (S, n, T, nf)
        t_idx = np.arange(T)
    else:
        cov = _target_covariates(fit, targets, q - 1)
        t_idx = _time_index(data.times, targets.times)
        new_lat = _krige_fields(engine, h, fit, data, targets, lat[:, t_idx], t_idx, rng, joint)

    gamma = h["gamma"]
    X = np.concatenate([np.ones(cov.shape[:2] + (1,)), cov], axis=2)  # (n*, T*, q)
    if engine.with_presence:
        eta_z = np.einsum("itq,sq->sit", X, beta[:, 0]) + new_lat[..., 0]
        pi = special.expit(eta_z)
    else:
        pi = np.ones((n_samples,) + X.shape[:2])
    if engine.with_gamma:
        eta_y = np.einsum("itq,sq->sit", X, beta[:, -1]) + new_lat[..., -1]
        if nf == 2:
            eta_y += gamma * new_lat[..., 0]
        mu = np.exp(eta_y)
        sd_log = eta_y.std(axis=0, ddof=1) if n_samples > 1 else np.zeros(eta_y.shape[1:])
    else:
        mu = np.full_like(pi, np.nan)
        sd_log = np.full(pi.shape[1:], np.nan)
    samples = {"pi": pi, "mu": mu, "hurdle": pi * mu}
    stats = {k: _summarise(v) for k, v in samples.items()}
    return PosteriorSummary(
        site_ids=list(targets.site_ids),
        coords=np.asarray(targets.coords, dtype=float),
        times=np.asarray(targets.times),
        stats=stats,
        sd_log_mu=sd_log,
        mask=mask_uncertain(np.nan_to_num(sd_log, nan=0.0), mask_sd),
        hyper=dict(fit.hyper),
        hyper_sd=dict(fit.hyper_sd),
        samples=samples if keep_samples else None,
    )


def _target_covariates(fit, targets, p):
    cov = np.asarray(targets.covariates, dtype=float)
    if cov.ndim == 2:
        cov = cov[:, :, None]
    if cov.shape[2] != p:
        raise InvalidArgument(f"model has {p} covariates, targets carry {cov.shape[2]}")
    if fit.transform is not None:
        cov = fit.transform.apply(cov)
    if not np.all(np.isfinite(cov)):
        raise InvalidArgument("target covariates must be finite")
    return cov


def _time_index(train_times, target_times):
    lookup = {int(t): j for j, t in enumerate(np.asarray(train_times))}
    try:
        return np.array([lookup[int(t)] for t in np.asarray(target_times)])
    except KeyError as exc:
        raise InvalidArgument(f"target time {exc.args[0]} is not a training time") from None


def _krige_fields(engine, h, fit, data, targets, lat, t_idx, rng, joint):
    """Conditional draws of the latent fields at new sites given sampled training fields.

    ``lat`` has shape ``(S, T*, nf, n)``; the result is ``(S, n*, T*, nf)``.
    """
    train = np.asarray(data.coords, dtype=float)
    new = np.asarray(targets.coords, dtype=float)
    if engine.metric == "geographic":
        origin = (float(train[:, 0].mean()), float(train[:, 1].mean()))
        train = np.column_stack(project(train[:, 0], train[:, 1], origin))
        new = np.column_stack(project(new[:, 0], new[:, 1], origin))
    S, Tt, nf, n = lat.shape
    m = len(new)
    out = np.empty((S, m, Tt, nf))
    for f, name in enumerate(engine.fields):
        kappa = math.sqrt(8 * engine.nu) / h[f"rho_{name}"]
        c = matern_correlation(engine.dist, engine.nu, kappa)
        cs = matern_correlation(cdist(new, train), engine.nu, kappa)
        chol = _chol_psd(c)
        a = linalg.cho_solve((chol, True), cs.T).T  # (m, n)
        mean = np.einsum("mn,stn->smt", a, lat[:, :, f, :])
        cond = h[f"sigma_{name}"] ** 2 * (
            matern_correlation(cdist(new, new), engine.nu, kappa) - a @ cs.T)
        if joint:
            ls = _chol_psd(0.5 * (cond + cond.T))
        else:
            ls = np.diag(np.sqrt(np.clip(np.diag(cond), 0.0, None)))
        lt = _chol_psd(_ar1_cov(t_idx, h[f"alpha_{name}"]))
        noise = np.einsum("mk,skt,ut->smu", ls, rng.standard_normal((S, m, Tt)), lt)
        out[..., f] = mean + noise
    return out


def time_average(summary: PosteriorSummary, level: float = 0.95):
    """Per-site ``mean_t(pi_hat_t * mu_hat_t)`` and an equal-tail interval.

    The point estimate uses posterior means of ``pi`` and ``mu``; the
    interval uses the samples of ``mean_t(pi_t * mu_t)``.
    """
    if summary.samples is None:
        raise InvalidArgument("summary has no samples (predict(..., keep_samples=True))")
    est = np.mean(summary.stats["pi"]["mean"] * summary.stats["mu"]["mean"], axis=1)
    draws = np.mean(summary.samples["pi"] * summary.samples["mu"], axis=2)
    lo, hi = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return est, lo, hi


@dataclass
class ComparisonResult:
    theta_true: np.ndarray
    st_estimate: np.ndarray
    st_lo: np.ndarray
    st_hi: np.ndarray
    sp_estimate: np.ndarray
    sp_lo: np.ndarray
    sp_hi: np.ndarray
    st_score: ScoreReport
    sp_score: ScoreReport


def time_averaged_comparison(st: PosteriorSummary, sp: PosteriorSummary, truth,
                             level: float = 0.95) -> ComparisonResult:
    """Time-averaged hurdle means of a spatio-temporal and a spatial fit against truth.

    The spatio-temporal estimate is ``mean_t(pi_hat_it * mu_hat_it)`` and the
    spatial one ``pi_hat_i * mu_hat_i``, from posterior means. Equal-tail
    intervals come from the samples of the same functionals. Both summaries
    must keep samples and list the same sites.
    """
    if list(st.site_ids) != list(sp.site_ids):
        raise InvalidArgument("spatio-temporal and spatial fits cover different sites")
    truth = np.asarray(truth, dtype=float)
    if len(truth) != len(st.site_ids):
        raise InvalidArgument("truth must have one value per site")
    st_est, st_lo, st_hi = time_average(st, level)
    sp_est, sp_lo, sp_hi = time_average(sp, level)
    return ComparisonResult(
        theta_true=truth,
        st_estimate=st_est, st_lo=st_lo, st_hi=st_hi,
        sp_estimate=sp_est, sp_lo=sp_lo, sp_hi=sp_hi,
        st_score=score(truth, st_est, st_lo, st_hi, percentage="omit"),
        sp_score=score(truth, sp_est, sp_lo, sp_hi, percentage="omit"),
    )
