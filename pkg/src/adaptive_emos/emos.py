"""Fit the centered-predictor Gaussian regression on a station panel and
produce predictive distributions, locally at fitting stations or anywhere
via the interpolation fields.

The predictive mean at station s on day t is the window-mean observation
plus weighted centered group forecasts; the variance is c1 times a local
residual-variance predictor plus c2 times the day's ensemble variance. All
weights are nonnegative and chosen to minimize the mean Gaussian CRPS over
the training panel. A plain regression baseline (mean a + sum b'_k f_k,
variance c + d*S^2) is fitted the same way for comparison.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .core import (
    BaselineNgr,
    EmosModel,
    GaussianForecast,
    MemberGrouping,
    StationPanel,
    StationState,
)
from .errors import ConvergenceError, DegenerateDataError, DomainError, InputError

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings for minimum-CRPS estimation."""

    max_iter: int = 500
    tol: float = 1e-8  # stop when the mean CRPS improves by less than this
    grad_tol: float = 1e-7
    init_c1: float = 1.0
    init_c2: float = 1.0
    min_init_slope: float = 0.1
    fit_baseline: bool = True

    def __post_init__(self):
        if self.tol <= 0.0:
            raise DomainError("tol must be > 0")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")


@dataclass(frozen=True)
class WindowStats:
    """Per-station window means, aligned with the panel's station order."""

    station_ids: tuple
    y_bar: np.ndarray  # (n,)
    f_bar: np.ndarray  # (n, g) per-group mean forecast
    f_bar_star: np.ndarray  # (n,) mean of the cross-group mean forecast
    n_days: np.ndarray  # (n,) complete days per station


def window_statistics(panel: StationPanel) -> WindowStats:
    """Arithmetic window means of observations and group forecasts."""
    mask = panel.mask
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        empty = [s.id for s, c in zip(panel.stations, counts) if c == 0]
        raise DegenerateDataError(f"stations with no complete days: {empty}")
    obs = np.where(mask, panel.obs, 0.0)
    y_bar = obs.sum(axis=1) / counts
    fc = np.where(mask[:, :, None], panel.fc, 0.0)
    f_bar = fc.sum(axis=1) / counts[:, None]
    f_star = panel.fc.mean(axis=2)
    f_bar_star = np.where(mask, f_star, 0.0).sum(axis=1) / counts
    return WindowStats(
        station_ids=tuple(s.id for s in panel.stations),
        y_bar=y_bar,
        f_bar=f_bar,
        f_bar_star=f_bar_star,
        n_days=counts,
    )


def pooled_slope(panel: StationPanel, stats: WindowStats) -> float:
    """Least-squares slope of centered observations on the centered ensemble
    mean, pooled over every complete (station, day) pair."""
    mask = panel.mask
    f_star = panel.fc.mean(axis=2)
    y_dev = panel.obs - stats.y_bar[:, None]
    f_dev = f_star - stats.f_bar_star[:, None]
    num = float(np.where(mask, y_dev * f_dev, 0.0).sum())
    den = float(np.where(mask, f_dev**2, 0.0).sum())
    if den <= 0.0:
        raise DegenerateDataError("pooled predictor is constant at every station")
    return num / den


def local_uncertainty(panel: StationPanel, stats: WindowStats, b_star: float) -> np.ndarray:
    """Per-station mean squared residual of the single-predictor regression."""
    mask = panel.mask
    f_star = panel.fc.mean(axis=2)
    resid = (
        panel.obs
        - stats.y_bar[:, None]
        - b_star * (f_star - stats.f_bar_star[:, None])
    )
    return np.where(mask, resid**2, 0.0).sum(axis=1) / stats.n_days


# --- minimum-CRPS fitting ----------------------------------------------------


@dataclass(frozen=True)
class PairArrays:
    """Flattened training pairs in canonical (station-major, day) order."""

    mu0: np.ndarray  # window-mean observation per pair
    x_centered: np.ndarray  # (N, g) centered group forecasts
    x_raw: np.ndarray  # (N, g) uncentered group forecasts
    xi2: np.ndarray
    s2: np.ndarray  # ensemble variance across groups (ddof=1), 0 when g = 1
    y: np.ndarray
    n_skipped: int


def build_pairs(panel: StationPanel, stats: WindowStats, xi2) -> PairArrays:
    """Extract complete pairs; drop pairs whose variance is zero for any
    admissible coefficients (local variance and ensemble variance both zero)."""
    xi2 = np.asarray(xi2, dtype=float)
    mask = panel.mask
    g = panel.n_members
    s2_full = panel.fc.var(axis=2, ddof=1) if g > 1 else np.zeros(mask.shape)
    sta_idx, day_idx = np.nonzero(mask)
    mu0 = stats.y_bar[sta_idx]
    x_raw = panel.fc[sta_idx, day_idx, :]
    x_centered = x_raw - stats.f_bar[sta_idx, :]
    xi2_p = xi2[sta_idx]
    s2_p = s2_full[sta_idx, day_idx]
    y = panel.obs[sta_idx, day_idx]
    keep = (xi2_p > 0.0) | (s2_p > 0.0)
    n_skipped = int(np.count_nonzero(~keep))
    if n_skipped:
        warnings.warn(
            f"skipping {n_skipped} training pairs with zero local and ensemble variance",
            stacklevel=2,
        )
    if not np.any(keep):
        raise DegenerateDataError("every training pair has zero variance")
    return PairArrays(
        mu0=mu0[keep],
        x_centered=x_centered[keep],
        x_raw=x_raw[keep],
        xi2=xi2_p[keep],
        s2=s2_p[keep],
        y=y[keep],
        n_skipped=n_skipped,
    )


def _crps_terms(mu, sigma, y):
    z = (y - mu) / sigma
    cdf = special.ndtr(z)
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    crps = sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - _INV_SQRT_PI)
    dmu = 1.0 - 2.0 * cdf
    dsigma = 2.0 * pdf - _INV_SQRT_PI
    return crps, dmu, dsigma


def adaptive_objective(params, pairs: PairArrays, use_c2: bool):
    """Mean CRPS and its gradient in the squared parameterization.

    params = (u_1..u_g, v1[, v2]) with b_k = u_k^2, c1 = v1^2, c2 = v2^2.
    """
    g = pairs.x_centered.shape[1]
    u = params[:g]
    v1 = params[g]
    b = u**2
    c1 = v1**2
    if use_c2:
        v2 = params[g + 1]
        c2 = v2**2
    else:
        c2 = 0.0
    mu = pairs.mu0 + pairs.x_centered @ b
    var = c1 * pairs.xi2 + c2 * pairs.s2
    sigma = np.sqrt(np.maximum(var, 1e-300))
    crps, dmu, dsigma = _crps_terms(mu, sigma, pairs.y)
    n = crps.size
    grad_b = (dmu @ pairs.x_centered) / n
    grad_c1 = float(dsigma @ (pairs.xi2 / (2.0 * sigma))) / n
    grad = np.empty_like(params)
    grad[:g] = grad_b * 2.0 * u
    grad[g] = grad_c1 * 2.0 * v1
    if use_c2:
        grad_c2 = float(dsigma @ (pairs.s2 / (2.0 * sigma))) / n
        grad[g + 1] = grad_c2 * 2.0 * v2
    return float(crps.mean()), grad


def baseline_objective(params, pairs: PairArrays, use_d: bool):
    """Mean CRPS and gradient for the plain-regression baseline.

    params = (a, u_1..u_g, v1[, v2]) with b'_k = u_k^2, c = v1^2, d = v2^2.
    """
    g = pairs.x_raw.shape[1]
    a = params[0]
    u = params[1 : 1 + g]
    v1 = params[1 + g]
    b = u**2
    c = v1**2
    d = params[2 + g] ** 2 if use_d else 0.0
    mu = a + pairs.x_raw @ b
    var = c + d * pairs.s2
    sigma = np.sqrt(np.maximum(var, 1e-300))
    crps, dmu, dsigma = _crps_terms(mu, sigma, pairs.y)
    n = crps.size
    grad = np.empty_like(params)
    grad[0] = float(dmu.mean())
    grad[1 : 1 + g] = (dmu @ pairs.x_raw) / n * 2.0 * u
    grad[1 + g] = float(dsigma @ (1.0 / (2.0 * sigma))) / n * 2.0 * v1
    if use_d:
        grad[2 + g] = float(dsigma @ (pairs.s2 / (2.0 * sigma))) / n * 2.0 * params[2 + g]
    return float(crps.mean()), grad


_RESTART_SEEDS = (1, 2)


def _minimize_restarts(fun, x0, config: FitConfig):
    """Quasi-Newton descent from the deterministic start plus two seeded
    perturbations; the best objective wins."""
    starts = [np.asarray(x0, dtype=float)]
    for seed in _RESTART_SEEDS:
        rng = np.random.Generator(np.random.Philox(seed))
        starts.append(starts[0] * np.exp(0.25 * rng.standard_normal(len(x0))))
    best = None
    any_converged = False
    for start in starts:
        res = optimize.minimize(
            fun,
            start,
            jac=True,
            method="L-BFGS-B",
            options={
                "maxiter": config.max_iter,
                "ftol": config.tol,
                "gtol": config.grad_tol,
            },
        )
        any_converged = any_converged or res.status == 0
        if best is None or res.fun < best.fun:
            best = res
    return best, any_converged


def _panel_grouping(panel: StationPanel) -> MemberGrouping:
    if panel.grouping is not None:
        return panel.grouping
    return MemberGrouping.identity(panel.members)


def _safe_pooled_slope(panel, stats) -> float:
    try:
        return pooled_slope(panel, stats)
    except DegenerateDataError:
        return 0.0


def fit_adaptive_emos(panel, stats, xi2, config: FitConfig | None = None) -> EmosModel:
    """Minimum-CRPS estimate of the group weights and variance coefficients."""
    config = config or FitConfig()
    xi2 = np.asarray(xi2, dtype=float)
    if np.any(xi2 < 0.0):
        raise DomainError("xi2 must be >= 0")
    pairs = build_pairs(panel, stats, xi2)
    g = panel.n_members
    use_c2 = bool(np.any(pairs.s2 > 0.0))
    b_star = _safe_pooled_slope(panel, stats)

    b0 = max(b_star, config.min_init_slope) / g
    x0 = np.concatenate(
        [np.full(g, math.sqrt(b0)), [math.sqrt(config.init_c1)]]
        + ([[math.sqrt(config.init_c2)]] if use_c2 else [])
    )
    best, converged = _minimize_restarts(
        lambda p: adaptive_objective(p, pairs, use_c2), x0, config
    )
    params = best.x
    model = EmosModel(
        grouping=_panel_grouping(panel),
        b=tuple(params[:g] ** 2),
        b_star=b_star,
        c1=float(params[g] ** 2),
        c2=float(params[g + 1] ** 2) if use_c2 else 0.0,
    )
    if not converged:
        raise ConvergenceError(
            f"CRPS minimization did not converge within {config.max_iter} iterations",
            best=model,
        )
    return model


def fit_baseline_ngr(panel, config: FitConfig | None = None) -> BaselineNgr:
    """Minimum-CRPS fit of the plain regression baseline."""
    config = config or FitConfig()
    stats = window_statistics(panel)
    pairs = build_pairs(panel, stats, np.ones(panel.n_stations))
    g = panel.n_members
    use_d = bool(np.any(pairs.s2 > 0.0))
    b_star = _safe_pooled_slope(panel, stats)

    b0 = max(b_star, config.min_init_slope) / g
    a0 = float(pairs.y.mean() - pairs.x_raw.mean(axis=0) @ np.full(g, b0))
    x0 = np.concatenate(
        [[a0], np.full(g, math.sqrt(b0)), [math.sqrt(config.init_c1)]]
        + ([[math.sqrt(config.init_c2)]] if use_d else [])
    )
    best, converged = _minimize_restarts(
        lambda p: baseline_objective(p, pairs, use_d), x0, config
    )
    params = best.x
    baseline = BaselineNgr(
        a=float(params[0]),
        b=tuple(params[1 : 1 + g] ** 2),
        c=float(params[1 + g] ** 2),
        d=float(params[2 + g] ** 2) if use_d else 0.0,
    )
    if not converged:
        raise ConvergenceError(
            f"baseline CRPS minimization did not converge within {config.max_iter} iterations",
            best=baseline,
        )
    return baseline


def adaptive_mean_crps(model: EmosModel, panel, stats, xi2) -> float:
    """Mean training CRPS of a fitted adaptive model (diagnostic)."""
    pairs = build_pairs(panel, stats, xi2)
    mu = pairs.mu0 + pairs.x_centered @ np.asarray(model.b)
    sigma = np.sqrt(np.maximum(model.c1 * pairs.xi2 + model.c2 * pairs.s2, 1e-300))
    crps, _, _ = _crps_terms(mu, sigma, pairs.y)
    return float(crps.mean())


# --- prediction ---------------------------------------------------------------


def _today_array(ensemble_today, g: int) -> np.ndarray:
    f = np.asarray(ensemble_today, dtype=float)
    if f.shape != (g,) or not np.isfinite(f).all():
        raise InputError(
            f"need {g} finite group forecasts, got {ensemble_today!r}"
        )
    return f


def _ensemble_variance(f: np.ndarray) -> float:
    return float(f.var(ddof=1)) if f.size > 1 else 0.0


def predict_at_station(model: EmosModel, state: StationState, ensemble_today,
                       date=None) -> GaussianForecast:
    """Predictive distribution at a fitting station from today's forecasts."""
    g = model.grouping.n_groups
    f = _today_array(ensemble_today, g)
    mu = state.y_bar + float(np.asarray(model.b) @ (f - np.asarray(state.f_bar)))
    s2 = _ensemble_variance(f)
    var = model.c1 * state.xi2 + model.c2 * s2
    return GaussianForecast(site_id=state.station_id, date=date, mu=mu, var=var,
                            interp_var=0.0)


def predict_at_site(model: EmosModel, field_y, field_z, site, ensemble_today,
                    f_bar_site, date=None, propagate_z_variance=False) -> GaussianForecast:
    """Predictive distribution at an arbitrary site via the fitted fields.

    The window-mean temperature and its kriging variance come from the
    y-field; the local variance predictor is exp of the kriged log variance.
    When ``propagate_z_variance`` is set, the log-variance kriging error
    widens the predictor by the lognormal mean factor exp(var_z / 2).
    """
    g = model.grouping.n_groups
    f = _today_array(ensemble_today, g)
    f_bar = _today_array(f_bar_site, g)
    ybar_hat, var_ybar = field_y.predict(site)
    z_hat, var_z = field_z.predict(site)
    xi2_hat = math.exp(z_hat)
    if propagate_z_variance:
        xi2_hat *= math.exp(0.5 * var_z)
    mu = ybar_hat + float(np.asarray(model.b) @ (f - f_bar))
    s2 = _ensemble_variance(f)
    var = model.c1 * xi2_hat + model.c2 * s2
    return GaussianForecast(site_id=getattr(site, "id", str(site)), date=date,
                            mu=mu, var=var, interp_var=var_ybar)


def predict_baseline(baseline: BaselineNgr, site_id: str, ensemble_today,
                     date=None) -> GaussianForecast:
    """Predictive distribution of the plain-regression baseline (no fields)."""
    f = _today_array(ensemble_today, len(baseline.b))
    mu = baseline.a + float(np.asarray(baseline.b) @ f)
    var = baseline.c + baseline.d * _ensemble_variance(f)
    return GaussianForecast(site_id=site_id, date=date, mu=mu, var=var, interp_var=0.0)


def station_states(panel, stats, xi2, zeta_y_raw=None, zeta_z_raw=None) -> tuple:
    """Assemble per-station state records from the window fit."""
    n = panel.n_stations
    zy = np.zeros(n) if zeta_y_raw is None else np.asarray(zeta_y_raw, dtype=float)
    zz = np.zeros(n) if zeta_z_raw is None else np.asarray(zeta_z_raw, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    return tuple(
        StationState(
            station_id=s.id,
            y_bar=float(stats.y_bar[i]),
            f_bar=tuple(stats.f_bar[i]),
            f_bar_star=float(stats.f_bar_star[i]),
            xi2=float(xi2[i]),
            zeta_y_raw=float(zy[i]),
            zeta_z_raw=float(zz[i]),
            n_days_used=int(stats.n_days[i]),
        )
        for i, s in enumerate(panel.stations)
    )
