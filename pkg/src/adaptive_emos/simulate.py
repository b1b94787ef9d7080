"""Synthetic-data oracle: Brownian surfaces with nugget and full panels
generated exactly from the centered-predictor regression with known
parameters.

All randomness flows from one seed through a counter-based Philox stream,
so datasets are reproducible across runs and platforms up to the floating
point determinism of the dense factorization.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import GridSite, MemberGrouping, Station, StationPanel
from .errors import DomainError, NumericError
from .geostat import natural_spline_basis

SIM_CAP_POINTS = 3000  # dense-factorization simulation cap


@dataclass(frozen=True)
class SimConfig:
    """Generator settings; every field is echoed into the truth record."""

    seed: int = 1
    n_stations: int = 60
    n_sites: int = 10  # held-out sites that also receive observations
    domain_km: float = 500.0
    altitude_range_km: tuple = (0.0, 1.5)
    theta_y: tuple = (0.2, 0.01)  # (nugget scale, variogram slope per km)
    theta_y_local: float = 0.004  # slope of the forecast-invisible anomaly field
    theta_z: tuple = (0.05, 0.0005)
    b: tuple = (0.4, 0.3, 0.2, 0.1)
    c1: float = 1.0
    c2: float = 0.5
    n_days: int = 60
    members_per_group: int = 5
    ensemble_spread: float = 0.6  # sd of the day-to-day group forecast signal
    spread_day_sd: float = 0.5  # lognormal sd of the per-day spread factor
    member_noise: float = 0.2  # within-group member jitter
    group_offset_scale: float = 0.4
    fc_mean_weight: float = 0.8  # fraction of the shared climatology the forecasts resolve
    altitude_trend: tuple = (10.0, -6.5, 0.0)  # coefficients on the spline basis
    base_log_var: float = 0.2
    start_date: str = "2011-02-01"

    def __post_init__(self):
        for name in ("c1", "c2", "ensemble_spread", "member_noise", "group_offset_scale"):
            if getattr(self, name) < 0.0:
                raise DomainError(f"{name} must be >= 0")
        if any(v < 0.0 for v in self.b):
            raise DomainError("true weights b must be >= 0")
        if min(self.theta_y) < 0 or min(self.theta_z) < 0 or self.theta_y_local < 0:
            raise DomainError("covariance parameters must be >= 0")
        if self.n_stations < 2 or self.n_days < 2:
            raise DomainError("need at least 2 stations and 2 days")
        if self.n_stations + self.n_sites > SIM_CAP_POINTS:
            raise DomainError(f"dense simulation capped at {SIM_CAP_POINTS} points")
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))

    @property
    def n_groups(self) -> int:
        return len(self.b)

    @property
    def days(self) -> tuple:
        start = dt.date.fromisoformat(self.start_date)
        return tuple(start + dt.timedelta(days=i) for i in range(self.n_days))


def _pinned_brownian_draw(points, theta2, zeta, theta1, rng) -> np.ndarray:
    """One draw of a Brownian surface pinned at the origin, plus site nugget.

    Cov(Y_s, Y_t) = theta2 * (|s| + |t| - |s-t|) with theta1*zeta_i added on
    the diagonal. Points with zero total variance come out exactly zero.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    zeta = np.zeros(n) if zeta is None else np.asarray(zeta, dtype=float)
    r = np.hypot(pts[:, 0], pts[:, 1])
    cov = theta2 * (r[:, None] + r[None, :] - np.hypot(
        pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1]
    ))
    cov[np.diag_indices(n)] += theta1 * zeta
    values = np.zeros(n)
    live = np.diagonal(cov) > 0.0
    if not np.any(live):
        return values
    sub = cov[np.ix_(live, live)]
    try:
        L = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(sub + 1e-10 * np.eye(sub.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"simulation covariance not factorizable: {exc}") from exc
    values[live] = L @ rng.standard_normal(int(np.count_nonzero(live)))
    return values


def simulate_brownian(points, theta2, zeta=None, theta1=0.0, seed=0) -> np.ndarray:
    """Seeded single draw of the pinned Brownian-plus-nugget field."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise DomainError("points must be a nonempty (n, 2) array")
    if pts.shape[0] > SIM_CAP_POINTS:
        raise DomainError(f"dense simulation capped at {SIM_CAP_POINTS} points")
    rng = np.random.Generator(np.random.Philox(seed))
    return _pinned_brownian_draw(pts, theta2, zeta, theta1, rng)


@dataclass(frozen=True)
class SimData:
    """Everything one simulation produces: network, panel arrays, and truth."""

    config: SimConfig
    stations: tuple  # training Stations
    sites: tuple  # held-out GridSites
    grouping: MemberGrouping
    days: tuple
    raw_members: tuple
    obs: np.ndarray  # (n_entities, n_days); stations first, then sites
    raw_fc: np.ndarray  # (n_entities, n_days, n_members_raw)
    group_fc: np.ndarray  # (n_entities, n_days, g)
    truth: dict = field(repr=False, default_factory=dict)

    @property
    def entity_ids(self) -> tuple:
        return tuple(s.id for s in self.stations) + tuple(s.id for s in self.sites)


def _truth_record(config, stations, sites, ybar_true, xi2_true, fc_mean) -> dict:
    ids = [s.id for s in stations] + [s.id for s in sites]
    return {
        "config": asdict(config),
        "ybar_true": dict(zip(ids, map(float, ybar_true))),
        "xi2_true": dict(zip(ids, map(float, xi2_true))),
        "fc_mean": {sid: list(map(float, row)) for sid, row in zip(ids, fc_mean)},
    }


def simulate_dataset(config: SimConfig) -> SimData:
    """Generate stations, held-out sites, and the full forecast/observation block.

    Observations follow the centered-predictor model exactly: the spatial
    mean is a spline altitude trend plus a Brownian surface with nugget, the
    local extra variance is a log-Brownian field, and each day's observation
    deviates from the mean by the weighted centered group forecasts plus
    Gaussian noise with variance c1*xi^2 + c2*S^2.
    """
    cfg = config
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    g = cfg.n_groups
    n_sta, n_site = cfg.n_stations, cfg.n_sites
    n_all = n_sta + n_site

    coords = rng.uniform(0.0, cfg.domain_km, size=(n_all, 2))
    alt_km = rng.uniform(cfg.altitude_range_km[0], cfg.altitude_range_km[1], size=n_all)
    width = max(len(str(n_all)), 3)
    stations = tuple(
        Station(f"S{i + 1:0{width}d}", float(coords[i, 0]), float(coords[i, 1]),
                float(alt_km[i] * 1000.0))
        for i in range(n_sta)
    )
    sites = tuple(
        GridSite(f"H{i - n_sta + 1:0{width}d}", float(coords[i, 0]), float(coords[i, 1]),
                 float(alt_km[i] * 1000.0))
        for i in range(n_sta, n_all)
    )

    trend_basis = natural_spline_basis(alt_km)
    n_coef = min(len(cfg.altitude_trend), trend_basis.shape[1])
    trend = trend_basis[:, :n_coef] @ np.asarray(cfg.altitude_trend[:n_coef], dtype=float)

    # the shared smooth field is partially resolved by the forecasts; the
    # local anomaly field and the nugget are invisible to them, which is what
    # the site-adaptive mean component exploits
    smooth_y = _pinned_brownian_draw(coords, cfg.theta_y[1], None, 0.0, rng)
    local_y = _pinned_brownian_draw(coords, cfg.theta_y_local, None, 0.0, rng)
    nugget_y = np.sqrt(cfg.theta_y[0]) * rng.standard_normal(n_all)
    ybar_true = trend + smooth_y + local_y + nugget_y

    smooth_z = _pinned_brownian_draw(coords, cfg.theta_z[1], None, 0.0, rng)
    nugget_z = np.sqrt(cfg.theta_z[0]) * rng.standard_normal(n_all)
    xi2_true = np.exp(cfg.base_log_var + smooth_z + nugget_z)

    offsets = cfg.group_offset_scale * (
        np.linspace(-1.0, 1.0, g) if g > 1 else np.zeros(1)
    )
    fc_mean = cfg.fc_mean_weight * (trend + smooth_y)[:, None] + offsets[None, :]

    # ensemble agreement varies by day: a lognormal factor scales the spread,
    # giving the spread-skill signal that identifies the S^2 coefficient
    day_factor = np.exp(cfg.spread_day_sd * rng.standard_normal((n_all, cfg.n_days)))
    signal = rng.normal(0.0, 1.0, size=(n_all, cfg.n_days, g)) * (
        cfg.ensemble_spread * day_factor
    )[:, :, None]
    raw_fc = (
        fc_mean[:, None, :, None]
        + signal[:, :, :, None]
        + rng.normal(0.0, cfg.member_noise, size=(n_all, cfg.n_days, g, cfg.members_per_group))
    )
    group_fc = raw_fc.mean(axis=3)

    fbar_panel = group_fc.mean(axis=1)  # per-entity window mean of each group forecast
    centered = group_fc - fbar_panel[:, None, :]
    if g > 1:
        s2 = group_fc.var(axis=2, ddof=1)
    else:
        s2 = np.zeros((n_all, cfg.n_days))
    noise_var = cfg.c1 * xi2_true[:, None] + cfg.c2 * s2
    eps = np.sqrt(noise_var) * rng.standard_normal((n_all, cfg.n_days))
    obs = ybar_true[:, None] + centered @ np.asarray(cfg.b) + eps

    raw_members = tuple(
        f"g{k + 1}m{j + 1}" for k in range(g) for j in range(cfg.members_per_group)
    )
    grouping = MemberGrouping({m: m.split("m")[0] for m in raw_members})
    raw_flat = raw_fc.reshape(n_all, cfg.n_days, g * cfg.members_per_group)

    truth = _truth_record(cfg, stations, sites, ybar_true, xi2_true, fc_mean)
    return SimData(
        config=cfg,
        stations=stations,
        sites=sites,
        grouping=grouping,
        days=cfg.days,
        raw_members=raw_members,
        obs=obs,
        raw_fc=raw_flat,
        group_fc=group_fc,
        truth=truth,
    )


def simulate_panel(config: SimConfig):
    """Training-station panel plus the ground-truth record."""
    data = simulate_dataset(config)
    n = len(data.stations)
    panel = StationPanel(
        stations=data.stations,
        days=data.days,
        members=data.grouping.groups,
        obs=data.obs[:n],
        fc=data.group_fc[:n],
        raw_members=data.raw_members,
        raw_fc=data.raw_fc[:n],
        grouping=data.grouping,
    )
    return panel, data.truth
