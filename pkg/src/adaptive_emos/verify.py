"""Score predictive distributions and raw ensembles against observations.

Produces the per-method summary rows (MAE, mean CRPS, interval width and
empirical coverage at the configured levels) and per-station mean forecast
errors. Coverage uses closed intervals: an observation exactly on a boundary
counts as covered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ValidationError
from .scoring import central_interval, ensemble_interval, gaussian_crps, sample_crps
from .tables import fmt, write_csv

DEFAULT_LEVELS = (0.81, 0.905)


@dataclass(frozen=True)
class IntervalScore:
    level: float
    width: float
    coverage: float

    def __post_init__(self):
        if not (0.0 <= self.coverage <= 1.0):
            raise ValidationError(f"coverage must lie in [0,1], got {self.coverage}")
        if self.width < 0.0:
            raise ValidationError(f"width must be >= 0, got {self.width}")


@dataclass(frozen=True)
class ScoreRow:
    """One method's verification summary."""

    method: str
    n: int
    mae: float
    crps: float
    intervals: tuple

    def __post_init__(self):
        if self.n <= 0:
            raise ValidationError("a score row needs at least one scored pair")
        object.__setattr__(self, "intervals", tuple(self.intervals))


@dataclass(frozen=True)
class StationBias:
    """Mean forecast error (predictive median minus observation) at a station."""

    station_id: str
    mean_error: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("station bias needs at least one pair")


def _match_pairs(forecasts, observations):
    """Matched (forecast, observation) pairs in canonical (site, date) order,
    so aggregation cannot depend on input ordering."""
    pairs = [(f, observations[(f.site_id, f.date)]) for f in forecasts
             if (f.site_id, f.date) in observations]
    if not pairs:
        raise InputError("no (site, date) overlap between forecasts and observations")
    pairs.sort(key=lambda p: (p[0].site_id, p[0].date))
    return pairs


def score_gaussian(forecasts, observations, levels=DEFAULT_LEVELS,
                   method="adaptive") -> ScoreRow:
    """Score Gaussian forecasts; the total variance (local + interpolation)
    drives both the CRPS and the intervals, and the MAE uses the predictive
    median (equal to the mean)."""
    pairs = _match_pairs(forecasts, observations)
    mu = np.array([f.mu for f, _ in pairs])
    sd = np.array([f.total_sd for f, _ in pairs])
    y = np.array([obs for _, obs in pairs])
    abs_err = np.abs(mu - y)
    crps = gaussian_crps(mu, sd, y)
    intervals = []
    for level in levels:
        widths = np.empty(len(pairs))
        covered = np.empty(len(pairs), dtype=bool)
        for i in range(len(pairs)):
            iv = central_interval(mu[i], sd[i], level)
            widths[i] = iv.width
            covered[i] = iv.covers(y[i])
        intervals.append(
            IntervalScore(level=level, width=float(widths.mean()),
                          coverage=float(covered.mean()))
        )
    return ScoreRow(
        method=method,
        n=len(pairs),
        mae=float(abs_err.mean()),
        crps=float(np.mean(crps)),
        intervals=tuple(intervals),
    )


def score_ensemble(raw_members, observations, rank_drops=(1, 0),
                   method="ensemble") -> ScoreRow:
    """Score a raw ensemble: MAE of the ensemble median, mean sample CRPS,
    and order-statistic intervals for each requested rank drop.

    ``raw_members`` maps (site_id, date) to the member value vector. Rank
    drops are reported in the given order so they align with ascending
    configured levels (dropping extremes lowers the nominal coverage).
    """
    keys = [k for k in sorted(raw_members) if k in observations]
    if not keys:
        raise InputError("no (site, date) overlap between ensemble and observations")
    values = [np.asarray(raw_members[k], dtype=float) for k in keys]
    sizes = {v.size for v in values}
    if len(sizes) != 1:
        raise InputError(f"ensemble size varies across pairs: {sorted(sizes)}")
    m = sizes.pop()
    if m < 4:
        raise InputError(f"raw-ensemble scoring needs at least 4 members, got {m}")
    y = np.array([observations[k] for k in keys])
    medians = np.array([np.median(v) for v in values])
    crps = np.array([sample_crps(v, yi) for v, yi in zip(values, y)])
    intervals = []
    for rank_drop in rank_drops:
        widths = np.empty(len(keys))
        covered = np.empty(len(keys), dtype=bool)
        nominal = 0.0
        for i, v in enumerate(values):
            iv = ensemble_interval(v, rank_drop)
            widths[i] = iv.width
            covered[i] = iv.covers(y[i])
            nominal = iv.nominal
        intervals.append(
            IntervalScore(level=nominal, width=float(widths.mean()),
                          coverage=float(covered.mean()))
        )
    return ScoreRow(
        method=method,
        n=len(keys),
        mae=float(np.mean(np.abs(medians - y))),
        crps=float(crps.mean()),
        intervals=tuple(intervals),
    )


def station_bias(forecasts, observations) -> list[StationBias]:
    """Per-station mean of (predictive median - observation), id-sorted.

    Stations without any matched pair are omitted.
    """
    per_station: dict = {}
    for f in forecasts:
        key = (f.site_id, f.date)
        if key in observations:
            per_station.setdefault(f.site_id, []).append(f.mu - observations[key])
    return [
        StationBias(station_id=sid, mean_error=float(np.mean(errs)), n=len(errs))
        for sid, errs in sorted(per_station.items())
    ]


def _level_tag(level: float) -> str:
    return ("%g" % (level * 100.0)).replace(".", "")


def scores_header(levels) -> list[str]:
    header = ["method", "n", "mae_c", "crps_c"]
    for level in levels:
        tag = _level_tag(level)
        header += [f"width{tag}_c", f"cov{tag}"]
    return header


def write_scores(rows, levels, path, config=None) -> None:
    """Write the per-method score table CSV."""
    data = []
    for row in rows:
        if len(row.intervals) != len(levels):
            raise InputError(
                f"method {row.method!r} has {len(row.intervals)} interval scores "
                f"for {len(levels)} levels"
            )
        out = [row.method, row.n, fmt(row.mae), fmt(row.crps)]
        for iv in row.intervals:
            out += [fmt(iv.width), fmt(iv.coverage)]
        data.append(out)
    write_csv(path, scores_header(levels), data, config)


BIAS_HEADER = ["station_id", "x_km", "y_km", "mean_error_c", "n"]


def write_bias(bias_rows, coords, path, config=None) -> None:
    """Write the per-station bias CSV, plot-ready with coordinates.

    ``coords`` maps station id to (x_km, y_km); every scored station must
    resolve.
    """
    data = []
    for row in bias_rows:
        if row.station_id not in coords:
            raise InputError(f"no coordinates known for station {row.station_id!r}")
        x, y = coords[row.station_id]
        data.append([row.station_id, fmt(x), fmt(y), fmt(row.mean_error), row.n])
    write_csv(path, BIAS_HEADER, data, config)
