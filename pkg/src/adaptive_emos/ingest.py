"""Parse station/observation/ensemble CSV files and assemble rolling
training windows with the missing-data and member-grouping policies applied.

A (station, day) cell survives assembly only when the observation and every
raw member forecast are present; incomplete cells are dropped whole, never
imputed. Stations keeping fewer than ``min_frac`` of the window are excluded.
"""

from __future__ import annotations

import datetime as dt
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    GridSite,
    MemberGrouping,
    Station,
    StationPanel,
    validate_station_network,
)
from .errors import DatasetError, DomainError, ValidationError
from .tables import parse_date, parse_float, read_rows

STATIONS_HEADER = ["station_id", "x_km", "y_km", "altitude_m"]
GRID_HEADER = ["site_id", "x_km", "y_km", "altitude_m"]
OBS_HEADER = ["station_id", "date", "value_c"]
ENSEMBLE_HEADER = ["station_id", "date", "member_id", "value_c"]
GROUPING_HEADER = ["member_id", "group"]

ALTITUDE_LEVERAGE_GAP_M = 500.0


@dataclass(frozen=True)
class DatasetPaths:
    """File locations of one dataset."""

    stations: Path
    observations: Path
    ensemble: Path
    grid: Path | None = None
    grouping: Path | None = None


def load_stations(path) -> list[Station]:
    """Read the station network; duplicate ids or coordinates are rejected."""
    stations = []
    for line_no, row in read_rows(path, STATIONS_HEADER):
        try:
            station = Station(
                id=row[0],
                x=parse_float(path, line_no, row[1], "x_km"),
                y=parse_float(path, line_no, row[2], "y_km"),
                altitude=parse_float(path, line_no, row[3], "altitude_m"),
            )
        except ValidationError as exc:
            raise ValidationError(f"{path}:{line_no}: {exc}") from None
        stations.append(station)
    validate_station_network(stations)
    _warn_on_altitude_leverage(stations)
    return stations


def _warn_on_altitude_leverage(stations) -> None:
    if len(stations) < 2:
        return
    alts = sorted((s.altitude, s.id) for s in stations)
    gap = alts[-1][0] - alts[-2][0]
    if gap > ALTITUDE_LEVERAGE_GAP_M:
        warnings.warn(
            f"station {alts[-1][1]!r} is {gap:.0f} m above the second-highest station; "
            "it may dominate the fitted vertical temperature profile",
            stacklevel=2,
        )


def load_grid(path) -> list[GridSite]:
    """Read prediction sites; an empty data section is valid."""
    sites = []
    for line_no, row in read_rows(path, GRID_HEADER):
        try:
            site = GridSite(
                id=row[0],
                x=parse_float(path, line_no, row[1], "x_km"),
                y=parse_float(path, line_no, row[2], "y_km"),
                altitude=parse_float(path, line_no, row[3], "altitude_m"),
            )
        except ValidationError as exc:
            raise ValidationError(f"{path}:{line_no}: {exc}") from None
        sites.append(site)
    return sites


def load_observations(path) -> dict:
    """Read observations into a {(station_id, date): value} table."""
    table: dict = {}
    for line_no, row in read_rows(path, OBS_HEADER):
        key = (row[0], parse_date(path, line_no, row[1]))
        if key in table:
            raise ValidationError(f"{path}:{line_no}: duplicate observation for {key}")
        table[key] = parse_float(path, line_no, row[2], "value_c")
    return table


def load_ensemble(path) -> dict:
    """Read member forecasts into a {(station_id, date): {member: value}} table."""
    table: dict = {}
    for line_no, row in read_rows(path, ENSEMBLE_HEADER):
        key = (row[0], parse_date(path, line_no, row[1]))
        member = row[2]
        cell = table.setdefault(key, {})
        if member in cell:
            raise ValidationError(
                f"{path}:{line_no}: duplicate forecast for {key} member {member!r}"
            )
        cell[member] = parse_float(path, line_no, row[3], "value_c")
    return table


def load_grouping(path) -> MemberGrouping:
    mapping: dict = {}
    for line_no, row in read_rows(path, GROUPING_HEADER):
        if row[0] in mapping:
            raise ValidationError(f"{path}:{line_no}: member {row[0]!r} mapped twice")
        mapping[row[0]] = row[1]
    if not mapping:
        raise ValidationError(f"{path}: grouping file maps no members")
    return MemberGrouping(mapping)


def ensemble_members(ens_table: dict) -> list[str]:
    members: set = set()
    for cell in ens_table.values():
        members.update(cell)
    return sorted(members)


def _grouped_means(cell: dict, grouping: MemberGrouping) -> np.ndarray:
    """Per-group means; values inside a group are summed in sorted order so
    the result cannot depend on member labels."""
    out = np.empty(grouping.n_groups)
    for gi, label in enumerate(grouping.groups):
        vals = np.sort([cell[m] for m in grouping.members_of(label)])
        out[gi] = vals.sum() / vals.size
    return out


def window_days(end_date: dt.date, window_len: int) -> tuple:
    """The window_len calendar days ending the day before end_date."""
    return tuple(end_date - dt.timedelta(days=d) for d in range(window_len, 0, -1))


def assemble_window(stations, obs_table, ens_table, grouping, end_date,
                    window_len=30, min_frac=2.0 / 3.0):
    """Align tables into a StationPanel over one training window.

    Returns (panel, excluded_station_ids). Member forecasts are averaged
    within each exchangeability group; the raw member block is preserved on
    the panel for raw-ensemble verification.
    """
    if window_len < 2:
        raise DomainError(f"window_len must be >= 2, got {window_len}")
    if not (0.0 < min_frac <= 1.0):
        raise DomainError(f"min_frac must lie in (0, 1], got {min_frac}")
    stations = list(stations)
    validate_station_network(stations)
    if grouping is None:
        members = ensemble_members(ens_table)
        if not members:
            raise DatasetError("ensemble table is empty and no grouping was given")
        grouping = MemberGrouping.identity(members)
    all_members = sorted(grouping.member_to_group)
    days = window_days(end_date, window_len)

    n, t, g, m = len(stations), len(days), grouping.n_groups, len(all_members)
    obs = np.full((n, t), np.nan)
    fc = np.full((n, t, g), np.nan)
    raw = np.full((n, t, m), np.nan)
    for i, station in enumerate(stations):
        for j, day in enumerate(days):
            key = (station.id, day)
            y = obs_table.get(key)
            cell = ens_table.get(key)
            if y is None or cell is None or not all(mm in cell for mm in all_members):
                continue
            obs[i, j] = y
            fc[i, j, :] = _grouped_means(cell, grouping)
            raw[i, j, :] = [cell[mm] for mm in all_members]

    complete = np.isfinite(obs).sum(axis=1)
    threshold = min_frac * window_len
    included = complete >= threshold
    excluded_ids = [s.id for s, ok in zip(stations, included) if not ok]
    if int(included.sum()) < 2:
        raise DatasetError(
            f"only {int(included.sum())} stations have at least "
            f"{threshold:.1f} complete days in the window ending {end_date}"
        )
    idx = np.nonzero(included)[0]
    panel = StationPanel(
        stations=tuple(stations[i] for i in idx),
        days=days,
        members=grouping.groups,
        obs=obs[idx],
        fc=fc[idx],
        raw_members=tuple(all_members),
        raw_fc=raw[idx],
        grouping=grouping,
    )
    if not panel.mask.any():
        raise DatasetError(f"no complete (station, day) cells in the window ending {end_date}")
    return panel, excluded_ids


def load_dataset(paths: DatasetPaths):
    """Load every table of a dataset in one call."""
    stations = load_stations(paths.stations)
    obs_table = load_observations(paths.observations)
    ens_table = load_ensemble(paths.ensemble)
    grid = load_grid(paths.grid) if paths.grid else []
    grouping = load_grouping(paths.grouping) if paths.grouping else None
    return stations, obs_table, ens_table, grid, grouping
