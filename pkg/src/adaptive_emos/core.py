"""Domain types shared by all modules, plus model-file serialization.

All types are immutable after construction and safe to share across threads.
Missing values inside panel arrays are represented by NaN, the explicit
absent marker for float arrays; no sentinel temperatures are ever used.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

ALTITUDE_MIN_M = -500.0
ALTITUDE_MAX_M = 9000.0


def _check_finite(name, *values):
    for v in values:
        if not np.isfinite(v):
            raise ValidationError(f"{name} must be finite, got {v}")


@dataclass(frozen=True)
class Station:
    """An observation site with planar coordinates (km) and altitude (m)."""

    id: str
    x: float
    y: float
    altitude: float

    def __post_init__(self):
        _check_finite(f"station {self.id!r} coordinates", self.x, self.y)
        if not (ALTITUDE_MIN_M <= self.altitude <= ALTITUDE_MAX_M):
            raise ValidationError(
                f"station {self.id!r} altitude {self.altitude} m outside "
                f"[{ALTITUDE_MIN_M}, {ALTITUDE_MAX_M}]"
            )

    @property
    def coords(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def altitude_km(self) -> float:
        return self.altitude / 1000.0

    def to_dict(self) -> dict:
        return {"id": self.id, "x_km": self.x, "y_km": self.y, "altitude_m": self.altitude}

    @classmethod
    def from_dict(cls, d: dict) -> "Station":
        return cls(id=d["id"], x=d["x_km"], y=d["y_km"], altitude=d["altitude_m"])


@dataclass(frozen=True)
class GridSite:
    """A prediction site; same shape as Station without network uniqueness."""

    id: str
    x: float
    y: float
    altitude: float

    def __post_init__(self):
        _check_finite(f"site {self.id!r} coordinates", self.x, self.y)
        if not (ALTITUDE_MIN_M <= self.altitude <= ALTITUDE_MAX_M):
            raise ValidationError(
                f"site {self.id!r} altitude {self.altitude} m outside "
                f"[{ALTITUDE_MIN_M}, {ALTITUDE_MAX_M}]"
            )

    @property
    def coords(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def altitude_km(self) -> float:
        return self.altitude / 1000.0


def validate_station_network(stations) -> None:
    """Reject duplicate ids or duplicate planar coordinates."""
    seen_ids: set[str] = set()
    seen_xy: dict[tuple[float, float], str] = {}
    for s in stations:
        if s.id in seen_ids:
            raise ValidationError(f"duplicate station id {s.id!r}")
        seen_ids.add(s.id)
        if s.coords in seen_xy:
            raise ValidationError(
                f"stations {seen_xy[s.coords]!r} and {s.id!r} share coordinates {s.coords}"
            )
        seen_xy[s.coords] = s.id


@dataclass(frozen=True)
class MemberGrouping:
    """Partition of ensemble member ids into exchangeability groups.

    Members within a group share one regression weight. ``groups`` is the
    sorted list of distinct labels; its order fixes coefficient order.
    """

    member_to_group: dict
    groups: tuple[str, ...] = field(default=())

    def __post_init__(self):
        labels = tuple(sorted(set(self.member_to_group.values())))
        if not labels:
            raise ValidationError("grouping must map at least one member")
        object.__setattr__(self, "groups", labels)
        object.__setattr__(self, "member_to_group", dict(self.member_to_group))

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_index(self, member_id: str) -> int:
        try:
            return self.groups.index(self.member_to_group[member_id])
        except KeyError:
            raise ValidationError(f"member {member_id!r} not mapped to any group") from None

    def members_of(self, group: str) -> list[str]:
        return sorted(m for m, g in self.member_to_group.items() if g == group)

    @classmethod
    def identity(cls, member_ids) -> "MemberGrouping":
        """Each member forms its own group (no exchangeability assumed)."""
        return cls({m: m for m in member_ids})

    def to_dict(self) -> dict:
        return {"member_to_group": dict(sorted(self.member_to_group.items())),
                "groups": list(self.groups)}

    @classmethod
    def from_dict(cls, d: dict) -> "MemberGrouping":
        return cls(d["member_to_group"])


def _grouped_mean(values: np.ndarray) -> float:
    """Mean with a canonical (sorted) summation order, so relabeling members
    inside a group can never change the result bitwise."""
    v = np.sort(np.asarray(values, dtype=float))
    return float(v.sum() / v.size)


@dataclass(frozen=True)
class StationPanel:
    """Aligned station x day x member arrays for one training window.

    ``members`` are group labels when the raw ensemble has been reduced by a
    MemberGrouping; the unreduced data is kept in ``raw_fc`` for raw-ensemble
    verification. A (station, day) cell is usable only when the observation
    and every member forecast are present (see ``mask``). Stations and days
    are stored in canonical sorted order regardless of construction order.
    """

    stations: tuple
    days: tuple
    members: tuple
    obs: np.ndarray
    fc: np.ndarray
    raw_members: tuple = ()
    raw_fc: np.ndarray | None = None
    grouping: MemberGrouping | None = None

    def __post_init__(self):
        stations = tuple(self.stations)
        days = tuple(self.days)
        members = tuple(self.members)
        obs = np.array(self.obs, dtype=float)
        fc = np.array(self.fc, dtype=float)
        raw_fc = None if self.raw_fc is None else np.array(self.raw_fc, dtype=float)

        if len(days) < 2:
            raise ValidationError(f"panel needs at least 2 days, got {len(days)}")
        if len(set(days)) != len(days):
            raise ValidationError("panel days must be distinct")
        if len(members) < 1:
            raise ValidationError("panel needs at least one member")
        validate_station_network(stations)
        if obs.shape != (len(stations), len(days)):
            raise ValidationError(f"obs shape {obs.shape} != {(len(stations), len(days))}")
        if fc.shape != (len(stations), len(days), len(members)):
            raise ValidationError(
                f"fc shape {fc.shape} != {(len(stations), len(days), len(members))}"
            )
        if self.grouping is not None and tuple(self.grouping.groups) != members:
            raise ValidationError(
                f"panel members {members} do not match grouping groups {self.grouping.groups}"
            )

        # canonical order: stations by id, days ascending
        sta_order = np.argsort([s.id for s in stations], kind="stable")
        day_order = np.argsort(days, kind="stable")
        stations = tuple(stations[i] for i in sta_order)
        days = tuple(days[i] for i in day_order)
        obs = obs[sta_order][:, day_order]
        fc = fc[sta_order][:, day_order, :]
        if raw_fc is not None:
            raw_fc = raw_fc[sta_order][:, day_order, :]

        for arr in (obs, fc) + (() if raw_fc is None else (raw_fc,)):
            arr.flags.writeable = False
        object.__setattr__(self, "stations", stations)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "fc", fc)
        object.__setattr__(self, "raw_members", tuple(self.raw_members))
        object.__setattr__(self, "raw_fc", raw_fc)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_days(self) -> int:
        return len(self.days)

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def mask(self) -> np.ndarray:
        """Boolean (station, day) array of fully observed cells."""
        return np.isfinite(self.obs) & np.isfinite(self.fc).all(axis=2)


@dataclass(frozen=True)
class StationState:
    """Per-station fitted quantities from one training window."""

    station_id: str
    y_bar: float
    f_bar: tuple  # per-group window-mean forecast
    f_bar_star: float  # window mean of the cross-group mean forecast
    xi2: float  # local residual variance predictor, degC^2
    zeta_y_raw: float = 0.0
    zeta_z_raw: float = 0.0
    n_days_used: int = 0

    def __post_init__(self):
        if self.xi2 < 0.0:
            raise ValidationError(f"xi2 must be >= 0, got {self.xi2}")
        if self.zeta_y_raw < 0.0 or self.zeta_z_raw < 0.0:
            raise ValidationError("raw nugget indicators must be >= 0")
        object.__setattr__(self, "f_bar", tuple(float(v) for v in self.f_bar))

    def to_dict(self) -> dict:
        return {
            "station_id": self.station_id,
            "y_bar": self.y_bar,
            "f_bar": list(self.f_bar),
            "f_bar_star": self.f_bar_star,
            "xi2": self.xi2,
            "zeta_y_raw": self.zeta_y_raw,
            "zeta_z_raw": self.zeta_z_raw,
            "n_days_used": self.n_days_used,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StationState":
        return cls(
            station_id=d["station_id"],
            y_bar=d["y_bar"],
            f_bar=tuple(d["f_bar"]),
            f_bar_star=d["f_bar_star"],
            xi2=d["xi2"],
            zeta_y_raw=d["zeta_y_raw"],
            zeta_z_raw=d["zeta_z_raw"],
            n_days_used=d["n_days_used"],
        )


@dataclass(frozen=True)
class BaselineNgr:
    """Plain NGR coefficients: mu = a + sum b'_k f_k, var = c + d * S^2."""

    a: float
    b: tuple
    c: float
    d: float

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if any(v < 0.0 for v in self.b) or self.c < 0.0 or self.d < 0.0:
            raise ValidationError("baseline coefficients b', c, d must be >= 0")

    def to_dict(self) -> dict:
        return {"a": self.a, "b": list(self.b), "c": self.c, "d": self.d}

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineNgr":
        return cls(a=d["a"], b=tuple(d["b"]), c=d["c"], d=d["d"])


@dataclass(frozen=True)
class EmosModel:
    """Global coefficients of the adaptive model (one weight per member group)."""

    grouping: MemberGrouping
    b: tuple
    b_star: float
    c1: float
    c2: float
    baseline: BaselineNgr | None = None

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if len(self.b) != self.grouping.n_groups:
            raise ValidationError(
                f"b has {len(self.b)} entries for {self.grouping.n_groups} groups"
            )
        if any(v < 0.0 for v in self.b) or self.c1 < 0.0 or self.c2 < 0.0:
            raise ValidationError("coefficients b, c1, c2 must be >= 0")

    def to_dict(self) -> dict:
        return {
            "grouping": self.grouping.to_dict(),
            "b": list(self.b),
            "b_star": self.b_star,
            "c1": self.c1,
            "c2": self.c2,
            "baseline": None if self.baseline is None else self.baseline.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmosModel":
        return cls(
            grouping=MemberGrouping.from_dict(d["grouping"]),
            b=tuple(d["b"]),
            b_star=d["b_star"],
            c1=d["c1"],
            c2=d["c2"],
            baseline=None if d.get("baseline") is None else BaselineNgr.from_dict(d["baseline"]),
        )


@dataclass(frozen=True)
class FieldModel:
    """Serializable record of one fitted interpolation field.

    Holds everything needed to reproduce predictions bit-for-bit: covariance
    parameters, the raw and smoothed nugget indicators with their neighbor
    count, the drift descriptor, stations, and the kriging dual weights.
    """

    kind: str  # "y" (window-mean temperature) or "z" (log local variance)
    theta1: float
    theta2: float
    drift_kind: str  # "constant" or "altitude-spline"
    knots_km: tuple
    station_records: tuple  # of Station
    values: tuple  # field data at stations, in station order
    zeta_raw: tuple
    zeta: tuple  # smoothed nugget evaluated at the stations
    k_nn: int
    alpha: tuple
    beta: tuple

    def __post_init__(self):
        if self.theta2 <= 0.0:
            raise ValidationError(f"theta2 must be > 0, got {self.theta2}")
        if self.theta1 < 0.0:
            raise ValidationError(f"theta1 must be >= 0, got {self.theta1}")
        for name in ("values", "zeta_raw", "zeta", "alpha", "beta", "knots_km"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "station_records", tuple(self.station_records))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "drift": {"kind": self.drift_kind, "knots_km": list(self.knots_km)},
            "stations": [s.to_dict() for s in self.station_records],
            "values": list(self.values),
            "zeta_raw": list(self.zeta_raw),
            "zeta": list(self.zeta),
            "k_nn": self.k_nn,
            "alpha": list(self.alpha),
            "beta": list(self.beta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FieldModel":
        return cls(
            kind=d["kind"],
            theta1=d["theta1"],
            theta2=d["theta2"],
            drift_kind=d["drift"]["kind"],
            knots_km=tuple(d["drift"]["knots_km"]),
            station_records=tuple(Station.from_dict(s) for s in d["stations"]),
            values=tuple(d["values"]),
            zeta_raw=tuple(d["zeta_raw"]),
            zeta=tuple(d["zeta"]),
            k_nn=d["k_nn"],
            alpha=tuple(d["alpha"]),
            beta=tuple(d["beta"]),
        )


@dataclass(frozen=True)
class GaussianForecast:
    """Predictive Gaussian distribution at one site and date.

    ``var`` is the local forecast variance; ``interp_var`` is the surcharge
    from interpolating the window-mean temperature (zero at fitting stations).
    The total predictive variance is their sum.
    """

    site_id: str
    date: dt.date | None
    mu: float
    var: float
    interp_var: float = 0.0

    def __post_init__(self):
        if not self.var > 0.0:
            raise ValidationError(f"predictive variance must be > 0, got {self.var}")
        if self.interp_var < 0.0:
            raise ValidationError(f"interp_var must be >= 0, got {self.interp_var}")

    @property
    def total_var(self) -> float:
        return self.var + self.interp_var

    @property
    def total_sd(self) -> float:
        return float(np.sqrt(self.total_var))


@dataclass(frozen=True)
class ModelBundle:
    """Everything cmd_fit produces for one initialization date."""

    emos: EmosModel
    station_states: tuple
    field_y: FieldModel
    field_z: FieldModel
    config: dict

    def to_dict(self) -> dict:
        return {
            "emos": self.emos.to_dict(),
            "station_states": [s.to_dict() for s in self.station_states],
            "field_y": self.field_y.to_dict(),
            "field_z": self.field_z.to_dict(),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        return cls(
            emos=EmosModel.from_dict(d["emos"]),
            station_states=tuple(StationState.from_dict(s) for s in d["station_states"]),
            field_y=FieldModel.from_dict(d["field_y"]),
            field_z=FieldModel.from_dict(d["field_z"]),
            config=d["config"],
        )

    def state_for(self, station_id: str) -> StationState:
        for s in self.station_states:
            if s.station_id == station_id:
                return s
        raise ValidationError(f"no fitted state for station {station_id!r}")


def save_model(bundle: ModelBundle, path) -> None:
    """Write the model file. Floats keep full round-trip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bundle.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path) -> ModelBundle:
    with open(path, encoding="utf-8") as fh:
        return ModelBundle.from_dict(json.load(fh))
