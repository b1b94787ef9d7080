"""Domain-type invariants and model-file round-trip fidelity."""

import datetime as dt
import math

import numpy as np
import pytest

from adaptive_emos.core import (
    BaselineNgr,
    EmosModel,
    FieldModel,
    GaussianForecast,
    GridSite,
    MemberGrouping,
    ModelBundle,
    Station,
    StationPanel,
    StationState,
    load_model,
    save_model,
    validate_station_network,
)
from adaptive_emos.errors import ValidationError


def station(i, x=None, y=None, alt=100.0):
    return Station(f"S{i}", x if x is not None else float(i), y or 0.0, alt)


# --- stations & sites ---------------------------------------------------------


def test_station_altitude_bounds():
    Station("ok", 0.0, 0.0, -500.0)
    Station("ok2", 0.0, 0.0, 9000.0)
    with pytest.raises(ValidationError):
        Station("low", 0.0, 0.0, -501.0)
    with pytest.raises(ValidationError):
        Station("high", 0.0, 0.0, 9001.0)


def test_station_coords_must_be_finite():
    with pytest.raises(ValidationError):
        Station("bad", np.nan, 0.0, 0.0)
    with pytest.raises(ValidationError):
        GridSite("bad", 0.0, np.inf, 0.0)


def test_network_rejects_duplicates():
    with pytest.raises(ValidationError, match="duplicate station id"):
        validate_station_network([station(1), station(1, x=5.0)])
    with pytest.raises(ValidationError, match="share coordinates"):
        validate_station_network([station(1, x=2.0), station(2, x=2.0)])


def test_altitude_km_conversion():
    assert station(1, alt=1500.0).altitude_km == 1.5


# --- grouping -------------------------------------------------------------------


def test_grouping_sorted_labels_and_lookup():
    g = MemberGrouping({"m3": "b", "m1": "a", "m2": "b"})
    assert g.groups == ("a", "b")
    assert g.n_groups == 2
    assert g.group_index("m3") == 1
    assert g.members_of("b") == ["m2", "m3"]
    with pytest.raises(ValidationError):
        g.group_index("unknown")


def test_identity_grouping():
    g = MemberGrouping.identity(["x", "y"])
    assert g.groups == ("x", "y")


# --- panel ------------------------------------------------------------------------


def days_from(start, n):
    d0 = dt.date.fromisoformat(start)
    return tuple(d0 + dt.timedelta(days=i) for i in range(n))


def make_panel(n_sta=3, n_days=4, g=2, seed=0):
    rng = np.random.default_rng(seed)
    stations = tuple(station(i) for i in range(n_sta))
    return StationPanel(
        stations=stations,
        days=days_from("2011-02-01", n_days),
        members=tuple(f"g{k}" for k in range(g)),
        obs=rng.normal(0, 1, (n_sta, n_days)),
        fc=rng.normal(0, 1, (n_sta, n_days, g)),
    )


def test_panel_requires_two_days():
    with pytest.raises(ValidationError):
        make_panel(n_days=1)


def test_panel_canonical_order_is_construction_invariant():
    panel = make_panel(seed=3)
    perm_sta = [2, 0, 1]
    perm_day = [3, 1, 0, 2]
    shuffled = StationPanel(
        stations=tuple(panel.stations[i] for i in perm_sta),
        days=tuple(panel.days[j] for j in perm_day),
        members=panel.members,
        obs=panel.obs[perm_sta][:, perm_day],
        fc=panel.fc[perm_sta][:, perm_day, :],
    )
    assert shuffled.stations == panel.stations
    assert shuffled.days == panel.days
    assert np.array_equal(shuffled.obs, panel.obs)
    assert np.array_equal(shuffled.fc, panel.fc)


def test_panel_arrays_immutable():
    panel = make_panel()
    with pytest.raises(ValueError):
        panel.obs[0, 0] = 99.0


def test_panel_mask_requires_full_cells():
    panel = make_panel()
    obs = np.array(panel.obs)
    obs[1, 2] = np.nan
    fc = np.array(panel.fc)
    fc[0, 1, 0] = np.nan
    p2 = StationPanel(stations=panel.stations, days=panel.days, members=panel.members,
                      obs=obs, fc=fc)
    assert not p2.mask[1, 2]
    assert not p2.mask[0, 1]
    assert p2.mask.sum() == panel.mask.sum() - 2


def test_panel_grouping_must_match_members():
    panel = make_panel(g=2)
    with pytest.raises(ValidationError):
        StationPanel(
            stations=panel.stations, days=panel.days, members=panel.members,
            obs=panel.obs, fc=panel.fc,
            grouping=MemberGrouping({"m": "other"}),
        )


# --- fitted-quantity types ----------------------------------------------------------


def test_station_state_rejects_negative_xi2():
    with pytest.raises(ValidationError):
        StationState("S1", 1.0, (1.0,), 1.0, xi2=-0.1)


def test_emos_model_validation():
    g = MemberGrouping.identity(["a", "b"])
    with pytest.raises(ValidationError):
        EmosModel(grouping=g, b=(0.5,), b_star=1.0, c1=1.0, c2=0.0)
    with pytest.raises(ValidationError):
        EmosModel(grouping=g, b=(0.5, -0.1), b_star=1.0, c1=1.0, c2=0.0)


def test_gaussian_forecast_variances():
    f = GaussianForecast("S1", dt.date(2011, 2, 1), mu=1.0, var=2.0, interp_var=0.5)
    assert f.total_var == 2.5
    assert f.total_sd == pytest.approx(math.sqrt(2.5))
    with pytest.raises(ValidationError):
        GaussianForecast("S1", None, mu=0.0, var=0.0)
    with pytest.raises(ValidationError):
        GaussianForecast("S1", None, mu=0.0, var=1.0, interp_var=-0.1)


# --- model file round trip -----------------------------------------------------------


def _bundle():
    rng = np.random.default_rng(17)
    grouping = MemberGrouping({"m1": "g1", "m2": "g1", "m3": "g2"})
    model = EmosModel(
        grouping=grouping,
        b=(rng.uniform(), rng.uniform()),
        b_star=float(rng.normal()),
        c1=float(rng.uniform()),
        c2=float(rng.uniform()),
        baseline=BaselineNgr(a=float(rng.normal()), b=(0.3, 0.4), c=0.9, d=0.2),
    )
    states = tuple(
        StationState(
            station_id=f"S{i}",
            y_bar=float(rng.normal(10, 3)),
            f_bar=tuple(rng.normal(10, 3, 2)),
            f_bar_star=float(rng.normal(10, 3)),
            xi2=float(rng.uniform(0.5, 3)),
            zeta_y_raw=float(rng.uniform()),
            zeta_z_raw=float(rng.uniform()),
            n_days_used=30,
        )
        for i in range(4)
    )
    stations = tuple(station(i, alt=float(100 + 13 * i)) for i in range(4))
    field = FieldModel(
        kind="y",
        theta1=float(rng.uniform(0.01, 1)),
        theta2=float(rng.uniform(0.5, 2)),
        drift_kind="altitude-spline",
        knots_km=(0.0, 1.0, 1.5),
        station_records=stations,
        values=tuple(rng.normal(0, 1, 4)),
        zeta_raw=tuple(rng.uniform(0, 1, 4)),
        zeta=tuple(rng.uniform(0, 1, 4)),
        k_nn=3,
        alpha=tuple(rng.normal(0, 1, 4)),
        beta=tuple(rng.normal(0, 1, 3)),
    )
    field_z = FieldModel(
        kind="z", theta1=field.theta1, theta2=field.theta2, drift_kind="constant",
        knots_km=(), station_records=stations, values=field.values,
        zeta_raw=field.zeta_raw, zeta=field.zeta, k_nn=3, alpha=field.alpha,
        beta=(float(rng.normal()),),
    )
    return ModelBundle(emos=model, station_states=states, field_y=field,
                       field_z=field_z, config={"window": 30, "date": "2011-03-03"})


def test_model_file_round_trip_bit_equal(tmp_path):
    bundle = _bundle()
    path = tmp_path / "model.json"
    save_model(bundle, path)
    loaded = load_model(path)
    assert loaded.emos == bundle.emos
    assert loaded.station_states == bundle.station_states
    assert loaded.field_y == bundle.field_y
    assert loaded.field_z == bundle.field_z
    assert loaded.config == bundle.config
    # a second save is byte-identical
    path2 = tmp_path / "model2.json"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_model_file_floats_survive_exactly(tmp_path):
    # values chosen to need all 17 significant digits
    bundle = _bundle()
    path = tmp_path / "model.json"
    save_model(bundle, path)
    loaded = load_model(path)
    assert loaded.emos.b_star == bundle.emos.b_star
    assert loaded.field_y.alpha == bundle.field_y.alpha
    assert loaded.station_states[0].y_bar == bundle.station_states[0].y_bar
