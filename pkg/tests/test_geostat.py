"""Kriging, LOOCV, nugget smoothing, and REML tests.

The dual-form implementation is checked against an independent primal-form
universal-kriging oracle written here with plain numpy solves, and the
closed-form leave-one-out identity is checked against explicit refits.
"""

import numpy as np
import pytest

from adaptive_emos.core import Station
from adaptive_emos.errors import (
    DegenerateDataError,
    DomainError,
    DriftDegeneracyError,
)
from adaptive_emos.geostat import (
    DriftBasis,
    FittedField,
    _RemlObjective,
    build_system,
    fit_field,
    fit_y_field,
    fit_z_field,
    krige,
    loocv,
    natural_spline_basis,
    predict,
    reml_fit,
    restricted_loglik,
    smooth_nugget,
)
from adaptive_emos.simulate import simulate_brownian

# --- oracles -----------------------------------------------------------------


def primal_oracle(coords, P, values, theta1, theta2, zeta, site_xy, p_site, zeta_site):
    """Universal kriging in primal form: solve for (lambda, mu) per site and
    apply the weights to the data. Independent of the library's solver."""
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    d = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1))
    A = -theta2 * d
    A[np.diag_indices(n)] = theta1 * np.asarray(zeta, dtype=float)
    k = P.shape[1]
    M = np.zeros((n + k, n + k))
    M[:n, :n] = A
    M[:n, n:] = P
    M[n:, :n] = P.T
    d0 = np.sqrt(((coords - np.asarray(site_xy)) ** 2).sum(-1))
    c0 = -theta2 * d0
    c0[d0 == 0.0] += theta1 * np.asarray(zeta, dtype=float)[d0 == 0.0]
    rhs = np.concatenate([c0, p_site])
    lam_mu = np.linalg.solve(M, rhs)
    pred = float(lam_mu[:n] @ values)
    var = theta1 * zeta_site - float(rhs @ lam_mu)
    return pred, max(var, 0.0)


def brute_force_loo(coords, P_all, values):
    """Explicit leave-one-out refits on the nugget-free unit-slope system."""
    n = coords.shape[0]
    errors = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        pred, _ = primal_oracle(
            coords[keep],
            P_all[keep],
            values[keep],
            0.0,
            1.0,
            np.zeros(n - 1),
            coords[i],
            P_all[i],
            0.0,
        )
        errors[i] = values[i] - pred
    return errors


def random_stations(rng, n, box=100.0):
    coords = rng.uniform(0.0, box, size=(n, 2))
    alts = rng.uniform(0.0, 1500.0, size=n)
    return tuple(
        Station(f"S{i:03d}", float(coords[i, 0]), float(coords[i, 1]), float(alts[i]))
        for i in range(n)
    )


# --- natural spline basis ------------------------------------------------------


def test_spline_basis_at_zero():
    assert natural_spline_basis(0.0).tolist() == [1.0, 0.0, 0.0]


def test_spline_basis_hand_value():
    # at a = 0.5 with knots (0, 1, 1.5): third function = 0.5^3 / 1.5
    n = natural_spline_basis(0.5)
    assert n[0] == 1.0
    assert n[1] == 0.5
    assert n[2] == pytest.approx(0.08333333333333333, abs=1e-15)


def test_spline_basis_linear_beyond_boundary():
    vals = natural_spline_basis(np.array([1.6, 1.7, 1.8]))[:, 2]
    second_diff = vals[0] - 2.0 * vals[1] + vals[2]
    assert abs(second_diff) < 1e-12


def test_spline_basis_rejects_nonfinite():
    with pytest.raises(DomainError):
        natural_spline_basis(np.nan)


def test_spline_basis_custom_knots_dimension():
    out = natural_spline_basis(np.linspace(0, 2, 5), knots_km=(0.0, 0.5, 1.0, 1.5))
    assert out.shape == (5, 4)


def test_drift_basis_constant():
    drift = DriftBasis("constant")
    assert drift.n_functions == 1
    sta = random_stations(np.random.default_rng(0), 4)
    assert np.all(drift.at_stations(sta) == 1.0)


def test_drift_transform_must_be_invertible():
    with pytest.raises(DomainError):
        DriftBasis("altitude-spline", transform=((1, 0, 0), (0, 1, 0), (1, 1, 0)))


# --- build_system ---------------------------------------------------------------


def test_build_system_collinear_constant_drift():
    stations = tuple(Station(f"S{i}", float(i), 0.0, 100.0) for i in range(3))
    sys = build_system(stations, DriftBasis("constant"), 0.0, 1.0, np.zeros(3))
    assert np.all(np.diag(sys.bordered[:3, :3]) == 0.0)
    w = krige(sys, np.array([1.0, 2.0, 5.0]))
    assert np.isfinite(w.alpha).all()


def test_build_system_spline_equal_altitudes_degenerate():
    rng = np.random.default_rng(1)
    coords = rng.uniform(0, 50, size=(6, 2))
    stations = tuple(
        Station(f"S{i}", float(x), float(y), 500.0) for i, (x, y) in enumerate(coords)
    )
    with pytest.raises(DriftDegeneracyError):
        build_system(stations, DriftBasis("altitude-spline"), 0.0, 1.0, np.zeros(6))


def test_build_system_matches_hand_built_matrix():
    rng = np.random.default_rng(7)
    stations = random_stations(rng, 5)
    zeta = rng.uniform(0.0, 2.0, 5)
    theta1, theta2 = 0.7, 1.3
    sys = build_system(stations, DriftBasis("constant"), theta1, theta2, zeta)
    hand = np.zeros((6, 6))
    for i, si in enumerate(stations):
        for j, sj in enumerate(stations):
            if i == j:
                hand[i, j] = theta1 * zeta[i]
            else:
                hand[i, j] = -theta2 * np.hypot(si.x - sj.x, si.y - sj.y)
        hand[i, 5] = 1.0
        hand[5, i] = 1.0
    assert np.max(np.abs(sys.bordered - hand)) < 1e-14


def test_build_system_needs_more_stations_than_drift():
    stations = random_stations(np.random.default_rng(2), 3)
    with pytest.raises(DegenerateDataError):
        build_system(stations, DriftBasis("altitude-spline"), 0.0, 1.0, np.zeros(3))


# --- krige / predict ------------------------------------------------------------


def test_constant_values_reproduced_exactly():
    rng = np.random.default_rng(3)
    stations = random_stations(rng, 12)
    for drift in (DriftBasis("constant"), DriftBasis("altitude-spline")):
        sys = build_system(stations, drift, 0.0, 1.0, np.zeros(12))
        w = krige(sys, np.full(12, 4.25))
        assert np.max(np.abs(w.alpha)) < 1e-9
        site = Station("Q", 33.3, 71.2, 800.0)
        value, _ = predict(sys, w, site, 0.0)
        assert value == pytest.approx(4.25, abs=1e-9)


def test_drift_function_values_give_unit_beta():
    rng = np.random.default_rng(4)
    stations = random_stations(rng, 10)
    drift = DriftBasis("altitude-spline")
    sys = build_system(stations, drift, 0.0, 1.0, np.zeros(10))
    P = drift.at_stations(stations)
    for j in range(3):
        w = krige(sys, P[:, j])
        assert np.max(np.abs(w.alpha)) < 1e-8
        expected = np.zeros(3)
        expected[j] = 1.0
        assert np.max(np.abs(w.beta - expected)) < 1e-8


def test_krige_residual_and_orthogonality():
    rng = np.random.default_rng(5)
    stations = random_stations(rng, 10)
    drift = DriftBasis("altitude-spline")
    sys = build_system(stations, drift, 0.3, 0.8, rng.uniform(0, 1, 10))
    values = rng.normal(0, 3, 10)
    w = krige(sys, values)
    sol = np.concatenate([w.alpha, w.beta])
    rhs = np.concatenate([values, np.zeros(3)])
    residual = np.linalg.norm(sys.bordered @ sol - rhs)
    assert residual <= 1e-10 * max(np.linalg.norm(values), 1.0)
    assert np.max(np.abs(sys.P.T @ w.alpha)) < 1e-10


def test_exact_interpolation_zero_nugget():
    rng = np.random.default_rng(6)
    stations = random_stations(rng, 15)
    sys = build_system(stations, DriftBasis("altitude-spline"), 0.0, 2.0, np.zeros(15))
    values = rng.normal(10, 5, 15)
    w = krige(sys, values)
    for i in (0, 7, 14):
        value, var = predict(sys, w, stations[i], 0.0)
        assert value == pytest.approx(values[i], abs=1e-9)
        assert var == pytest.approx(0.0, abs=1e-9)


def test_predict_matches_primal_oracle():
    rng = np.random.default_rng(8)
    stations = random_stations(rng, 25)
    drift = DriftBasis("altitude-spline")
    zeta = rng.uniform(0.0, 1.5, 25)
    theta1, theta2 = 0.4, 1.1
    sys = build_system(stations, drift, theta1, theta2, zeta)
    values = rng.normal(0, 4, 25)
    w = krige(sys, values)
    coords = np.array([[s.x, s.y] for s in stations])
    P = drift.at_stations(stations)
    for _ in range(8):
        xy = rng.uniform(0, 100, 2)
        alt = rng.uniform(0, 1500)
        site = Station("Q", float(xy[0]), float(xy[1]), float(alt))
        zeta_site = float(rng.uniform(0, 1.5))
        got_v, got_var = predict(sys, w, site, zeta_site)
        exp_v, exp_var = primal_oracle(
            coords, P, values, theta1, theta2, zeta, xy, drift.at_site(site), zeta_site
        )
        assert got_v == pytest.approx(exp_v, abs=1e-8)
        assert got_var == pytest.approx(exp_var, abs=1e-8)


def test_kriging_variance_independent_of_values():
    rng = np.random.default_rng(9)
    stations = random_stations(rng, 12)
    sys = build_system(stations, DriftBasis("constant"), 0.2, 1.0, rng.uniform(0, 1, 12))
    values = rng.normal(0, 2, 12)
    site = Station("Q", 48.0, 52.0, 300.0)
    _, var1 = predict(sys, krige(sys, values), site, 0.5)
    _, var2 = predict(sys, krige(sys, np.random.default_rng(1).permutation(values)), site, 0.5)
    assert var1 == var2


def test_nugget_site_prediction_exact_with_zero_variance():
    # coincident site shares the station's microscale term, so prediction is
    # exact and the kriging variance vanishes when the site nugget matches
    rng = np.random.default_rng(10)
    stations = random_stations(rng, 10)
    zeta = rng.uniform(0.5, 2.0, 10)
    sys = build_system(stations, DriftBasis("constant"), 0.8, 1.0, zeta)
    values = rng.normal(0, 3, 10)
    w = krige(sys, values)
    value, var = predict(sys, w, stations[4], float(zeta[4]))
    assert value == pytest.approx(values[4], abs=1e-9)
    assert var == pytest.approx(0.0, abs=1e-9)


# --- loocv ----------------------------------------------------------------------


def test_loocv_zero_for_drift_data():
    rng = np.random.default_rng(11)
    stations = random_stations(rng, 9)
    drift = DriftBasis("altitude-spline")
    P = drift.at_stations(stations)
    values = P @ np.array([2.0, -1.5, 0.7])
    e, zraw = loocv(stations, values, drift)
    assert np.max(np.abs(e)) < 1e-8
    assert np.max(zraw) < 1e-16


def test_loocv_matches_brute_force():
    rng = np.random.default_rng(12)
    for drift in (DriftBasis("constant"), DriftBasis("altitude-spline")):
        stations = random_stations(rng, 12)
        values = rng.normal(0, 2, 12)
        e, zraw = loocv(stations, values, drift)
        coords = np.array([[s.x, s.y] for s in stations])
        brute = brute_force_loo(coords, drift.at_stations(stations), values)
        assert np.max(np.abs(e - brute) / np.maximum(np.abs(brute), 1e-12)) < 1e-8
        assert np.all(zraw >= 0.0)


def test_loocv_scaling_homogeneity():
    rng = np.random.default_rng(13)
    stations = random_stations(rng, 10)
    values = rng.normal(0, 1, 10)
    _, z1 = loocv(stations, values, DriftBasis("constant"))
    _, z100 = loocv(stations, 10.0 * values, DriftBasis("constant"))
    assert np.allclose(z100, 100.0 * z1, rtol=1e-9)


def test_loocv_needs_enough_stations():
    stations = random_stations(np.random.default_rng(14), 4)
    with pytest.raises(DegenerateDataError):
        loocv(stations, np.zeros(4), DriftBasis("altitude-spline"))


# --- smooth_nugget ---------------------------------------------------------------


def test_smooth_constant_field_everywhere():
    rng = np.random.default_rng(15)
    stations = random_stations(rng, 8)
    surf = smooth_nugget(stations, np.full(8, 3.5), k_nn=4)
    for _ in range(5):
        xy = rng.uniform(0, 100, 2)
        assert surf(xy) == pytest.approx(3.5, abs=1e-12)


def test_smooth_hand_weights_three_stations():
    stations = (
        Station("A", 0.0, 0.0, 0.0),
        Station("B", 2.0, 0.0, 0.0),
        Station("C", 3.0, 0.0, 0.0),
    )
    zraw = np.array([1.0, 2.0, 4.0])
    # k_nn = 2 at station A: bandwidth 2, only A itself inside the support
    surf = smooth_nugget(stations, zraw, k_nn=2)
    assert surf((0.0, 0.0)) == pytest.approx(1.0, abs=1e-15)
    # k_nn = 3 queried at (0.5, 0): bandwidth 2.5, h = (0.2, 0.6, 1.0);
    # K = (0.96^3, 0.64^3, 0) so weights are (27/35, 8/35, 0) by hand
    surf3 = smooth_nugget(stations, zraw, k_nn=3)
    w = surf3.weights((0.5, 0.0))
    assert w == pytest.approx([27 / 35, 8 / 35, 0.0], abs=1e-12)
    assert surf3((0.5, 0.0)) == pytest.approx(27 / 35 + 2 * 8 / 35, abs=1e-12)


def test_smooth_weights_sum_to_one_and_bounds():
    rng = np.random.default_rng(16)
    stations = random_stations(rng, 20)
    zraw = rng.uniform(0.5, 5.0, 20)
    surf = smooth_nugget(stations, zraw, k_nn=6)
    for _ in range(20):
        xy = rng.uniform(-20, 120, 2)
        w = surf.weights(xy)
        assert np.all(w >= 0.0)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert zraw.min() - 1e-12 <= surf(xy) <= zraw.max() + 1e-12


def test_smooth_knn_capped_at_n():
    stations = (
        Station("A", 0.0, 0.0, 0.0),
        Station("B", 1.0, 0.0, 0.0),
        Station("C", 5.0, 0.0, 0.0),
    )
    surf = smooth_nugget(stations, np.array([1.0, 2.0, 3.0]), k_nn=25)
    assert surf.bandwidth((0.0, 0.0)) == 5.0


def test_smooth_zero_bandwidth_falls_back_to_nearest():
    stations = (Station("A", 0.0, 0.0, 0.0), Station("B", 1.0, 0.0, 0.0))
    surf = smooth_nugget(stations, np.array([2.0, 7.0]), k_nn=1)
    assert surf((0.0, 0.0)) == 2.0  # bandwidth 0 at the station itself
    assert surf((0.9, 0.0)) == 7.0  # nearest wins when every kernel value is 0


# --- REML -----------------------------------------------------------------------


def _reml_fixture(rng, n=40):
    stations = random_stations(rng, n, box=10.0)
    coords = np.array([[s.x, s.y] for s in stations])
    values = simulate_brownian(coords, 1.0, np.ones(n), 0.5, seed=int(rng.integers(1 << 30)))
    return stations, values


def test_restricted_loglik_invariant_to_contrast_basis():
    rng = np.random.default_rng(17)
    stations, values = _reml_fixture(rng)
    drift = DriftBasis("altitude-spline")
    P = drift.at_stations(stations)
    from scipy.linalg import null_space, qr

    W0 = null_space(P.T)
    m = W0.shape[1]
    lls = []
    for seed in (0, 1):
        Q, _ = qr(np.random.default_rng(seed).normal(size=(m, m)))
        W = W0 @ Q
        lls.append(
            restricted_loglik(stations, values, drift, np.ones(len(stations)), 0.4, 0.9,
                              contrasts=W)
        )
    assert lls[0] == pytest.approx(lls[1], abs=1e-8)
    # and the eigen-decomposed fast path agrees with the matrix path
    obj = _RemlObjective(stations, values, drift, np.ones(len(stations)))
    assert -obj.negloglik(0.4, 0.9) == pytest.approx(lls[0], abs=1e-8)


def test_reml_scaling_identity():
    rng = np.random.default_rng(18)
    stations, values = _reml_fixture(rng, n=35)
    drift = DriftBasis("constant")
    zeta = np.ones(len(stations))
    fit1 = reml_fit(stations, values, drift, zeta)
    c = 3.0
    fit2 = reml_fit(stations, c * values, drift, zeta)
    assert fit2.theta1 == pytest.approx(c**2 * fit1.theta1, rel=2e-3, abs=1e-6)
    assert fit2.theta2 == pytest.approx(c**2 * fit1.theta2, rel=2e-3)
    n_minus_k = len(stations) - 1
    assert fit2.restricted_loglik == pytest.approx(
        fit1.restricted_loglik - n_minus_k * np.log(c), abs=1e-4
    )


def test_reml_recovery_moderate():
    # light version of the acceptance criterion: n = 150, 8 replications
    rng = np.random.default_rng(19)
    est1, est2 = [], []
    for rep in range(8):
        stations = random_stations(np.random.default_rng(100 + rep), 150, box=10.0)
        coords = np.array([[s.x, s.y] for s in stations])
        values = simulate_brownian(coords, 1.0, np.ones(150), 0.5, seed=500 + rep)
        fit = reml_fit(stations, values, DriftBasis("constant"), np.ones(150))
        est1.append(fit.theta1)
        est2.append(fit.theta2)
    assert abs(np.median(est1) - 0.5) < 0.175
    assert abs(np.median(est2) - 1.0) < 0.3


def test_reml_nugget_free_data_gives_small_theta1():
    theta1_hats, theta2_hats, med_d = [], [], []
    for rep in range(6):
        stations = random_stations(np.random.default_rng(200 + rep), 120, box=10.0)
        coords = np.array([[s.x, s.y] for s in stations])
        values = simulate_brownian(coords, 1.0, None, 0.0, seed=700 + rep)
        fit = reml_fit(stations, values, DriftBasis("constant"), np.ones(120))
        theta1_hats.append(fit.theta1)
        theta2_hats.append(fit.theta2)
        d = np.sqrt(((coords[:, None] - coords[None, :]) ** 2).sum(-1))
        med_d.append(np.median(d[np.triu_indices(120, 1)]))
    assert np.median(theta1_hats) <= 0.05 * np.median(theta2_hats) * np.median(med_d)


def test_reml_rejects_drift_span_values():
    stations = random_stations(np.random.default_rng(20), 20)
    with pytest.raises(DegenerateDataError):
        reml_fit(stations, np.full(20, 2.0), DriftBasis("constant"), np.ones(20))


# --- fit_field -------------------------------------------------------------------


def test_z_field_round_trip_at_stations():
    rng = np.random.default_rng(21)
    stations = random_stations(rng, 25, box=50.0)
    coords = np.array([[s.x, s.y] for s in stations])
    xi2 = np.exp(0.3 + simulate_brownian(coords, 0.02, np.ones(25), 0.05, seed=3))
    field = fit_z_field(stations, xi2, k_nn=8)
    for i in (0, 9, 24):
        z_hat, _ = field.predict(stations[i])
        assert np.exp(z_hat) == pytest.approx(xi2[i], rel=1e-9)


def test_z_field_floors_tiny_variances():
    rng = np.random.default_rng(22)
    stations = random_stations(rng, 12, box=50.0)
    xi2 = np.abs(np.random.default_rng(5).normal(1.0, 0.3, 12))
    xi2[3] = 0.0
    with pytest.warns(UserWarning, match="floored"):
        field = fit_z_field(stations, xi2, k_nn=5)
    z_hat, _ = field.predict(stations[3])
    assert np.exp(z_hat) == pytest.approx(1e-6, rel=1e-6)


def test_y_field_interpolation_close_to_true_theta_oracle():
    # fitted pipeline must come within 1.2x of the RMSE achieved by kriging
    # with the generating covariance parameters
    rng = np.random.default_rng(23)
    n_fit, n_test = 120, 40
    stations = random_stations(np.random.default_rng(300), n_fit + n_test, box=100.0)
    coords = np.array([[s.x, s.y] for s in stations])
    alts_km = np.array([s.altitude_km for s in stations])
    theta1, theta2 = 0.3, 0.05
    spline = natural_spline_basis(alts_km) @ np.array([8.0, -6.0, 1.0])
    values = spline + simulate_brownian(coords, theta2, np.ones(n_fit + n_test), theta1, seed=9)
    fit_sta, test_sta = stations[:n_fit], stations[n_fit:]
    fit_val, test_val = values[:n_fit], values[n_fit:]

    field = fit_y_field(fit_sta, fit_val, k_nn=15)
    pred_fitted = np.array([field.predict(s)[0] for s in test_sta])

    drift = DriftBasis("altitude-spline")
    oracle_sys = build_system(fit_sta, drift, theta1, theta2, np.ones(n_fit))
    oracle_w = krige(oracle_sys, fit_val)
    pred_oracle = np.array([predict(oracle_sys, oracle_w, s, 1.0)[0] for s in test_sta])

    rmse_fitted = np.sqrt(np.mean((pred_fitted - test_val) ** 2))
    rmse_oracle = np.sqrt(np.mean((pred_oracle - test_val) ** 2))
    assert rmse_fitted <= 1.2 * rmse_oracle


def test_fit_field_drift_basis_invariance():
    rng = np.random.default_rng(24)
    stations = random_stations(rng, 40, box=80.0)
    coords = np.array([[s.x, s.y] for s in stations])
    values = simulate_brownian(coords, 0.05, np.ones(40), 0.2, seed=11) + 4.0
    transform = ((2.0, 0.5, 0.0), (0.0, 1.0, -1.0), (1.0, 0.0, 3.0))
    f_std = fit_field(stations, values, DriftBasis("altitude-spline"), k_nn=10)
    f_rec = fit_field(
        stations, values, DriftBasis("altitude-spline", transform=transform), k_nn=10
    )
    for _ in range(6):
        xy = rng.uniform(0, 80, 2)
        site = Station("Q", float(xy[0]), float(xy[1]), float(rng.uniform(0, 1500)))
        v1, var1 = f_std.predict(site)
        v2, var2 = f_rec.predict(site)
        assert v1 == pytest.approx(v2, abs=1e-8)
        assert var1 == pytest.approx(var2, abs=1e-8)


def test_fitted_field_record_round_trip():
    rng = np.random.default_rng(25)
    stations = random_stations(rng, 20, box=60.0)
    coords = np.array([[s.x, s.y] for s in stations])
    values = simulate_brownian(coords, 0.04, np.ones(20), 0.1, seed=13) + 2.0
    field = fit_y_field(stations, values, k_nn=6)
    rebuilt = FittedField.from_record(field.to_record())
    site = Station("Q", 30.0, 30.0, 400.0)
    assert rebuilt.predict(site) == field.predict(site)
