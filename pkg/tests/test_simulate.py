"""Synthetic-data generator tests: pinning, determinism, variogram, and
panel construction."""

import numpy as np
import pytest

from adaptive_emos.emos import local_uncertainty, pooled_slope, window_statistics
from adaptive_emos.errors import DomainError
from adaptive_emos.simulate import (
    SimConfig,
    simulate_brownian,
    simulate_dataset,
    simulate_panel,
)


def test_origin_value_is_exactly_zero_without_nugget():
    pts = np.array([[0.0, 0.0], [3.0, 4.0], [10.0, 0.0]])
    values = simulate_brownian(pts, theta2=1.5, zeta=None, theta1=0.0, seed=2)
    assert values[0] == 0.0
    assert np.all(values[1:] != 0.0)


def test_origin_gets_nugget_noise_when_requested():
    pts = np.array([[0.0, 0.0], [3.0, 4.0]])
    values = simulate_brownian(pts, theta2=1.0, zeta=np.ones(2), theta1=0.5, seed=3)
    assert values[0] != 0.0


def test_same_seed_identical_output():
    pts = np.random.default_rng(0).uniform(0, 50, (20, 2))
    a = simulate_brownian(pts, 1.0, np.ones(20), 0.3, seed=77)
    b = simulate_brownian(pts, 1.0, np.ones(20), 0.3, seed=77)
    assert np.array_equal(a, b)
    c = simulate_brownian(pts, 1.0, np.ones(20), 0.3, seed=78)
    assert not np.array_equal(a, c)


def test_variogram_monte_carlo_light():
    # full 1e4-replication check lives in the acceptance suite
    s, t = np.array([[3.0, 4.0], [6.0, 8.0]])
    theta1, theta2 = 0.8, 1.2
    zeta = np.array([0.5, 1.5])
    reps = 3000
    sq = np.empty(reps)
    for i in range(reps):
        v = simulate_brownian(np.array([s, t]), theta2, zeta, theta1, seed=10_000 + i)
        sq[i] = (v[0] - v[1]) ** 2 / 2.0
    expected = theta2 * 5.0 + 0.5 * theta1 * (zeta[0] + zeta[1])
    assert np.mean(sq) == pytest.approx(expected, rel=0.15)


def test_simulation_point_cap():
    with pytest.raises(DomainError):
        simulate_brownian(np.zeros((3001, 2)), 1.0)


def test_degenerate_config_gives_pure_mean():
    cfg = SimConfig(seed=5, n_stations=10, n_sites=0, n_days=10,
                    b=(0.0, 0.0), c1=0.0, c2=0.0, members_per_group=2)
    panel, truth = simulate_panel(cfg)
    ybar = np.array([truth["ybar_true"][s.id] for s in panel.stations])
    assert np.allclose(panel.obs, ybar[:, None])


def test_station_mean_approaches_truth():
    cfg = SimConfig(seed=6, n_stations=5, n_sites=0, n_days=500,
                    theta_z=(0.0, 1e-6), base_log_var=0.0)
    panel, truth = simulate_panel(cfg)
    stats_mean = panel.obs.mean(axis=1)
    ybar = np.array([truth["ybar_true"][s.id] for s in panel.stations])
    # noise sd per station is near sqrt(c1*1 + c2*S^2); allow a generous CLT band
    assert np.max(np.abs(stats_mean - ybar)) < 4.0 * 2.0 / np.sqrt(500)


def test_doubling_c1_doubles_residual_variance():
    # equal weights make the pooled single-predictor regression exact, so the
    # squared-residual predictor isolates c1 * xi^2
    common = dict(seed=7, n_stations=40, n_sites=0, n_days=60,
                  b=(0.25, 0.25, 0.25, 0.25), c2=0.0)
    panel1, _ = simulate_panel(SimConfig(c1=1.0, **common))
    panel2, _ = simulate_panel(SimConfig(c1=2.0, **common))
    xi2 = []
    for panel in (panel1, panel2):
        stats = window_statistics(panel)
        xi2.append(local_uncertainty(panel, stats, pooled_slope(panel, stats)))
    ratio = np.mean(xi2[1]) / np.mean(xi2[0])
    assert ratio == pytest.approx(2.0, rel=0.15)


def test_truth_echoes_every_config_field():
    cfg = SimConfig(seed=8, n_stations=6, n_sites=2, n_days=5)
    _, truth = simulate_panel(cfg)
    from dataclasses import asdict

    for key, value in asdict(cfg).items():
        assert key in truth["config"]
        assert truth["config"][key] == value


def test_dataset_covers_sites_and_stations():
    cfg = SimConfig(seed=9, n_stations=8, n_sites=3, n_days=6)
    data = simulate_dataset(cfg)
    assert len(data.stations) == 8 and len(data.sites) == 3
    assert data.obs.shape == (11, 6)
    assert data.raw_fc.shape == (11, 6, len(cfg.b) * cfg.members_per_group)
    assert data.grouping.n_groups == len(cfg.b)
    assert set(data.truth["ybar_true"]) == set(data.entity_ids)


def test_panel_matches_dataset_group_means():
    cfg = SimConfig(seed=10, n_stations=5, n_sites=1, n_days=4)
    panel, _ = simulate_panel(cfg)
    data = simulate_dataset(cfg)
    assert np.array_equal(panel.fc, data.group_fc[:5])
    assert panel.mask.all()
