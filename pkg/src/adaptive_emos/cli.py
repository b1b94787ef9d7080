"""Command-line pipeline: fit, predict, verify, simulate.

Every command is deterministic given its inputs and flags; output CSVs carry
a provenance comment with the package version and a hash of the effective
configuration. Exit codes: 0 success, 2 input error, 3 numeric/convergence
error, 4 internal error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, emos, geostat, verify
from .core import GaussianForecast, ModelBundle, load_model, save_model
from .errors import AdaptiveEmosError, InputError
from .ingest import (
    assemble_window,
    load_ensemble,
    load_grid,
    load_grouping,
    load_observations,
    load_stations,
    window_days,
)
from .simulate import SimConfig, simulate_dataset
from .tables import fmt, parse_date, read_rows, write_csv

THREADS_ENV = "ADAPTIVE_EMOS_THREADS"

PREDICTIONS_HEADER = ["site_id", "date", "mu_c", "sd_c", "interp_sd_c", "total_sd_c"]
FIELDS_HEADER = ["site_id", "x_km", "y_km", "ybar_c", "ybar_sd_c", "xi_c"]


@dataclass(frozen=True)
class RunConfig:
    """Pipeline defaults; every field is overridable by a flag and echoed
    into each output for provenance."""

    window: int = 30
    min_frac: float = 2.0 / 3.0
    k_nn: int = 25
    knots_km: tuple = (0.0, 1.0, 1.5)
    levels: tuple = (0.81, 0.905)
    propagate_z_variance: bool = False
    fit_baseline: bool = True

    def as_dict(self) -> dict:
        d = asdict(self)
        d["knots_km"] = list(self.knots_km)
        d["levels"] = list(self.levels)
        return d


def fit_bundle(stations, obs_table, ens_table, grouping, date: dt.date,
               config: RunConfig = RunConfig()) -> ModelBundle:
    """Fit everything for one initialization date: the regression, both
    interpolation fields, and the per-station states."""
    panel, excluded = assemble_window(
        stations, obs_table, ens_table, grouping, date,
        window_len=config.window, min_frac=config.min_frac,
    )
    stats = emos.window_statistics(panel)
    b_star = emos.pooled_slope(panel, stats)
    xi2 = emos.local_uncertainty(panel, stats, b_star)
    fit_config = emos.FitConfig(fit_baseline=config.fit_baseline)
    model = emos.fit_adaptive_emos(panel, stats, xi2, fit_config)
    if fit_config.fit_baseline:
        model = replace(model, baseline=emos.fit_baseline_ngr(panel, fit_config))
    field_y = geostat.fit_y_field(panel.stations, stats.y_bar,
                                  k_nn=config.k_nn, knots_km=config.knots_km)
    field_z = geostat.fit_z_field(panel.stations, xi2, k_nn=config.k_nn)
    states = emos.station_states(
        panel, stats, xi2,
        zeta_y_raw=field_y.surface.zeta_raw,
        zeta_z_raw=field_z.surface.zeta_raw,
    )
    bundle_config = config.as_dict()
    bundle_config.update(
        date=date.isoformat(),
        window_days=[d.isoformat() for d in panel.days],
        excluded_stations=list(excluded),
        version=__version__,
    )
    return ModelBundle(
        emos=model,
        station_states=states,
        field_y=field_y.to_record(),
        field_z=field_z.to_record(),
        config=bundle_config,
    )


# --- prediction helpers --------------------------------------------------------


def _group_means_for_cell(cell: dict, grouping, where: str) -> np.ndarray:
    unknown = set(cell) - set(grouping.member_to_group)
    if unknown:
        raise InputError(f"unknown ensemble members {sorted(unknown)} {where}")
    missing = set(grouping.member_to_group) - set(cell)
    if missing:
        raise InputError(f"missing ensemble members {sorted(missing)} {where}")
    out = np.empty(grouping.n_groups)
    for gi, label in enumerate(grouping.groups):
        vals = np.sort([cell[m] for m in grouping.members_of(label)])
        out[gi] = vals.sum() / vals.size
    return out


def _today_groups(ens_table, grouping, site_id, date) -> np.ndarray:
    cell = ens_table.get((site_id, date))
    if cell is None:
        raise InputError(f"no ensemble forecasts for {site_id!r} on {date}")
    return _group_means_for_cell(cell, grouping, f"for {site_id!r} on {date}")


def _site_window_means(ens_table, grouping, site_id, days) -> np.ndarray:
    rows = []
    for day in days:
        cell = ens_table.get((site_id, day))
        if cell is None:
            raise InputError(
                f"site {site_id!r} lacks ensemble data for window day {day}"
            )
        rows.append(_group_means_for_cell(cell, grouping, f"for {site_id!r} on {day}"))
    return np.mean(np.array(rows), axis=0)


def predict_rows(bundle: ModelBundle, ens_table, sites, date: dt.date,
                 method: str = "adaptive"):
    """Forecasts plus (for grid sites) the interpolated-field diagnostics."""
    grouping = bundle.emos.grouping
    propagate = bool(bundle.config.get("propagate_z_variance", False))
    forecasts = []
    field_rows = []
    if method == "baseline" and bundle.emos.baseline is None:
        raise InputError("model file carries no baseline fit")
    if sites is None:
        for state in bundle.station_states:
            today = _today_groups(ens_table, grouping, state.station_id, date)
            if method == "baseline":
                forecasts.append(
                    emos.predict_baseline(bundle.emos.baseline, state.station_id,
                                          today, date=date)
                )
            else:
                forecasts.append(
                    emos.predict_at_station(bundle.emos, state, today, date=date)
                )
        return forecasts, field_rows

    field_y = geostat.FittedField.from_record(bundle.field_y)
    field_z = geostat.FittedField.from_record(bundle.field_z)
    days = [dt.date.fromisoformat(d) for d in bundle.config["window_days"]]
    for site in sites:
        today = _today_groups(ens_table, grouping, site.id, date)
        if method == "baseline":
            forecasts.append(
                emos.predict_baseline(bundle.emos.baseline, site.id, today, date=date)
            )
            continue
        f_bar_site = _site_window_means(ens_table, grouping, site.id, days)
        forecasts.append(
            emos.predict_at_site(
                bundle.emos, field_y, field_z, site, today, f_bar_site,
                date=date, propagate_z_variance=propagate,
            )
        )
        ybar, var_ybar = field_y.predict(site)
        z_hat, var_z = field_z.predict(site)
        xi2_hat = math.exp(z_hat) * (math.exp(0.5 * var_z) if propagate else 1.0)
        field_rows.append(
            [site.id, fmt(site.x), fmt(site.y), fmt(ybar),
             fmt(math.sqrt(var_ybar)), fmt(math.sqrt(xi2_hat))]
        )
    return forecasts, field_rows


def forecasts_to_rows(forecasts):
    for f in forecasts:
        sd = math.sqrt(f.var)
        interp_sd = math.sqrt(f.interp_var)
        yield [f.site_id, f.date.isoformat(), fmt(f.mu), fmt(sd),
               fmt(interp_sd), fmt(f.total_sd)]


def read_predictions(path):
    """Read a predictions CSV back into forecast records."""
    forecasts = []
    for line_no, row in read_rows(path, PREDICTIONS_HEADER):
        forecasts.append(
            GaussianForecast(
                site_id=row[0],
                date=parse_date(path, line_no, row[1]),
                mu=float(row[2]),
                var=float(row[3]) ** 2,
                interp_var=float(row[4]) ** 2,
            )
        )
    return forecasts


# --- commands --------------------------------------------------------------------


def _parse_levels(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _parse_knots(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _config_from_args(args) -> RunConfig:
    return RunConfig(
        window=args.window,
        min_frac=args.min_frac,
        k_nn=args.knn,
        knots_km=_parse_knots(args.knots),
        levels=_parse_levels(args.levels),
        propagate_z_variance=args.propagate_z_variance,
        fit_baseline=not args.no_baseline,
    )


def _max_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def cmd_fit(args) -> int:
    config = _config_from_args(args)
    stations = load_stations(args.stations)
    obs_table = load_observations(args.obs)
    ens_table = load_ensemble(args.ens)
    grouping = load_grouping(args.grouping) if args.grouping else None

    if args.date_range:
        start_s, _, end_s = args.date_range.partition(":")
        start, end = dt.date.fromisoformat(start_s), dt.date.fromisoformat(end_s)
        if end < start:
            raise InputError(f"empty date range {args.date_range!r}")
        out_dir = Path(args.model)
        out_dir.mkdir(parents=True, exist_ok=True)
        dates = [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]

        def fit_one(date):
            bundle = fit_bundle(stations, obs_table, ens_table, grouping, date, config)
            path = out_dir / f"model_{date.isoformat()}.json"
            save_model(bundle, path)
            return path

        with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
            paths = list(pool.map(fit_one, dates))
        for path in paths:
            print(path)
        return 0

    if not args.date:
        raise InputError("fit needs --date or --date-range")
    date = dt.date.fromisoformat(args.date)
    bundle = fit_bundle(stations, obs_table, ens_table, grouping, date, config)
    save_model(bundle, args.model)
    print(args.model)
    return 0


def cmd_predict(args) -> int:
    bundle = load_model(args.model)
    ens_table = load_ensemble(args.ens)
    date = dt.date.fromisoformat(args.date) if args.date else \
        dt.date.fromisoformat(bundle.config["date"])
    sites = load_grid(args.grid) if args.grid else None
    forecasts, field_rows = predict_rows(bundle, ens_table, sites, date,
                                         method=args.method)
    write_csv(args.out, PREDICTIONS_HEADER, forecasts_to_rows(forecasts),
              bundle.config)
    print(args.out)
    if args.fields:
        if not field_rows:
            raise InputError("--fields needs --grid sites and the adaptive method")
        write_csv(args.fields, FIELDS_HEADER, field_rows, bundle.config)
        print(args.fields)
    if args.figures:
        if not field_rows:
            raise InputError("--figures for predict needs --grid and the adaptive method")
        from . import figures

        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        rows = [dict(zip(FIELDS_HEADER, r)) for r in field_rows]
        print(figures.render_field_maps(rows, fig_dir / "fields.png",
                                        title=f"Interpolated fields {date.isoformat()}"))
    return 0


def _coords_lookup(args) -> dict:
    coords = {}
    if args.stations:
        for s in load_stations(args.stations):
            coords[s.id] = (s.x, s.y)
    if args.grid:
        for s in load_grid(args.grid):
            coords[s.id] = (s.x, s.y)
    return coords


def cmd_verify(args) -> int:
    levels = _parse_levels(args.levels)
    obs_table = load_observations(args.obs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {"levels": list(levels), "version": __version__}

    names = args.names.split(",") if args.names else None
    if names and len(names) != len(args.pred):
        raise InputError(f"{len(args.pred)} prediction files but {len(names)} names")

    rows = []
    bias_by_method = {}
    for i, pred_path in enumerate(args.pred):
        method = names[i] if names else Path(pred_path).stem
        forecasts = read_predictions(pred_path)
        rows.append(verify.score_gaussian(forecasts, obs_table, levels, method=method))
        bias_by_method[method] = verify.station_bias(forecasts, obs_table)

    if args.ens:
        ens_table = load_ensemble(args.ens)
        raw = {key: np.array(sorted(cell.values())) for key, cell in ens_table.items()}
        rows.append(verify.score_ensemble(raw, obs_table, method="ensemble"))

    scores_path = out_dir / "scores.csv"
    verify.write_scores(rows, levels, scores_path, config)
    print(scores_path)

    coords = _coords_lookup(args)
    bias_paths = {}
    for method, bias_rows in bias_by_method.items():
        if not bias_rows:
            continue
        path = out_dir / f"bias_{method}.csv"
        verify.write_bias(bias_rows, coords, path, config)
        bias_paths[method] = path
        print(path)

    if args.figures:
        from . import figures
        from .verify import BIAS_HEADER, scores_header

        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        score_dicts = []
        for line_no, row in read_rows(scores_path, scores_header(levels)):
            score_dicts.append(dict(zip(scores_header(levels), row)))
        print(figures.render_score_intervals(score_dicts, levels,
                                             fig_dir / "scores.png"))
        for method, path in bias_paths.items():
            bias_dicts = [dict(zip(BIAS_HEADER, row))
                          for _, row in read_rows(path, BIAS_HEADER)]
            print(figures.render_bias_map(bias_dicts, fig_dir / f"bias_{method}.png",
                                          title=f"Mean forecast error: {method}"))
    return 0


def cmd_simulate(args) -> int:
    raw = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    for key in ("altitude_range_km", "theta_y", "theta_z", "b", "altitude_trend"):
        if key in raw:
            raw[key] = tuple(raw[key])
    if args.seed is not None:
        raw["seed"] = args.seed
    config = SimConfig(**raw)
    data = simulate_dataset(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_dict = data.truth["config"]

    write_csv(
        out_dir / "stations.csv",
        ["station_id", "x_km", "y_km", "altitude_m"],
        ([s.id, fmt(s.x), fmt(s.y), fmt(s.altitude)] for s in data.stations),
        cfg_dict,
    )
    write_csv(
        out_dir / "grid.csv",
        ["site_id", "x_km", "y_km", "altitude_m"],
        ([s.id, fmt(s.x), fmt(s.y), fmt(s.altitude)] for s in data.sites),
        cfg_dict,
    )
    ids = data.entity_ids
    write_csv(
        out_dir / "observations.csv",
        ["station_id", "date", "value_c"],
        (
            [sid, day.isoformat(), fmt(data.obs[i, j])]
            for i, sid in enumerate(ids)
            for j, day in enumerate(data.days)
        ),
        cfg_dict,
    )
    write_csv(
        out_dir / "ensemble.csv",
        ["station_id", "date", "member_id", "value_c"],
        (
            [sid, day.isoformat(), member, fmt(data.raw_fc[i, j, k])]
            for i, sid in enumerate(ids)
            for j, day in enumerate(data.days)
            for k, member in enumerate(data.raw_members)
        ),
        cfg_dict,
    )
    write_csv(
        out_dir / "grouping.csv",
        ["member_id", "group"],
        ([m, g] for m, g in sorted(data.grouping.member_to_group.items())),
        cfg_dict,
    )
    with open(out_dir / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(data.truth, fh, indent=1)
        fh.write("\n")
    for name in ("stations.csv", "grid.csv", "observations.csv", "ensemble.csv",
                 "grouping.csv", "truth.json"):
        print(out_dir / name)
    return 0


# --- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptive-emos",
        description="Locally calibrated Gaussian temperature forecasts "
                    "from ensemble output.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model for one initialization date")
    fit.add_argument("--stations", required=True)
    fit.add_argument("--obs", required=True)
    fit.add_argument("--ens", required=True)
    fit.add_argument("--grouping")
    fit.add_argument("--date", help="initialization date (ISO); training window "
                                    "ends the day before")
    fit.add_argument("--date-range", help="START:END inclusive; fits one model "
                                          "per date into the --model directory")
    fit.add_argument("--window", type=int, default=30)
    fit.add_argument("--min-frac", type=float, default=2.0 / 3.0)
    fit.add_argument("--knn", type=int, default=25)
    fit.add_argument("--knots", default="0,1.0,1.5", help="spline knots in km")
    fit.add_argument("--levels", default="0.81,0.905")
    fit.add_argument("--propagate-z-variance", action="store_true")
    fit.add_argument("--no-baseline", action="store_true")
    fit.add_argument("--model", required=True, help="output model file "
                                                    "(directory for --date-range)")
    fit.set_defaults(func=cmd_fit)

    predict = sub.add_parser("predict", help="predict from a fitted model file")
    predict.add_argument("--model", required=True)
    predict.add_argument("--ens", required=True)
    predict.add_argument("--grid", help="prediction sites; omit to predict at "
                                        "the fitting stations")
    predict.add_argument("--date")
    predict.add_argument("--method", choices=("adaptive", "baseline"),
                         default="adaptive")
    predict.add_argument("--out", required=True)
    predict.add_argument("--fields", help="also write interpolated-field CSV")
    predict.add_argument("--figures", help="render field maps into this directory")
    predict.set_defaults(func=cmd_predict)

    ver = sub.add_parser("verify", help="score prediction files against observations")
    ver.add_argument("--pred", action="append", required=True,
                     help="predictions CSV (repeatable)")
    ver.add_argument("--names", help="comma list of method names, one per --pred")
    ver.add_argument("--obs", required=True)
    ver.add_argument("--ens", help="raw ensemble CSV for an ensemble comparison row")
    ver.add_argument("--stations", help="station file for bias-map coordinates")
    ver.add_argument("--grid", help="grid file for bias-map coordinates")
    ver.add_argument("--levels", default="0.81,0.905")
    ver.add_argument("--out", required=True, help="output directory")
    ver.add_argument("--figures", help="render bias/score figures into this directory")
    ver.set_defaults(func=cmd_verify)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--config", help="JSON file of generator settings")
    sim.add_argument("--seed", type=int, help="override the configured seed")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AdaptiveEmosError as exc:
        print(json.dumps({"error": {"category": exc.category, "message": str(exc)}}),
              file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": {"category": "input",
                                    "message": f"{type(exc).__name__}: {exc}"}}),
              file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - map anything else to the internal code
        print(json.dumps({"error": {"category": "internal",
                                    "message": f"{type(exc).__name__}: {exc}"}}),
              file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
