"""Locally calibrated Gaussian temperature forecasts from ensemble output.

The library fits a centered-predictor Gaussian regression on a rolling
station panel by minimum-CRPS estimation, interpolates the station-specific
parameters to arbitrary sites by intrinsic kriging with site-dependent
nuggets, and verifies the resulting predictive distributions.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
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
)
from .emos import (  # noqa: F401
    FitConfig,
    fit_adaptive_emos,
    fit_baseline_ngr,
    local_uncertainty,
    pooled_slope,
    predict_at_site,
    predict_at_station,
    window_statistics,
)
from .geostat import (  # noqa: F401
    DriftBasis,
    FittedField,
    build_system,
    fit_field,
    fit_y_field,
    fit_z_field,
    krige,
    loocv,
    natural_spline_basis,
    predict,
    reml_fit,
    smooth_nugget,
)
from .ingest import DatasetPaths, assemble_window, load_grid, load_stations  # noqa: F401
from .scoring import (  # noqa: F401
    Interval,
    central_interval,
    ensemble_interval,
    gaussian_crps,
    gaussian_crps_grad,
    sample_crps,
)
from .simulate import SimConfig, simulate_brownian, simulate_panel  # noqa: F401
