"""Intrinsic kriging with generalized covariance -theta2*||h|| and site nuggets.

The field model treats station values as an intrinsic Gaussian random field:
large-scale fluctuations follow a Brownian surface (linear variogram with
slope theta2), small-scale variability enters through a site-specific nugget
theta1 * zeta_i. Drift functions (a constant, or a natural cubic spline of
altitude) are reproduced exactly by the kriging weights. The module covers
the full fitting chain: leave-one-out diagnostics on a nugget-free system,
kernel smoothing of the resulting nugget indicators, restricted maximum
likelihood for (theta1, theta2), and the bordered-system solve for dual
kriging weights and kriging variances.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import optimize
from scipy.linalg import cholesky, lu_factor, lu_solve, null_space, solve_triangular
from scipy.spatial.distance import cdist

from .core import FieldModel, Station, validate_station_network
from .errors import (
    ConvergenceError,
    DegenerateDataError,
    DomainError,
    DriftDegeneracyError,
    ModelError,
    NumericError,
)

XI2_FLOOR = 1e-6  # degC^2, applied before taking logs of the local variance


def natural_spline_basis(altitude_km, knots_km=(0.0, 1.0, 1.5)):
    """Natural cubic spline basis of altitude, truncated-power construction.

    For K knots the space has dimension K; the basis is 1, a, and
    d_j(a) - d_{K-1}(a) for j = 1..K-2, where
    d_j(a) = ((a - k_j)_+^3 - (a - k_K)_+^3) / (k_K - k_j).
    Linear extrapolation beyond the boundary knots. Input in kilometers.
    """
    a = np.asarray(altitude_km, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError("altitude must be finite")
    knots = tuple(float(k) for k in knots_km)
    if len(knots) < 2 or any(k2 <= k1 for k1, k2 in zip(knots, knots[1:])):
        raise DomainError(f"knots must be strictly increasing, got {knots}")
    cols = [np.ones_like(a), a]
    if len(knots) > 2:
        k_last = knots[-1]

        def d(knot):
            return (np.clip(a - knot, 0.0, None) ** 3 - np.clip(a - k_last, 0.0, None) ** 3) / (
                k_last - knot
            )

        d_pen = d(knots[-2])
        for knot in knots[:-2]:
            cols.append(d(knot) - d_pen)
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class DriftBasis:
    """Drift function space the kriging weights must reproduce.

    ``constant`` spans only the constant function (k = 1); ``altitude-spline``
    spans a natural cubic spline of altitude (k = len(knots)). An optional
    invertible ``transform`` recombines the basis; it changes conditioning
    but not the span, so predictions are unaffected.
    """

    kind: str = "altitude-spline"
    knots_km: tuple = (0.0, 1.0, 1.5)
    transform: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "altitude-spline"):
            raise DomainError(f"unknown drift kind {self.kind!r}")
        object.__setattr__(self, "knots_km", tuple(float(k) for k in self.knots_km))
        if self.transform is not None:
            t = np.asarray(self.transform, dtype=float)
            k = self.n_functions
            if t.shape != (k, k):
                raise DomainError(f"transform must be {k}x{k}, got {t.shape}")
            if not np.isfinite(t).all() or np.linalg.cond(t) > 1e12:
                raise DomainError("transform must be finite and invertible")
            object.__setattr__(self, "transform", tuple(tuple(row) for row in t))

    @property
    def n_functions(self) -> int:
        return 1 if self.kind == "constant" else len(self.knots_km)

    def evaluate(self, altitude_km) -> np.ndarray:
        a = np.asarray(altitude_km, dtype=float)
        if self.kind == "constant":
            out = np.ones(a.shape + (1,))
        else:
            out = natural_spline_basis(a, self.knots_km)
        if self.transform is not None:
            out = out @ np.asarray(self.transform, dtype=float)
        return out

    def at_stations(self, stations) -> np.ndarray:
        return self.evaluate(np.array([s.altitude_km for s in stations]))

    def at_site(self, site) -> np.ndarray:
        p = self.evaluate(np.array([site.altitude_km]))
        return p[0]


def _coords_array(stations) -> np.ndarray:
    return np.array([[s.x, s.y] for s in stations], dtype=float)


class KrigingSystem:
    """Factorized bordered system [[A, P], [P', 0]] for one station set.

    A has -theta2*distance off the diagonal and theta1*zeta_i on it; P holds
    the drift values. Solves use an LU factorization with one step of
    iterative refinement.
    """

    def __init__(self, stations, drift: DriftBasis, theta1: float, theta2: float, zeta):
        stations = tuple(stations)
        validate_station_network(stations)
        n = len(stations)
        zeta = np.asarray(zeta, dtype=float)
        if theta2 <= 0.0:
            raise DomainError(f"theta2 must be > 0, got {theta2}")
        if theta1 < 0.0:
            raise DomainError(f"theta1 must be >= 0, got {theta1}")
        if zeta.shape != (n,) or np.any(zeta < 0.0) or not np.isfinite(zeta).all():
            raise DomainError("zeta must be a nonnegative finite vector, one entry per station")

        P = drift.at_stations(stations)
        k = P.shape[1]
        if n <= k:
            raise DegenerateDataError(f"need more stations ({n}) than drift functions ({k})")
        if np.linalg.matrix_rank(P) < k:
            raise DriftDegeneracyError(
                "drift functions are linearly dependent on this station set"
            )

        coords = _coords_array(stations)
        dist = cdist(coords, coords)
        A = -theta2 * dist
        np.fill_diagonal(A, theta1 * zeta)
        M = np.zeros((n + k, n + k))
        M[:n, :n] = A
        M[:n, n:] = P
        M[n:, :n] = P.T

        self.stations = stations
        self.drift = drift
        self.theta1 = float(theta1)
        self.theta2 = float(theta2)
        self.zeta = zeta
        self.coords = coords
        self.P = P
        self.n = n
        self.k = k
        self.bordered = M
        try:
            self._lu = lu_factor(M)
        except Exception as exc:  # LinAlgError and friends
            raise NumericError(f"bordered kriging system is singular: {exc}") from exc
        for arr in (self.zeta, self.coords, self.P, self.bordered):
            arr.flags.writeable = False

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve the bordered system with one iterative-refinement step."""
        x = lu_solve(self._lu, rhs)
        x += lu_solve(self._lu, rhs - self.bordered @ x)
        return x

    @cached_property
    def psi_diagonal(self) -> np.ndarray:
        """Diagonal of the station block of the bordered-matrix inverse."""
        rhs = np.zeros((self.n + self.k, self.n))
        rhs[: self.n, :] = np.eye(self.n)
        inv_cols = self.solve(rhs)
        diag = np.diagonal(inv_cols[: self.n, :]).copy()
        return diag

    def covariance_to(self, site) -> np.ndarray:
        """Generalized covariance between an arbitrary site and each station.

        The station nugget enters only when the site coincides exactly with
        that station.
        """
        xy = np.asarray(site.coords, dtype=float)
        if not np.isfinite(xy).all():
            raise DomainError(f"site coordinates must be finite, got {xy}")
        d = np.hypot(self.coords[:, 0] - xy[0], self.coords[:, 1] - xy[1])
        c = -self.theta2 * d
        coincident = d == 0.0
        c[coincident] += self.theta1 * self.zeta[coincident]
        return c


@dataclass(frozen=True)
class DualWeights:
    """Dual kriging solution: one alpha per station, one beta per drift function."""

    alpha: np.ndarray
    beta: np.ndarray


def build_system(stations, drift, theta1, theta2, zeta) -> KrigingSystem:
    """Assemble and factorize the bordered kriging system."""
    return KrigingSystem(stations, drift, theta1, theta2, zeta)


def krige(system: KrigingSystem, values) -> DualWeights:
    """Solve for the dual weights of the given station values."""
    values = np.asarray(values, dtype=float)
    if values.shape != (system.n,) or not np.isfinite(values).all():
        raise DomainError("values must be a finite vector, one entry per station")
    rhs = np.concatenate([values, np.zeros(system.k)])
    sol = system.solve(rhs)
    return DualWeights(alpha=sol[: system.n], beta=sol[system.n :])


def predict(system: KrigingSystem, weights: DualWeights, site, zeta_site: float):
    """Kriging prediction and variance at a site.

    The predictor is sum_i alpha_i * c(site, s_i) + sum_j beta_j * p_j(site);
    the variance is C(site, site) - (c, p)' (lambda, mu) with (lambda, mu)
    solving the bordered system for right-hand side (c, p). The site's own
    (smoothed) nugget zeta_site enters only C(site, site); negative variances
    from roundoff are clamped to zero.
    """
    if zeta_site < 0.0:
        raise DomainError(f"zeta_site must be >= 0, got {zeta_site}")
    c0 = system.covariance_to(site)
    p0 = system.drift.at_site(site)
    if not np.isfinite(p0).all():
        raise DomainError(f"drift basis not evaluable at site {getattr(site, 'id', site)!r}")
    value = float(weights.alpha @ c0 + weights.beta @ p0)
    lam_mu = system.solve(np.concatenate([c0, p0]))
    c00 = system.theta1 * float(zeta_site)
    variance = c00 - float(np.concatenate([c0, p0]) @ lam_mu)
    return value, max(variance, 0.0)


def loocv(stations, values, drift: DriftBasis):
    """Leave-one-out errors and squared standardized errors, in closed form.

    Computed on the nugget-free unit-slope system (theta2 = 1, theta1 = 0):
    only relative magnitudes of the outputs are meaningful. e_i = alpha_i /
    Psi_ii is the exact difference between the value at station i and its
    interpolation from all other stations; 1/Psi_ii is the corresponding
    kriging variance, and zeta_raw_i = alpha_i^2 / Psi_ii.
    """
    stations = tuple(stations)
    values = np.asarray(values, dtype=float)
    n = len(stations)
    k = drift.n_functions
    if n <= k + 1:
        raise DegenerateDataError(f"leave-one-out needs n > k+1 (n={n}, k={k})")
    system = build_system(stations, drift, 0.0, 1.0, np.zeros(n))
    psi = system.psi_diagonal
    if np.any(psi <= 0.0):
        raise NumericError("non-positive diagonal in the inverse station block")
    alpha = krige(system, values).alpha
    e = alpha / psi
    zeta_raw = alpha**2 / psi
    return e, zeta_raw


class NuggetSurface:
    """Kernel-smoothed nugget indicator field.

    Triweight kernel (1-h^2)^3 on h < 1, with an adaptive bandwidth equal to
    the distance to the k_nn-th nearest station (capped at n, ties broken by
    station id). Weights are nonnegative and sum to one; if every station
    falls outside the bandwidth the nearest station takes all the weight.
    """

    def __init__(self, stations, zeta_raw, k_nn: int):
        stations = tuple(stations)
        zeta_raw = np.asarray(zeta_raw, dtype=float)
        n = len(stations)
        if n < 2:
            raise DomainError(f"nugget smoothing needs at least 2 stations, got {n}")
        if k_nn < 1:
            raise DomainError(f"k_nn must be >= 1, got {k_nn}")
        if zeta_raw.shape != (n,) or np.any(zeta_raw < 0.0):
            raise DomainError("zeta_raw must be nonnegative, one entry per station")
        self.coords = _coords_array(stations)
        self.ids = tuple(s.id for s in stations)
        self.zeta_raw = zeta_raw
        self.k_nn = int(k_nn)
        self._k_eff = min(self.k_nn, n)
        self._order_key = np.argsort(np.array(self.ids), kind="stable")

    def _distances(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.hypot(self.coords[:, 0] - xy[0], self.coords[:, 1] - xy[1])

    def _nearest_order(self, d: np.ndarray) -> np.ndarray:
        # sort by (distance, station id): stable sort by distance over id-sorted rows
        by_id = self._order_key
        return by_id[np.argsort(d[by_id], kind="stable")]

    def bandwidth(self, xy) -> float:
        d = self._distances(xy)
        order = self._nearest_order(d)
        return float(d[order[self._k_eff - 1]])

    def weights(self, xy) -> np.ndarray:
        d = self._distances(xy)
        lam = self.bandwidth(xy)
        if lam > 0.0:
            h = d / lam
            w = np.where(h < 1.0, (1.0 - np.minimum(h, 1.0) ** 2) ** 3, 0.0)
        else:
            w = np.zeros_like(d)
        total = w.sum()
        if total <= 0.0:
            w = np.zeros_like(d)
            w[self._nearest_order(d)[0]] = 1.0
            return w
        return w / total

    def __call__(self, xy) -> float:
        return float(self.weights(xy) @ self.zeta_raw)


def smooth_nugget(stations, zeta_raw, k_nn: int) -> NuggetSurface:
    """Build the kernel-smoothed nugget surface from raw indicators."""
    return NuggetSurface(stations, zeta_raw, k_nn)


@dataclass(frozen=True)
class RemlFit:
    theta1: float
    theta2: float
    restricted_loglik: float


def _contrast_basis(P: np.ndarray) -> np.ndarray:
    return null_space(P.T)


def restricted_loglik(stations, values, drift, zeta, theta1, theta2, contrasts=None) -> float:
    """Gaussian log-likelihood of drift-orthogonal contrasts of the values.

    ``contrasts`` may supply any orthonormal basis of the null space of P';
    the value does not depend on the choice. Covariance of the contrasts is
    W'(theta1*diag(zeta) - theta2*D)W.
    """
    stations = tuple(stations)
    values = np.asarray(values, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    P = drift.at_stations(stations)
    W = _contrast_basis(P) if contrasts is None else np.asarray(contrasts, dtype=float)
    coords = _coords_array(stations)
    D = cdist(coords, coords)
    sigma = theta1 * (W.T * zeta) @ W - theta2 * (W.T @ D @ W)
    try:
        L = cholesky(0.5 * (sigma + sigma.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"contrast covariance not positive definite: {exc}") from exc
    w = W.T @ values
    u = solve_triangular(L, w, lower=True)
    m = W.shape[1]
    return float(
        -0.5 * (2.0 * np.sum(np.log(np.diag(L))) + u @ u + m * np.log(2.0 * np.pi))
    )


class _RemlObjective:
    """Precomputed REML pieces: one eigendecomposition, then O(n) per trial.

    With A = -W'DW = LL' and B = L^-1 (W'diag(zeta)W) L^-T = Q diag(lam) Q',
    the contrast covariance is L Q (theta1*lam + theta2) Q' L', so both the
    log-determinant and the quadratic form reduce to sums over eigenvalues.
    """

    def __init__(self, stations, values, drift, zeta):
        stations = tuple(stations)
        values = np.asarray(values, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        P = drift.at_stations(stations)
        n, k = P.shape
        W = _contrast_basis(P)
        coords = _coords_array(stations)
        D = cdist(coords, coords)
        A = -(W.T @ D @ W)
        try:
            L = cholesky(0.5 * (A + A.T), lower=True)
        except np.linalg.LinAlgError as exc:
            raise ModelError(
                f"distance kernel not positive definite on contrasts: {exc}"
            ) from exc
        Mn = (W.T * zeta) @ W
        B = solve_triangular(L, solve_triangular(L, Mn, lower=True).T, lower=True)
        lam, Q = np.linalg.eigh(0.5 * (B + B.T))
        self.lam = np.clip(lam, 0.0, None)
        self.u = Q.T @ solve_triangular(L, W.T @ values, lower=True)
        self.logdet_base = 2.0 * float(np.sum(np.log(np.diag(L))))
        self.m = n - k

    def negloglik(self, theta1: float, theta2: float) -> float:
        d = theta1 * self.lam + theta2
        if np.any(d <= 0.0):
            return np.inf
        return 0.5 * (
            self.logdet_base
            + float(np.sum(np.log(d)))
            + float(np.sum(self.u**2 / d))
            + self.m * np.log(2.0 * np.pi)
        )


_THETA1_OFFSET = 1e-12


def reml_fit(stations, values, drift, zeta) -> RemlFit:
    """Restricted-maximum-likelihood estimate of (theta1, theta2).

    Nelder-Mead in (log(theta1 + eps), log(theta2)) from four deterministic
    starts; the best converged optimum wins.
    """
    stations = tuple(stations)
    values = np.asarray(values, dtype=float)
    n = len(stations)
    k = drift.n_functions
    if n < k + 5:
        raise DegenerateDataError(f"REML needs n >= k+5 (n={n}, k={k})")
    P = drift.at_stations(stations)
    resid = values - P @ np.linalg.lstsq(P, values, rcond=None)[0]
    if np.linalg.norm(resid) <= 1e-12 * max(np.linalg.norm(values), 1.0):
        raise DegenerateDataError("values lie exactly in the drift span")

    obj = _RemlObjective(stations, values, drift, zeta)
    t2_scale = float(np.mean(obj.u**2))
    if t2_scale <= 0.0:
        raise DegenerateDataError("contrasts of the values are all zero")
    lam_bar = float(np.mean(obj.lam))
    if lam_bar <= 0.0:
        lam_bar = 1.0
    starts = [
        (_THETA1_OFFSET, t2_scale),
        (0.5 * t2_scale / lam_bar, 0.7 * t2_scale),
        (2.0 * t2_scale / lam_bar, 0.5 * t2_scale),
        (0.1 * t2_scale / lam_bar, 0.9 * t2_scale),
    ]

    def fun(x):
        x = np.clip(x, -700.0, 700.0)
        theta1 = max(np.exp(x[0]) - _THETA1_OFFSET, 0.0)
        theta2 = np.exp(x[1])
        return obj.negloglik(theta1, theta2)

    best = None
    any_converged = False
    for t1_0, t2_0 in starts:
        x0 = np.array([np.log(t1_0 + _THETA1_OFFSET), np.log(t2_0)])
        res = optimize.minimize(
            fun,
            x0,
            method="Nelder-Mead",
            options={"fatol": 1e-8, "xatol": 1e-6, "maxiter": 4000, "maxfev": 4000},
        )
        any_converged = any_converged or bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    x = np.clip(best.x, -700.0, 700.0)
    theta1 = float(max(np.exp(x[0]) - _THETA1_OFFSET, 0.0))
    theta2 = float(np.exp(x[1]))
    fit = RemlFit(theta1=theta1, theta2=theta2, restricted_loglik=float(-best.fun))
    if not any_converged:
        raise ConvergenceError("REML search did not converge from any start", best=fit)
    if not np.isfinite(best.fun):
        raise ModelError("contrast covariance not positive definite at any trial point")
    return fit


class FittedField:
    """A fitted interpolation field, ready for prediction at new sites."""

    def __init__(self, kind, system, weights, surface, values, loocv_errors=None):
        self.kind = kind
        self.system = system
        self.weights = weights
        self.surface = surface
        self.values = np.asarray(values, dtype=float)
        self.loocv_errors = loocv_errors

    @property
    def stations(self):
        return self.system.stations

    def predict(self, site):
        """Interpolated value and kriging variance at a site."""
        zeta_site = self.surface(site.coords)
        return predict(self.system, self.weights, site, zeta_site)

    def to_record(self) -> FieldModel:
        sys = self.system
        return FieldModel(
            kind=self.kind,
            theta1=sys.theta1,
            theta2=sys.theta2,
            drift_kind=sys.drift.kind,
            knots_km=sys.drift.knots_km if sys.drift.kind == "altitude-spline" else (),
            station_records=sys.stations,
            values=tuple(self.values),
            zeta_raw=tuple(self.surface.zeta_raw),
            zeta=tuple(sys.zeta),
            k_nn=self.surface.k_nn,
            alpha=tuple(self.weights.alpha),
            beta=tuple(self.weights.beta),
        )

    @classmethod
    def from_record(cls, record: FieldModel) -> "FittedField":
        stations = tuple(
            s if isinstance(s, Station) else Station.from_dict(s)
            for s in record.station_records
        )
        if record.drift_kind == "constant":
            drift = DriftBasis("constant")
        else:
            drift = DriftBasis("altitude-spline", record.knots_km)
        system = build_system(stations, drift, record.theta1, record.theta2, record.zeta)
        weights = DualWeights(
            alpha=np.asarray(record.alpha, dtype=float),
            beta=np.asarray(record.beta, dtype=float),
        )
        surface = NuggetSurface(stations, record.zeta_raw, record.k_nn)
        return cls(record.kind, system, weights, surface, record.values)


def fit_field(stations, values, drift: DriftBasis, k_nn: int, kind: str = "y") -> FittedField:
    """Full field fit: LOOCV nuggets, smoothing, REML, kriging weights."""
    stations = tuple(stations)
    values = np.asarray(values, dtype=float)
    errors, zeta_raw = loocv(stations, values, drift)
    surface = smooth_nugget(stations, zeta_raw, k_nn)
    zeta = np.array([surface(s.coords) for s in stations])
    reml = reml_fit(stations, values, drift, zeta)
    system = build_system(stations, drift, reml.theta1, reml.theta2, zeta)
    weights = krige(system, values)
    return FittedField(kind, system, weights, surface, values, loocv_errors=errors)


def fit_y_field(stations, y_bar, k_nn: int = 25, knots_km=(0.0, 1.0, 1.5)) -> FittedField:
    """Fit the window-mean temperature field (spline-of-altitude drift)."""
    return fit_field(stations, y_bar, DriftBasis("altitude-spline", knots_km), k_nn, kind="y")


def fit_z_field(stations, xi2, k_nn: int = 25) -> FittedField:
    """Fit the log local-variance field (constant drift).

    Values are log(xi^2); stations at or below the floor of 1e-6 degC^2 are
    clipped with a warning.
    """
    xi2 = np.asarray(xi2, dtype=float)
    if np.any(xi2 < XI2_FLOOR):
        low = [s.id for s, v in zip(stations, xi2) if v < XI2_FLOOR]
        warnings.warn(
            f"local variance below {XI2_FLOOR} degC^2 floored at stations {low}",
            stacklevel=2,
        )
    z = np.log(np.clip(xi2, XI2_FLOOR, None))
    return fit_field(stations, z, DriftBasis("constant"), k_nn, kind="z")
