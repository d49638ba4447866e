"""Distances between the law of W and its Gaussian limit, and rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, stats
from scipy.special import ndtr

from .free_energy import CenteringResult, log_cosh, phi, phi_hessian
from .model import ModelParams, _as_xi

SMOOTH = "smooth_poly_tanh"
HALFLINE = "halfline_indicator"
INTERVAL = "interval_indicator"
HALFSPACE = "halfspace_indicator"
BOX = "box_indicator"
A_HALFLINE = math.sqrt(2.0 / math.pi)
A_INTERVAL = 2.0 * math.sqrt(2.0 / math.pi)

QMC_POINTS = 1 << 14
QMC_REPEATS = 16


class GridNormalizationError(RuntimeError):
    """The numerical density grid does not capture the probability mass."""


# ------------------------------------------------------- test functions

def _tanh_derivative(poly: Polynomial) -> Polynomial:
    """``d/du P(tanh u)`` expressed as a polynomial in ``t = tanh u``."""
    return poly.deriv() * Polynomial([1.0, 0.0, -1.0])


def _sup_on_unit_interval(poly: Polynomial) -> float:
    """Exact ``max_{|t| <= 1} |P(t)|`` via the critical points of ``P``."""
    candidates = [-1.0, 1.0]
    if poly.degree() >= 2:
        for r in poly.deriv().roots():
            if abs(r.imag) < 1e-12 and -1.0 <= r.real <= 1.0:
                candidates.append(float(r.real))
    return float(np.max(np.abs(poly(np.array(candidates)))))


def poly_tanh_norms(coeffs, direction) -> tuple[float, float, float]:
    """Certified ``(|g|_1, |g|_2, |g|_3)`` for ``g(w) = P(tanh(<a, w> + b))``."""
    a = float(np.max(np.abs(direction)))
    poly = Polynomial(coeffs)
    norms = []
    for m in (1, 2, 3):
        poly = _tanh_derivative(poly)
        norms.append(a**m * _sup_on_unit_interval(poly))
    return tuple(norms)


@dataclass(frozen=True)
class TestFunction:
    """A member of a test family evaluated on rows of ``W``.

    Smooth members are ``P(tanh(<direction, w> + offset))`` with polynomial
    coefficients ``poly``; indicator members use ``lower``/``upper``.
    """

    __test__ = False  # not a pytest class

    kind: str
    name: str
    direction: tuple = (1.0,)
    offset: float = 0.0
    poly: tuple = ()
    lower: tuple = ()
    upper: tuple = ()
    g_norms: tuple | None = None
    a_constant: float | None = None

    @property
    def dim(self) -> int:
        return len(self.direction) if self.kind in (SMOOTH, HALFSPACE) else len(
            self.upper)

    @property
    def parameters(self) -> list[float]:
        return [*self.direction, self.offset, *self.poly, *self.lower, *self.upper]

    def __call__(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.ndim == 1:
            w = w[:, None] if self.dim == 1 else w[None, :]
        if self.kind == SMOOTH:
            u = w @ np.asarray(self.direction) + self.offset
            return Polynomial(self.poly)(np.tanh(u))
        if self.kind == HALFLINE:
            return (w[:, 0] <= self.upper[0]).astype(np.float64)
        if self.kind == INTERVAL:
            return ((w[:, 0] >= self.lower[0]) & (w[:, 0] <= self.upper[0])).astype(
                np.float64)
        if self.kind == HALFSPACE:
            return (w @ np.asarray(self.direction) <= self.upper[0]).astype(np.float64)
        if self.kind == BOX:
            inside = (w >= np.asarray(self.lower)) & (w <= np.asarray(self.upper))
            return inside.all(axis=1).astype(np.float64)
        raise ValueError(f"unknown kind {self.kind}")

    def smoothed(self, delta: float, sign: int) -> "TestFunction":
        """``g_delta^+`` (sign=+1) or ``g_delta^-`` (sign=-1)."""
        s = sign * delta
        if self.kind in (HALFLINE, HALFSPACE):
            return TestFunction(self.kind, f"{self.name}{'+-'[sign < 0]}{delta}",
                                self.direction, upper=(self.upper[0] + s,),
                                a_constant=self.a_constant)
        if self.kind == INTERVAL:
            return TestFunction(self.kind, f"{self.name}{'+-'[sign < 0]}{delta}",
                                lower=(self.lower[0] - s,), upper=(self.upper[0] + s,),
                                a_constant=self.a_constant)
        raise ValueError(f"no closed-form smoothing for {self.kind}")


def _smooth(name, poly, direction, offset=0.0) -> TestFunction:
    direction = tuple(float(v) for v in direction)
    return TestFunction(SMOOTH, name, direction, float(offset), tuple(poly),
                        g_norms=poly_tanh_norms(poly, direction))


def smooth_family(k: int = 1) -> list[TestFunction]:
    """Bounded ``C^3`` members built from polynomials of ``tanh``."""
    if k == 1:
        specs = [
            ("tanh(w)", (0, 1), (1.0,), 0.0),
            ("tanh(2w)", (0, 1), (2.0,), 0.0),
            ("tanh(w/2)", (0, 1), (0.5,), 0.0),
            ("tanh(w+0.5)", (0, 1), (1.0,), 0.5),
            ("tanh(3w-0.5)", (0, 1), (3.0,), -0.5),
            ("tanh(w)^2", (0, 0, 1), (1.0,), 0.0),
            ("tanh(2w)^2", (0, 0, 1), (2.0,), 0.0),
            ("tanh(w)^3-tanh(w)", (0, -1, 0, 1), (1.0,), 0.0),
        ]
        return [_smooth(*s) for s in specs]
    out = []
    r = 1.0 / math.sqrt(2.0)
    dirs = [tuple(np.eye(k)[i]) for i in range(k)]
    dirs += [tuple(np.r_[r, r, np.zeros(k - 2)]), tuple(np.r_[r, -r, np.zeros(k - 2)])]
    for j, d in enumerate(dirs):
        out.append(_smooth(f"tanh(u{j})", (0, 1), d))
        out.append(_smooth(f"tanh(u{j})^2", (0, 0, 1), d))
        out.append(_smooth(f"tanh(2u{j}+0.3)", (0, 1), 2.0 * np.asarray(d), 0.3))
    return out


HALFLINE_GRID = np.round(np.linspace(-4.0, 4.0, 161), 10)
INTERVAL_GRID = np.round(np.linspace(-4.0, 4.0, 33), 10)


def gclass_family(k: int = 1, intervals: bool = True) -> list[TestFunction]:
    """Class-G members on a fixed grid: half-lines/intervals or half-spaces/boxes."""
    if k == 1:
        out = [TestFunction(HALFLINE, f"halfline(-inf,{t:g}]", upper=(float(t),),
                            a_constant=A_HALFLINE) for t in HALFLINE_GRID]
        if intervals:
            g = INTERVAL_GRID
            out += [TestFunction(INTERVAL, f"interval[{a:g},{b:g}]",
                                 lower=(float(a),), upper=(float(b),),
                                 a_constant=A_INTERVAL)
                    for i, a in enumerate(g) for b in g[i + 1:]]
        return out
    out = []
    angles = np.linspace(0.0, math.pi, 8, endpoint=False)
    for th in angles:
        d = np.zeros(k)
        d[0], d[1] = math.cos(th), math.sin(th)
        for c in np.linspace(-2.0, 2.0, 9):
            out.append(TestFunction(HALFSPACE, f"halfspace[{th:.3f}]<={c:g}",
                                    tuple(d), upper=(float(c),)))
    for c in (0.5, 1.0, 2.0):
        out.append(TestFunction(BOX, f"box[-{c:g},{c:g}]^{k}", lower=(-c,) * k,
                                upper=(c,) * k))
    return out


# --------------------------------------------------- gaussian reference

def psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; rejects matrices that are not PSD."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if not np.allclose(sigma, sigma.T, atol=1e-12 * max(1.0, np.abs(sigma).max())):
        raise ValueError("covariance is not symmetric")
    vals, vecs = np.linalg.eigh(sigma)
    if vals.min() < -1e-12 * max(1.0, vals.max()):
        raise ValueError("covariance is not positive semidefinite")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gaussian_expectation(g: TestFunction, sigma_half,
                         quadrature_seed: int = 0) -> tuple[float, float]:
    """``E g(Sigma^{1/2} Z)`` with an error estimate."""
    sh = np.atleast_2d(np.asarray(sigma_half, dtype=np.float64))
    vals = np.linalg.eigvalsh(0.5 * (sh + sh.T))
    if vals.min() < -1e-12 * max(1.0, vals.max()):
        raise ValueError("sigma_half is not positive semidefinite")
    k = sh.shape[0]
    if g.kind in (HALFLINE, HALFSPACE):
        d = np.asarray(g.direction if g.kind == HALFSPACE else (1.0,))
        scale = float(np.linalg.norm(sh @ d))
        c = g.upper[0]
        if scale == 0.0:
            return float(c >= 0.0), 0.0
        return float(ndtr(c / scale)), 0.0
    if k == 1:
        s = float(sh[0, 0])
        if g.kind == INTERVAL:
            if s == 0.0:
                return float(g.lower[0] <= 0.0 <= g.upper[0]), 0.0
            return float(ndtr(g.upper[0] / s) - ndtr(g.lower[0] / s)), 0.0
        val, err = integrate.quad(lambda z: g(np.array([s * z]))[0] * stats.norm.pdf(z),
                                  -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12,
                                  limit=200)
        return float(val), float(err)
    means = []
    for r in range(QMC_REPEATS):
        sob = stats.qmc.Sobol(k, scramble=True,
                              seed=np.random.default_rng([quadrature_seed, r]))
        u = sob.random(QMC_POINTS)
        z = stats.norm.ppf(np.clip(u, 1e-16, 1 - 1e-16))
        means.append(g(z @ sh.T).mean())
    means = np.asarray(means)
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(QMC_REPEATS))


# ------------------------------------------------------------ distances

def batch_means_se(values: np.ndarray, chain=None, n_batches: int = 20) -> float:
    """Standard error of a chain average from contiguous batch means."""
    values = np.asarray(values, dtype=np.float64)
    chain = np.zeros(len(values), int) if chain is None else np.asarray(chain)
    means = []
    for c in np.unique(chain):
        rows = values[chain == c]
        nb = min(n_batches, len(rows))
        means += [part.mean() for part in np.array_split(rows, nb) if len(part)]
    means = np.asarray(means)
    if len(means) < 2:
        return float("nan")
    return float(means.std(ddof=1) / math.sqrt(len(means)))


def stationary_drift(batch) -> np.ndarray | None:
    """Per-draw ``E[W' - W | sigma]``, or ``None`` if it is unavailable.

    Exchangeability of the heat-bath pair gives ``E[W' - W] = 0`` under the
    unrestricted Gibbs law, so the drift is a zero-mean control variate.
    """
    st = getattr(batch, "states", None)
    if st is None or batch.weights is not None or getattr(batch, "conditioned", False):
        return None
    k = batch.w.shape[1]
    return ((st.tanh_sum - st.n * st.overlap) / st.n**1.5)[:, :k]


def control_variate_values(values: np.ndarray, control: np.ndarray) -> np.ndarray:
    """Subtract the least-squares projection of ``values`` on zero-mean controls."""
    c = control - control.mean(axis=0)
    coef, *_ = np.linalg.lstsq(c, values - values.mean(), rcond=None)
    return values - control @ coef


def distance(batch, g: TestFunction, sigma_hat, quadrature_seed: int = 0,
             control_variate: bool = True) -> tuple[float, float]:
    """``|E g(W) - E g(Sigma^{1/2} Z)|`` and its standard error.

    Monte Carlo means use the pair drift as a control variate when the batch
    carries site statistics and was not ball-conditioned.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    gw = g(batch.w)
    ref, ref_err = gaussian_expectation(g, psd_sqrt(sigma_hat), quadrature_seed)
    if batch.weights is not None:
        mean, se = float(np.dot(batch.weights, gw) / np.sum(batch.weights)), 0.0
    else:
        drift = stationary_drift(batch) if control_variate else None
        if drift is not None:
            gw = control_variate_values(gw, drift)
        mean, se = float(gw.mean()), batch_means_se(gw, batch.chain)
    return abs(mean - ref), float(math.hypot(se, ref_err))


# ------------------------------------------------ Hubbard-Stratonovich

def hs_log_density(z: np.ndarray, xi, params: ModelParams,
                   centering: CenteringResult) -> np.ndarray:
    """``n Phi(lambda + beta z / sqrt(n))`` (unnormalised log density of V + W)."""
    x = _as_xi(xi)
    n = x.shape[0]
    lam = params.beta * centering.x_center + params.h * params.unit_vector()
    z = np.atleast_2d(z)
    return np.array([n * phi(lam + params.beta * zz / math.sqrt(n), x, params)
                     for zz in z])


def _hs_log_density_1d(z: np.ndarray, xi, params, centering) -> np.ndarray:
    x = _as_xi(xi).astype(np.float64)
    n = x.shape[0]
    e = params.unit_vector()
    lam = params.beta * centering.x_center + params.h * e
    pts = lam[None, :] + params.beta * z[:, None] * np.eye(x.shape[1])[:1] / math.sqrt(n)
    d = pts - params.h * e
    return n * (-(d * d).sum(axis=1) / (2 * params.beta)
                + log_cosh(pts @ x.T).mean(axis=1))


def laplace_covariance(xi, params: ModelParams,
                       centering: CenteringResult) -> np.ndarray:
    """Covariance ``(beta^2 C)^{-1}`` of the quadratic approximation of V + W."""
    lam = params.beta * centering.x_center + params.h * params.unit_vector()
    c = -phi_hessian(lam, xi, params)
    return np.linalg.inv(params.beta**2 * c)


def _grid_density(logpdf, center, half_width, points, tol=1e-10, max_widen=4):
    for _ in range(max_widen + 1):
        grid = np.linspace(center - half_width, center + half_width, points)
        logf = logpdf(grid)
        f = np.exp(logf - logf.max())
        if max(f[0], f[-1]) < tol:
            return grid, f
        half_width *= 2.0
    raise GridNormalizationError("density mass not captured; widen the grid")


@dataclass
class HSReport:
    ks_distance: float
    per_axis: list
    n_draws: int
    laplace_variance: list
    empirical_variance: list
    grid_half_width: list
    exact_mixture: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _marginal_cdfs(xi, params, centering, half_widths, points):
    """Per-axis CDFs of the density ``exp(n Phi(lambda + beta z / sqrt n))``."""
    p = params.p
    n = _as_xi(xi).shape[0]
    if p == 1:
        grid, f = _grid_density(
            lambda z: _hs_log_density_1d(z, xi, params, centering), 0.0,
            half_widths[0], points)
        cdf = integrate.cumulative_trapezoid(f, grid, initial=0.0)
        return [(grid, cdf / cdf[-1])]
    if p != 2:
        raise ValueError("density check supports p <= 2")
    x = _as_xi(xi).astype(np.float64)
    lam = params.beta * centering.x_center + params.h * params.unit_vector()
    for _ in range(5):
        g0 = np.linspace(-half_widths[0], half_widths[0], points)
        g1 = np.linspace(-half_widths[1], half_widths[1], points)
        Z0, Z1 = np.meshgrid(g0, g1, indexing="ij")
        pts = lam + params.beta * np.stack([Z0.ravel(), Z1.ravel()], 1) / math.sqrt(n)
        d = pts - params.h * params.unit_vector()
        logf = n * (-(d * d).sum(1) / (2 * params.beta) + log_cosh(pts @ x.T).mean(1))
        f = np.exp(logf - logf.max()).reshape(points, points)
        edge = max(f[0].max(), f[-1].max(), f[:, 0].max(), f[:, -1].max())
        if edge < 1e-10:
            break
        half_widths = [2 * hw for hw in half_widths]
    else:
        raise GridNormalizationError("density mass not captured; widen the grid")
    out = []
    for axis, grid in ((0, g0), (1, g1)):
        marg = integrate.trapezoid(f, (g1, g0)[axis], axis=1 - axis)
        cdf = integrate.cumulative_trapezoid(marg, grid, initial=0.0)
        out.append((grid, cdf / cdf[-1]))
    return out


def hubbard_stratonovich_check(xi, params: ModelParams, centering: CenteringResult,
                               batch, v_seed: int = 0,
                               points: int = 20001) -> HSReport:
    """Compare the law of ``V + W`` (``V ~ N(0, Id / beta)``) with the HS density.

    Monte Carlo batches are perturbed by seeded Gaussian draws and compared
    through a Kolmogorov-Smirnov statistic.  Exact batches yield the exact
    Gaussian-mixture CDF instead.
    """
    if params.k != params.p:
        raise ValueError("the density check needs the unprojected W (k = p)")
    if params.beta <= 0:
        raise ValueError("beta must be positive")
    lap = laplace_covariance(xi, params, centering)
    half = [8.0 * math.sqrt(lap[i, i]) for i in range(params.p)]
    pts = points if params.p == 1 else 401
    cdfs = _marginal_cdfs(xi, params, centering, half, pts)
    w = np.asarray(batch.w, dtype=np.float64)
    sd_v = 1.0 / math.sqrt(params.beta)
    per_axis = []
    if batch.weights is not None:
        probs = np.asarray(batch.weights) / np.sum(batch.weights)
        for axis, (grid, cdf) in enumerate(cdfs):
            mix = ndtr((grid[:, None] - w[None, :, axis]) / sd_v) @ probs
            per_axis.append(float(np.max(np.abs(mix - cdf))))
        emp_var = [float(probs @ w[:, a] ** 2 - (probs @ w[:, a]) ** 2 + 1 / params.beta)
                   for a in range(params.p)]
        n_draws = len(w)
    else:
        rng = np.random.default_rng(np.uint64(v_seed))
        y = w + rng.normal(0.0, sd_v, size=w.shape)
        for axis, (grid, cdf) in enumerate(cdfs):
            ys = np.sort(y[:, axis])
            m = len(ys)
            model = np.interp(ys, grid, cdf)
            upper = np.arange(1, m + 1) / m - model
            lower = model - np.arange(0, m) / m
            per_axis.append(float(max(upper.max(), lower.max())))
        emp_var = [float(np.var(y[:, a])) for a in range(params.p)]
        n_draws = len(y)
    return HSReport(max(per_axis), per_axis, n_draws,
                    [float(lap[i, i]) for i in range(params.p)], emp_var,
                    [float(c[0][-1]) for c in cdfs], batch.weights is not None)


# ------------------------------------------------------------- rate fit

@dataclass(frozen=True)
class RateFit:
    n_values: list
    distances: list
    slope: float
    intercept: float
    r_squared: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fit_rate(n_values, distances) -> RateFit:
    """Least-squares line through ``(log n, log distance)``."""
    n = np.asarray(n_values, dtype=np.float64)
    d = np.asarray(distances, dtype=np.float64)
    if len(n) < 4 or len(n) != len(d):
        raise ValueError("need at least four (n, distance) points")
    if np.any(np.diff(n) <= 0):
        raise ValueError("n values must be strictly increasing")
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    x, y = np.log(n), np.log(d)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return RateFit([int(v) for v in n], [float(v) for v in d], float(slope),
                   float(intercept), r2)
