"""Weighted nonlinear least squares for correlogram and spectrum shapes.

A small Levenberg-Marquardt engine with analytic Jacobians and a model
zoo: one-sided exponential decay, periodic two-sided exponential peak
train, Lorentzian line, Malus polarization curve, and a wrapper that
convolves any of them with a measured or Gaussian instrument response.

Positivity constraints (amplitudes, time constants) are enforced by
fitting the log of the parameter internally; reported values, errors and
covariances are transformed back to natural units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

__all__ = [
    "FWHM_TO_SIGMA",
    "RankDeficiencyError",
    "FitResult",
    "Model",
    "ExponentialDecay",
    "ExponentialTrain",
    "Lorentzian",
    "MalusCurve",
    "IRFHistogram",
    "ConvolvedModel",
    "convolve_with_irf",
    "fit",
    "jacobian_check",
]

#: Gaussian sigma = FWHM / this factor
FWHM_TO_SIGMA = 2.3548


class RankDeficiencyError(RuntimeError):
    """Normal matrix is singular; ``parameters`` lists the unconstrained ones."""

    def __init__(self, parameters: list[str]):
        self.parameters = list(parameters)
        super().__init__(
            "normal matrix is singular; data does not constrain: "
            + ", ".join(parameters)
        )


@dataclass(frozen=True)
class FitResult:
    """Converged parameter estimates with absolute 1-sigma errors.

    ``covariance`` is (J^T W J)^-1 in natural parameter units, not scaled
    by the reduced chi-square (which is reported separately).
    """

    model_name: str
    param_names: tuple[str, ...]
    params: dict[str, float]
    errors: dict[str, float]
    covariance: np.ndarray
    chi2: float
    ndof: int
    n_iterations: int
    converged: bool

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.ndof if self.ndof > 0 else math.nan

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def as_dict(self) -> dict:
        return {
            "model": self.model_name,
            "params": {k: float(v) for k, v in self.params.items()},
            "errors": {k: float(v) for k, v in self.errors.items()},
            "chi2": float(self.chi2),
            "ndof": int(self.ndof),
            "reduced_chi2": float(self.reduced_chi2),
            "n_iterations": int(self.n_iterations),
            "converged": bool(self.converged),
        }


class Model:
    """Base class: a named parametric curve with an analytic Jacobian."""

    name: str = "model"
    param_names: tuple[str, ...] = ()
    #: parameters kept positive via an internal log transform
    positive: frozenset[str] = frozenset()

    def __call__(self, x: np.ndarray, params: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray, params: np.ndarray) -> np.ndarray:
        """d f / d params, shape (len(x), len(params)), natural units."""
        raise NotImplementedError

    def initial_guess(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def canonicalize(self, params: np.ndarray) -> np.ndarray:
        """Map equivalent parametrizations onto one representative."""
        return params

    def _index(self, name: str) -> int:
        return self.param_names.index(name)


class ExponentialDecay(Model):
    """c + A exp(-(t-t0)/tau) for t >= t0, c before; fluorescence decay.

    With ``bin_width_ps`` set, the model value is the average of the
    continuous curve over [x - w/2, x + w/2) -- the right shape for
    histogram bins, and it keeps the rising edge continuous in t0 so the
    step position can be fitted (the pointwise form jumps by A whenever
    t0 crosses a sample, which strands the minimizer on a cliff edge).
    """

    name = "exp_decay"
    param_names = ("amplitude", "t0", "tau", "background")
    positive = frozenset({"amplitude", "tau"})

    def __init__(self, bin_width_ps: float | None = None):
        if bin_width_ps is not None and bin_width_ps <= 0:
            raise ValueError("bin width must be positive")
        self.bin_width_ps = bin_width_ps

    def _edges(self, x):
        w = self.bin_width_ps
        return x - w / 2.0, x + w / 2.0

    def __call__(self, x, params):
        a, t0, tau, c = params
        if self.bin_width_ps is None:
            dt = x - t0
            return c + np.where(dt >= 0, a * np.exp(-np.maximum(dt, 0.0) / tau), 0.0)
        el, er = self._edges(x)
        on = er > t0
        lo = np.maximum(el, t0)
        e_lo = np.where(on, np.exp(-np.maximum(lo - t0, 0.0) / tau), 0.0)
        e_hi = np.where(on, np.exp(-np.maximum(er - t0, 0.0) / tau), 0.0)
        return c + a * tau / self.bin_width_ps * (e_lo - e_hi)

    def jacobian(self, x, params):
        a, t0, tau, c = params
        jac = np.empty((x.size, 4))
        jac[:, 3] = 1.0
        if self.bin_width_ps is None:
            dt = x - t0
            e = np.where(dt >= 0, np.exp(-np.maximum(dt, 0.0) / tau), 0.0)
            jac[:, 0] = e
            jac[:, 1] = a * e / tau
            jac[:, 2] = a * e * np.maximum(dt, 0.0) / tau**2
            return jac
        w = self.bin_width_ps
        el, er = self._edges(x)
        on = er > t0
        inside = on & (el < t0)  # rise bin: integration starts at t0
        d_lo = np.where(on, np.maximum(np.maximum(el, t0) - t0, 0.0), 0.0)
        d_hi = np.where(on, np.maximum(er - t0, 0.0), 0.0)
        e_lo = np.where(on, np.exp(-d_lo / tau), 0.0)
        e_hi = np.where(on, np.exp(-d_hi / tau), 0.0)
        jac[:, 0] = tau / w * (e_lo - e_hi)
        jac[:, 1] = a / w * np.where(inside, -e_hi, e_lo - e_hi)
        jac[:, 2] = a / w * ((e_lo - e_hi) + (e_lo * d_lo - e_hi * d_hi) / tau)
        return jac

    def initial_guess(self, x, y):
        c0 = float(np.percentile(y, 10.0))
        i = int(np.argmax(y))
        a0 = max(float(y[i]) - c0, 1e-12)
        dx = float(np.median(np.diff(x))) if x.size > 1 else 1.0
        # start the step one bin below the half-rise crossing: bins
        # earlier than t0 predict a constant and are invisible to the
        # optimizer, so overshooting the onset strands the fit, while
        # starting low leaves a smooth downhill path. The crossing, not
        # the peak sample, marks the onset when the rise is blurred by an
        # instrument response (or partly cut off by the histogram start).
        j = int(np.argmax(y >= c0 + 0.5 * a0))
        t0 = float(x[max(j - 1, 0)]) - dx / 2.0
        area = float(np.clip(y[x >= t0] - c0, 0.0, None).sum()) * dx
        tau0 = max(area / a0, dx)
        return np.array([a0, t0, tau0, c0])


class ExponentialTrain(Model):
    """Periodic train of two-sided exponential peaks on a flat background.

    f(t) = c + sum_k h_k exp(-|t - k*period - t0| / tau), one free height
    per peak order k in [-n_side, n_side]; the period is a fixed property
    of the acquisition, not a fitted parameter.

    Peaks just outside the fitted range still leak their inner tails into
    the data, so ``n_ghost_peaks`` extra peaks are evaluated on each side
    with heights tied to the outermost fitted ones; without them the flat
    background term soaks up those tails and drags tau down.
    """

    def __init__(self, period_ps: float, n_side_peaks: int, n_ghost_peaks: int = 1):
        if period_ps <= 0:
            raise ValueError("period must be positive")
        if n_side_peaks < 1:
            raise ValueError("need at least one side peak")
        if n_ghost_peaks < 0:
            raise ValueError("ghost peak count must be >= 0")
        self.period_ps = float(period_ps)
        self.n_side_peaks = int(n_side_peaks)
        self.n_ghost_peaks = int(n_ghost_peaks)
        self.orders = tuple(range(-n_side_peaks, n_side_peaks + 1))
        self.name = "exp_train"
        heights = tuple(f"h_{k}" for k in self.orders)
        self.param_names = heights + ("tau", "t0", "background")
        self.positive = frozenset(heights) | {"tau"}

    def _split(self, params):
        n = len(self.orders)
        return params[:n], params[n], params[n + 1], params[n + 2]

    def _terms(self, h):
        """(order, height, height-column) including tied ghost peaks."""
        n = self.n_side_peaks
        for i, k in enumerate(self.orders):
            yield k, h[i], i
        for g in range(1, self.n_ghost_peaks + 1):
            yield -(n + g), h[0], 0
            yield n + g, h[-1], len(self.orders) - 1

    def __call__(self, x, params):
        h, tau, t0, c = self._split(params)
        out = np.full(x.size, c)
        for k, hk, _ in self._terms(h):
            out += hk * np.exp(-np.abs(x - k * self.period_ps - t0) / tau)
        return out

    def jacobian(self, x, params):
        h, tau, t0, c = self._split(params)
        n = len(self.orders)
        jac = np.zeros((x.size, n + 3))
        d_tau = np.zeros(x.size)
        d_t0 = np.zeros(x.size)
        for k, hk, col in self._terms(h):
            d = x - k * self.period_ps - t0
            e = np.exp(-np.abs(d) / tau)
            jac[:, col] += e
            d_tau += hk * np.abs(d) / tau**2 * e
            d_t0 += hk * np.sign(d) / tau * e
        jac[:, n] = d_tau
        jac[:, n + 1] = d_t0
        jac[:, n + 2] = 1.0
        return jac

    def initial_guess(self, x, y):
        c0 = float(np.percentile(y, 5.0))
        dx = float(np.median(np.diff(x))) if x.size > 1 else 1.0
        half = self.period_ps / 2.0
        areas = {}
        peaks = {}
        cents = {}
        for k in self.orders:
            sel = np.abs(x - k * self.period_ps) < half
            if not sel.any():
                raise ValueError(f"data does not cover peak {k}")
            resid = np.clip(y[sel] - c0, 0.0, None)
            areas[k] = float(resid.sum()) * dx
            peaks[k] = float(resid.max())
            s = resid.sum()
            cents[k] = float((x[sel] * resid).sum() / s) if s > 0 else k * self.period_ps
        k_star = max((k for k in self.orders if k != 0), key=lambda k: areas[k])
        tau0 = max(areas[k_star] / (2.0 * max(peaks[k_star], 1e-12)), dx)
        t0 = cents[k_star] - k_star * self.period_ps
        h_raw = {k: areas[k] / (2.0 * tau0) for k in self.orders}
        # keep empty peaks a few decades below the big ones instead of at
        # zero: the heights are fitted in log space
        floor = 1e-3 * max(h_raw.values()) + 1e-12
        h0 = np.array([max(h_raw[k], floor) for k in self.orders])
        return np.concatenate([h0, [tau0, t0, c0]])


class Lorentzian(Model):
    """c + A (G/2)^2 / ((x-x0)^2 + (G/2)^2); G is the FWHM."""

    name = "lorentzian"
    param_names = ("amplitude", "center", "fwhm", "background")
    positive = frozenset({"amplitude", "fwhm"})

    def __call__(self, x, params):
        a, x0, g, c = params
        hw2 = (g / 2.0) ** 2
        return c + a * hw2 / ((x - x0) ** 2 + hw2)

    def jacobian(self, x, params):
        a, x0, g, c = params
        hw = g / 2.0
        u = x - x0
        denom = u**2 + hw**2
        jac = np.empty((x.size, 4))
        jac[:, 0] = hw**2 / denom
        jac[:, 1] = a * hw**2 * 2.0 * u / denom**2
        jac[:, 2] = a * hw * u**2 / denom**2
        jac[:, 3] = 1.0
        return jac

    def initial_guess(self, x, y):
        c0 = float(np.percentile(y, 10.0))
        i = int(np.argmax(y))
        a0 = max(float(y[i]) - c0, 1e-12)
        x0 = float(x[i])
        dx = float(np.median(np.diff(np.sort(x)))) if x.size > 1 else 1.0
        above = np.count_nonzero(y - c0 > a0 / 2.0)
        g0 = max(above * dx, dx)
        return np.array([a0, x0, g0, c0])


class MalusCurve(Model):
    """c + I0/2 (1 + rho cos 2(theta - theta0)); angles in degrees.

    (rho, theta0) and (-rho, theta0+90) describe the same curve; fits are
    canonicalized to rho >= 0 and theta0 in [-90, 90).
    """

    name = "malus"
    param_names = ("i0", "rho", "theta0", "background")
    positive = frozenset({"i0"})

    def __call__(self, x, params):
        i0, rho, th0, c = params
        phi = np.radians(2.0 * (x - th0))
        return c + 0.5 * i0 * (1.0 + rho * np.cos(phi))

    def jacobian(self, x, params):
        i0, rho, th0, c = params
        phi = np.radians(2.0 * (x - th0))
        jac = np.empty((x.size, 4))
        jac[:, 0] = 0.5 * (1.0 + rho * np.cos(phi))
        jac[:, 1] = 0.5 * i0 * np.cos(phi)
        jac[:, 2] = 0.5 * i0 * rho * np.sin(phi) * (2.0 * math.pi / 180.0)
        jac[:, 3] = 1.0
        return jac

    def initial_guess(self, x, y):
        m = float(np.mean(y))
        cos2 = np.cos(np.radians(2.0 * x))
        sin2 = np.sin(np.radians(2.0 * x))
        ac = 2.0 * float(np.mean(y * cos2))
        as_ = 2.0 * float(np.mean(y * sin2))
        amp = math.hypot(ac, as_)
        th0 = 0.5 * math.degrees(math.atan2(as_, ac))
        i0 = max(2.0 * m, 1e-12)
        rho = min(amp / max(m, 1e-12), 1.0)
        return np.array([i0, rho, th0, 0.0])

    def canonicalize(self, params):
        i0, rho, th0, c = params
        if rho < 0:
            rho, th0 = -rho, th0 + 90.0
        th0 = (th0 + 90.0) % 180.0 - 90.0
        return np.array([i0, rho, th0, c])


# ---------------------------------------------------------------------------
# instrument response convolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IRFHistogram:
    """Instrument response sampled on uniform bin offsets (unit total weight)."""

    offsets_ps: np.ndarray
    weights: np.ndarray
    bin_width_ps: float = field(init=False)

    def __post_init__(self):
        o = np.asarray(self.offsets_ps, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if o.ndim != 1 or o.shape != w.shape or o.size == 0:
            raise ValueError("offsets/weights must be equal-length 1-D arrays")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        if o.size > 1:
            d = np.diff(o)
            if not np.allclose(d, d[0], rtol=1e-9, atol=1e-9) or d[0] <= 0:
                raise ValueError("offsets must be uniformly increasing")
            width = float(d[0])
        else:
            width = 1.0
        object.__setattr__(self, "offsets_ps", o)
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "bin_width_ps", width)

    @property
    def center_index(self) -> int:
        """Index of the tap whose offset is closest to zero delay."""
        return int(np.argmin(np.abs(self.offsets_ps)))

    @classmethod
    def delta(cls, bin_width_ps: float) -> "IRFHistogram":
        irf = cls(np.array([0.0]), np.array([1.0]))
        object.__setattr__(irf, "bin_width_ps", float(bin_width_ps))
        return irf

    @classmethod
    def gaussian(cls, fwhm_ps: float, bin_width_ps: float, n_sigma: float = 5.0) -> "IRFHistogram":
        """Bin-integrated Gaussian response of the given FWHM."""
        if fwhm_ps <= 0:
            return cls.delta(bin_width_ps)
        sigma = fwhm_ps / FWHM_TO_SIGMA
        m = max(1, int(math.ceil(n_sigma * sigma / bin_width_ps)))
        offsets = bin_width_ps * np.arange(-m, m + 1, dtype=float)
        edges = np.concatenate([offsets - bin_width_ps / 2.0, [offsets[-1] + bin_width_ps / 2.0]])
        w = np.diff(ndtr(edges / sigma))
        return cls(offsets, w)


def convolve_with_irf(y: np.ndarray, irf: IRFHistogram) -> np.ndarray:
    """Convolve a histogram with the response, boundary-corrected.

    The output is divided by the kernel mass that actually overlaps the
    grid at each position, so a flat input stays flat near the edges.
    """
    y = np.asarray(y, dtype=float)
    k = irf.weights
    j0 = irf.center_index
    out = np.convolve(y, k, mode="full")[j0: j0 + y.size]
    mass = np.convolve(np.ones_like(y), k, mode="full")[j0: j0 + y.size]
    return out / mass


class ConvolvedModel(Model):
    """A model observed through an instrument response.

    The wrapped model's background is subtracted, the remainder convolved
    with the IRF, and the background added back. The inner model is
    evaluated on a grid extended by the IRF support on both sides, so
    bins near the histogram edges are smeared with real model values
    rather than zeros (an exponential tail clipped at the last bin would
    otherwise be underpredicted by up to half the IRF mass). Requires the
    evaluation grid spacing to match the IRF binning.
    """

    def __init__(self, inner: Model, irf: IRFHistogram, background_param: str = "background"):
        self.inner = inner
        self.irf = irf
        self.name = f"{inner.name}*irf"
        self.param_names = inner.param_names
        self.positive = inner.positive
        self._bg = inner._index(background_param)

    def _check_grid(self, x):
        if x.size > 1:
            dx = np.diff(x)
            if not np.allclose(dx, self.irf.bin_width_ps, rtol=1e-6, atol=1e-9):
                raise ValueError("grid spacing must equal the IRF bin width")

    def _extend(self, x):
        j0 = self.irf.center_index
        n_right = self.irf.weights.size - 1 - j0
        w = self.irf.bin_width_ps
        left = x[0] - w * np.arange(n_right, 0, -1)
        right = x[-1] + w * np.arange(1, j0 + 1)
        return np.concatenate([left, x, right])

    def _conv(self, arr_ext):
        return np.convolve(arr_ext, self.irf.weights, mode="valid")

    def __call__(self, x, params):
        self._check_grid(x)
        c = params[self._bg]
        return self._conv(self.inner(self._extend(x), params) - c) + c

    def jacobian(self, x, params):
        self._check_grid(x)
        x_ext = self._extend(x)
        jac = self.inner.jacobian(x_ext, params)
        out = np.empty((x.size, jac.shape[1]), dtype=jac.dtype)
        for j in range(jac.shape[1]):
            if j == self._bg:
                # the flat offset bypasses the convolution
                out[:, j] = self._conv(jac[:, j] - 1.0) + 1.0
            else:
                out[:, j] = self._conv(jac[:, j])
        return out

    def initial_guess(self, x, y):
        return self.inner.initial_guess(x, y)

    def canonicalize(self, params):
        return self.inner.canonicalize(params)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt engine
# ---------------------------------------------------------------------------


def _to_internal(model: Model, p: np.ndarray) -> np.ndarray:
    u = p.astype(float).copy()
    for i, name in enumerate(model.param_names):
        if name in model.positive:
            if p[i] <= 0:
                raise ValueError(f"parameter {name} must be positive (got {p[i]})")
            u[i] = math.log(p[i])
    return u


def _from_internal(model: Model, u: np.ndarray) -> np.ndarray:
    p = u.copy()
    for i, name in enumerate(model.param_names):
        if name in model.positive:
            p[i] = math.exp(min(u[i], 700.0))
    return p


def _scale(model: Model, p: np.ndarray) -> np.ndarray:
    """dp/du for the chain rule: p for log-transformed parameters, else 1."""
    s = np.ones_like(p)
    for i, name in enumerate(model.param_names):
        if name in model.positive:
            s[i] = p[i]
    return s


def _invert_normal(a: np.ndarray, names: list[str]) -> np.ndarray:
    """Invert J^T W J, raising with the offending parameters when singular."""
    evals, evecs = np.linalg.eigh(a)
    if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
        null = np.abs(evecs[:, 0])
        bad = [n for n, v in zip(names, null) if v > 0.1 * null.max()]
        raise RankDeficiencyError(bad)
    return np.linalg.inv(a)


def fit(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    p0: np.ndarray | dict | None = None,
    weights: np.ndarray | None = None,
    fixed: dict | None = None,
    max_iterations: int = 500,
) -> FitResult:
    """Weighted Levenberg-Marquardt minimization of sum w (y - f)^2.

    ``weights`` are 1/sigma^2 and default to 1/max(y, 1) (Poisson counts).
    ``fixed`` pins parameters to given values (zero error, excluded from
    the covariance). Marquardt damping scales the normal-matrix diagonal,
    starting at 1e-3, /10 on accepted and *10 on rejected steps. The fit
    has converged after three consecutive proposals that change chi2 by
    < 1e-9 relative or move the internal parameters by < 1e-10 in norm.
    The parameter covariance is (J^T W J)^-1 at the solution; the reduced
    chi2 is reported separately, not folded in.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if weights is None:
        w = 1.0 / np.maximum(y, 1.0)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != y.shape or np.any(w < 0):
            raise ValueError("weights must be non-negative, one per point")
    if p0 is None:
        p = np.asarray(model.initial_guess(x, y), dtype=float)
    elif isinstance(p0, dict):
        p = np.array([p0[name] for name in model.param_names], dtype=float)
    else:
        p = np.asarray(p0, dtype=float).copy()
    if p.size != len(model.param_names):
        raise ValueError("initial guess has wrong length")
    fixed = dict(fixed or {})
    for name, value in fixed.items():
        p[model._index(name)] = value
    free = np.array([n not in fixed for n in model.param_names])
    free_names = [n for n in model.param_names if n not in fixed]
    if not free.any():
        raise ValueError("all parameters are fixed")
    ndof = int(np.count_nonzero(w > 0)) - int(free.sum())
    if ndof < 1:
        raise ValueError("fewer effective points than parameters")

    def chi2_of(pp):
        r = y - model(x, pp)
        return float(np.sum(w * r * r))

    def normal_system(pp):
        jac = (model.jacobian(x, pp) * _scale(model, pp)[None, :])[:, free]
        r = y - model(x, pp)
        a = jac.T @ (w[:, None] * jac)
        g = jac.T @ (w * r)
        return a, g

    u = _to_internal(model, p)
    chi2 = chi2_of(p)
    lam = 1e-3
    streak = 0
    converged = False
    n_iter = 0
    while n_iter < max_iterations and not converged:
        n_iter += 1
        a, g = normal_system(p)
        d = np.diag(a).copy()
        tiny = d <= 1e-300 * max(d.max(), 1.0)
        if tiny.any():
            raise RankDeficiencyError(
                [free_names[i] for i in np.flatnonzero(tiny)]
            )
        try:
            step = np.linalg.solve(a + lam * np.diag(d), g)
        except np.linalg.LinAlgError:
            raise RankDeficiencyError(free_names) from None
        # bound each internal coordinate to e^4 per iteration so wild
        # early steps cannot overflow the log-transformed parameters
        step = np.clip(step, -4.0, 4.0)
        u_new = u.copy()
        u_new[free] += step
        p_new = _from_internal(model, u_new)
        chi2_new = chi2_of(p_new)
        # a proposal that can no longer change anything counts toward
        # convergence whether or not it is an improvement
        small = abs(chi2 - chi2_new) <= 1e-9 * max(chi2, 1e-300) or (
            float(np.linalg.norm(step)) < 1e-10
        )
        streak = streak + 1 if (small and np.isfinite(chi2_new)) else 0
        if np.isfinite(chi2_new) and chi2_new <= chi2:
            u, p, chi2 = u_new, p_new, chi2_new
            lam = max(lam / 10.0, 1e-12)
        else:
            lam *= 10.0
            if lam > 1e15:
                break
        if streak >= 3:
            converged = True

    p = model.canonicalize(p)
    a, _ = normal_system(p)
    cov_free = _invert_normal(a, free_names)
    n = len(model.param_names)
    cov = np.zeros((n, n))
    idx = np.flatnonzero(free)
    cov[np.ix_(idx, idx)] = cov_free
    s = _scale(model, p)
    cov *= np.outer(s, s)
    var = np.diag(cov)
    err = np.sqrt(np.where(var >= 0, var, np.nan))
    return FitResult(
        model_name=model.name,
        param_names=tuple(model.param_names),
        params={n_: float(v) for n_, v in zip(model.param_names, p)},
        errors={n_: float(e) for n_, e in zip(model.param_names, err)},
        covariance=cov,
        chi2=chi2_of(p),
        ndof=ndof,
        n_iterations=n_iter,
        converged=converged,
    )


def jacobian_check(
    model: Model,
    x: np.ndarray,
    params: np.ndarray,
    rel_step: float = 1e-6,
) -> float:
    """Worst relative deviation of the analytic Jacobian from central differences.

    Each column is compared against a two-sided difference with step
    rel_step*(1+|p|) and normalized by the column's maximum magnitude
    (or 1 if smaller). Keep kink points (e.g. exact peak centers of
    two-sided exponentials) out of ``x``; the derivative is one-sided
    there.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(params, dtype=float)
    ja = model.jacobian(x, p)
    worst = 0.0
    for j in range(p.size):
        h = rel_step * (1.0 + abs(p[j]))
        pp = p.copy()
        pp[j] += h
        f_hi = model(x, pp)
        pp[j] -= 2.0 * h
        f_lo = model(x, pp)
        fd = (f_hi - f_lo) / (2.0 * h)
        scale = max(1.0, float(np.max(np.abs(ja[:, j]))))
        worst = max(worst, float(np.max(np.abs(ja[:, j] - fd))) / scale)
    return worst
