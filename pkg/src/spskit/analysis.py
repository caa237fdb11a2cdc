"""Measurement pipelines built on the correlator and the fitting engine.

Each operation turns raw tag streams (or tabulated calibration data) into
the derived quantities of interest: g2(0) from an HBT correlogram,
two-photon interference visibility versus post-selection window, fitted
lifetime and its dependence on cavity detuning, degree of linear
polarization, emission linewidth, and the first-lens brightness budget.

All estimators are deterministic compositions of pure functions; the
only statefulness is the warnings they emit for ill-conditioned inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .correlator import (
    CorrelationHistogram,
    cross_correlate,
    integrate_peaks,
    start_stop,
)
from .fitkit import (
    ConvolvedModel,
    ExponentialDecay,
    ExponentialTrain,
    FitResult,
    IRFHistogram,
    Lorentzian,
    MalusCurve,
    Model,
    RankDeficiencyError,
    fit,
)
from .montecarlo import TimeTagStream
from .optics import kappa_mev as _cavity_kappa_mev

#: Linewidth of the baseline cavity (1.5707 eV mode, Q = 600), used as the
#: default width of the detuning response.
DEFAULT_KAPPA_MEV = _cavity_kappa_mev(1.5707, 600.0)

__all__ = [
    "EstimationError",
    "IllConditionedWarning",
    "HBTResult",
    "hbt_g2",
    "HOMWindow",
    "HOMResult",
    "hom_visibility",
    "DephasingEstimate",
    "dephasing_estimate",
    "LifetimeResult",
    "lifetime_fit",
    "DetunedDecayModel",
    "DetuningFit",
    "lifetime_vs_detuning",
    "DopResult",
    "dop_fit",
    "BudgetEntry",
    "BudgetTable",
    "BudgetResult",
    "brightness_budget",
    "deadtime_correct",
    "LinewidthResult",
    "linewidth",
]


class EstimationError(RuntimeError):
    """An estimator could not produce a trustworthy value.

    When a least-squares fit is the culprit the partial :class:`FitResult`
    is attached as ``.fit`` for diagnostics.
    """

    def __init__(self, message: str, fit_result: FitResult | None = None):
        super().__init__(message)
        self.fit = fit_result


class IllConditionedWarning(UserWarning):
    """Input data sample the model in a way that weakly constrains it."""


def _converged_fit(model, x, y, **kw) -> FitResult:
    result = fit(model, x, y, **kw)
    if not result.converged:
        raise EstimationError(
            f"{model.name} fit did not converge "
            f"(chi2={result.chi2:.4g} after {result.n_iterations} iterations)",
            result,
        )
    return result


def _poisson_fit(model, x, y, max_iterations: int = 2000, **fit_kwargs) -> FitResult:
    """Histogram fit with model-based Poisson weights.

    A first pass uses the default 1/max(y, 1) weights; two further passes
    reweight each bin by 1/max(f, 1) from the previous prediction. Data-
    independent weights remove the low-count bias of weighting bins by
    their own fluctuating counts (which systematically underweights
    upward-fluctuating peak bins and lets the flat background term absorb
    the peak tails).

    The iteration cap is generous because correlogram trains carry a
    dozen strongly correlated height parameters and creep toward the
    minimum slowly at high counts.
    """
    result = _converged_fit(model, x, y, max_iterations=max_iterations, **fit_kwargs)
    for _ in range(2):
        predicted = model(x, np.array([result.params[n] for n in result.param_names]))
        weights = 1.0 / np.maximum(predicted, 1.0)
        result = _converged_fit(
            model,
            x,
            y,
            p0=dict(result.params),
            weights=weights,
            max_iterations=max_iterations,
            **fit_kwargs,
        )
    return result


# ---------------------------------------------------------------------------
# g2(0) from an HBT correlogram


@dataclass(frozen=True)
class HBTResult:
    """Zero-delay correlation from a pulsed HBT histogram."""

    g2_zero: float
    g2_error: float
    tau_fit_ns: float
    fit: FitResult
    histogram: CorrelationHistogram


def hbt_g2(
    stream: TimeTagStream,
    irf: IRFHistogram | None,
    period_ps: float,
    n_side_peaks: int = 6,
    *,
    bin_width_ps: int | None = None,
    channels: tuple[int, int] = (0, 1),
    threads: int = 1,
) -> HBTResult:
    """Estimate g2(0) as the fitted zero-delay peak height over the mean
    side-peak height.

    The two detector channels are cross-correlated over ``n_side_peaks``
    pulse periods on each side, the correlogram is fitted with a train of
    two-sided exponential peaks (convolved with ``irf`` when given) plus a
    constant, and the ratio h0 / mean(h_k, k != 0) is propagated to a
    standard error with the first-order delta method on the fit
    covariance. Fitting, rather than window counting, keeps the estimate
    unbiased when neighbouring peak tails overlap the zero-delay window.
    """
    if n_side_peaks < 4:
        raise ValueError("need at least 4 side peaks for a stable normalization")
    if irf is not None:
        if bin_width_ps is not None and int(bin_width_ps) != int(irf.bin_width_ps):
            raise ValueError("bin_width_ps must match the IRF bin width")
        bin_width_ps = int(irf.bin_width_ps)
    elif bin_width_ps is None:
        # coarse enough that side-peak bins hold several counts each, so
        # the floor-1 Poisson weights stay close to the true variances
        bin_width_ps = 100
    half_span = (n_side_peaks + 0.5) * period_ps
    max_delay = int(math.ceil(half_span / bin_width_ps)) * bin_width_ps
    hist = cross_correlate(
        stream, channels[0], channels[1], bin_width_ps, max_delay, threads=threads
    )

    train = ExponentialTrain(period_ps, n_side_peaks)
    model: Model = train if irf is None else ConvolvedModel(train, irf)
    result = _poisson_fit(model, hist.bin_centers_ps, hist.counts.astype(np.float64))

    names = list(result.param_names)
    h_names = [f"h_{k}" for k in range(-n_side_peaks, n_side_peaks + 1)]
    h = np.array([result.params[nm] for nm in h_names])
    center = n_side_peaks  # index of h_0 within h_names
    side_sum = h.sum() - h[center]
    m = 2 * n_side_peaks
    g2 = m * h[center] / side_sum

    grad = np.zeros(len(names))
    for j, nm in enumerate(h_names):
        if j == center:
            grad[names.index(nm)] = m / side_sum
        else:
            grad[names.index(nm)] = -m * h[center] / side_sum**2
    var = float(grad @ result.covariance @ grad)
    return HBTResult(
        g2_zero=float(g2),
        g2_error=math.sqrt(max(var, 0.0)),
        tau_fit_ns=result.params["tau"] / 1000.0,
        fit=result,
        histogram=hist,
    )


# ---------------------------------------------------------------------------
# HOM visibility versus post-selection window


@dataclass(frozen=True)
class HOMWindow:
    """Visibility extracted with one temporal post-selection window."""

    window_ns: float
    area_hh: float
    area_hv: float
    g2_hh: float
    g2_hv: float
    visibility: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class HOMResult:
    """Two-photon interference contrast for a set of windows."""

    windows: tuple[HOMWindow, ...]
    fit_hh: FitResult
    fit_hv: FitResult
    histogram_hh: CorrelationHistogram
    histogram_hv: CorrelationHistogram


def _peak_areas(hist, period_ps, window_ps, t0, n_side):
    peaks = integrate_peaks(
        hist, period_ps, window_ps, center_offset_ps=t0, n_side_peaks=n_side
    )
    central = next(p.area for p in peaks if p.order == 0)
    # the two nearest side peaks share the interferometer's pulse-pairing
    # correlations and sit below the uncorrelated level, so the
    # normalization uses |k| >= 2 only
    sides = np.array([p.area for p in peaks if abs(p.order) >= 2])
    return central, sides


def hom_visibility(
    stream_hh: TimeTagStream,
    stream_hv: TimeTagStream,
    period_ps: float,
    windows_ns,
    *,
    n_side_peaks: int = 6,
    bin_width_ps: int = 50,
    threads: int = 1,
) -> HOMResult:
    """Interference visibility V = (g2_hv - g2_hh)/g2_hv per window.

    Both streams are correlated and fitted with the exponential-train
    model; integration windows are centered on each stream's fitted peak
    positions so electronic offsets drop out. g2 for each stream is the
    central window area over the mean area of the side peaks, and the
    confidence interval is +-1 sigma from Poisson counting statistics of
    the window areas.

    The co-polarized correlogram carries an interference dip much
    narrower than a bin at the center of the zero-delay peak; the train
    model does not represent it, so ``fit_hh.reduced_chi2`` can sit well
    above one at high counts. Only the fitted peak position feeds the
    window integration, and the dip is symmetric about it.
    """
    windows_ns = [float(w) for w in windows_ns]
    if not windows_ns:
        raise ValueError("need at least one window")
    half_span = (n_side_peaks + 0.5) * period_ps
    max_delay = int(math.ceil(half_span / bin_width_ps)) * bin_width_ps

    hists, fits = [], []
    for stream in (stream_hh, stream_hv):
        hist = cross_correlate(stream, 0, 1, bin_width_ps, max_delay, threads=threads)
        result = _poisson_fit(
            ExponentialTrain(period_ps, n_side_peaks),
            hist.bin_centers_ps,
            hist.counts.astype(np.float64),
        )
        hists.append(hist)
        fits.append(result)
    (hist_hh, hist_hv), (fit_hh, fit_hv) = hists, fits

    out = []
    for w_ns in windows_ns:
        w_ps = 1000.0 * w_ns
        a_hh, s_hh = _peak_areas(hist_hh, period_ps, w_ps, fit_hh.params["t0"], n_side_peaks)
        a_hv, s_hv = _peak_areas(hist_hv, period_ps, w_ps, fit_hv.params["t0"], n_side_peaks)
        if a_hv == 0.0:
            raise EstimationError(
                f"window {w_ns} ns: zero cross-polarized central area, visibility undefined"
            )
        g2_hh = a_hh / s_hh.mean()
        g2_hv = a_hv / s_hv.mean()
        r = g2_hh / g2_hv
        v = 1.0 - r
        # Poisson relative variances of the four area sums; zero-count
        # areas contribute their one-count upper bound
        rel_var = (
            1.0 / max(a_hh, 1.0)
            + 1.0 / max(a_hv, 1.0)
            + 1.0 / s_hh.sum()
            + 1.0 / s_hv.sum()
        )
        sigma = (r if a_hh > 0 else 1.0 / max(a_hv, 1.0) * s_hv.mean() / s_hh.mean()) * math.sqrt(rel_var)
        out.append(
            HOMWindow(
                window_ns=w_ns,
                area_hh=a_hh,
                area_hv=a_hv,
                g2_hh=g2_hh,
                g2_hv=g2_hv,
                visibility=v,
                ci_low=v - sigma,
                ci_high=v + sigma,
            )
        )
    return HOMResult(
        windows=tuple(out),
        fit_hh=fit_hh,
        fit_hv=fit_hv,
        histogram_hh=hist_hh,
        histogram_hv=hist_hv,
    )


# ---------------------------------------------------------------------------
# Coherence-time estimate from a visibility


@dataclass(frozen=True)
class DephasingEstimate:
    """Coherence time inferred from an interference visibility."""

    t2_ps: float
    visibility: float
    timescale_ns: float
    mode: str


def dephasing_estimate(visibility: float, timescale_ns: float, mode: str) -> DephasingEstimate:
    """T2 = 2 * timescale * V.

    In ``lifetime`` mode the timescale is the emitter lifetime (the
    asymptotic identity V = T2/(2 T1)); in ``window`` mode it is the
    temporal post-selection window, which replaces the lifetime when the
    window is the shorter of the two. The formula is the same either way;
    the mode is recorded so downstream consumers know which timescale was
    supplied.
    """
    if mode not in ("lifetime", "window"):
        raise ValueError(f"mode must be 'lifetime' or 'window', got {mode!r}")
    if not 0.0 < visibility <= 1.0:
        raise ValueError(f"visibility must be in (0, 1], got {visibility}")
    if timescale_ns <= 0:
        raise ValueError("timescale must be positive")
    return DephasingEstimate(
        t2_ps=2.0 * timescale_ns * 1000.0 * visibility,
        visibility=float(visibility),
        timescale_ns=float(timescale_ns),
        mode=mode,
    )


# ---------------------------------------------------------------------------
# Lifetime from a pulsed-decay stream


@dataclass(frozen=True)
class LifetimeResult:
    """Fitted excited-state lifetime from a start-stop histogram."""

    tau_ns: float
    tau_error_ns: float
    fit: FitResult
    histogram: CorrelationHistogram


def lifetime_fit(
    stream: TimeTagStream,
    irf: IRFHistogram | None = None,
    *,
    bin_width_ps: int | None = None,
    range_ps: int | None = None,
    start_channel: int = 0,
    stop_channel: int = 1,
) -> LifetimeResult:
    """Fit an exponential decay to the sync->detector delay histogram.

    The model is integrated over each histogram bin (exact for binned
    data) and convolved with ``irf`` when given. The default range is one
    sync period, inferred from the median sync spacing; when an IRF is
    given the range is shortened by the IRF's negative-side support,
    because detector jitter folds the left wing of the next period's peak
    onto the end of the start-stop range (an explicit ``range_ps`` is
    used as-is, so pass one that stops short of that fold-over).

    Without an IRF the decay front is a hard step at zero delay, where
    the step position and the amplitude are degenerate (bins before the
    step are flat and carry no gradient). The fit therefore uses the pure
    tail from the first bin past the maximum, with the step pinned to
    that bin's left edge; ``histogram`` still holds the full range.
    """
    if irf is not None:
        if bin_width_ps is not None and int(bin_width_ps) != int(irf.bin_width_ps):
            raise ValueError("bin_width_ps must match the IRF bin width")
        bin_width_ps = int(irf.bin_width_ps)
    elif bin_width_ps is None:
        bin_width_ps = 10
    if range_ps is None:
        starts = stream.channel_times(start_channel)
        if starts.size < 2:
            raise ValueError("cannot infer the histogram range from fewer than 2 sync tags")
        period = float(np.median(np.diff(starts.astype(np.int64))))
        if irf is not None:
            period -= irf.center_index * irf.bin_width_ps
        range_ps = max(1, int(period / bin_width_ps)) * bin_width_ps
    hist = start_stop(stream, start_channel, stop_channel, bin_width_ps, range_ps)

    decay = ExponentialDecay(bin_width_ps=float(bin_width_ps))
    x = hist.bin_centers_ps
    y = hist.counts.astype(np.float64)
    if irf is None:
        first = int(np.argmax(y)) + 1
        if y.size - first < 8:
            raise EstimationError(
                f"only {y.size - first} bins past the histogram maximum; "
                "not enough for a tail fit"
            )
        x, y = x[first:], y[first:]
        result = _poisson_fit(decay, x, y, fixed={"t0": float(x[0] - bin_width_ps / 2.0)})
    else:
        result = _poisson_fit(ConvolvedModel(decay, irf), x, y)
    return LifetimeResult(
        tau_ns=result.params["tau"] / 1000.0,
        tau_error_ns=result.errors["tau"] / 1000.0,
        fit=result,
        histogram=hist,
    )


# ---------------------------------------------------------------------------
# Lifetime versus cavity detuning


@dataclass(frozen=True)
class DetunedDecayModel:
    """Lorentzian-filtered emission rate versus cavity-mode detuning.

    The decay rate interpolates between the resonant enhancement
    ``f_res`` and the off-resonant inhibition ``f_inh`` with a squared
    Lorentzian profile of FWHM ``kappa_mev``:

        rate(delta) = gamma_free * (f_inh + (f_res - f_inh) * k^2/(k^2 + 4 delta^2))
    """

    gamma_free_per_ns: float
    f_res: float
    f_inh: float
    kappa_mev: float = DEFAULT_KAPPA_MEV

    def __post_init__(self):
        if self.gamma_free_per_ns <= 0 or self.kappa_mev <= 0:
            raise ValueError("gamma_free and kappa must be positive")
        if self.f_res <= 0 or self.f_inh <= 0:
            raise ValueError("enhancement factors must be positive")

    def enhancement(self, detuning_mev):
        d = np.asarray(detuning_mev, dtype=np.float64)
        k2 = self.kappa_mev**2
        return self.f_inh + (self.f_res - self.f_inh) * k2 / (k2 + 4.0 * d * d)

    def rate_per_ns(self, detuning_mev):
        return self.gamma_free_per_ns * self.enhancement(detuning_mev)

    def tau_ns(self, detuning_mev):
        return 1.0 / self.rate_per_ns(detuning_mev)

    @property
    def rate_ratio(self) -> float:
        """Resonant over far-detuned decay rate."""
        return self.f_res / self.f_inh


class _DetuningCurve(Model):
    """fitkit model: lifetime tau(delta) with gamma_free held fixed."""

    name = "detuned_lifetime"
    param_names = ("f_res", "f_inh", "kappa_mev")
    positive = frozenset(param_names)

    def __init__(self, gamma_free_per_ns: float):
        self.gamma_free = float(gamma_free_per_ns)

    def __call__(self, x, params):
        fr, fi, k = params
        q = k * k / (k * k + 4.0 * x * x)
        return 1.0 / (self.gamma_free * (fi + (fr - fi) * q))

    def jacobian(self, x, params):
        fr, fi, k = params
        den = k * k + 4.0 * x * x
        q = k * k / den
        rate = self.gamma_free * (fi + (fr - fi) * q)
        pref = -self.gamma_free / rate**2
        dq_dk = 8.0 * k * x * x / den**2
        out = np.empty((x.size, 3))
        out[:, 0] = pref * q
        out[:, 1] = pref * (1.0 - q)
        out[:, 2] = pref * (fr - fi) * dq_dk
        return out

    def initial_guess(self, x, y):
        a = np.abs(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        near = float(y[np.argmin(a)])
        far = float(y[np.argmax(a)])
        fr0 = max(1.0 / (self.gamma_free * near), 1e-6)
        fi0 = max(1.0 / (self.gamma_free * max(far, 1e-12)), 1e-6)
        # half-width guess: smallest |delta| where the lifetime has risen
        # past the midpoint between its near- and far-detuned values
        mid = 0.5 * (near + far)
        order = np.argsort(a)
        above = a[order][y[order] > mid]
        if above.size and above[0] > 0:
            k0 = 2.0 * float(above[0])
        else:
            pos = a[a > 0]
            k0 = float(np.median(pos)) if pos.size else 1.0
        return np.array([fr0, fi0, k0])


@dataclass(frozen=True)
class DetuningFit:
    """Result of fitting lifetimes versus detuning."""

    model: DetunedDecayModel
    errors: dict
    fit: FitResult
    kappa_unidentifiable: bool = False

    @property
    def rate_ratio(self) -> float:
        return self.model.rate_ratio

    @property
    def rate_ratio_error(self) -> float:
        fr, fi = self.model.f_res, self.model.f_inh
        names = list(self.fit.param_names)
        i, j = names.index("f_res"), names.index("f_inh")
        c = self.fit.covariance
        var = (
            c[i, i] / fi**2
            + c[j, j] * fr**2 / fi**4
            - 2.0 * c[i, j] * fr / fi**3
        )
        return math.sqrt(max(var, 0.0))


def lifetime_vs_detuning(series, gamma_free_per_ns: float) -> DetuningFit:
    """Fit the detuning-dependent lifetime curve to measured lifetimes.

    ``series`` holds rows of (detuning_mev, lifetime_ns, lifetime_error_ns);
    the free-space decay rate is supplied, not fitted. Sampling only one
    side of the resonance triggers an :class:`IllConditionedWarning`; a
    flat series (no detuning contrast) leaves the linewidth kappa
    unidentifiable, which is flagged on the result after refitting with
    kappa pinned.
    """
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("series must be rows of (detuning_mev, lifetime_ns, lifetime_error_ns)")
    if arr.shape[0] < 4:
        raise ValueError("need at least 4 detuning points")
    if np.any(arr[:, 1] <= 0):
        raise ValueError("lifetimes must be positive")
    delta, tau, sigma = arr[:, 0], arr[:, 1], arr[:, 2]
    if np.all(delta >= 0) or np.all(delta <= 0):
        warnings.warn(
            "all detunings lie on one side of the resonance; "
            "the fitted linewidth is weakly constrained",
            IllConditionedWarning,
            stacklevel=2,
        )
    weights = np.where(sigma > 0, 1.0 / np.maximum(sigma, 1e-300) ** 2, 1.0)

    curve = _DetuningCurve(gamma_free_per_ns)
    flagged = False
    try:
        result = fit(curve, delta, tau, weights=weights)
    except RankDeficiencyError as exc:
        if "kappa_mev" not in exc.parameters:
            raise
        flagged = True
        k0 = float(curve.initial_guess(delta, tau)[2])
        result = fit(curve, delta, tau, weights=weights, fixed={"kappa_mev": k0})
    if not result.converged:
        raise EstimationError("detuning-curve fit did not converge", result)

    model = DetunedDecayModel(
        gamma_free_per_ns=gamma_free_per_ns,
        f_res=result.params["f_res"],
        f_inh=result.params["f_inh"],
        kappa_mev=result.params["kappa_mev"],
    )
    return DetuningFit(
        model=model,
        errors=dict(result.errors),
        fit=result,
        kappa_unidentifiable=flagged,
    )


# ---------------------------------------------------------------------------
# Degree of linear polarization


@dataclass(frozen=True)
class DopResult:
    """Degree of linear polarization from an analyzer-angle sweep."""

    rho: float
    rho_error: float
    theta0_deg: float
    theta0_error: float
    theta0_undefined: bool
    fit: FitResult


def dop_fit(angles_deg, intensities, intensity_errors=None) -> DopResult:
    """Fit a Malus curve and report (I_max - I_min)/(I_max + I_min).

    A constant background is indistinguishable from unpolarized signal in
    this model, so the background term is pinned at zero and the fitted
    contrast rho is itself the degree of polarization. Unpolarized data
    leave the axis angle undefined; that case is flagged rather than
    raised, with rho fitted at fixed angle.
    """
    theta = np.asarray(angles_deg, dtype=np.float64)
    y = np.asarray(intensities, dtype=np.float64)
    if theta.size < 8:
        raise ValueError("need at least 8 analyzer angles")
    if theta.max() - theta.min() < 180.0:
        raise ValueError("analyzer angles must span at least 180 degrees")
    weights = None
    if intensity_errors is not None:
        se = np.asarray(intensity_errors, dtype=np.float64)
        weights = 1.0 / np.maximum(se, 1e-300) ** 2

    model = MalusCurve()
    undef = False
    try:
        result = fit(model, theta, y, weights=weights, fixed={"background": 0.0})
    except RankDeficiencyError as exc:
        if "theta0" not in exc.parameters and "rho" not in exc.parameters:
            raise
        undef = True
        result = fit(
            model, theta, y, weights=weights, fixed={"background": 0.0, "theta0": 0.0}
        )
    if not result.converged:
        raise EstimationError("polarization fit did not converge", result)
    return DopResult(
        rho=result.params["rho"],
        rho_error=result.errors["rho"],
        theta0_deg=result.params["theta0"],
        theta0_error=result.errors["theta0"],
        theta0_undefined=undef,
        fit=result,
    )


# ---------------------------------------------------------------------------
# First-lens brightness budget


@dataclass(frozen=True)
class BudgetEntry:
    """One multiplicative efficiency with its absolute 1-sigma error."""

    label: str
    efficiency: float
    abs_error: float

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError(f"{self.label}: efficiency must be in (0, 1]")
        if self.abs_error < 0:
            raise ValueError(f"{self.label}: error must be >= 0")


@dataclass(frozen=True)
class BudgetTable:
    """Efficiency chain plus the measured and repetition rates (kHz)."""

    entries: tuple[BudgetEntry, ...]
    measured_rate_khz: float
    measured_rate_error_khz: float
    rep_rate_khz: float
    rep_rate_error_khz: float

    def __post_init__(self):
        if not self.entries:
            raise ValueError("budget needs at least one entry")
        if self.measured_rate_khz <= 0 or self.rep_rate_khz <= 0:
            raise ValueError("rates must be positive")
        if self.measured_rate_error_khz < 0 or self.rep_rate_error_khz < 0:
            raise ValueError("rate errors must be >= 0")

    @classmethod
    def from_mapping(cls, section: dict) -> "BudgetTable":
        """Build from flat ``entry.N.label / value_pct / error_pct`` keys
        plus the four rate keys (``measured_rate_khz`` etc.)."""
        indices = sorted(
            {
                int(k.split(".")[1])
                for k in section
                if k.startswith("entry.") and k.count(".") == 2
            }
        )
        entries = []
        for n in indices:
            try:
                label = str(section[f"entry.{n}.label"])
                value = float(section[f"entry.{n}.value_pct"])
                error = float(section[f"entry.{n}.error_pct"])
            except KeyError as exc:
                raise ValueError(f"budget entry {n} is missing key {exc}") from None
            entries.append(BudgetEntry(label, value / 100.0, error / 100.0))
        try:
            return cls(
                entries=tuple(entries),
                measured_rate_khz=float(section["measured_rate_khz"]),
                measured_rate_error_khz=float(section.get("measured_rate_error_khz", 0.0)),
                rep_rate_khz=float(section["rep_rate_khz"]),
                rep_rate_error_khz=float(section.get("rep_rate_error_khz", 0.0)),
            )
        except KeyError as exc:
            raise ValueError(f"budget section is missing key {exc}") from None


@dataclass(frozen=True)
class BudgetResult:
    """Total set-up efficiency and inferred first-lens brightness."""

    total_efficiency: float
    total_error: float
    rate_per_pulse: float
    brightness: float
    brightness_error: float


def brightness_budget(budget: BudgetTable) -> BudgetResult:
    """Multiply the chain, combine relative errors in quadrature, and
    divide the per-pulse click rate by the total to get the first-lens
    brightness."""
    # accumulate in sorted order so the result is bit-identical under
    # any permutation of the entries
    order = sorted(range(len(budget.entries)), key=lambda i: (budget.entries[i].efficiency, budget.entries[i].abs_error))
    effs = np.array([budget.entries[i].efficiency for i in order])
    rels = np.array([budget.entries[i].abs_error / budget.entries[i].efficiency for i in order])
    total = float(np.prod(effs))
    total_rel = math.sqrt(float(np.sum(rels**2)))
    rate_per_pulse = budget.measured_rate_khz / budget.rep_rate_khz
    brightness = rate_per_pulse / total
    b_rel = math.sqrt(
        (budget.measured_rate_error_khz / budget.measured_rate_khz) ** 2
        + (budget.rep_rate_error_khz / budget.rep_rate_khz) ** 2
        + total_rel**2
    )
    return BudgetResult(
        total_efficiency=total,
        total_error=total * total_rel,
        rate_per_pulse=rate_per_pulse,
        brightness=brightness,
        brightness_error=brightness * b_rel,
    )


def deadtime_correct(measured_rate_khz: float, dead_time_ns: float) -> float:
    """Invert non-paralyzable detector dead time: R_true = R/(1 - R*t_d)."""
    if measured_rate_khz < 0 or dead_time_ns < 0:
        raise ValueError("rate and dead time must be >= 0")
    loss = measured_rate_khz * dead_time_ns * 1e-6
    if loss >= 1.0:
        raise ValueError(
            f"measured rate saturates the dead time (R*t_d = {loss:.3f} >= 1)"
        )
    return measured_rate_khz / (1.0 - loss)


# ---------------------------------------------------------------------------
# Emission linewidth


@dataclass(frozen=True)
class LinewidthResult:
    """Lorentzian FWHM of a spectral line, in micro-eV."""

    fwhm_uev: float
    fwhm_error_uev: float
    center_ev: float
    resolution_limited: bool
    fit: FitResult


def linewidth(spectrum) -> LinewidthResult:
    """Fit a Lorentzian to an (energy_eV, counts) spectrum.

    The fit runs on energies converted to micro-eV relative to the
    brightest bin for conditioning. When the fitted FWHM is below two
    energy-axis bins the value is resolution limited and flagged as such.
    """
    arr = np.asarray(spectrum, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 5:
        raise ValueError("spectrum must be rows of (energy_ev, counts), at least 5 points")
    energy_ev = arr[:, 0]
    y = arr[:, 1]
    if np.ptp(y) == 0.0:
        raise EstimationError("flat spectrum: no line to fit")
    pivot = energy_ev[int(np.argmax(y))]
    x_uev = (energy_ev - pivot) * 1e6
    bin_uev = float(np.median(np.abs(np.diff(x_uev))))

    try:
        result = _poisson_fit(Lorentzian(), x_uev, y)
    except RankDeficiencyError as exc:
        raise EstimationError(f"spectrum does not constrain a line shape: {exc}") from None
    fwhm = result.params["fwhm"]
    return LinewidthResult(
        fwhm_uev=fwhm,
        fwhm_error_uev=result.errors["fwhm"],
        center_ev=pivot + result.params["center"] * 1e-6,
        resolution_limited=bool(fwhm < 2.0 * bin_uev),
        fit=result,
    )
