"""Coincidence histogramming for sorted time-tag streams.

Two estimators:

* :func:`cross_correlate` -- every pair (a, b) with delay t_b - t_a inside
  the window, the standard symmetric correlogram.
* :func:`start_stop` -- classic TAC behaviour, each stop paired with the
  most recent start only.

Plus :func:`integrate_peaks` to sum pulsed-correlogram peaks over fixed
windows, and :func:`write_histogram_csv` for the plotting-friendly dump.

Histogram counts are exact (uint64, no weighting); the hot loop is a
compiled two-pointer sweep over the sorted arrays. Threaded runs split
the reference channel into contiguous slices and sum the partial
histograms, which is bit-identical to a single-threaded run.

Binning convention: delay d lands in bin floor((d - min_delay)/width);
bin k covers the half-open interval [min + k*w, min + (k+1)*w). A
symmetric window of +-max_delay therefore includes delay -max_delay and
excludes +max_delay.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from numba import njit

from .montecarlo import TimeTagStream

__all__ = [
    "CorrelationHistogram",
    "PeakIntegral",
    "cross_correlate",
    "start_stop",
    "integrate_peaks",
    "write_histogram_csv",
]


@dataclass(frozen=True)
class CorrelationHistogram:
    """Delay histogram with uniform integer binning.

    ``counts[k]`` is the exact number of tag pairs with delay in
    [min_delay + k*w, min_delay + (k+1)*w). ``n_ref_events`` is the number
    of reference (channel a / start) tags, for rate normalisation.
    """

    bin_width_ps: int
    min_delay_ps: int
    max_delay_ps: int
    counts: np.ndarray
    channel_a: int
    channel_b: int
    n_ref_events: int
    acquisition_duration_ps: int
    mode: str = "cross"

    def __post_init__(self):
        span = self.max_delay_ps - self.min_delay_ps
        if self.bin_width_ps < 1:
            raise ValueError("bin width must be >= 1 ps")
        if span <= 0 or span % self.bin_width_ps:
            raise ValueError("delay span must be a positive multiple of the bin width")
        if self.counts.size != span // self.bin_width_ps:
            raise ValueError("counts length does not match the binning")

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def bin_edges_ps(self) -> np.ndarray:
        return self.min_delay_ps + self.bin_width_ps * np.arange(self.n_bins + 1, dtype=np.int64)

    @property
    def bin_centers_ps(self) -> np.ndarray:
        return self.min_delay_ps + self.bin_width_ps * (np.arange(self.n_bins, dtype=np.float64) + 0.5)


@dataclass(frozen=True)
class PeakIntegral:
    """Integrated counts of one correlogram peak.

    ``area_error`` is the Poisson standard error sqrt(area).
    """

    order: int
    center_ps: float
    window_ps: float
    area: float
    area_error: float
    n_bins: int


@njit(cache=True, nogil=True)
def _sweep(ta, tb, min_d, max_d, width, counts):
    """Two-pointer pair sweep; ta/tb sorted int64, delays in [min_d, max_d)."""
    j_lo = 0
    j_hi = 0
    nb = tb.size
    for i in range(ta.size):
        lo_t = ta[i] + min_d
        hi_t = ta[i] + max_d
        while j_lo < nb and tb[j_lo] < lo_t:
            j_lo += 1
        if j_hi < j_lo:
            j_hi = j_lo
        while j_hi < nb and tb[j_hi] < hi_t:
            j_hi += 1
        for j in range(j_lo, j_hi):
            counts[(tb[j] - ta[i] - min_d) // width] += 1


@njit(cache=True, nogil=True)
def _most_recent_start(starts, stops, range_ps, width, counts):
    """Delay from each stop to the latest start at or before it, in [0, range)."""
    i = -1
    n = starts.size
    for j in range(stops.size):
        t = stops[j]
        while i + 1 < n and starts[i + 1] <= t:
            i += 1
        if i >= 0:
            d = t - starts[i]
            if d < range_ps:
                counts[d // width] += 1


def _check_binning(bin_width_ps: int, span_ps: int, what: str) -> int:
    if bin_width_ps < 1:
        raise ValueError("bin width must be >= 1 ps")
    if span_ps < bin_width_ps:
        raise ValueError(f"{what} must be at least one bin wide")
    n, rem = divmod(span_ps, bin_width_ps)
    if rem:
        raise ValueError(f"{what} ({span_ps} ps) is not a multiple of the bin width ({bin_width_ps} ps)")
    return int(n)


def cross_correlate(
    stream: TimeTagStream,
    channel_a: int,
    channel_b: int,
    bin_width_ps: int,
    max_delay_ps: int,
    threads: int = 1,
) -> CorrelationHistogram:
    """Histogram of all delays t_b - t_a in [-max_delay, +max_delay).

    2*max_delay must divide into whole bins. Every pair inside the window
    is counted exactly once, so the zero-delay bin of an autocorrelation
    (channel_a == channel_b) includes each tag paired with itself.
    """
    n_bins = _check_binning(bin_width_ps, 2 * max_delay_ps, "correlation window")
    ta = stream.channel_times(channel_a).astype(np.int64)
    tb = stream.channel_times(channel_b).astype(np.int64)

    n_slices = max(1, min(int(threads), ta.size or 1))
    bounds = np.linspace(0, ta.size, n_slices + 1).astype(np.int64)
    parts = [
        (ta[bounds[s]: bounds[s + 1]], np.zeros(n_bins, dtype=np.uint64))
        for s in range(n_slices)
    ]

    def work(args):
        seg, part = args
        _sweep(seg, tb, -max_delay_ps, max_delay_ps, bin_width_ps, part)

    if n_slices == 1:
        work(parts[0])
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_slices) as pool:
            list(pool.map(work, parts))
    counts = np.zeros(n_bins, dtype=np.uint64)
    for _, part in parts:
        counts += part
    return CorrelationHistogram(
        bin_width_ps=int(bin_width_ps),
        min_delay_ps=-int(max_delay_ps),
        max_delay_ps=int(max_delay_ps),
        counts=counts,
        channel_a=channel_a,
        channel_b=channel_b,
        n_ref_events=int(ta.size),
        acquisition_duration_ps=stream.duration_ps,
        mode="cross",
    )


def start_stop(
    stream: TimeTagStream,
    start_channel: int,
    stop_channel: int,
    bin_width_ps: int,
    range_ps: int,
    threads: int = 1,
) -> CorrelationHistogram:
    """TAC-style histogram: each stop tag against the most recent start tag.

    Delays fall in [0, range_ps); stops preceding every start, or further
    than range from their start, are discarded. This is the natural
    estimator for pulsed-decay acquisitions (start = sync).
    """
    n_bins = _check_binning(bin_width_ps, range_ps, "histogram range")
    starts = stream.channel_times(start_channel).astype(np.int64)
    stops = stream.channel_times(stop_channel).astype(np.int64)
    if starts.size == 0:
        raise ValueError(f"start channel {start_channel} has no tags")
    counts = np.zeros(n_bins, dtype=np.uint64)
    # each stop depends only on the nearest preceding start: one serial
    # sweep is already O(n) and thread order could not change the result
    _most_recent_start(starts, stops, range_ps, bin_width_ps, counts)
    return CorrelationHistogram(
        bin_width_ps=int(bin_width_ps),
        min_delay_ps=0,
        max_delay_ps=int(range_ps),
        counts=counts,
        channel_a=start_channel,
        channel_b=stop_channel,
        n_ref_events=int(starts.size),
        acquisition_duration_ps=stream.duration_ps,
        mode="start_stop",
    )


def integrate_peaks(
    hist: CorrelationHistogram,
    period_ps: float,
    window_ps: float,
    center_offset_ps: float = 0.0,
    n_side_peaks: int | None = None,
) -> list[PeakIntegral]:
    """Sum counts around each pulsed-correlogram peak inside the histogram.

    Peak m (center m*period + offset) is integrated over bins whose
    centers lie in [center - window/2, center + window/2). Every peak
    whose window overlaps the histogram is returned (clipped at the
    edges), so with window == period the peak areas partition the total
    counts exactly. ``n_side_peaks`` limits the orders to |m| <= n when
    given.
    """
    if window_ps <= 0:
        raise ValueError("window must be positive")
    if window_ps > period_ps:
        raise ValueError("window wider than the pulse period overlaps neighbouring peaks")
    span_lo = hist.min_delay_ps
    span_hi = hist.max_delay_ps
    half = window_ps / 2.0
    m_lo = math.ceil((span_lo - center_offset_ps - half) / period_ps)
    m_hi = math.floor((span_hi - center_offset_ps + half) / period_ps)
    if n_side_peaks is not None:
        if n_side_peaks < 0:
            raise ValueError("n_side_peaks must be >= 0")
        m_lo = max(m_lo, -n_side_peaks)
        m_hi = min(m_hi, n_side_peaks)
    centers = hist.bin_centers_ps
    used = np.zeros(centers.size, dtype=bool)
    out = []
    for m in range(m_lo, m_hi + 1):
        c = m * period_ps + center_offset_ps
        sel = (centers >= c - half) & (centers < c + half)
        if not sel.any():
            if span_lo <= c - half and c + half <= span_hi:
                raise ValueError(f"peak {m} window narrower than one bin")
            continue  # window pokes past the edge without reaching a bin
        if (used & sel).any():
            raise ValueError("peak windows overlap")
        used |= sel
        area = float(hist.counts[sel].sum())
        out.append(
            PeakIntegral(
                order=m,
                center_ps=float(c),
                window_ps=float(window_ps),
                area=area,
                area_error=math.sqrt(area),
                n_bins=int(sel.sum()),
            )
        )
    if not out:
        raise ValueError("no peak windows overlap the histogram")
    return out


def write_histogram_csv(hist: CorrelationHistogram, path: str | os.PathLike) -> None:
    """Write "bin_center_ps,counts" rows with LF endings."""
    lines = ["bin_center_ps,counts"]
    for c, n in zip(hist.bin_centers_ps, hist.counts):
        lines.append(f"{c:.1f},{int(n)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
