"""Time-tag Monte Carlo for a pulsed two-level emitter behind an instrument chain.

Three experiment simulators share one photon-generation core:

* :func:`simulate_decay` -- pulsed excitation, sync + detector channels.
* :func:`simulate_hbt`   -- 50:50 intensity splitter onto two detectors.
* :func:`simulate_hom`   -- unbalanced Mach-Zehnder two-photon interference.

Determinism contract: identical inputs and seed produce bit-identical
streams regardless of chunking or thread count. Every pulse consumes a
fixed budget of uniform variates, laid out as one row of a counter-based
Philox matrix; any worker can regenerate any pulse range independently.
Normals are produced by inverse CDF from budgeted uniforms (never by
rejection-style samplers, whose draw count varies).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
from numba import njit
from numpy.random import Generator, Philox
from scipy.optimize import brentq
from scipy.special import ndtri

from .fitkit import FWHM_TO_SIGMA

__all__ = [
    "TimeTag",
    "TimeTagStream",
    "EmitterModel",
    "InstrumentChain",
    "PulseTrain",
    "MZIConfig",
    "PileUpWarning",
    "simulate_decay",
    "simulate_hbt",
    "simulate_hom",
    "simulate_poisson_source",
    "simulate_polarization_sweep",
    "apply_instrument",
    "multi_photon_probability",
    "g2_from_multi_probability",
]

# Philox key tags: second 64-bit key word, so each purpose gets an
# independent counter-based stream for the same user seed.
_TAG_DECAY = 1
_TAG_HBT = 2
_TAG_HOM = 3
_TAG_DARKS = 5
_TAG_INSTRUMENT = 6
_TAG_SURROGATE = 7
_TAG_DOP = 8

_CHUNK = 1 << 19  # pulses per block; fixed so results never depend on threading


class PileUpWarning(UserWarning):
    """Emission tail of one pulse leaks significantly into the next."""


class TimeTag(NamedTuple):
    channel: int
    time_ps: int


@dataclass(frozen=True)
class TimeTagStream:
    """Sorted time-tag record set with acquisition metadata.

    Tags are stored as parallel arrays (uint8 channel, uint64 picoseconds),
    sorted by (time, channel). ``duration_ps`` is the acquisition span;
    every tag time is < duration.
    """

    resolution_ps: int
    duration_ps: int
    channel_count: int
    channels: np.ndarray
    times: np.ndarray

    def __post_init__(self) -> None:
        ch = np.ascontiguousarray(np.asarray(self.channels, dtype=np.uint8))
        t = np.ascontiguousarray(np.asarray(self.times, dtype=np.uint64))
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "times", t)
        if self.resolution_ps < 1:
            raise ValueError("resolution_ps must be >= 1")
        if not 1 <= self.channel_count <= 255:
            raise ValueError("channel_count must be in 1..255")
        if ch.shape != t.shape or ch.ndim != 1:
            raise ValueError("channels/times must be 1-D arrays of equal length")
        if t.size:
            if ch.max() >= self.channel_count:
                raise ValueError("channel id out of range")
            dt = np.diff(t.astype(np.int64))
            if np.any(dt < 0):
                raise ValueError("tags must be sorted by time")
            ties = dt == 0
            if np.any(ties & (np.diff(ch.astype(np.int16)) < 0)):
                raise ValueError("equal-time tags must be sorted by channel")
            if int(t[-1]) >= self.duration_ps:
                raise ValueError("tag time beyond stream duration")

    @property
    def n_tags(self) -> int:
        return int(self.times.size)

    def channel_times(self, channel: int) -> np.ndarray:
        """Times (uint64 ps) on one channel, sorted."""
        return self.times[self.channels == channel]

    def __iter__(self) -> Iterator[TimeTag]:
        for c, t in zip(self.channels, self.times):
            yield TimeTag(int(c), int(t))


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmitterModel:
    """Two-level pulsed emitter.

    t2_ps is the coherence time (only needed for interference runs),
    bounded by 0 < T2 <= 2*T1. p_multi is the probability that an excited
    pulse yields one additional uncorrelated photon (same emission-delay
    law as the signal photon).
    """

    t1_ns: float
    t2_ps: float | None = None
    p_exc: float = 1.0
    p_multi: float = 0.0
    energy_ev: float = 1.5707
    dop: float = 1.0
    pol_angle_deg: float = 0.0

    def __post_init__(self) -> None:
        if self.t1_ns <= 0:
            raise ValueError("T1 must be positive")
        if self.t2_ps is not None:
            if not 0 < self.t2_ps <= 2.0 * self.t1_ns * 1000.0:
                raise ValueError("need 0 < T2 <= 2*T1")
        if not 0.0 <= self.p_exc <= 1.0:
            raise ValueError("p_exc must be in [0, 1]")
        if not 0.0 <= self.p_multi <= 1.0:
            raise ValueError("p_multi must be in [0, 1]")
        if not 0.0 <= self.dop <= 1.0:
            raise ValueError("degree of polarization must be in [0, 1]")


@dataclass(frozen=True)
class InstrumentChain:
    """Collection plus detection chain applied to emitted photons.

    eta_first_lens is the collection probability at the first lens;
    eta_setup the combined downstream transmission x detector efficiency.
    Dead time suppresses same-channel events arriving within dead_time
    after an accepted event. Dark counts are homogeneous Poisson per
    detector channel and are not subject to dead-time suppression.
    """

    eta_first_lens: float = 1.0
    eta_setup: float = 1.0
    jitter_fwhm_ps: float = 0.0
    dead_time_ns: float = 0.0
    dark_rate_hz: float = 0.0

    def __post_init__(self) -> None:
        for name in ("eta_first_lens", "eta_setup"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.jitter_fwhm_ps < 0 or self.dead_time_ns < 0 or self.dark_rate_hz < 0:
            raise ValueError("jitter, dead time and dark rate must be >= 0")

    @property
    def eta_total(self) -> float:
        return self.eta_first_lens * self.eta_setup

    @property
    def jitter_sigma_ps(self) -> float:
        return self.jitter_fwhm_ps / FWHM_TO_SIGMA


@dataclass(frozen=True)
class PulseTrain:
    rep_rate_khz: float
    n_pulses: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rep_rate_khz <= 0:
            raise ValueError("repetition rate must be positive")
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in uint64")

    @property
    def period_ps(self) -> float:
        return 1.0e9 / self.rep_rate_khz


@dataclass(frozen=True)
class MZIConfig:
    """Unbalanced Mach-Zehnder interferometer for two-photon interference.

    polarization_mode 'HH' makes same-slot photons indistinguishable
    (full overlap), 'HV' fully distinguishable. The arm delay is assumed
    tuned onto a multiple of the pulse period; residual_offset_ps models
    any remaining wavepacket start-time mismatch, scaling the overlap by
    exp(-|offset|/T1).
    """

    arm_delay_ns: float
    polarization_mode: str = "HH"
    first_bs_ratio: float = 0.5
    second_bs_ratio: float = 0.5
    residual_offset_ps: float = 0.0

    def __post_init__(self) -> None:
        if self.arm_delay_ns < 0:
            raise ValueError("arm delay must be >= 0")
        if self.polarization_mode not in ("HH", "HV"):
            raise ValueError("polarization_mode must be 'HH' or 'HV'")
        for name in ("first_bs_ratio", "second_bs_ratio"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")


# ---------------------------------------------------------------------------
# fixed-budget uniform variates
# ---------------------------------------------------------------------------


def _pulse_uniforms(seed: int, tag: int, start: int, stop: int, draws: int) -> np.ndarray:
    """Uniforms for pulses [start, stop): row i-start belongs to pulse i.

    ``draws`` must be a multiple of 4 (the Philox counter advances in
    blocks of four 64-bit words), which makes the rows independent of any
    chunk decomposition.
    """
    assert draws % 4 == 0
    bg = Philox(key=np.array([seed, tag], dtype=np.uint64))
    bg.advance(start * draws // 4)
    return Generator(bg).random((stop - start, draws))


def _normals(u: np.ndarray) -> np.ndarray:
    return ndtri(np.clip(u, 1e-300, 1.0 - 1e-16))


def _exponential(u: np.ndarray, scale: float) -> np.ndarray:
    return -scale * np.log1p(-u)


# ---------------------------------------------------------------------------
# instrument-chain plumbing
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _dead_time_keep(times: np.ndarray, dead_ps: int) -> np.ndarray:
    keep = np.ones(times.size, dtype=np.bool_)
    last = -dead_ps - 1
    for i in range(times.size):
        if times[i] - last < dead_ps:
            keep[i] = False
        else:
            last = times[i]
    return keep


def _apply_dead_time(times: np.ndarray, channels: np.ndarray, dead_ps: int):
    """Per-channel dead-time suppression on (time,channel)-sorted int64 arrays."""
    if dead_ps <= 0 or times.size == 0:
        return times, channels
    keep = np.ones(times.size, dtype=bool)
    for ch in np.unique(channels):
        m = channels == ch
        keep[m] = _dead_time_keep(times[m], dead_ps)
    return times[keep], channels[keep]


def _dark_tags(seed: int, rate_hz: float, duration_ps: int, channels: np.ndarray):
    """Homogeneous Poisson darks per detector channel, one derived stream."""
    if rate_hz <= 0 or duration_ps <= 0 or channels.size == 0:
        return (np.empty(0, np.int64), np.empty(0, np.uint8))
    rng = Generator(Philox(key=np.array([seed, _TAG_DARKS], dtype=np.uint64)))
    mean = rate_hz * duration_ps * 1e-12
    times = []
    chans = []
    for ch in channels:
        n = int(rng.poisson(mean))
        t = rng.integers(0, duration_ps, size=n, dtype=np.int64)
        times.append(t)
        chans.append(np.full(n, ch, dtype=np.uint8))
    return np.concatenate(times), np.concatenate(chans)


def _assemble(
    times_ps: np.ndarray,
    channels: np.ndarray,
    duration_ps: int,
    channel_count: int,
    chain: InstrumentChain,
    seed: int,
    dark_channels: np.ndarray,
    exempt: np.ndarray | None = None,
    exempt_channels: np.ndarray | None = None,
) -> TimeTagStream:
    """Quantize, range-drop, dead-time filter, add darks, sort into a stream.

    ``exempt``/``exempt_channels`` (e.g. an electronic sync channel) skip
    the dead-time filter and dark generation but join the final stream.
    """
    t = np.rint(times_ps).astype(np.int64)
    ok = (t >= 0) & (t < duration_ps)
    t = t[ok]
    ch = channels[ok]
    order = np.lexsort((ch, t))
    t, ch = t[order], ch[order]
    t, ch = _apply_dead_time(t, ch, int(round(chain.dead_time_ns * 1000.0)))

    dt, dch = _dark_tags(seed, chain.dark_rate_hz, duration_ps, dark_channels)
    parts_t = [t, dt]
    parts_c = [ch, dch]
    if exempt is not None and exempt.size:
        parts_t.append(exempt.astype(np.int64))
        parts_c.append(exempt_channels)
    t = np.concatenate(parts_t)
    ch = np.concatenate(parts_c)
    order = np.lexsort((ch, t))
    return TimeTagStream(
        resolution_ps=1,
        duration_ps=duration_ps,
        channel_count=channel_count,
        channels=ch[order],
        times=t[order].astype(np.uint64),
    )


def apply_instrument(ideal: TimeTagStream, chain: InstrumentChain, seed: int) -> TimeTagStream:
    """Run an ideal event stream through the detection chain.

    Applies, in order: Bernoulli loss at eta_setup, Gaussian timing jitter
    (sigma = FWHM/2.3548), per-channel dead time, and Poisson dark counts,
    then re-sorts. All randomness derives from ``seed``.
    """
    rng = Generator(Philox(key=np.array([seed, _TAG_INSTRUMENT], dtype=np.uint64)))
    keep = rng.random(ideal.n_tags) < chain.eta_setup
    t = ideal.times[keep].astype(np.float64)
    ch = ideal.channels[keep]
    if chain.jitter_sigma_ps > 0 and t.size:
        t = t + chain.jitter_sigma_ps * _normals(rng.random(t.size))
    return _assemble(
        t,
        ch,
        ideal.duration_ps,
        ideal.channel_count,
        chain,
        seed,
        dark_channels=np.arange(ideal.channel_count, dtype=np.uint8),
    )


# ---------------------------------------------------------------------------
# multi-photon calibration
# ---------------------------------------------------------------------------


def g2_from_multi_probability(p_multi: float, p_exc: float = 1.0) -> float:
    """Pulsed g2(0) of the generative model: 2 b / (p_exc (1+b)^2)."""
    return 2.0 * p_multi / (p_exc * (1.0 + p_multi) ** 2)


def multi_photon_probability(g2_target: float, p_exc: float = 1.0) -> float:
    """Invert the closed-form peak-area relation for p_multi.

    Starts from the low-order estimate p ~ g2*p_exc/2 and refines by a
    bracketed root find. Requires g2_target in [0, 1] and
    p_exc * g2_target <= 0.5 (beyond that no p_multi can reach the target).
    """
    if not 0.0 <= g2_target <= 1.0:
        raise ValueError("g2_target must be in [0, 1]")
    if p_exc <= 0:
        raise ValueError("p_exc must be positive to calibrate a g2 target")
    if g2_target == 0.0:
        return 0.0
    if g2_target * p_exc > 0.5:
        raise ValueError(
            f"g2 target {g2_target} unreachable at p_exc={p_exc} "
            "(needs p_exc*g2 <= 0.5)"
        )
    guess = 0.5 * g2_target * p_exc  # low-order inversion, used as sanity anchor
    b = brentq(
        lambda x: g2_from_multi_probability(x, p_exc) - g2_target,
        0.0,
        1.0,
        xtol=1e-15,
        rtol=8.9e-16,
    )
    if not math.isfinite(b) or b < 0.25 * guess:
        raise RuntimeError("root find for p_multi failed")
    return float(b)


# ---------------------------------------------------------------------------
# shared photon generation
# ---------------------------------------------------------------------------

# uniform-matrix column layout (decay/hbt/hom share 0..7)
_C_EMIT, _C_DELAY, _C_MULTI, _C_MDELAY = 0, 1, 2, 3
_C_DET_S, _C_DET_M, _C_JIT_S, _C_JIT_M = 4, 5, 6, 7
_C_ROUTE_S, _C_ROUTE_M = 8, 9  # decay: unused; hbt: detector routing
_D_DECAY = 8
_D_HBT = 12
# hom extras
_C_BS1_S, _C_BS1_M = 8, 9
_C_PAIR_TYPE, _C_PAIR_PORT = 10, 11
_C_HOM_ROUTE_S, _C_HOM_ROUTE_M = 12, 13
_C_PAIR_IDENT = 14
_D_HOM = 16


def _maybe_warn_pileup(emitter: EmitterModel, train: PulseTrain) -> None:
    if train.period_ps < 5.0 * emitter.t1_ns * 1000.0:
        warnings.warn(
            f"pulse period {train.period_ps:.0f} ps is below 5*T1 "
            f"({5.0 * emitter.t1_ns * 1000.0:.0f} ps); emission tails pile up "
            "into later pulses",
            PileUpWarning,
            stacklevel=3,
        )


def _chunk_ranges(n: int) -> list[tuple[int, int]]:
    return [(a, min(a + _CHUNK, n)) for a in range(0, n, _CHUNK)]


def _run_chunks(worker, ranges, threads: int):
    """Execute chunk workers, in order or on a pool; results keep chunk order."""
    if threads <= 1 or len(ranges) <= 1:
        return [worker(a, b) for a, b in ranges]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(worker, a, b) for a, b in ranges]
        return [f.result() for f in futures]


def _photon_times(u, i0, period, t1_ps, emitter, eta, sigma):
    """Detected signal/multi photon emission data for one chunk.

    Returns (pulse_index, emission_time_ps_incl_jitter) per detected photon
    for the signal and multi slots separately, plus the raw existence masks.
    """
    n = u.shape[0]
    idx = np.arange(i0, i0 + n, dtype=np.int64)
    emit = u[:, _C_EMIT] < emitter.p_exc
    multi = emit & (u[:, _C_MULTI] < emitter.p_multi)
    det_s = emit & (u[:, _C_DET_S] < eta)
    det_m = multi & (u[:, _C_DET_M] < eta)

    base = idx.astype(np.float64) * period
    d_s = _exponential(u[:, _C_DELAY], t1_ps)
    d_m = _exponential(u[:, _C_MDELAY], t1_ps)
    t_s = base[det_s] + d_s[det_s]
    t_m = base[det_m] + d_m[det_m]
    if sigma > 0:
        t_s = t_s + sigma * _normals(u[det_s, _C_JIT_S])
        t_m = t_m + sigma * _normals(u[det_m, _C_JIT_M])
    return det_s, det_m, t_s, t_m


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------


def simulate_decay(
    emitter: EmitterModel,
    chain: InstrumentChain,
    train: PulseTrain,
    threads: int = 1,
) -> TimeTagStream:
    """Pulsed lifetime acquisition: channel 0 = sync, channel 1 = detector.

    Each pulse excites with probability p_exc; the photon is emitted after
    an Exponential(T1) delay and reaches the detector with probability
    eta_first_lens*eta_setup. Sync tags are exact (electronic) and exempt
    from jitter, dead time and darks.
    """
    _maybe_warn_pileup(emitter, train)
    period = train.period_ps
    t1_ps = emitter.t1_ns * 1000.0
    eta = chain.eta_total
    sigma = chain.jitter_sigma_ps
    duration = int(round(train.n_pulses * period))

    def worker(a: int, b: int):
        u = _pulse_uniforms(train.seed, _TAG_DECAY, a, b, _D_DECAY)
        _, _, t_s, t_m = _photon_times(u, a, period, t1_ps, emitter, eta, sigma)
        return np.concatenate([t_s, t_m])

    parts = _run_chunks(worker, _chunk_ranges(train.n_pulses), threads)
    det_t = np.concatenate(parts) if parts else np.empty(0)
    sync_t = np.rint(np.arange(train.n_pulses, dtype=np.float64) * period).astype(np.int64)
    sync_t = sync_t[sync_t < duration]
    return _assemble(
        det_t,
        np.ones(det_t.size, dtype=np.uint8),
        duration,
        2,
        chain,
        train.seed,
        dark_channels=np.array([1], dtype=np.uint8),
        exempt=sync_t,
        exempt_channels=np.zeros(sync_t.size, dtype=np.uint8),
    )


def simulate_hbt(
    emitter: EmitterModel,
    chain: InstrumentChain,
    train: PulseTrain,
    g2_target: float | None = None,
    threads: int = 1,
) -> TimeTagStream:
    """Intensity-correlation acquisition: photons split 50:50 onto channels 0/1.

    When ``g2_target`` is given, the emitter's p_multi is replaced by the
    value that makes the closed-form peak-area ratio equal the target.
    """
    if g2_target is not None:
        p_multi = multi_photon_probability(g2_target, emitter.p_exc)
        emitter = EmitterModel(
            t1_ns=emitter.t1_ns,
            t2_ps=emitter.t2_ps,
            p_exc=emitter.p_exc,
            p_multi=p_multi,
            energy_ev=emitter.energy_ev,
            dop=emitter.dop,
            pol_angle_deg=emitter.pol_angle_deg,
        )
    _maybe_warn_pileup(emitter, train)
    period = train.period_ps
    t1_ps = emitter.t1_ns * 1000.0
    eta = chain.eta_total
    sigma = chain.jitter_sigma_ps
    duration = int(round(train.n_pulses * period))

    def worker(a: int, b: int):
        u = _pulse_uniforms(train.seed, _TAG_HBT, a, b, _D_HBT)
        det_s, det_m, t_s, t_m = _photon_times(u, a, period, t1_ps, emitter, eta, sigma)
        ch_s = (u[det_s, _C_ROUTE_S] < 0.5).astype(np.uint8)
        ch_m = (u[det_m, _C_ROUTE_M] < 0.5).astype(np.uint8)
        return np.concatenate([t_s, t_m]), np.concatenate([ch_s, ch_m])

    parts = _run_chunks(worker, _chunk_ranges(train.n_pulses), threads)
    det_t = np.concatenate([p[0] for p in parts])
    det_c = np.concatenate([p[1] for p in parts])
    return _assemble(
        det_t,
        det_c,
        duration,
        2,
        chain,
        train.seed,
        dark_channels=np.array([0, 1], dtype=np.uint8),
    )


def _overlap_amplitude(mzi: MZIConfig, emitter: EmitterModel) -> float:
    if mzi.polarization_mode == "HV":
        return 0.0
    t1_ps = emitter.t1_ns * 1000.0
    return math.exp(-abs(mzi.residual_offset_ps) / t1_ps)


def simulate_hom(
    emitter: EmitterModel,
    chain: InstrumentChain,
    train: PulseTrain,
    mzi: MZIConfig,
    threads: int = 1,
) -> TimeTagStream:
    """Two-photon interference in an unbalanced MZI; channels 0/1 = outputs.

    Photons pick the short/long arm at the first splitter. A photon of
    pulse m that took the short arm meets the long-arm photon of pulse
    m-k (k = round(arm_delay/period)) at the output splitter. Such pairs
    produce a cross-port coincidence with probability
    T^2 + R^2 - 2 T R * V0, where V0 = m_pol * exp(-2|dt|/T2*) *
    exp(-|offset|/T1) and dt is the emission-delay difference; otherwise
    both photons bunch into one port. Photons without a partner route
    independently. Background (multi) photons never interfere.
    """
    if emitter.t2_ps is None:
        raise ValueError("HOM simulation requires the emitter coherence time t2_ps")
    _maybe_warn_pileup(emitter, train)
    period = train.period_ps
    t1_ps = emitter.t1_ns * 1000.0
    arm_ps = mzi.arm_delay_ns * 1000.0
    k = int(round(arm_ps / period))
    if k >= train.n_pulses:
        raise ValueError("arm delay exceeds the pulse-train span")
    # pure-dephasing rate 1/T2 - 1/(2 T1), in 1/ps; >= 0 by the T2 invariant
    gamma_star = 1.0 / emitter.t2_ps - 1.0 / (2.0 * t1_ps)
    m_pol = _overlap_amplitude(mzi, emitter)
    eta = chain.eta_total
    sigma = chain.jitter_sigma_ps
    r1 = mzi.first_bs_ratio
    t2r = mzi.second_bs_ratio
    p_cross_dist = t2r * t2r + (1.0 - t2r) ** 2
    duration = int(round((train.n_pulses + k) * period)) + int(round(abs(arm_ps - k * period))) + 1
    n = train.n_pulses

    def worker(a: int, b: int):
        lo = max(0, a - k)
        u = _pulse_uniforms(train.seed, _TAG_HOM, lo, b, _D_HOM)
        nn = b - lo
        idx = np.arange(lo, b, dtype=np.int64)
        emit = u[:, _C_EMIT] < emitter.p_exc
        multi = emit & (u[:, _C_MULTI] < emitter.p_multi)
        short = u[:, _C_BS1_S] < r1
        d = _exponential(u[:, _C_DELAY], t1_ps)
        det = emit & (u[:, _C_DET_S] < eta)

        local = slice(a - lo, nn)  # rows owned by this chunk
        own_idx = idx[local]
        own_emit = emit[local]
        own_short = short[local]

        # --- signal photons: pairing at the output splitter -------------
        # pair(m): short photon of pulse m with long photon of pulse m-k
        if k > 0:
            partner_ok = np.zeros(b - a, dtype=bool)
            dt = np.zeros(b - a)
            src = own_idx - k
            valid = src >= 0
            loc_src = (src - lo)[valid]
            partner_ok[valid] = emit[loc_src] & ~short[loc_src]
            dt[valid] = d[local][valid] - d[loc_src]
            pair = own_emit & own_short & partner_ok
        else:
            pair = np.zeros(b - a, dtype=bool)
            dt = np.zeros(b - a)

        # Mixture sampling of the two-photon output statistics: with
        # probability v0 the pair behaves as fully indistinguishable
        # (coincidence prob (T-R)^2, ports symmetric), otherwise as fully
        # distinguishable (coincidence prob T^2+R^2, split T^2 : R^2).
        # The marginal coincidence probability is T^2+R^2-2TR*v0.
        v0 = m_pol * np.exp(-2.0 * gamma_star * np.abs(dt))
        ident = u[local, _C_PAIR_IDENT] < v0
        p_cross = np.where(ident, (2.0 * t2r - 1.0) ** 2, p_cross_dist)
        cross = u[local, _C_PAIR_TYPE] < p_cross
        p_short0 = np.where(ident, 0.5, t2r * t2r / p_cross_dist)
        u_port = u[local, _C_PAIR_PORT]

        out_t = []
        out_c = []

        def emit_photon(rows_local, pulse_idx, is_short, ch):
            """rows_local: boolean over full window rows."""
            tt = pulse_idx.astype(np.float64) * period + d[rows_local]
            if not is_short:
                tt = tt + arm_ps
            if sigma > 0:
                tt = tt + sigma * _normals(u[rows_local, _C_JIT_S])
            out_t.append(tt)
            out_c.append(ch)

        # paired short photons (and their partners), detection applied per photon
        pr = np.zeros(nn, dtype=bool)
        pr[local] = pair
        if np.any(pr):
            rows = np.flatnonzero(pr)
            prt = rows - k  # partner rows (long photons), all valid by construction
            c_here = cross[pair]
            # cross: short photon -> ch0 w.p. p_short0, partner opposite;
            # bunch: both -> ch0 w.p. 1/2 (TR symmetric in the ports)
            to0 = np.where(c_here, u_port[pair] < p_short0[pair], u_port[pair] < 0.5)
            ch_short = np.where(to0, 0, 1).astype(np.uint8)
            ch_long = np.where(c_here, 1 - ch_short, ch_short).astype(np.uint8)
            m_short = det[rows]
            m_long = det[prt]
            sel = np.zeros(nn, dtype=bool)
            sel[rows[m_short]] = True
            emit_photon(sel, idx[rows[m_short]], True, ch_short[m_short])
            sel = np.zeros(nn, dtype=bool)
            sel[prt[m_long]] = True
            emit_photon(sel, idx[prt[m_long]], False, ch_long[m_long])

        # unpaired short photons owned here: independent routing
        unp_short = own_emit & own_short & ~pair & det[local]
        if np.any(unp_short):
            sel = np.zeros(nn, dtype=bool)
            sel[np.flatnonzero(unp_short) + (a - lo)] = True
            ch = (u[sel, _C_HOM_ROUTE_S] >= t2r).astype(np.uint8)  # ch0 w.p. T
            emit_photon(sel, own_idx[unp_short], True, ch)

        # unpaired long photons whose owner slot lies in this chunk:
        # long photon of pulse j is resolved by slot j+k in [a, b)
        if k > 0:
            jlo, jhi = a - k, b - k
            rows = np.arange(max(lo, jlo) - lo, max(0, jhi - lo), dtype=np.int64)
            if rows.size:
                is_long = emit[rows] & ~short[rows]
                owner = rows + k  # local row of the deciding slot, always in window
                # partner short photon exists -> already emitted as pair above
                partnered = emit[owner] & short[owner]
                free_long = is_long & ~partnered & det[rows]
                if np.any(free_long):
                    sel = np.zeros(nn, dtype=bool)
                    sel[rows[free_long]] = True
                    ch = (u[sel, _C_HOM_ROUTE_S] >= 1.0 - t2r).astype(np.uint8)  # ch0 w.p. R
                    emit_photon(sel, idx[rows[free_long]], False, ch)
        else:
            # no pairing at all: long photons of this chunk route independently
            free_long = own_emit & ~own_short & det[local]
            if np.any(free_long):
                sel = np.zeros(nn, dtype=bool)
                sel[np.flatnonzero(free_long) + (a - lo)] = True
                ch = (u[sel, _C_HOM_ROUTE_S] >= 1.0 - t2r).astype(np.uint8)
                emit_photon(sel, own_idx[free_long], False, ch)

        # epilogue: long photons of the final k pulses have no deciding slot
        if k > 0 and b == n:
            rows = np.arange(max(lo, n - k) - lo, nn, dtype=np.int64)
            is_long = emit[rows] & ~short[rows] & det[rows]
            if np.any(is_long):
                sel = np.zeros(nn, dtype=bool)
                sel[rows[is_long]] = True
                ch = (u[sel, _C_HOM_ROUTE_S] >= 1.0 - t2r).astype(np.uint8)
                emit_photon(sel, idx[rows[is_long]], False, ch)

        # --- multi photons: never interfere, independent everything -----
        mm = multi[local] & (u[local, _C_DET_M] < eta)
        if np.any(mm):
            sel = np.zeros(nn, dtype=bool)
            sel[np.flatnonzero(mm) + (a - lo)] = True
            m_short = u[sel, _C_BS1_M] < r1
            tt = own_idx[mm].astype(np.float64) * period + _exponential(u[sel, _C_MDELAY], t1_ps)
            tt = tt + np.where(m_short, 0.0, arm_ps)
            if sigma > 0:
                tt = tt + sigma * _normals(u[sel, _C_JIT_M])
            thresh = np.where(m_short, t2r, 1.0 - t2r)
            ch = (u[sel, _C_HOM_ROUTE_M] >= thresh).astype(np.uint8)
            out_t.append(tt)
            out_c.append(ch)

        if out_t:
            return np.concatenate(out_t), np.concatenate(out_c)
        return np.empty(0), np.empty(0, dtype=np.uint8)

    parts = _run_chunks(worker, _chunk_ranges(n), threads)
    det_t = np.concatenate([p[0] for p in parts])
    det_c = np.concatenate([p[1] for p in parts])
    return _assemble(
        det_t,
        det_c,
        duration,
        2,
        chain,
        train.seed,
        dark_channels=np.array([0, 1], dtype=np.uint8),
    )


def simulate_poisson_source(
    chain: InstrumentChain,
    train: PulseTrain,
    mean_photons: float,
    t1_ns: float,
    threads: int = 1,
) -> TimeTagStream:
    """Poissonian reference source on the HBT geometry (g2 = 1 oracle).

    Every pulse emits k ~ Poisson(mean_photons) independent photons (capped
    at 8 per pulse), each with its own Exponential(T1) delay, detection and
    50:50 routing. Useful as a null test against the antibunched emitter.
    """
    if mean_photons <= 0 or t1_ns <= 0:
        raise ValueError("mean_photons and t1_ns must be positive")
    kmax = 8
    draws = 4 + 4 * kmax  # k-draw + (delay, det, jitter, route) per slot
    cdf = np.cumsum(
        np.exp(-mean_photons) * np.power(mean_photons, np.arange(kmax + 1))
        / np.array([math.factorial(i) for i in range(kmax + 1)])
    )
    period = train.period_ps
    t1_ps = t1_ns * 1000.0
    eta = chain.eta_total
    sigma = chain.jitter_sigma_ps
    duration = int(round(train.n_pulses * period))

    def worker(a: int, b: int):
        u = _pulse_uniforms(train.seed, _TAG_SURROGATE, a, b, draws)
        k = np.searchsorted(cdf, u[:, 0])  # truncated-Poisson counts
        base = np.arange(a, b, dtype=np.int64).astype(np.float64) * period
        tt, cc = [], []
        for j in range(kmax):
            hasj = k > j
            col = 4 + 4 * j
            det = hasj & (u[:, col + 1] < eta)
            t = base[det] + _exponential(u[det, col], t1_ps)
            if sigma > 0:
                t = t + sigma * _normals(u[det, col + 2])
            tt.append(t)
            cc.append((u[det, col + 3] < 0.5).astype(np.uint8))
        return np.concatenate(tt), np.concatenate(cc)

    parts = _run_chunks(worker, _chunk_ranges(train.n_pulses), threads)
    det_t = np.concatenate([p[0] for p in parts])
    det_c = np.concatenate([p[1] for p in parts])
    return _assemble(
        det_t,
        det_c,
        duration,
        2,
        chain,
        train.seed,
        dark_channels=np.array([0, 1], dtype=np.uint8),
    )


def simulate_polarization_sweep(
    emitter: EmitterModel,
    angles_deg: np.ndarray,
    mean_peak_counts: float,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Polarizer-sweep intensities with Poisson noise (Malus-law source).

    I(theta) = I0/2 * (1 + dop * cos 2(theta - pol_angle)), I0 scaled so the
    brightest angle averages ``mean_peak_counts``.
    """
    angles = np.asarray(angles_deg, dtype=float)
    if angles.size < 4:
        raise ValueError("need at least 4 angles")
    if mean_peak_counts <= 0:
        raise ValueError("mean_peak_counts must be positive")
    rel = 0.5 * (1.0 + emitter.dop * np.cos(2.0 * np.radians(angles - emitter.pol_angle_deg)))
    mean = mean_peak_counts * rel / (0.5 * (1.0 + emitter.dop))
    rng = Generator(Philox(key=np.array([seed, _TAG_DOP], dtype=np.uint64)))
    return angles, rng.poisson(mean).astype(float)
