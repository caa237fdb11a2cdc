import numpy as np
import pytest

from spskit.montecarlo import (
    EmitterModel,
    InstrumentChain,
    MZIConfig,
    PileUpWarning,
    PulseTrain,
    g2_from_multi_probability,
    multi_photon_probability,
    simulate_decay,
    simulate_hbt,
    simulate_hom,
    simulate_poisson_source,
    simulate_polarization_sweep,
)

REP_KHZ = 76227.93
PERIOD_PS = 1e9 / REP_KHZ


def pulse_index(times, period_ps=PERIOD_PS):
    return np.floor(times.astype(np.float64) / period_ps).astype(np.int64)


def g2_center_over_side(stream, n_side=5):
    """Pulsed g2 estimate by pulse-index coincidence counting.

    Pair counts per pulse separation, center over the mean of the far
    peaks; separations of +-1 are skipped because an interferometer
    delayed by one period redistributes those peaks.
    """
    a = pulse_index(stream.channel_times(0))
    b = pulse_index(stream.channel_times(1))
    n = int(max(a.max(), b.max())) + n_side + 3
    ca = np.bincount(a, minlength=n).astype(np.int64)
    cb = np.bincount(b, minlength=n).astype(np.int64)
    center = int(np.sum(ca * cb))
    side = np.mean([np.sum(ca[:-k] * cb[k:]) for k in range(2, n_side + 2)])
    return center / side, np.sqrt(max(center, 1)) / side


def test_same_seed_bit_identical():
    em = EmitterModel(t1_ns=1.7, t2_ps=45.0, p_multi=0.02)
    ch = InstrumentChain(eta_first_lens=0.5, jitter_fwhm_ps=300.0, dark_rate_hz=50.0)
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=50_000, seed=9)
    s1 = simulate_hbt(em, ch, tr)
    s2 = simulate_hbt(em, ch, tr)
    np.testing.assert_array_equal(s1.times, s2.times)
    np.testing.assert_array_equal(s1.channels, s2.channels)
    s3 = simulate_hbt(em, ch, PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=50_000, seed=10))
    assert not np.array_equal(s1.times, s3.times)


def test_modes_use_independent_streams():
    # the same seed must not recycle random numbers across experiment
    # types, or cross-comparisons would be spuriously correlated
    em = EmitterModel(t1_ns=1.7)
    ch = InstrumentChain()
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=10_000, seed=4)
    decay = simulate_decay(em, ch, tr)
    hbt = simulate_hbt(em, ch, tr)
    assert not np.array_equal(
        decay.channel_times(1)[:100], hbt.channel_times(1)[:100]
    )


def test_decay_delay_distribution():
    em = EmitterModel(t1_ns=2.3)
    ch = InstrumentChain()
    tr = PulseTrain(rep_rate_khz=20_000.0, n_pulses=200_000, seed=1)
    stream = simulate_decay(em, ch, tr)
    period = 1e9 / 20_000.0
    starts = stream.channel_times(0).astype(np.int64)
    stops = stream.channel_times(1).astype(np.int64)
    idx = np.searchsorted(starts, stops, side="right") - 1
    delays = (stops - starts[idx]).astype(np.float64) / 1000.0  # ns
    # one-sample KS against Exp(1/2.3), discreteness ~1 ps is negligible
    from scipy import stats

    d, p = stats.kstest(delays, "expon", args=(0.0, 2.3))
    assert d < 0.01
    assert stream.channel_times(0).size == 200_000  # sync is lossless


def test_click_rate_identity_without_dead_time():
    # with no dead time each emitted photon survives independently, so
    # the stop rate is exactly eta * p_exc * (1 + p_multi) on average
    em = EmitterModel(t1_ns=1.7, p_exc=0.8, p_multi=0.03)
    eta = 0.21
    ch = InstrumentChain(eta_first_lens=0.3, eta_setup=0.7)
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=400_000, seed=2)
    stream = simulate_decay(em, ch, tr)
    n = stream.channel_times(1).size
    expected = 400_000 * 0.8 * eta * 1.03
    assert abs(n - expected) < 4.0 * np.sqrt(expected)


def test_loss_is_binomial():
    em = EmitterModel(t1_ns=1.0)
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=100_000, seed=3)
    full = simulate_decay(em, InstrumentChain(), tr)
    half = simulate_decay(em, InstrumentChain(eta_first_lens=0.5), tr)
    assert full.channel_times(1).size == 100_000
    n = half.channel_times(1).size
    assert abs(n - 50_000) < 4.0 * np.sqrt(25_000)


def test_dead_time_enforced_per_channel():
    # dead time gates the photon clicks; darks are merged afterwards
    # (they model readout noise, not optical input), so keep them off
    em = EmitterModel(t1_ns=1.7, p_multi=0.3)
    ch = InstrumentChain(dead_time_ns=45.0)
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=100_000, seed=6)
    stream = simulate_hbt(em, ch, tr)
    for channel in (0, 1):
        t = stream.channel_times(channel).astype(np.int64)
        assert t.size > 100
        assert np.diff(t).min() >= 45_000


def test_darks_present_without_emission():
    em = EmitterModel(t1_ns=1.7, p_exc=0.0)
    ch = InstrumentChain(dark_rate_hz=100_000.0)
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=100_000, seed=7)
    stream = simulate_decay(em, ch, tr)
    duration_s = stream.duration_ps * 1e-12
    n = stream.channel_times(1).size
    expected = 100_000.0 * duration_s
    assert abs(n - expected) < 4.0 * np.sqrt(expected)
    # sync channel carries no darks
    assert stream.channel_times(0).size == 100_000


def test_jitter_spares_the_sync_channel():
    em = EmitterModel(t1_ns=0.5)
    ch = InstrumentChain(jitter_fwhm_ps=800.0)
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=10_000, seed=8)
    stream = simulate_decay(em, ch, tr)
    starts = stream.channel_times(0).astype(np.int64)
    gaps = np.diff(starts)
    assert gaps.max() - gaps.min() <= 1  # integer rounding of the period only


def test_multi_photon_probability_oracle():
    assert multi_photon_probability(0.047, 1.0) == pytest.approx(
        0.024673984185883235, rel=1e-12
    )
    assert multi_photon_probability(0.0, 1.0) == 0.0
    for g2 in (0.01, 0.047, 0.2, 0.5):
        for p_exc in (1.0, 0.8):
            b = multi_photon_probability(g2, p_exc)
            assert g2_from_multi_probability(b, p_exc) == pytest.approx(g2, rel=1e-10)
    with pytest.raises(ValueError):
        multi_photon_probability(1.5, 1.0)


@pytest.mark.parametrize("g2_target", [0.0, 0.05, 0.2, 0.5])
def test_hbt_closed_loop_counting(g2_target):
    em = EmitterModel(t1_ns=0.5, p_multi=multi_photon_probability(g2_target))
    ch = InstrumentChain()
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=300_000, seed=13)
    stream = simulate_hbt(em, ch, tr)
    g2, se = g2_center_over_side(stream)
    assert abs(g2 - g2_target) < max(3.0 * se, 0.004)


def test_hom_center_suppressed_for_coherent_photons():
    # transform-limited photons (T2 = 2 T1) interfere perfectly: the
    # co-polarized zero-delay peak vanishes up to multi-photon residue
    em = EmitterModel(t1_ns=1.0, t2_ps=2000.0)
    ch = InstrumentChain()
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=500_000, seed=14)
    mzi_hh = MZIConfig(arm_delay_ns=PERIOD_PS / 1000.0, polarization_mode="HH")
    mzi_hv = MZIConfig(arm_delay_ns=PERIOD_PS / 1000.0, polarization_mode="HV")
    hh = simulate_hom(em, ch, tr, mzi_hh)
    hv = simulate_hom(em, ch, tr, mzi_hv)
    g2_hh, _ = g2_center_over_side(hh)
    g2_hv, se_hv = g2_center_over_side(hv)
    assert g2_hh < 0.01
    assert g2_hv > 10 * g2_hh


def test_hom_distinguishable_photons_show_no_interference():
    # cross-polarized and fully dephased co-polarized photons coincide at
    # the same rate: half the side-peak rate at zero delay
    em = EmitterModel(t1_ns=1.0, t2_ps=1.0)  # T2 << T1: fully dephased
    ch = InstrumentChain()
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=500_000, seed=15)
    for mode in ("HH", "HV"):
        mzi = MZIConfig(arm_delay_ns=PERIOD_PS / 1000.0, polarization_mode=mode)
        stream = simulate_hom(em, ch, tr, mzi)
        g2, se = g2_center_over_side(stream)
        assert abs(g2 - 0.5) < max(3.0 * se, 0.01), mode


def test_poisson_source_g2_is_one():
    ch = InstrumentChain()
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=300_000, seed=16)
    stream = simulate_poisson_source(ch, tr, mean_photons=0.4, t1_ns=0.5)
    g2, se = g2_center_over_side(stream)
    assert g2 == pytest.approx(1.0, abs=max(3.0 * se, 0.02))


def test_pile_up_warning():
    em = EmitterModel(t1_ns=3.0)  # period 13.1 ns < 5 * T1
    ch = InstrumentChain()
    tr = PulseTrain(rep_rate_khz=REP_KHZ, n_pulses=1000, seed=17)
    with pytest.warns(PileUpWarning):
        simulate_decay(em, ch, tr)


def test_polarization_sweep_deterministic_and_malus_shaped():
    em = EmitterModel(t1_ns=1.7, dop=0.984, pol_angle_deg=30.0)
    angles = np.linspace(0.0, 360.0, 19)
    a1, i1 = simulate_polarization_sweep(em, angles, 100_000.0, seed=21)
    a2, i2 = simulate_polarization_sweep(em, angles, 100_000.0, seed=21)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_array_equal(a1, angles)
    # brightest near the polarization axis, dimmest 90 degrees away
    assert abs(angles[np.argmax(i1)] % 180.0 - 30.0) <= 20.0
    assert abs(angles[np.argmin(i1)] % 180.0 - 120.0) <= 20.0
    imax, imin = i1.max(), i1.min()
    dop = (imax - imin) / (imax + imin)
    assert dop == pytest.approx(0.984, abs=0.02)
    with pytest.raises(ValueError):
        simulate_polarization_sweep(em, angles[:3], 100_000.0, seed=21)
