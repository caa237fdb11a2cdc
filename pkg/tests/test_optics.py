import math

import numpy as np
import pytest

from spskit.optics import (
    HC_EV_NM,
    CavityGeometry,
    GeometryError,
    StabilityError,
    bragg_mirror,
    cavity_mode_spectrum,
    gaussian_waist_um,
    gold_index,
    kappa_mev,
    longitudinal_mode_spacing_mev,
    metal_mirror,
    mode_volume_um3,
    purcell_factor,
    reflectivity_spectrum,
    roc_from_spherical_cap,
    stopband_center,
    transverse_mode_spacing_mev,
)


def ten_pair_dbr():
    return bragg_mirror(2.28, 85.0, 1.45, 131.0, 10, substrate_index=1.5)


def test_index_matched_layers_reduce_to_fresnel():
    # layers matched to the ambient leave only the substrate interface:
    # R = ((1.5-1)/(1.5+1))^2 = 4%
    stack = bragg_mirror(1.0, 85.0, 1.0, 131.0, 3, substrate_index=1.5)
    r, t = reflectivity_spectrum(stack, np.array([780.0]))
    assert r[0] == pytest.approx(0.04, abs=1e-10)
    assert r[0] + t[0] == pytest.approx(1.0, abs=1e-12)


def test_lossless_stack_conserves_energy():
    stack = ten_pair_dbr()
    wls = np.linspace(600.0, 950.0, 176)
    r, t = reflectivity_spectrum(stack, wls)
    np.testing.assert_allclose(r + t, 1.0, atol=1e-10)
    assert np.all(r >= 0) and np.all(r <= 1)


def test_dbr_stopband_center_and_peak():
    center_nm, peak_r = stopband_center(ten_pair_dbr())
    assert abs(center_nm - 755.0) < 15.0
    assert peak_r > 0.999
    # frozen values for regression
    assert center_nm == pytest.approx(767.6, abs=0.1)
    assert peak_r == pytest.approx(0.9996874, abs=2e-7)


def test_dbr_peak_matches_quarter_wave_formula():
    # exact quarter-wave design: each pair maps the admittance seen from
    # the ambient through Y -> (n_H/n_L)^2 Y, so after N pairs on glass
    # Y = n_s (n_H/n_L)^(2N) and R = ((1 - Y)/(1 + Y))^2
    n_h, n_l, n_s, pairs, lam0 = 2.28, 1.45, 1.5, 10, 780.0
    stack = bragg_mirror(
        n_h, lam0 / (4 * n_h), n_l, lam0 / (4 * n_l), pairs,
        substrate_index=n_s,
    )
    y = n_s * (n_h / n_l) ** (2 * pairs)
    r_qw = ((1 - y) / (1 + y)) ** 2
    r, _ = reflectivity_spectrum(stack, np.array([lam0]))
    assert r[0] == pytest.approx(r_qw, abs=1e-10)


def test_metal_mirror_gold_film():
    table = gold_index()
    assert table.wavelength_nm[0] < 790.0 < table.wavelength_nm[-1]
    stack = metal_mirror(33.0, 790.0)
    r, t = reflectivity_spectrum(stack, np.array([790.0]))
    # absorbing film: R + T < 1
    assert r[0] == pytest.approx(0.88244, abs=5e-5)
    assert t[0] == pytest.approx(0.08137, abs=5e-5)
    assert 1.0 - r[0] - t[0] == pytest.approx(0.0362, abs=5e-4)


def test_longitudinal_spacing():
    assert longitudinal_mode_spacing_mev(5.5) == pytest.approx(112.7129, abs=0.01)
    # FSR halves when the cavity doubles
    assert longitudinal_mode_spacing_mev(11.0) == pytest.approx(
        longitudinal_mode_spacing_mev(5.5) / 2.0, rel=1e-12
    )


def test_spherical_cap_radius():
    assert roc_from_spherical_cap(5.0, 300.0) == pytest.approx(10.566667, abs=1e-5)
    assert roc_from_spherical_cap(4.0, 300.0) == pytest.approx(6.8167, abs=0.01)
    # hemisphere: R equals the depth
    assert roc_from_spherical_cap(2.0, 1000.0) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(GeometryError):
        roc_from_spherical_cap(2.0, 1500.0)  # deeper than a hemisphere
    with pytest.raises(GeometryError):
        roc_from_spherical_cap(-1.0, 300.0)


def test_transverse_spacing():
    geom = CavityGeometry(5.5, roc_from_spherical_cap(5.0, 300.0))
    dt = transverse_mode_spacing_mev(geom)
    assert dt == pytest.approx(28.914, abs=0.01)
    # within 15% of the measured 26.3 meV splitting
    assert abs(dt - 26.3) / 26.3 < 0.15


def test_transverse_spacing_concentric_limit():
    # L -> R: arccos(sqrt(1 - L/R)) -> pi/2, spacing -> FSR/2
    geom = CavityGeometry(5.5, 5.5 + 1e-9)
    assert transverse_mode_spacing_mev(geom) == pytest.approx(
        longitudinal_mode_spacing_mev(5.5) / 2.0, rel=1e-4
    )


def test_gaussian_waist():
    geom = CavityGeometry(5.5, 6.8)
    w0 = gaussian_waist_um(geom, 786.0)
    assert w0 == pytest.approx(0.81796, abs=1e-4)
    assert 2.0 * w0 == pytest.approx(1.636, abs=0.01)  # ~2 um lateral confinement
    # doubling the wavelength scales the waist by sqrt(2)
    assert gaussian_waist_um(geom, 1572.0) == pytest.approx(w0 * math.sqrt(2.0), rel=1e-12)


def test_unstable_geometry_raises():
    with pytest.raises(StabilityError):
        gaussian_waist_um(CavityGeometry(12.0, 10.567), 786.0)
    with pytest.raises(StabilityError):
        purcell_factor(CavityGeometry(7.0, 6.8), 786.0, 600.0)


def test_mode_spectrum_ladder():
    geom = CavityGeometry(5.5, roc_from_spherical_cap(5.0, 300.0))
    modes = cavity_mode_spectrum(geom, 1.4, 1.8, n_transverse=3)
    assert all(1.4 <= m.energy_ev <= 1.8 for m in modes)
    by_q = {}
    for m in modes:
        by_q.setdefault(m.q, {})[m.transverse_order] = m.energy_ev
    # transverse ladder spacing within one longitudinal family
    family = next(v for v in by_q.values() if len(v) == 3)
    dt = transverse_mode_spacing_mev(geom)
    assert (family[1] - family[0]) * 1000.0 == pytest.approx(dt, rel=1e-9)
    assert (family[2] - family[1]) * 1000.0 == pytest.approx(dt, rel=1e-9)
    # fundamental spacing between adjacent longitudinal families
    qs = sorted(q for q, v in by_q.items() if 0 in v)
    e0 = [by_q[q][0] for q in qs]
    dq = np.diff(e0) * 1000.0
    np.testing.assert_allclose(dq, longitudinal_mode_spacing_mev(5.5), rtol=1e-9)


def test_kappa():
    assert kappa_mev(1.5707, 600.0) == pytest.approx(2.617833333, abs=1e-8)
    with pytest.raises(ValueError):
        kappa_mev(1.5707, 0.0)


def test_purcell_factor_default_overlap():
    geom = CavityGeometry(5.5, roc_from_spherical_cap(5.0, 300.0))
    wl = HC_EV_NM / 1.5707
    assert purcell_factor(geom, wl, 600.0) == pytest.approx(1.5, abs=1e-6)
    # F_P scales linearly with Q and inversely with the mode volume
    assert purcell_factor(geom, wl, 1200.0) == pytest.approx(3.0, abs=1e-6)


def test_mode_volume_scaling():
    geom = CavityGeometry(5.5, roc_from_spherical_cap(5.0, 300.0))
    v = mode_volume_um3(geom, 786.0)
    w0 = gaussian_waist_um(geom, 786.0)
    assert v == pytest.approx(math.pi / 4.0 * w0 * w0 * 5.5, rel=1e-12)
