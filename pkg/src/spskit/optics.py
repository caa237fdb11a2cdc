"""Thin-film mirror stacks and open plano-concave microcavity optics.

Everything here is deterministic closed-form or transfer-matrix math: mirror
reflectivity spectra, cavity mode structure (longitudinal + transverse), mode
geometry (waist, volume), lens-profile geometry, and the parametric
inputs for the detuning-dependent decay analysis.

Units are chosen per quantity and named in the argument: nm for wavelengths
and layer thicknesses, um for cavity geometry, eV/meV for energies, ns for
lifetimes.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

__all__ = [
    "HC_EV_NM",
    "Layer",
    "LayerStack",
    "CavityGeometry",
    "CavityMode",
    "StabilityError",
    "GeometryError",
    "reflectivity",
    "reflectivity_spectrum",
    "stopband_center",
    "longitudinal_mode_spacing_mev",
    "transverse_mode_spacing_mev",
    "cavity_mode_spectrum",
    "gaussian_waist_um",
    "mode_volume_um3",
    "roc_from_spherical_cap",
    "kappa_mev",
    "purcell_factor",
    "bragg_mirror",
    "metal_mirror",
    "load_index_table",
    "gold_index",
]

#: hc in eV*nm; E[eV] = HC_EV_NM / lambda[nm]
HC_EV_NM = 1239.84198

#: Default antinode-overlap factor for :func:`purcell_factor`, calibrated so the
#: reference geometry (L = 5.5 um, mirror radius from a 5 um / 300 nm lens,
#: E = 1.5707 eV, Q = 600) yields a resonant enhancement of 1.5.
DEFAULT_ANTINODE_OVERLAP = 0.3832459


class StabilityError(ValueError):
    """Raised for geometrically unstable resonator configurations."""


class GeometryError(ValueError):
    """Raised for impossible lens/cap geometry."""


# ---------------------------------------------------------------------------
# layered mirror stacks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Layer:
    """One homogeneous film.

    ``refractive_index`` may be complex; the convention is n + ik with
    k >= 0 for absorbing media.
    """

    refractive_index: complex
    thickness_nm: float

    def __post_init__(self) -> None:
        if self.thickness_nm < 0:
            raise ValueError(f"layer thickness must be >= 0, got {self.thickness_nm}")
        if self.refractive_index.real <= 0:
            raise ValueError("Re(n) must be positive")
        if self.refractive_index.imag < 0:
            raise ValueError("Im(n) must be >= 0 (n + ik convention, k absorbing)")


@dataclass(frozen=True)
class LayerStack:
    """Planar stack: semi-infinite ambient, finite layers, semi-infinite substrate.

    Layers are listed from the ambient side toward the substrate.
    """

    ambient_index: float
    layers: tuple[Layer, ...]
    substrate_index: float

    def __post_init__(self) -> None:
        if self.ambient_index <= 0 or self.substrate_index <= 0:
            raise ValueError("ambient and substrate indices must be positive")
        object.__setattr__(self, "layers", tuple(self.layers))


def _characteristic_matrix(layer: Layer, wavelength_nm: float) -> np.ndarray:
    # the matrix formalism is written in the n - ik convention; the public
    # convention here is n + ik, hence the conjugate
    n = complex(layer.refractive_index).conjugate()
    delta = 2.0 * math.pi * n * layer.thickness_nm / wavelength_nm
    cd = cmath.cos(delta)
    sd = cmath.sin(delta)
    return np.array([[cd, 1j * sd / n], [1j * n * sd, cd]], dtype=complex)


def reflectivity(stack: LayerStack, wavelength_nm: float) -> tuple[float, float]:
    """Intensity reflectance and transmittance at normal incidence.

    Uses the standard 2x2 characteristic-matrix formalism. For lossless
    stacks R + T = 1 to numerical precision; with absorbing layers
    R + T <= 1.

    Parameters
    ----------
    stack : LayerStack
    wavelength_nm : float
        Vacuum wavelength, > 0.

    Returns
    -------
    (R, T) : tuple of float
    """
    if wavelength_nm <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength_nm}")
    m = np.eye(2, dtype=complex)
    for layer in stack.layers:
        m = m @ _characteristic_matrix(layer, wavelength_nm)
    n0 = stack.ambient_index
    ns = stack.substrate_index
    b = m[0, 0] + m[0, 1] * ns
    c = m[1, 0] + m[1, 1] * ns
    denom = n0 * b + c
    r = (n0 * b - c) / denom
    t = 2.0 * n0 / denom
    return float(abs(r) ** 2), float(ns / n0 * abs(t) ** 2)


def reflectivity_spectrum(
    stack: LayerStack, wavelengths_nm: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`reflectivity` over a wavelength grid."""
    wavelengths_nm = np.asarray(wavelengths_nm, dtype=float)
    big_r = np.empty(wavelengths_nm.shape)
    big_t = np.empty(wavelengths_nm.shape)
    for i, wl in enumerate(wavelengths_nm.ravel()):
        big_r.flat[i], big_t.flat[i] = reflectivity(stack, float(wl))
    return big_r, big_t


def stopband_center(
    stack: LayerStack,
    lo_nm: float = 700.0,
    hi_nm: float = 820.0,
    step_nm: float = 0.1,
) -> tuple[float, float]:
    """Wavelength of maximal reflectance on [lo, hi] and the peak value."""
    grid = np.arange(lo_nm, hi_nm + step_nm / 2, step_nm)
    big_r, _ = reflectivity_spectrum(stack, grid)
    i = int(np.argmax(big_r))
    return float(grid[i]), float(big_r[i])


def bragg_mirror(
    n_high: float,
    d_high_nm: float,
    n_low: float,
    d_low_nm: float,
    pairs: int,
    ambient_index: float = 1.0,
    substrate_index: float = 1.5,
) -> LayerStack:
    """Alternating high/low-index stack, high-index layer on the ambient side."""
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    layers = (Layer(n_high, d_high_nm), Layer(n_low, d_low_nm)) * pairs
    return LayerStack(ambient_index, layers, substrate_index)


def metal_mirror(
    thickness_nm: float,
    wavelength_nm: float,
    index_table: "IndexTable | None" = None,
    ambient_index: float = 1.0,
    substrate_index: float = 1.5,
) -> LayerStack:
    """Single thin metal film (gold by default) on a transparent substrate."""
    table = index_table if index_table is not None else gold_index()
    return LayerStack(
        ambient_index,
        (Layer(table(wavelength_nm), thickness_nm),),
        substrate_index,
    )


# ---------------------------------------------------------------------------
# tabulated complex refractive indices
# ---------------------------------------------------------------------------


class IndexTable:
    """Linear interpolator over a three-column 'wavelength_nm n k' text table."""

    def __init__(self, wavelength_nm: np.ndarray, n: np.ndarray, k: np.ndarray):
        order = np.argsort(wavelength_nm)
        self.wavelength_nm = np.asarray(wavelength_nm, float)[order]
        self.n = np.asarray(n, float)[order]
        self.k = np.asarray(k, float)[order]
        if self.wavelength_nm.size < 2:
            raise ValueError("index table needs at least two rows")

    def __call__(self, wavelength_nm: float) -> complex:
        wl = self.wavelength_nm
        if not (wl[0] <= wavelength_nm <= wl[-1]):
            raise ValueError(
                f"wavelength {wavelength_nm} nm outside table range "
                f"[{wl[0]}, {wl[-1]}] nm"
            )
        n = float(np.interp(wavelength_nm, wl, self.n))
        k = float(np.interp(wavelength_nm, wl, self.k))
        return complex(n, k)


def load_index_table(path) -> IndexTable:
    """Load a 'wavelength_nm n k' whitespace table ('#' comment lines)."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 3:
        raise ValueError(f"expected 3 columns (wavelength_nm n k), got {data.shape[1]}")
    return IndexTable(data[:, 0], data[:, 1], data[:, 2])


_GOLD_TABLE: IndexTable | None = None


def gold_index() -> IndexTable:
    """Packaged gold optical constants (700-820 nm)."""
    global _GOLD_TABLE
    if _GOLD_TABLE is None:
        ref = resources.files("spskit.data").joinpath("gold_n_k.txt")
        with resources.as_file(ref) as p:
            _GOLD_TABLE = load_index_table(p)
    return _GOLD_TABLE


# ---------------------------------------------------------------------------
# plano-concave cavity geometry and mode structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CavityGeometry:
    """Plano-concave Fabry-Perot cavity: flat mirror + concave mirror.

    Stability requires 0 < length < mirror radius (math.inf allowed for a
    planar second mirror).
    """

    length_um: float
    radius_um: float

    def __post_init__(self) -> None:
        if self.length_um <= 0:
            raise StabilityError(f"cavity length must be > 0, got {self.length_um}")
        if not self.length_um < self.radius_um:
            raise StabilityError(
                f"unstable geometry: need length < mirror radius, got "
                f"L={self.length_um} um, R={self.radius_um} um"
            )


@dataclass(frozen=True)
class CavityMode:
    """One resonance: longitudinal order q, transverse order t, energy."""

    q: int
    transverse_order: int
    energy_ev: float


def longitudinal_mode_spacing_mev(length_um: float) -> float:
    """Free spectral range hc/2L in meV."""
    if length_um <= 0:
        raise ValueError("length must be positive")
    return HC_EV_NM / (2.0 * length_um * 1000.0) * 1000.0


def transverse_mode_spacing_mev(geometry: CavityGeometry) -> float:
    """Gouy-phase splitting between transverse mode families, in meV.

    dE_t = dE_long * arccos(sqrt(1 - L/R)) / pi for a plano-concave cavity.
    """
    g = 1.0 - geometry.length_um / geometry.radius_um
    gouy = math.acos(math.sqrt(g))
    return longitudinal_mode_spacing_mev(geometry.length_um) * gouy / math.pi


def cavity_mode_spectrum(
    geometry: CavityGeometry,
    e_min_ev: float,
    e_max_ev: float,
    n_transverse: int = 3,
) -> list[CavityMode]:
    """Resonances inside [e_min, e_max], sorted by energy.

    E(q, t) = q*dE_long + (t+1)*dE_t, with q the longitudinal order and
    t = 0..n_transverse-1 the transverse family member.
    """
    if e_min_ev >= e_max_ev:
        raise ValueError("need e_min < e_max")
    de_l = longitudinal_mode_spacing_mev(geometry.length_um) / 1000.0
    de_t = transverse_mode_spacing_mev(geometry) / 1000.0
    q_lo = max(1, int(math.floor(e_min_ev / de_l)) - n_transverse - 1)
    q_hi = int(math.ceil(e_max_ev / de_l)) + 1
    modes = [
        CavityMode(q, t, q * de_l + (t + 1) * de_t)
        for q in range(q_lo, q_hi + 1)
        for t in range(n_transverse)
        if e_min_ev <= q * de_l + (t + 1) * de_t <= e_max_ev
    ]
    modes.sort(key=lambda m: m.energy_ev)
    return modes


def gaussian_waist_um(geometry: CavityGeometry, wavelength_nm: float) -> float:
    """Fundamental-mode waist on the flat mirror.

    w0^2 = (lambda*L/pi) * sqrt(R/L - 1); diverges for a planar-planar
    geometry (R -> inf).
    """
    if wavelength_nm <= 0:
        raise ValueError("wavelength must be positive")
    lam_um = wavelength_nm / 1000.0
    ratio = geometry.radius_um / geometry.length_um - 1.0
    return math.sqrt(lam_um * geometry.length_um / math.pi * math.sqrt(ratio))


def mode_volume_um3(geometry: CavityGeometry, wavelength_nm: float) -> float:
    """Gaussian-mode volume V = (pi/4) w0^2 L."""
    w0 = gaussian_waist_um(geometry, wavelength_nm)
    return math.pi / 4.0 * w0 * w0 * geometry.length_um


def roc_from_spherical_cap(diameter_um: float, depth_nm: float) -> float:
    """Radius of curvature of a spherical cap of given aperture and depth.

    R = (a^2 + h^2) / (2h) with a the aperture radius and h the depth.
    """
    if diameter_um <= 0 or depth_nm <= 0:
        raise GeometryError("diameter and depth must be positive")
    h_um = depth_nm / 1000.0
    if 2.0 * h_um > diameter_um:
        raise GeometryError(
            f"cap depth {depth_nm} nm exceeds hemisphere for diameter "
            f"{diameter_um} um"
        )
    a = diameter_um / 2.0
    return (a * a + h_um * h_um) / (2.0 * h_um)


def kappa_mev(energy_ev: float, quality_factor: float) -> float:
    """Cavity linewidth kappa = E/Q, in meV."""
    if quality_factor <= 0:
        raise ValueError("Q must be positive")
    return energy_ev / quality_factor * 1000.0


def purcell_factor(
    geometry: CavityGeometry,
    wavelength_nm: float,
    quality_factor: float,
    antinode_overlap: float = DEFAULT_ANTINODE_OVERLAP,
    medium_index: float = 1.0,
) -> float:
    """Diagnostic resonant enhancement estimate.

    F = (3 / 4 pi^2) (lambda/n)^3 (Q/V) * xi, with V the Gaussian mode
    volume and xi an antinode-overlap factor absorbing the emitter's real
    position and dipole overlap with the standing wave. This is a
    rough-order estimate used for reporting; dynamics simulations take the
    measured decay model instead.
    """
    lam_um = wavelength_nm / 1000.0 / medium_index
    v = mode_volume_um3(geometry, wavelength_nm)
    return 3.0 / (4.0 * math.pi**2) * lam_um**3 / v * quality_factor * antinode_overlap

