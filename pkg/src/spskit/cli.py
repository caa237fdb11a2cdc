"""Command-line front end: simulate, analyze, cavity.

Every command reads an INI config (see :mod:`spskit.config`), writes its
outputs into ``--out``, and finishes with a JSON manifest carrying the
resolved configuration, the effective seed, the package version, and a
SHA-256 checksum of every file written. Outputs contain no timestamps,
so a re-run with the same inputs is byte-identical; the manifest is the
provenance record for the run.

Exit status is 0 only when every output file was written; any error
(bad flags, config violations, malformed input files, failed fits)
prints a one-line ``error:`` message on stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    EstimationError,
    brightness_budget,
    dop_fit,
    hbt_g2,
    hom_visibility,
    lifetime_fit,
    linewidth,
)
from .analysis import DetunedDecayModel
from .config import ConfigError, RunConfig, load_config
from .correlator import write_histogram_csv
from .fitkit import IRFHistogram, RankDeficiencyError
from .montecarlo import (
    simulate_decay,
    simulate_hbt,
    simulate_hom,
    simulate_polarization_sweep,
)
from .optics import (
    HC_EV_NM,
    CavityGeometry,
    GeometryError,
    StabilityError,
    bragg_mirror,
    cavity_mode_spectrum,
    gaussian_waist_um,
    kappa_mev,
    longitudinal_mode_spacing_mev,
    purcell_factor,
    reflectivity_spectrum,
    roc_from_spherical_cap,
    stopband_center,
    transverse_mode_spacing_mev,
)
from .ptag import PtagFormatError, read_ptag, write_ptag

__all__ = ["main"]


class CliError(RuntimeError):
    """A fatal command error with a user-facing message."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write_json(path: Path, doc) -> None:
    path.write_text(_json_text(doc), encoding="utf-8", newline="\n")


def _write_manifest(
    out_dir: Path,
    command: str,
    cfg: RunConfig | None,
    seed: int | None,
    outputs: list[Path],
    inputs: dict[str, str] | None = None,
) -> Path:
    doc = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": cfg.sections if cfg is not None else None,
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    if inputs is not None:
        doc["inputs"] = inputs
    path = out_dir / f"{command}.manifest.json"
    _write_json(path, doc)
    return path


def _checksum_inputs(paths: list[Path]) -> dict[str, str]:
    return {p.name: _sha256(p) for p in paths}


def _fit_summary(fit) -> dict:
    return {
        "params": dict(fit.params),
        "errors": dict(fit.errors),
        "reduced_chi2": fit.reduced_chi2,
        "converged": fit.converged,
    }


def _analysis_section(cfg: RunConfig | None) -> dict:
    if cfg is not None and cfg.has("analysis"):
        return cfg.sections["analysis"]
    return {}


def _correlogram_irf(section: dict, bin_width_ps: int) -> IRFHistogram | None:
    """IRF for a two-detector correlogram.

    A delay axis built from the difference of two jittered detections
    carries sqrt(2) times the single-detector jitter width.
    """
    if "irf_file" in section:
        return _load_irf_csv(Path(section["irf_file"]))
    jitter = section.get("detector_jitter_fwhm_ps", 0.0)
    if jitter > 0:
        return IRFHistogram.gaussian(jitter * math.sqrt(2.0), bin_width_ps)
    return None


def _detector_irf(section: dict, bin_width_ps: int) -> IRFHistogram | None:
    """IRF for sync -> detector delays (single jittered detector)."""
    if "irf_file" in section:
        return _load_irf_csv(Path(section["irf_file"]))
    jitter = section.get("detector_jitter_fwhm_ps", 0.0)
    if jitter > 0:
        return IRFHistogram.gaussian(jitter, bin_width_ps)
    return None


def _load_irf_csv(path: Path) -> IRFHistogram:
    offsets, weights = _read_csv_columns(path, 2)
    try:
        return IRFHistogram(np.asarray(offsets), np.asarray(weights))
    except ValueError as exc:
        raise CliError(f"{path}: bad IRF table: {exc}") from None


def _read_csv_columns(path: Path, n_cols: int) -> list[np.ndarray]:
    """Read a numeric CSV with an optional header line; strict about shape."""
    if not path.is_file():
        raise CliError(f"{path}: no such file")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1:
                try:
                    [float(p) for p in parts]
                except ValueError:
                    continue  # header line
            if len(parts) != n_cols:
                raise CliError(
                    f"{path}:{lineno}: expected {n_cols} comma-separated values, "
                    f"got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise CliError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise CliError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    return [data[:, i] for i in range(n_cols)]


def _read_stream(path: Path):
    try:
        return read_ptag(path)
    except PtagFormatError as exc:
        raise CliError(f"{path}: {exc}") from None
    except OSError as exc:
        raise CliError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# simulate


def _cmd_simulate(args) -> None:
    cfg = load_config(args.config)
    out_dir = _ensure_out(args.out)
    seed = args.seed if args.seed is not None else cfg.require("train")["seed"]
    emitter = cfg.emitter()
    chain = cfg.chain()
    train = cfg.train(seed)

    outputs: list[Path] = []
    if args.mode == "hbt":
        stream = simulate_hbt(emitter, chain, train)
        outputs.append(_write_stream(out_dir / "hbt.ptag", stream))
    elif args.mode == "decay":
        stream = simulate_decay(emitter, chain, train)
        outputs.append(_write_stream(out_dir / "decay.ptag", stream))
    else:  # hom
        if not cfg.has("mzi"):
            raise ConfigError(
                "mode=hom needs an [mzi] section (arm_delay_ns, polarization)",
                cfg.path,
            )
        pol = cfg.sections["mzi"]["polarization"]
        modes = ("HH", "HV") if pol == "both" else (pol,)
        for mode in modes:
            stream = simulate_hom(emitter, chain, train, cfg.mzi(mode))
            outputs.append(
                _write_stream(out_dir / f"hom_{mode.lower()}.ptag", stream)
            )

    _write_manifest(out_dir, f"simulate_{args.mode}", cfg, seed, outputs)


def _write_stream(path: Path, stream) -> Path:
    write_ptag(path, stream)
    return path


# ---------------------------------------------------------------------------
# analyze


def _cmd_analyze(args) -> None:
    cfg = load_config(args.config) if args.config else None
    out_dir = _ensure_out(args.out)
    section = _analysis_section(cfg)
    inputs = [Path(p) for p in args.input or []]
    handler = {
        "g2": _analyze_g2,
        "hom": _analyze_hom,
        "lifetime": _analyze_lifetime,
        "dop": _analyze_dop,
        "budget": _analyze_budget,
        "linewidth": _analyze_linewidth,
    }[args.measurement]
    handler(args, cfg, section, inputs, out_dir)


def _require_inputs(inputs: list[Path], n: int, what: str) -> list[Path]:
    if len(inputs) != n:
        raise CliError(f"expected {n} --input file(s): {what}; got {len(inputs)}")
    return inputs


def _require_config(cfg: RunConfig | None, why: str) -> RunConfig:
    if cfg is None:
        raise CliError(f"--config is required: {why}")
    return cfg


def _analyze_g2(args, cfg, section, inputs, out_dir):
    (path,) = _require_inputs(inputs, 1, "one PTAG correlation stream")
    cfg = _require_config(cfg, "the pulse period comes from [train].rep_rate_khz")
    stream = _read_stream(path)
    bin_width = section.get("bin_width_ps", 100)
    irf = _correlogram_irf(section, bin_width)
    result = hbt_g2(
        stream,
        irf,
        cfg.period_ps(),
        n_side_peaks=section.get("n_side_peaks", 6),
        bin_width_ps=bin_width,
        threads=args.threads,
    )
    hist_csv = out_dir / "g2_histogram.csv"
    write_histogram_csv(result.histogram, hist_csv)
    doc = {
        "measurement": "g2",
        "g2_zero": result.g2_zero,
        "g2_error": result.g2_error,
        "tau_fit_ns": result.tau_fit_ns,
        "fit": _fit_summary(result.fit),
        "inputs": _checksum_inputs(inputs),
    }
    json_path = out_dir / "g2.json"
    _write_json(json_path, doc)
    _write_manifest(
        out_dir, "analyze_g2", cfg, args.seed, [json_path, hist_csv],
        inputs=doc["inputs"],
    )


def _analyze_hom(args, cfg, section, inputs, out_dir):
    hh_path, hv_path = _require_inputs(
        inputs, 2, "co-polarized then cross-polarized PTAG streams"
    )
    cfg = _require_config(cfg, "the pulse period comes from [train].rep_rate_khz")
    stream_hh = _read_stream(hh_path)
    stream_hv = _read_stream(hv_path)
    result = hom_visibility(
        stream_hh,
        stream_hv,
        cfg.period_ps(),
        section.get("windows_ns", (3.0, 2.0, 1.1)),
        n_side_peaks=section.get("n_side_peaks", 6),
        bin_width_ps=section.get("bin_width_ps", 50),
        threads=args.threads,
    )
    csv_hh = out_dir / "hom_hh_histogram.csv"
    csv_hv = out_dir / "hom_hv_histogram.csv"
    write_histogram_csv(result.histogram_hh, csv_hh)
    write_histogram_csv(result.histogram_hv, csv_hv)
    doc = {
        "measurement": "hom",
        "windows": [
            {
                "window_ns": w.window_ns,
                "area_hh": w.area_hh,
                "area_hv": w.area_hv,
                "g2_hh": w.g2_hh,
                "g2_hv": w.g2_hv,
                "visibility": w.visibility,
                "ci_low": w.ci_low,
                "ci_high": w.ci_high,
            }
            for w in result.windows
        ],
        "fit_hh": _fit_summary(result.fit_hh),
        "fit_hv": _fit_summary(result.fit_hv),
        "inputs": _checksum_inputs(inputs),
    }
    json_path = out_dir / "hom.json"
    _write_json(json_path, doc)
    _write_manifest(
        out_dir, "analyze_hom", cfg, args.seed, [json_path, csv_hh, csv_hv],
        inputs=doc["inputs"],
    )


def _analyze_lifetime(args, cfg, section, inputs, out_dir):
    (path,) = _require_inputs(inputs, 1, "one PTAG decay stream")
    stream = _read_stream(path)
    bin_width = section.get("bin_width_ps")
    irf = _detector_irf(section, bin_width if bin_width else 10)
    result = lifetime_fit(stream, irf, bin_width_ps=bin_width)
    hist_csv = out_dir / "lifetime_histogram.csv"
    write_histogram_csv(result.histogram, hist_csv)
    doc = {
        "measurement": "lifetime",
        "tau_ns": result.tau_ns,
        "tau_error_ns": result.tau_error_ns,
        "fit": _fit_summary(result.fit),
        "inputs": _checksum_inputs(inputs),
    }
    json_path = out_dir / "lifetime.json"
    _write_json(json_path, doc)
    _write_manifest(
        out_dir, "analyze_lifetime", cfg, args.seed, [json_path, hist_csv],
        inputs=doc["inputs"],
    )


def _analyze_dop(args, cfg, section, inputs, out_dir):
    outputs = []
    if inputs:
        (path,) = _require_inputs(inputs, 1, "one CSV of angle_deg,intensity")
        angles, intensities = _read_csv_columns(path, 2)
        input_sums = _checksum_inputs(inputs)
        seed = args.seed
    else:
        cfg_req = _require_config(
            cfg, "synthesizing a sweep needs [emitter] (and optionally [analysis])"
        )
        seed = args.seed if args.seed is not None else (
            cfg_req.sections.get("train", {}).get("seed", 0)
        )
        n_angles = section.get("n_angles", 19)
        angles = np.linspace(0.0, 360.0, n_angles)
        angles, intensities = simulate_polarization_sweep(
            cfg_req.emitter(),
            angles,
            section.get("mean_peak_counts", 100000.0),
            seed,
        )
        sweep_csv = out_dir / "dop_sweep.csv"
        with open(sweep_csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("angle_deg,intensity\n")
            for a, i in zip(angles, intensities):
                fh.write(f"{a:.4f},{i:.1f}\n")
        outputs.append(sweep_csv)
        input_sums = {}
    result = dop_fit(angles, intensities)
    doc = {
        "measurement": "dop",
        "rho": result.rho,
        "rho_error": result.rho_error,
        "theta0_deg": result.theta0_deg,
        "theta0_error": result.theta0_error,
        "theta0_undefined": result.theta0_undefined,
        "fit": _fit_summary(result.fit),
        "inputs": input_sums,
    }
    json_path = out_dir / "dop.json"
    _write_json(json_path, doc)
    outputs.insert(0, json_path)
    _write_manifest(out_dir, "analyze_dop", cfg, seed, outputs, inputs=input_sums)


def _analyze_budget(args, cfg, section, inputs, out_dir):
    cfg = _require_config(cfg, "the [budget] section holds the efficiency table")
    table = cfg.budget()
    result = brightness_budget(table)
    doc = {
        "measurement": "budget",
        "entries": [
            {"label": e.label, "value_pct": 100.0 * e.efficiency,
             "error_pct": 100.0 * e.abs_error}
            for e in table.entries
        ],
        "total_efficiency_pct": 100.0 * result.total_efficiency,
        "total_error_pct": 100.0 * result.total_error,
        "rate_per_pulse": result.rate_per_pulse,
        "brightness_pct": 100.0 * result.brightness,
        "brightness_error_pct": 100.0 * result.brightness_error,
        "inputs": {},
    }
    json_path = out_dir / "budget.json"
    _write_json(json_path, doc)
    _write_manifest(out_dir, "analyze_budget", cfg, args.seed, [json_path])


def _analyze_linewidth(args, cfg, section, inputs, out_dir):
    (path,) = _require_inputs(inputs, 1, "one CSV of energy_ev,counts")
    energy, counts = _read_csv_columns(path, 2)
    result = linewidth(np.column_stack([energy, counts]))
    doc = {
        "measurement": "linewidth",
        "fwhm_uev": result.fwhm_uev,
        "fwhm_error_uev": result.fwhm_error_uev,
        "center_ev": result.center_ev,
        "resolution_limited": result.resolution_limited,
        "fit": _fit_summary(result.fit),
        "inputs": _checksum_inputs(inputs),
    }
    json_path = out_dir / "linewidth.json"
    _write_json(json_path, doc)
    _write_manifest(
        out_dir, "analyze_linewidth", cfg, args.seed, [json_path],
        inputs=doc["inputs"],
    )


# ---------------------------------------------------------------------------
# cavity


def _cmd_cavity(args) -> None:
    cfg = load_config(args.config)
    out_dir = _ensure_out(args.out)
    if cfg.has("cavity"):
        s = cfg.sections["cavity"]
    else:
        # an empty raw section resolves to pure schema defaults
        from .config import _resolve_section

        s = _resolve_section(Path(cfg.path), "cavity", {})

    stack = bragg_mirror(
        s["dbr_n_high"], s["dbr_d_high_nm"], s["dbr_n_low"], s["dbr_d_low_nm"],
        s["dbr_pairs"], substrate_index=s["dbr_substrate_index"],
    )
    wavelengths = np.linspace(s["scan_min_nm"], s["scan_max_nm"], s["scan_points"])
    big_r, big_t = reflectivity_spectrum(stack, wavelengths)
    center_nm, peak_r = stopband_center(stack)

    geometry = CavityGeometry(
        s["length_um"],
        roc_from_spherical_cap(s["lens_diameter_um"], s["lens_depth_nm"]),
    )
    emitter_wl_nm = HC_EV_NM / s["emitter_energy_ev"]
    e_lo = HC_EV_NM / s["scan_max_nm"]
    e_hi = HC_EV_NM / s["scan_min_nm"]
    modes = cavity_mode_spectrum(geometry, e_lo, e_hi, s["n_transverse"])
    waist = gaussian_waist_um(geometry, emitter_wl_nm)
    kappa = kappa_mev(s["emitter_energy_ev"], s["quality_factor"])

    decay_model = DetunedDecayModel(
        gamma_free_per_ns=s["gamma_free_per_ns"],
        f_res=s["f_resonant"],
        f_inh=s["f_inhibited"],
        kappa_mev=kappa,
    )
    detunings = np.linspace(
        -s["detuning_span_mev"], s["detuning_span_mev"], s["detuning_points"]
    )
    rates = decay_model.rate_per_ns(detunings)

    stopband_csv = out_dir / "cavity_stopband.csv"
    with open(stopband_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("wavelength_nm,reflectivity,transmission\n")
        for wl, r, t in zip(wavelengths, big_r, big_t):
            fh.write(f"{wl:.4f},{r:.10f},{t:.10f}\n")
    modes_csv = out_dir / "cavity_modes.csv"
    with open(modes_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("longitudinal_order,transverse_order,energy_ev\n")
        for m in modes:
            fh.write(f"{m.q},{m.transverse_order},{m.energy_ev:.8f}\n")
    decay_csv = out_dir / "cavity_decay.csv"
    with open(decay_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("detuning_mev,rate_per_ns,lifetime_ns\n")
        for d, r in zip(detunings, rates):
            fh.write(f"{d:.5f},{r:.8f},{1.0 / r:.8f}\n")

    doc = {
        "stopband": {"center_nm": center_nm, "peak_reflectivity": peak_r},
        "longitudinal_spacing_mev": longitudinal_mode_spacing_mev(s["length_um"]),
        "transverse_spacing_mev": transverse_mode_spacing_mev(geometry),
        "n_modes_in_scan": len(modes),
        "waist_um": waist,
        "mode_diameter_um": 2.0 * waist,
        "kappa_mev": kappa,
        "purcell_resonant": purcell_factor(
            geometry, emitter_wl_nm, s["quality_factor"]
        ),
        "mirror_radius_um": geometry.radius_um,
        "decay_rate_ratio": decay_model.rate_ratio,
    }
    json_path = out_dir / "cavity.json"
    _write_json(json_path, doc)
    _write_manifest(
        out_dir, "cavity", cfg, args.seed,
        [json_path, stopband_csv, modes_csv, decay_csv],
    )


# ---------------------------------------------------------------------------
# entry point


def _ensure_out(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _add_common(parser: argparse.ArgumentParser, needs_config: bool) -> None:
    parser.add_argument(
        "--config", required=needs_config, metavar="PATH",
        help="INI run configuration",
    )
    parser.add_argument(
        "--seed", type=int, default=None, metavar="U64",
        help="override the seed from [train]",
    )
    parser.add_argument(
        "--out", default=".", metavar="DIR", help="output directory (default: .)"
    )
    parser.add_argument(
        "--threads", type=int, default=1, metavar="N",
        help="worker threads; 0 = auto; results are identical for any N",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spskit",
        description="Single-photon-source toolkit: simulation, correlation, fits.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a time-tag stream")
    p_sim.add_argument("--mode", required=True, choices=("hbt", "hom", "decay"))
    _add_common(p_sim, needs_config=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_ana = sub.add_parser("analyze", help="estimate source figures of merit")
    p_ana.add_argument(
        "--measurement", required=True,
        choices=("g2", "hom", "lifetime", "dop", "budget", "linewidth"),
    )
    p_ana.add_argument(
        "--input", nargs="*", metavar="FILE",
        help="input PTAG/CSV file(s), per measurement",
    )
    _add_common(p_ana, needs_config=False)
    p_ana.set_defaults(func=_cmd_analyze)

    p_cav = sub.add_parser("cavity", help="mirror, mode, and decay-rate report")
    _add_common(p_cav, needs_config=True)
    p_cav.set_defaults(func=_cmd_cavity)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads < 0:
        print("error: --threads must be >= 0", file=sys.stderr)
        return 2
    if args.threads == 0:
        args.threads = max(1, os.cpu_count() or 1)
    try:
        args.func(args)
    except (
        CliError,
        ConfigError,
        PtagFormatError,
        EstimationError,
        RankDeficiencyError,
        StabilityError,
        GeometryError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
