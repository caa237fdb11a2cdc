"""spskit: simulation and analysis toolkit for pulsed single-photon sources.

Subpackages cover cavity optics (:mod:`spskit.optics`), time-tag Monte
Carlo (:mod:`spskit.montecarlo`), correlation histogramming
(:mod:`spskit.correlator`), weighted least-squares models
(:mod:`spskit.fitkit`), derived figures of merit (:mod:`spskit.analysis`),
time-tag file I/O (:mod:`spskit.ptag`) and the command line
(:mod:`spskit.cli`).
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
