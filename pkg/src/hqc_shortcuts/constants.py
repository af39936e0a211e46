"""Constants for hqc-shortcuts.  Overrideable for testing."""

from pathlib import Path

from scipy import constants as _sc

CONFIG_FILE = Path("/etc/hqc-shortcuts/config.yaml")
ENV_PREFIX = "HQC_SHORTCUTS_"
OUTPUT_ROOT = Path("hqc-output")
ROOT_LOGGER = "hqc_shortcuts"

# Internal units are microseconds and radians per microsecond.
TWO_PI = 2.0 * _sc.pi
SPEED_OF_LIGHT = _sc.c
"""Speed of light in m/s."""

HERMITIAN_TOL = 1e-12
NORMALIZATION_TOL = 1e-12
DEGENERACY_TOL = 1e-9
"""Default degeneracy grouping tolerance, relative to the spectral range."""
FIDELITY_IMAG_TOL = 1e-10

RHO_HERMITIAN_TOL = 1e-10
RHO_TRACE_TOL = 1e-8
RHO_MIN_EIGENVALUE = -1e-7
NORM_DRIFT_TOL = 1e-8

CD_HERMITIAN_TOL = 1e-10
FD_STEP_FRACTION = 1e-4
"""Default finite-difference step as a fraction of the shortest segment."""

LOOP_CLOSURE_TOL = 1e-8
HOLONOMY_UNITARITY_TOL = 1e-9

DISPERSIVE_RATIO = 10.0
"""Minimum detuning-to-coupling ratio accepted in the dispersive regime."""
EXCITATION_CONSERVATION_TOL = 1e-12

SUPEROPERATOR_MAX_SIDE = 256
"""Largest Liouville-space side (Hilbert dimension squared) propagated with
a dense superoperator."""

DEFAULT_TOL = 1e-9
DEFAULT_SAMPLES = 201
DEFAULT_FOCK_CUTOFF = 2
DEFAULT_RAMAN_COUPLING = TWO_PI * 50.0

CSV_SMALL = 1e-3
"""Magnitudes below this are written in exponent notation."""
