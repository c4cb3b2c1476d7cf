"""Relaxation dynamics and Mpemba-effect statistics of a driven three-level ion."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ComplexSlowMode,
    DegenerateAtSteadyState,
    DegenerateSteadyState,
    DimensionMismatch,
    GridMismatch,
    InvalidState,
    MpembaError,
    NoSignChange,
    NonDiagonalizable,
    NumericalError,
    OscillatoryMode,
    TiedStart,
)
from .operators import Superoperator, build_liouvillian, exp_evolve, schatten_norm  # noqa: E402
from .spectral import Spectrum, decompose, overlaps  # noqa: E402
from .model import IonParams, ion_liouvillian, rotated_state, sample_haar_pure, state_family_context  # noqa: E402
from .relaxation import GridSpec, Trajectory, trajectory  # noqa: E402
from .analysis import classify_pair, crossing_times, phase_diagram, s_sweep, speed_overlap_correlation  # noqa: E402
from .gates import GatePlan, mle_reconstruct, simulate_tomography, tomography_setup  # noqa: E402
