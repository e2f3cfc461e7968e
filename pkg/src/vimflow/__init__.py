"""Generalized variational iteration solver for Navier-Stokes and micropolar flow.

Modules
-------
grid     structured space-time grid, fields and finite-difference operators
expr     analytic expression parser, differentiator and evaluator
systems  residuals of the normalized flow systems and boundary handling
vim      the iteration engine and contraction diagnostics
verify   manufactured-solution harness
io       CSV/JSON-lines/TOML serialization
cli      ``vimflow`` command
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    GridError,
    GridMismatch,
    InsufficientData,
    IoError,
    LadderTooShort,
    MissingMicrorotation,
    NonFinite,
    ParseError,
    SameAxis,
    TemporalAxis,
    VimflowError,
)
from .grid import Axis, GridSpec, ScalarField, VectorField
from .systems import FlowState, FluidParams, ProblemKind, ProblemSpec
from .vim import ConvergenceReport, IterationConfig, Status, iterate, vim_step
