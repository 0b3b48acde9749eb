"""Optimal control of a geometric phase gate between two transmons coupled
through a driven cavity.

The modules build the model (:mod:`system`), describe control pulses
(:mod:`pulse`), propagate the Schroedinger equation (:mod:`propagator`),
define gate functionals (:mod:`functionals`), optimize with Krotov's method
(:mod:`krotov`) or a Nelder-Mead search over the pulse parameters
(:mod:`simplex`), evaluate gates (:mod:`gate_analysis`) and run complete
optimization schemes (:mod:`orchestrator`).
"""
from .system import SystemParams, TransmonModel, build_model
from .pulse import AnalyticPulseParams, ControlField, ShapeFunction, sample_analytic, read_pulse, write_pulse
from .propagator import propagate, ChebyshevStepper
from .functionals import eval_geo, eval_sm, eval_splx, geo_functional, sm_functional
from .gate_analysis import gate_metrics, closest_diagonal_pe, nonlocal_phase, average_gate_fidelity
from .krotov import KrotovConfig, KrotovOptimizer, run_krotov
from .simplex import SimplexConfig, run_simplex
from .orchestrator import RunConfig, RunSummary, load_config, parse_config, run, report

__version__ = "0.1.0"
