"""Transient gas network simulation and model order reduction."""

from .evaluation import compare, l2l2_error, morscore, sweep
from .model import SemiDiscreteModel, assemble, build_model, steady_state
from .network import Network, PipeSpec, Scenario, parse_network, parse_scenario, validate
from .reductors import REDUCTORS, collect_snapshots, galerkin_project, train_basis
from .solvers import SOLVERS, integrate, make_stepper

__version__ = "0.1.0"

__all__ = [
    "Network", "PipeSpec", "Scenario", "parse_network", "parse_scenario", "validate",
    "SemiDiscreteModel", "assemble", "build_model", "steady_state",
    "SOLVERS", "integrate", "make_stepper",
    "REDUCTORS", "collect_snapshots", "galerkin_project", "train_basis",
    "compare", "l2l2_error", "morscore", "sweep",
]
