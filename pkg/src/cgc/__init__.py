"""Computational graph completion: recover unknown functions in a graph of
variables from sparse observations with kernel (Gaussian process) priors."""

from .dsl import Program, load, lower, parse, serialize
from .errors import (
    CgcError,
    DegenerateWindow,
    InputError,
    InvalidGraph,
    NotPositiveDefinite,
    NumericalError,
    ParseError,
)
from .gp import RepresenterModel, interpolate, predict, quad_form, regress
from .graph_model import Edge, Graph, Known, Node, NodeKind, SampleSet, Unknown, Wire, validate
from .kernels import Gaussian, LinearBias, LinearFunctional, parse_kernel
from .optimizer import OptimizerOptions, check_grad, minimize
from .pipeline import solve
from .solver import CgcObjective, CgcProblem, CgcSolution, RelaxationConfig, SolveState, assemble_objective

__version__ = "0.1.0"
