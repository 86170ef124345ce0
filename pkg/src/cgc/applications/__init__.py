"""Application builders and solvers on top of the completion engine."""

from .circuit import CircuitConfig, build_circuit, run_circuit, sample_mask, simulate_circuit
from .dimred import DimRedConfig, DimRedResult, active_subspace, autoencode, kernel_pca, nonlinear_pca
from .emd import EmdConfig, EmdResult, emd_energy, energy_map, extract_ridges
from .modes import ModeProblem, default_modes, mode_decompose
from .pde import PdeProblem, grid_problem, pde_learn, pde_solve
from .phase import PhaseIteration, iterate_phase, phase_refine
from .warp import WarpConfig, WarpResult, deep_warp, two_moons

__all__ = [
    "CircuitConfig", "build_circuit", "run_circuit", "sample_mask", "simulate_circuit",
    "DimRedConfig", "DimRedResult", "active_subspace", "autoencode", "kernel_pca", "nonlinear_pca",
    "EmdConfig", "EmdResult", "emd_energy", "energy_map", "extract_ridges",
    "ModeProblem", "default_modes", "mode_decompose",
    "PdeProblem", "grid_problem", "pde_learn", "pde_solve",
    "PhaseIteration", "iterate_phase", "phase_refine",
    "WarpConfig", "WarpResult", "deep_warp", "two_moons",
]
