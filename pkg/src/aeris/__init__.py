"""Multi-UAV, multi-RIS aerial coverage simulator.

DRL path planning for coverage, PSO over quantized RIS phases for
throughput, brute-force and random-waypoint baselines, and a sweep harness.
"""
from .channel import ChannelParams, best_link, snr
from .energy import EnergyParams, step_energy
from .environment import EnvConfig, UavSwarmEnv, coverage_count, run_episode
from .kernels import BACKEND as KERNEL_BACKEND
from .phaseopt import PhaseConfig, PsoConfig, exhaustive_best, optimize
from .scenario import AreaGrid, ClusterSpec, ScenarioState, generate_scenario, load_scenario, save_scenario

__version__ = "0.1.0"

__all__ = [
    "AreaGrid", "ChannelParams", "ClusterSpec", "EnergyParams", "EnvConfig", "KERNEL_BACKEND", "PhaseConfig",
    "PsoConfig", "ScenarioState", "UavSwarmEnv", "best_link", "coverage_count", "exhaustive_best",
    "generate_scenario", "load_scenario", "optimize", "run_episode", "save_scenario", "snr", "step_energy",
]
