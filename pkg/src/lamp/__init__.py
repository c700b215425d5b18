"""In-band Layer 7 attack mitigation on programmable switches, plus a simulator to measure it."""

from .fabric import Mode, ScenarioConfig, Topology, build_fabric, run_scenario, run_trial
from .scenario import load_scenario

__all__ = ["Mode", "ScenarioConfig", "Topology", "build_fabric", "load_scenario", "run_scenario", "run_trial"]
