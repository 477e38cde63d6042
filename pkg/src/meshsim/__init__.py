"""meshsim: a deterministic simulator of a Consul-style service mesh with
four toggleable security mechanisms and a red-team attack harness."""

from .adversary import AdversaryController, GoalReport
from .cluster import Cluster
from .harness import (calibrate, defaults_matches, defaults_report, run_matrix,
                      run_scenario)
from .scenario import (AdversarySpec, ScenarioSpec, SimConstants, Topology,
                       load_scenario)
from .security import SecurityConfig

__version__ = "0.1.0"

__all__ = [
    "AdversaryController", "AdversarySpec", "Cluster", "GoalReport",
    "ScenarioSpec", "SecurityConfig", "SimConstants", "Topology",
    "calibrate", "defaults_matches", "defaults_report", "load_scenario",
    "run_matrix", "run_scenario", "__version__",
]
