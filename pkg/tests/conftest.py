import pytest

from meshsim.cluster import Cluster
from meshsim.harness import matrix_spec, run_matrix, run_scenario
from meshsim.scenario import ScenarioSpec, Topology
from meshsim.security import SecurityConfig


def benign_spec(seed=42, security=None, max_ticks=80, **kw) -> ScenarioSpec:
    return ScenarioSpec(seed=seed, name="test",
                        security=security or SecurityConfig(),
                        max_ticks=max_ticks, **kw)


def converged_cluster(seed=42, security=None, topology=None) -> Cluster:
    spec = ScenarioSpec(seed=seed, name="test",
                        security=security or SecurityConfig(),
                        topology=topology or Topology())
    cl = Cluster(spec)
    cl.run_setup()
    return cl


def run_cell(level, column, seed=42, sybil_count=25, constants=None):
    return run_scenario(matrix_spec(level, column, seed, constants, sybil_count))


@pytest.fixture(scope="session")
def matrix_report():
    return run_matrix(seed=42)
