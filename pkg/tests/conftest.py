import numpy as np
import pytest

from hardising import gadgets
from hardising.ising import IsingModel


@pytest.fixture(scope="session")
def tiny_edge_instance():
    """Two-vertex model with an edge, r overridden for brute force (N=18)."""
    H = IsingModel(J=np.array([[0.0, 0.05], [0.05, 0.0]]), h=np.array([0.2, -0.1]))
    plan = gadgets.plan(H, gamma=2.0, eps=0.04, r_override=7)
    return gadgets.materialize(plan)


@pytest.fixture(scope="session")
def single_gadget_instance():
    """One-vertex model, r=5 (N=6), brute-forceable everywhere."""
    H = IsingModel(J=np.zeros((1, 1)), h=np.array([0.3]))
    plan = gadgets.plan(H, gamma=2.0, eps=0.04, r_override=5)
    return gadgets.materialize(plan)


@pytest.fixture(scope="session")
def proof_valid_edge_instance():
    """Two-vertex model with an edge at genuinely proof-valid r (~1e10)."""
    H = IsingModel(J=np.array([[0.0, 0.05], [0.05, 0.0]]), h=np.array([0.3, -0.2]))
    plan = gadgets.plan(H, gamma=2.0, eps=0.04)
    assert plan.proof_valid
    return gadgets.materialize(plan)
