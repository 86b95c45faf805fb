from __future__ import annotations

import numpy as np
import pytest

from pwlcone import bench
from pwlcone.cone import solve_elementary_cone
from pwlcone.system import assemble_state_space


def chain_ss(kn, c=0.0, cn=0.0):
    return assemble_state_space(bench.make_chain_3dof(kn, c, cn))


@pytest.fixture(scope="session")
def ss15():
    return chain_ss(1.5)


@pytest.fixture(scope="session")
def cone15():
    return bench.conservative_branch_cone(1.5)


@pytest.fixture(scope="session")
def ss10():
    return chain_ss(10.0)


@pytest.fixture(scope="session")
def cone10():
    return bench.conservative_branch_cone(10.0)


@pytest.fixture(scope="session")
def ss_damped10():
    return chain_ss(10.0, 0.0295)


@pytest.fixture(scope="session")
def cone_damped10():
    return bench.damped_cone_10()


@pytest.fixture(scope="session")
def ss_disc():
    return chain_ss(2.5377, 0.0, 1.0)


@pytest.fixture(scope="session")
def cone_disc(ss_disc):
    return solve_elementary_cone(ss_disc)


@pytest.fixture(scope="session")
def ss_sdof3():
    return assemble_state_space(bench.make_sdof(3.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
