import numpy as np
import pytest

from pcalderon import (build_disk_domain, generate_mesh, smoothstep_cutoff,
                       solve_profile)


@pytest.fixture(scope="session")
def disk():
    return build_disk_domain()


@pytest.fixture(scope="session")
def cutoff():
    return smoothstep_cutoff()


@pytest.fixture(scope="session")
def profile2():
    return solve_profile(2.0)


@pytest.fixture(scope="session")
def profile3():
    return solve_profile(3.0)


@pytest.fixture(scope="session")
def profile15():
    return solve_profile(1.5)


@pytest.fixture(scope="session")
def mesh_h05(disk):
    return generate_mesh(disk, 0.05)


@pytest.fixture(scope="session")
def mesh_h05_focus(disk):
    """h = 0.05 with grading at (1, 0); resolves probes down to delta 0.04."""
    return generate_mesh(disk, 0.05, ((1.0, 0.0), 0.008, 0.3))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260809)
