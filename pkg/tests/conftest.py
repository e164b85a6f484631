import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lpvqmi import builtin
from lpvqmi.data import ball_noise, collect_data, phi_per_sample
from lpvqmi.lpv import LpvaPlant, ParamPolytope, sample_param_trajectory

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def two_state_poly():
    return ParamPolytope(builtin.TWO_STATE_VERTICES)


def two_state_record(domain, seed, T=35, eps=0.1):
    plant = LpvaPlant(builtin.TWO_STATE_A, builtin.TWO_STATE_B, domain)
    poly = ParamPolytope(builtin.TWO_STATE_VERTICES)
    ct = domain == "continuous"
    traj = sample_param_trajectory(poly, 0.05 if ct else 1.0, T * 0.05 if ct else T, seed, domain)
    rec = collect_data(plant, traj, T, seed + 100, noise_sampler=ball_noise(eps))
    return plant, poly, rec, phi_per_sample(eps, T, 2)


@pytest.fixture(scope="session")
def ct_data():
    return two_state_record("continuous", 0)


@pytest.fixture(scope="session")
def dt_data():
    return two_state_record("discrete", 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.RESULTS:
            terminalreporter.write_line(line)
