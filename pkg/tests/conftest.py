import numpy as np
import pytest

from repcal.model import ScenarioConfig, generate_scenario, preprocess, take_calibration_measurements


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def unit_phases(rng, n):
    return np.exp(1j * rng.uniform(-np.pi, np.pi, n))


@pytest.fixture
def default_config():
    return ScenarioConfig(m_a=4, m_b=3, alpha_gain_db=10.0, beta_gain_db=10.0)


@pytest.fixture
def noise_free(default_config):
    s = generate_scenario(default_config, 11)
    ms = take_calibration_measurements(s, 0.0, 12)
    return s, ms, preprocess(ms)


# acceptance bookkeeping: one line per criterion in the terminal summary
_ACCEPTANCE = []


@pytest.fixture
def criterion():
    def check(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
