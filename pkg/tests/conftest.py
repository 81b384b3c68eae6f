import pytest

from seromrp.model import CovariateSchema
from seromrp.synthpop import PopulationConfig, corrupt_measurements, draw_sample, generate_population


@pytest.fixture(scope="session")
def small_population():
    return generate_population(PopulationConfig(N=50_000, levels=20, seed=1))


@pytest.fixture(scope="session")
def schema20():
    return CovariateSchema.synthetic(5, 20)


@pytest.fixture(scope="session")
def noisy_sample(small_population):
    s = draw_sample(small_population, 4000, 2)
    return s.with_tests(corrupt_measurements(s.y, 1.0, 0.995, 3))


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_outcomes():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
