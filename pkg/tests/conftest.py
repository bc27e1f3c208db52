import pytest

from app.core.models import MimoConfig, Spectrum


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")
    parser.addoption("--full-scale", action="store_true", default=False,
                     help="run the multi-hour full-scale reproductions")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: takes minutes; needs --runslow")
    config.addinivalue_line("markers", "full_scale: hours of compute; needs --full-scale")


def pytest_collection_modifyitems(config, items):
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    skip_full = pytest.mark.skip(reason="needs --full-scale")
    for item in items:
        if "slow" in item.keywords and not config.getoption("--runslow"):
            item.add_marker(skip_slow)
        if "full_scale" in item.keywords and not config.getoption("--full-scale"):
            item.add_marker(skip_full)


@pytest.fixture
def small_model():
    """2x2 channel with eigenvalues {1, 2}."""
    return Spectrum(lambdas=[1.0, 2.0]), MimoConfig(n_t=2, n_r=2)


@pytest.fixture
def ten_by_ten():
    return Spectrum(lambdas=[float(i) for i in range(1, 11)]), MimoConfig(n_t=10, n_r=10)
