import pytest

from affine_construction import box_B, construction_family, find_parameters
from config import get_settings
from database import configure_database, init_db
from minimality import certify


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-resolution tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def params():
    return find_parameters(2)


@pytest.fixture(scope="session")
def family(params):
    return construction_family(params)


@pytest.fixture(scope="session")
def cert(params, family):
    return certify(family, box_B(params), spacing=0.02)


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch):
    for name in ("IFS_SEED", "IFS_DB_URL", "IFS_THREADS", "IFS_WORD_BUDGET", "IFS_STRIP_BUDGET"):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def ledger(tmp_path):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    configure_database(url)
    init_db()
    yield url
    configure_database(get_settings().db_url)
