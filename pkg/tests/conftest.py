import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _no_user_cache(monkeypatch):
    # tests never read or write ~/.cache; individual tests opt in with tmp_path
    monkeypatch.delenv("SPECCTRL_CACHE_DIR", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
