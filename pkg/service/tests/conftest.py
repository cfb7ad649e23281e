"""Service test fixtures; request builders and the oracle live in wire_helpers.py."""

import pytest
from fastapi.testclient import TestClient

from exec_service.app import create_app


@pytest.fixture
def client():
    return TestClient(create_app(env={}))
