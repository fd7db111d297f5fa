import socket

import pytest
from hypothesis import HealthCheck, settings

# archive replays and socket round-trips make per-example deadlines noisy
settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def free_port():
    """A TCP port that was free a moment ago; good enough for loopback tests."""
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]
