from __future__ import annotations

import socket

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class NetworkBlocked(RuntimeError):
    pass


def _refuse(*args, **kwargs):
    raise NetworkBlocked("network access is disabled outside tests marked 'remote'")


@pytest.fixture(autouse=True)
def no_network(request, monkeypatch):
    """Every test runs with sockets disabled unless it is marked ``remote``
    (those talk only to the bundled stub server on 127.0.0.1)."""
    if request.node.get_closest_marker("remote") is None:
        monkeypatch.setattr(socket.socket, "connect", _refuse)
        monkeypatch.setattr(socket.socket, "connect_ex", _refuse)
        monkeypatch.setattr(socket, "create_connection", _refuse)
    yield


ACCEPTANCE = pytest.StashKey[list]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


@pytest.fixture
def criterion(request, capsys):
    """Acceptance bookkeeping: the test fills in ``number``, ``title`` and
    ``detail``; one PASS/FAIL line is printed when it finishes."""
    info = {"number": "?", "title": request.node.name, "detail": ""}
    yield info
    rep = getattr(request.node, "rep_call", None)
    status = "PASS" if rep is not None and rep.passed else "FAIL"
    line = f"criterion {info['number']} {status}: {info['title']}"
    if info["detail"]:
        line += f" [{info['detail']}]"
    request.config.stash.setdefault(ACCEPTANCE, []).append(line)
    with capsys.disabled():
        print(f"\n{line}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
