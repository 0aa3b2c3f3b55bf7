from __future__ import annotations

import sys

import pytest

from circuitd import supervisor as sv


@pytest.fixture
def deploy_root(tmp_path):
    return str(tmp_path / "deploy")


@pytest.fixture
def fast_env(monkeypatch):
    """Speed up spawned agents: quick heartbeats and takeovers."""
    monkeypatch.setenv("CIRCUITD_HEARTBEAT_S", "0.2")
    monkeypatch.setenv("CIRCUITD_GRACE_S", "1.0")


@pytest.fixture
def stub(tmp_path_factory):
    """argv prefix for a stub component runnable without installation."""
    def make(name: str, *extra: str) -> list[str]:
        return [sys.executable, "-m", "circuitd.stubs", name, *extra]
    return make


@pytest.fixture(autouse=True)
def _reap_spawned(request):
    """Kill any agent processes a test leaves behind."""
    yield
    import subprocess
    subprocess.run(
        ["pkill", "-9", "-f", "circuitd.agent_main"],
        check=False, capture_output=True,
    )


@pytest.fixture
def deployed(deploy_root):
    def deploy(circuit):
        return sv.deploy(deploy_root, circuit)
    return deploy
