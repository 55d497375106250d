import numpy as np
import pytest
import torch

from skelcast.core import Agent, AgentTrack, Scene, SkeletonSeq


def make_track_scene(positions, valid=None, robot_poses=None, scene_id="s0", dt=1 / 3):
    """Scene from an (A, T, 2) position array; skeletons empty."""
    positions = np.asarray(positions, dtype=float)
    A, T, _ = positions.shape
    if valid is None:
        valid = np.ones((A, T), bool)
    if robot_poses is None:
        robot_poses = np.zeros((T, 3))
    agents = []
    for i in range(A):
        pos = np.where(valid[i][:, None], positions[i], np.nan)
        agents.append(Agent(AgentTrack(f"a{i}", pos, valid[i]), SkeletonSeq.empty(f"a{i}", T)))
    return Scene(scene_id, dt, robot_poses, agents, (400, 200), 0.85)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
