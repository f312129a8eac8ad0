from __future__ import annotations

import numpy as np
import pytest
import torch

from multirecon.body import default_body
from multirecon.evalkit.synth import generate_synthetic_scene


@pytest.fixture(scope="session")
def body():
    return default_body()


@pytest.fixture(scope="session")
def tiny_scene():
    """Two people, three frames, 24x24: enough to exercise every pipeline stage."""
    return generate_synthetic_scene(num_persons=2, preset="occluding-cross", num_frames=3, resolution=24, samples=8, mesh_resolution=40, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


TINY_TRAIN = [
    "optim.outer_loops=2",
    "optim.refresh_every=2",
    "optim.rays_per_frame=32",
    "optim.eik_samples=32",
    "optim.inter_iters=2",
    "optim.inter_max_vertices=50",
    "optim.pose_only_every=2",
    "scene.samples_per_ray=8",
    "field.mesh_resolution=16",
    "field.export_mesh_resolution=16",
    "field.width=16",
    "field.depth=2",
    "field.n_freqs=2",
]


@pytest.fixture
def tiny_overrides():
    """A training config that runs the whole loop on ``tiny_scene`` in seconds."""
    return list(TINY_TRAIN)


# criterion number -> "PASS|FAIL  detail", filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {ACCEPTANCE[n]}")
