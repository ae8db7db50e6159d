import numpy as np
import pytest
import torch

import garmseg as g
from garmseg.toybody import build_toy_body


@pytest.fixture(scope="session")
def toy_body():
    model, parts = build_toy_body()
    return model


@pytest.fixture(scope="session")
def toy_body_parts():
    return build_toy_body()[1]


@pytest.fixture(scope="session")
def labeled_scan():
    """One deterministic labeled scan used across module tests."""
    return g.generate(g.SynthConfig(
        seed=7, n_points=400,
        garments=("T-shirt", "Pants", "Shoes", "Hair")))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
