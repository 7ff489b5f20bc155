import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def ablation():
    """The four trained recogniser variants on the 3000-character corpus (several minutes)."""
    from lpdr.recognizer.ablation import run_ablation

    return run_ablation(n_chars=3000, seed=0)


@pytest.fixture(scope="session")
def hybrid_model(ablation):
    return ablation.results["Hybrid"].model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
