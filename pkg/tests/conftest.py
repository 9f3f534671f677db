import numpy as np
import pytest
import torch

from uatrain.datasets import load_dataset
from uatrain.nets import NetSpec, build_models


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec():
    return NetSpec(
        input_shape=(2,),
        classifier_depth=1,
        classifier_width=6,
        generator_channels=6,
        discriminator_channels=6,
        attacker_hidden=1,
        noise_dim=3,
        label_embed_dim=2,
    )


@pytest.fixture
def tiny_models(tiny_spec):
    return build_models(tiny_spec, num_classes=3, seed=0, dtype=torch.float64)


@pytest.fixture(scope="session")
def gauss_split():
    return load_dataset("gauss2d", n_labeled=60, seed=0, n_unlabeled=200, n_test=150)
