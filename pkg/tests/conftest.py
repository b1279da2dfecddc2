import pytest
import torch

from styler.encoder import EncoderProfile, build_encoder


@pytest.fixture(scope="session")
def toy_encoder():
    return build_encoder(EncoderProfile.toy(7))


@pytest.fixture(scope="session")
def toy_encoder_f64(toy_encoder):
    """Float64 twin for finite-difference gradient checks."""
    enc = build_encoder(EncoderProfile.toy(7))
    return enc.double()


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
