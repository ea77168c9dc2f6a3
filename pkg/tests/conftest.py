from dataclasses import dataclass

import numpy as np
import pytest

from sgool.data import SyntheticDataset, make_dataset
from sgool.diffusion import Denoiser, DenoiserConfig, NoiseSchedule, make_schedule, train_denoiser
from sgool.embedder import EncoderConfig, JointEncoder, train_encoder

ACCEPTANCE_LINES: list[str] = []


@dataclass
class Stack:
    data: SyntheticDataset
    heldout: SyntheticDataset
    schedule: NoiseSchedule
    denoiser: Denoiser
    encoder: JointEncoder
    denoiser_losses: list
    retrieval: float


@pytest.fixture(scope="session")
def stack() -> Stack:
    """Default-configuration toy stack: 1x16x16 images, K=8, T=50."""
    data = make_dataset(4096, seed=0)
    heldout = make_dataset(512, seed=0, stream_name="heldout")
    s = make_schedule(50)
    den = train_denoiser(data, s, DenoiserConfig())
    enc = train_encoder(data, EncoderConfig(), heldout)
    return Stack(data, heldout, s, den.denoiser, enc.encoder, den.losses, enc.retrieval)


@pytest.fixture(scope="session")
def small_stack() -> Stack:
    """Reduced instance for finite-difference checks: 2x8x8 latents, T=10."""
    data = make_dataset(1024, seed=3, size=8, channels=2)
    heldout = make_dataset(256, seed=3, size=8, channels=2, stream_name="heldout")
    s = make_schedule(10)
    den = train_denoiser(data, s, DenoiserConfig(steps=400, hidden=64, layers=2, seed=3))
    enc = train_encoder(data, EncoderConfig(steps=300, hidden=32, seed=3), heldout)
    return Stack(data, heldout, s, den.denoiser, enc.encoder, den.losses, enc.retrieval)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
