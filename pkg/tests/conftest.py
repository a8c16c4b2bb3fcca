"""Shared fixtures: synthetic streams and the session-scoped pretrained
flow predictor (pretraining is the most expensive fixture, so every test
that needs it shares one run)."""

import numpy as np
import pytest

from evsplat import events, flow
from evsplat.synthetic import moving_stream

PRETRAIN_SPEEDS = ((5.0, 0.0), (-5.0, 0.0), (5.0, 0.0), (-5.0, 0.0))
PRETRAIN_SEEDS = (0, 1, 2, 3)


def stream_to_sample(stream, bins: int = 5) -> flow.FlowSample:
    grid = events.voxelize(stream, stream.t_start, stream.t_end, bins)
    return flow.FlowSample(stream, grid)


@pytest.fixture(scope="session")
def horizontal_corpus():
    samples = []
    for vel, seed in zip(PRETRAIN_SPEEDS, PRETRAIN_SEEDS):
        samples.append(stream_to_sample(moving_stream(vel, seed=seed)))
    return samples


@pytest.fixture(scope="session")
def pretrained_predictor(horizontal_corpus):
    """Base flow predictor fitted on horizontal translations (full corpus)."""
    rng = np.random.default_rng(7)
    predictor = flow.TiledFlowPredictor(64, 64, bins=5, patch=16,
                                        hidden=(64, 64), rng=rng)
    config = flow.FlowTrainConfig(epochs=1, lr_start=5e-3, lr_end=5e-4,
                                  tv_weight=0.02)
    flow.pretrain(predictor, horizontal_corpus, config, rng, steps=300)
    return predictor
