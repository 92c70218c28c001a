from dataclasses import replace

import pytest

from kwskit.config import AugSpecConfig, default_config


def tiny_experiment(seed=501):
    """A minutes-to-seconds experiment config for integration tests."""
    cfg = default_config()
    cfg.seed = seed
    cfg.corpus.counts = {"train": (6, 6), "dev": (3, 3), "test": (5, 5)}
    cfg.model = replace(cfg.model, epochs=2, hidden_layers=1, hidden_units=24)
    cfg.interference = replace(cfg.interference, music_seconds=24.0, movie_seconds=12.0, clip_seconds=6.0)
    cfg.rirs = replace(cfg.rirs, rt60_seconds=(0.12,))
    cfg.decoder = replace(cfg.decoder, entry_penalties=(0.0, 2.0), threshold_count=11)
    cfg.train_specs = [AugSpecConfig("music_0_40", "music", (0.0, 40.0))]
    return cfg


@pytest.fixture(scope="session")
def tiny_config():
    return tiny_experiment()
