"""Pytest configuration and fixtures."""

from collections.abc import Iterator
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pytest
import yaml
from hqc_shortcuts.models.config import Config

from .util import support_file


@pytest.fixture
def fake_root() -> Iterator[Path]:
    with TemporaryDirectory() as td:
        yield Path(td)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240813)


@pytest.fixture
def campaign_config(fake_root: Path) -> Config:
    # Load template config and point it at the phase scenario
    config_file = support_file("config.yaml")
    config_doc = yaml.safe_load(config_file.read_text())
    config = Config.model_validate(config_doc)
    config.scenario_file = support_file("phase.yaml")
    config.output_root = fake_root / "out"

    # Write out new config for the CLI
    new_config_file = fake_root / "config.yaml"
    new_config_file.write_text(yaml.dump(config.to_dict()))

    return config
