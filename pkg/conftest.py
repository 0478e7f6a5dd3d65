# conftest.py

import os
import sys

import pytest

ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from Core.event_manager import EventManager
from Core.synth_tasks import GeneratorConfig, generate_dataset
from Core.table import Table
from Managers.dataset_manager import build_vocabulary
from Utils.config_utils import TrainConfig


@pytest.fixture(autouse=True)
def clean_events():
    yield
    EventManager.get_instance().unsubscribe_all()


@pytest.fixture
def small_table():
    return Table(
        ["name", "nation", "goals"],
        [["anna berg", "sweden", "3"],
         ["boris novak", "norway", "5"],
         ["carla lund", "sweden", "2"]],
    )


@pytest.fixture(scope="session")
def generator_config():
    return GeneratorConfig(row_range=(2, 8), col_range=(3, 5), seed=11)


@pytest.fixture(scope="session")
def dataset(generator_config):
    return generate_dataset(generator_config, 40)


@pytest.fixture(scope="session")
def vocab():
    # generator-closed: identical for every dataset
    return build_vocabulary()


@pytest.fixture
def tiny_config():
    return TrainConfig(
        epochs=1, batch_size=4, lr=1e-3, scheduler="constant", seed=0,
        d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=32,
        max_answer_len=6, dtype="float64", grad_clip=1.0,
    )
