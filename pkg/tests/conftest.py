"""Shared fixtures: a miniature configuration and one finished loop run."""

import pytest

from cloakgan.config import parse_config
from cloakgan.loop import run_loop


def mini_doc(**overrides):
    """Smallest configuration that still exercises every pipeline stage."""
    doc = {
        "forward": {"epochs": 4, "batch_size": 4, "val_fraction": 0.25},
        "gan": {"batch_size": 4, "candidates_per_epoch": 8},
        "loop": {
            "max_generations": 2,
            "epochs_per_generation": 2,
            "top_k": 4,
            "initial_dataset_size": 6,
        },
        "seed": 11,
    }
    for section, table in overrides.items():
        doc.setdefault(section, {}).update(table)
    return doc


@pytest.fixture(scope="session")
def make_mini_doc():
    return mini_doc


@pytest.fixture(scope="session")
def mini_cfg():
    return parse_config(mini_doc())


@pytest.fixture(scope="session")
def finished_run(mini_cfg, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("mini_run")
    records, best = run_loop(mini_cfg, run_dir)
    return run_dir, records, best
