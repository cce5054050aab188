"""Shared fixtures: one bundled synthetic dataset per session."""

import warnings

import pytest

from flowcast.ingest import load_dataset
from flowcast.synthetic import generate


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    generate(out, days=14, seed=7)
    return out


@pytest.fixture(scope="session")
def dataset(data_dir):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return load_dataset(data_dir)
