import os

import numpy as np
import pytest

from actsearch.bench import BenchmarkTable
from actsearch.config import config_from_dict
from actsearch.features import read_outputs
from actsearch.kfac import read_spectra
from actsearch.pipeline import Pipeline


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """One default pipeline run shared by every test that needs a built table."""
    out = tmp_path_factory.mktemp("desk")
    cfg = config_from_dict({"workers": min(4, os.cpu_count() or 1)})
    pipe = Pipeline(cfg, out, echo=lambda m: None)
    pipe.run()
    return pipe


@pytest.fixture(scope="session")
def desk_table(desk_run):
    return BenchmarkTable.read(desk_run.p("bench.jsonl"))


@pytest.fixture(scope="session")
def desk_spectra(desk_run):
    return {s.canonical: s for s in read_spectra(desk_run.p("spectra.jsonl"))[1]}


@pytest.fixture(scope="session")
def desk_outputs(desk_run):
    return {o.canonical: o.values for o in read_outputs(desk_run.p("outputs.jsonl"))[1]}
