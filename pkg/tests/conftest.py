import numpy as np
import pytest

from audioadv.corpus import load_corpus, make_corpus
from audioadv.surrogates.toyctc import train_toy_ctc

SURROGATE_SEEDS = (1, 2)
HOLDOUT_SEED = 3


@pytest.fixture(autouse=True)
def _isolated_home(tmp_path_factory, monkeypatch):
    monkeypatch.setenv("AUDIOADV_HOME", str(tmp_path_factory.getbasetemp() / "home"))


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("corpus"), seed=0)


@pytest.fixture(scope="session")
def corpus(corpus_dir):
    return load_corpus(corpus_dir)


@pytest.fixture(scope="session")
def toy_models_dir(tmp_path_factory, corpus):
    """Two surrogates plus one held-out model, trained once per session and saved."""
    out = tmp_path_factory.mktemp("models")
    commands = [(e["text"], e["clip"].samples) for e in corpus["commands"]]
    models = {}
    for seed in (*SURROGATE_SEEDS, HOLDOUT_SEED):
        m = train_toy_ctc(commands, seed=seed, id=f"toyctc-{seed}")
        m.save(out)
        models[m.id] = m
    return out, models


@pytest.fixture(scope="session")
def toy_models(toy_models_dir):
    _, models = toy_models_dir
    return [models[f"toyctc-{s}"] for s in SURROGATE_SEEDS]


@pytest.fixture(scope="session")
def holdout_model(toy_models_dir):
    return toy_models_dir[1][f"toyctc-{HOLDOUT_SEED}"]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

