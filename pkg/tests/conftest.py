"""Shared fixtures: a deterministic synthetic corpus and compiled shards.

Both are session-scoped because generating games through the rules kernel
and encoding ~11k positions takes a minute; tests that need real
state-move pairs (training, acceptance) share one copy.
"""

import pytest

from crossgo import selfplay, shards

CORPUS_GAMES = 64
CORPUS_SEED = 11
CORPUS_MAX_MOVES = 180
SPLIT_SEED = 3


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("corpus")
    selfplay.generate_corpus(
        directory, n_games=CORPUS_GAMES, seed=CORPUS_SEED, max_moves=CORPUS_MAX_MOVES
    )
    return directory


@pytest.fixture(scope="session")
def shards_dir(corpus_dir, tmp_path_factory):
    directory = tmp_path_factory.mktemp("shards")
    shards.compile_dataset(corpus_dir, directory, split_fraction=0.9, seed=SPLIT_SEED)
    return directory


@pytest.fixture(scope="session")
def train_dataset(shards_dir):
    return shards.ShardDataset(shards_dir, "train")
