import numpy as np
import pytest

from face_forge.embeddings import EmbeddingTable, build_emotion_dictionary


@pytest.fixture
def table():
    return EmbeddingTable(d=16, seed=42)


@pytest.fixture
def emotions(table):
    return build_emotion_dictionary(["happy", "sad", "angry", "calm"], table)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
