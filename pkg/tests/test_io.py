import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from famle.errors import ConfigurationError
from famle.io import checkpoint_dict, checkpoint_from_dict, load_checkpoint, save_checkpoint
from famle.model import EmbeddingTable, Normalizer, init_params, nll_loss
from famle.trainers import MetaResult

from conftest import random_dataset


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), sd=st.integers(1, 4), ad=st.integers(0, 3), ed=st.integers(0, 4),
       hidden=st.lists(st.integers(1, 6), max_size=2), n=st.integers(1, 5))
def test_checkpoint_round_trip_bit_exact(tmp_path_factory, seed, sd, ad, ed, hidden, n):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, 8, sd, ad)
    norm = Normalizer.fit([data], angle_dims=(0,))
    theta = init_params(sd, ad, ed, tuple(hidden), rng, norm, angle_dims=(0,))
    theta = theta.with_tensors([t + rng.normal(size=t.shape) / 3 for t in theta.tensors()])
    table = EmbeddingTable.random(n, ed, rng) if ed else EmbeddingTable(np.zeros((n, 0)))
    path = tmp_path_factory.mktemp("ck") / "c.json"
    save_checkpoint(MetaResult(theta, table), path)
    back = load_checkpoint(path)
    assert back.theta_meta.equals(theta)
    assert back.theta_meta.angle_dims == theta.angle_dims
    for k, v in norm.arrays().items():
        assert np.array_equal(back.theta_meta.normalizer.arrays()[k], v)
    assert np.array_equal(back.embedding_table.entries, table.entries)
    for i in range(n):
        assert nll_loss(back.theta_meta, back.embedding_table[i], data) == nll_loss(theta, table[i], data)


def test_checkpoint_structure(rng):
    theta = init_params(2, 1, 3, (4,), rng)
    doc = checkpoint_dict(MetaResult(theta, EmbeddingTable.random(5, 3, rng)), "famle")
    assert doc["format_version"] == 1 and doc["method"] == "famle"
    assert doc["architecture"]["layer_sizes"] == [6, 4, 2]
    assert doc["embedding_table"]["index_order"] == [0, 1, 2, 3, 4]
    assert doc["parameters"][0]["weight"] == [float(x) for x in theta.weights[0].ravel()]
    json.dumps(doc)


def test_checkpoint_index_order_respected(rng):
    theta = init_params(2, 1, 2, (3,), rng)
    table = EmbeddingTable.random(3, 2, rng)
    doc = checkpoint_dict(MetaResult(theta, table))
    doc["embedding_table"]["index_order"] = [2, 0, 1]
    back = checkpoint_from_dict(doc)
    assert np.array_equal(back.embedding_table.entries, table.entries[[2, 0, 1]])


def test_checkpoint_version_checked(rng):
    doc = checkpoint_dict(MetaResult(init_params(1, 0, 0, (), rng), EmbeddingTable.empty()))
    doc["format_version"] = 99
    with pytest.raises(ConfigurationError):
        checkpoint_from_dict(doc)
