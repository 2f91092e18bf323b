from __future__ import annotations

import numpy as np
import pytest

from simtransfer.core import RngStream, Trajectory, Window, pad_window
from simtransfer.invdyn import (
    InvDataset,
    InverseModel,
    TrainConfig,
    build_dataset,
    input_dim,
    query,
    random_model,
    train,
    zero_model,
)

SMALL = TrainConfig(epochs=60, batch=32, lr=3e-3, hidden=(64, 64))


def _traj(obs, acts):
    t = Trajectory([np.atleast_1d(np.asarray(o, float)) for o in obs[:1]], [], [])
    for o, a in zip(obs[1:], acts):
        t.append(np.atleast_1d(np.asarray(a, float)), 0.0, np.atleast_1d(np.asarray(o, float)))
    return t


def _linear_trajs(rng, n_traj=40, length=20):
    trajs = []
    for _ in range(n_traj):
        o = rng.gen.uniform(-1, 1)
        acts = rng.gen.uniform(-1, 1, length)
        obs = [o]
        for a in acts:
            obs.append(obs[-1] + a)
        trajs.append(_traj(obs, acts))
    return trajs


def test_dataset_counts_and_dims():
    tr = _traj(np.arange(11.0), np.ones(10))
    assert len(build_dataset([tr], 0)) == 10
    assert build_dataset([tr], 0).inputs.shape[1] == 2
    assert input_dim(2, 10, 2) == 44
    assert input_dim(0, 4, 1) == 8


def test_dataset_rows_follow_padded_windows():
    tr = _traj([0.0, 1.0, 3.0, 6.0], [1.0, 2.0, 3.0])
    ds = build_dataset([tr], 2)
    # t = 0: observations padded with o_0, actions with zeros
    np.testing.assert_array_equal(ds.inputs[0], [0, 0, 0, 0, 0, 1])
    np.testing.assert_array_equal(ds.inputs[2], [0, 1, 3, 1, 2, 6])
    np.testing.assert_array_equal(ds.labels[:, 0], [1, 2, 3])
    w = pad_window(Trajectory([np.zeros(1)], [], []), 2, 1)
    assert w.observations.shape == (3, 1)


def test_dataset_correction_labels_and_errors():
    tr = _traj([0.0, 1.0, 3.0], [1.0, 2.0])
    ds = build_dataset([tr], 0, "correction", [[np.array([0.5]), np.array([2.5])]])
    np.testing.assert_array_equal(ds.labels[:, 0], [0.5, -0.5])
    with pytest.raises(ValueError):
        build_dataset([tr], 0, "correction")
    with pytest.raises(ValueError):
        build_dataset([tr], 0, "sideways")


def test_dataset_deterministic_and_order_preserving():
    trajs = _linear_trajs(RngStream(0), 3, 5)
    a, b = build_dataset(trajs, 1), build_dataset(trajs, 1)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels[:5, 0], [x[0] for x in trajs[0].actions])


def test_zero_model_queries():
    w = Window(np.zeros((3, 4)), np.zeros((2, 1)))
    a_src = np.array([0.37])
    assert query(zero_model(4, 1, 2, "correction"), w, np.ones(4), a_src)[0] == 0.37
    assert query(zero_model(4, 1, 2, "direct"), w, np.ones(4))[0] == 0.0
    with pytest.raises(ValueError):
        query(zero_model(4, 1, 2, "correction"), w, np.ones(4))
    with pytest.raises(ValueError):
        query(zero_model(4, 1, 1, "direct"), w, np.ones(4))


def test_query_output_clipped():
    rng = RngStream(5)
    m = random_model(3, 2, 1, rng)
    m = InverseModel(type(m.mlp)([W * 50 for W in m.mlp.weights], m.mlp.biases), m.normalizer, 1, "direct")
    for i in range(50):
        w = Window(rng.gen.normal(size=(2, 3)) * 10, rng.gen.normal(size=(1, 2)))
        a = query(m, w, rng.gen.normal(size=3) * 10)
        assert np.all(np.abs(a) <= 1.0)


@pytest.fixture(scope="module")
def linear_model():
    rng = RngStream(42)
    data = build_dataset(_linear_trajs(rng.child(0)), 0)
    return train(data, 0, rng.child(1), cfg=SMALL)


def test_train_recovers_linear_inverse(linear_model):
    model, report = linear_model
    r = np.random.default_rng(9)
    o = r.uniform(-1, 1, 500)
    a = r.uniform(-1, 1, 500)
    pred = np.array([query(model, Window(np.array([[x]]), np.zeros((0, 1))), [x + u])[0] for x, u in zip(o, a)])
    assert np.mean(np.abs(pred - a)) <= 0.02
    assert report.final_mse <= 0.1 * report.label_var


def test_linear_roundtrip(linear_model):
    model, _ = linear_model
    r = np.random.default_rng(10)
    o = 0.0
    for _ in range(50):
        want = o + r.uniform(-0.9, 0.9)
        a = query(model, Window(np.array([[o]]), np.zeros((0, 1))), [want])[0]
        o = o + a
        assert abs(o - want) <= 0.05
        o = float(np.clip(o, -1, 1))


def test_train_deterministic_and_duplicate_data():
    data = build_dataset(_linear_trajs(RngStream(1), 10, 10), 0)
    cfg = TrainConfig(epochs=5, batch=16, hidden=(16,))
    m1, r1 = train(data, 0, RngStream(3), cfg=cfg)
    m2, r2 = train(data, 0, RngStream(3), cfg=cfg)
    assert r1.train_loss == r2.train_loss
    for a, b in zip(m1.mlp.params(), m2.mlp.params()):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        train(InvDataset.empty(2, 1), 0, RngStream(0))


def test_checkpoint_roundtrip(tmp_path):
    m = random_model(4, 2, 2, RngStream(0), "correction", hidden=(8, 8))
    m.save(tmp_path / "m.json")
    back = InverseModel.load(tmp_path / "m.json")
    assert back.W == 2 and back.mode == "correction"
    for a, b in zip(m.mlp.params(), back.mlp.params()):
        np.testing.assert_array_equal(a, b)
    w = Window(np.ones((3, 4)), np.ones((2, 2)))
    np.testing.assert_array_equal(query(m, w, np.ones(4), np.zeros(2)), query(back, w, np.ones(4), np.zeros(2)))


def test_dataset_jsonl_roundtrip(tmp_path):
    data = build_dataset(_linear_trajs(RngStream(1), 2, 4), 1)
    data.save(tmp_path / "d.jsonl")
    back = InvDataset.load(tmp_path / "d.jsonl")
    np.testing.assert_array_equal(back.inputs, data.inputs)
    np.testing.assert_array_equal(back.labels, data.labels)
