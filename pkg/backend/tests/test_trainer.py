import numpy as np
import pytest
from pydantic import ValidationError

from services.errors import DatasetError, Diverged
from services.ggnn import GraphBatch, Hyperparameters, Variant, Vocabulary, batch_loss, encode_graph, init_model
from services.records import CweLabel
from services.synthetic import edge_type_dataset, six_node_graph
from services.trainer import (
    Adam,
    TrainConfig,
    batch_gradients,
    build_vocabulary,
    encode_records,
    evaluate_graphs,
    load_train_config,
    record_tokens,
    train,
    train_records,
)

TINY = dict(d=8, d_edge=8, hops=2, dropout=0.0, min_freq=1)


def encoded(records, min_freq: int = 1):
    vocab = Vocabulary.build([record_tokens(r) for r in records], min_freq=min_freq)
    return encode_records(records, vocab), vocab


# ---- configuration ----

def test_config_precedence(tmp_path):
    path = tmp_path / "train.env"
    path.write_text("D=16\nLR=0.01\nEPOCHS=3\n# comment\nCWE=CWE-835\n", encoding="utf-8")
    config = load_train_config(str(path), {"lr": 0.5, "epochs": None}, {"d": 4, "hops": 2})
    assert config.d == 16
    assert config.lr == 0.5
    assert config.epochs == 3
    assert config.hops == 2
    assert config.cwe == CweLabel.CWE835


def test_config_defaults():
    config = load_train_config()
    assert (config.d, config.d_edge, config.dropout, config.lr, config.batch, config.epochs) == (
        128, 128, 0.3, 0.001, 64, 20)
    assert config.min_freq == 3


@pytest.mark.parametrize("cwe, hops", [("404", 4), ("CWE-835", 1), ("cwe120", 5), ("672", 4), ("362", 2)])
def test_hops_follow_the_cwe(cwe, hops):
    assert TrainConfig(cwe=cwe).resolved_hops() == hops
    assert TrainConfig(cwe=cwe, hops=0).resolved_hops() == 0


def test_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_train_config(str(tmp_path / "missing.env"))
    with pytest.raises(ValidationError):
        load_train_config(overrides={"lr": -1.0})
    with pytest.raises(ValueError):
        TrainConfig(cwe="CWE-999")


# ---- optimizer and gradients ----

def test_adam_moves_against_the_gradient():
    params = {"w": np.array([1.0, -1.0])}
    Adam(params, lr=0.1).step(params, {"w": np.array([2.0, -3.0])})
    np.testing.assert_allclose(params["w"], [0.9, -0.9])


def test_zero_learning_rate_keeps_parameters():
    train_set, held_out = edge_type_dataset(20, seed=1)
    graphs, vocab = encoded(train_set)
    config = TrainConfig(**{**TINY, "dropout": 0.3}, lr=0.0, epochs=2, batch=4, seed=5)
    result = train(graphs, encode_records(held_out, vocab), config, vocab.tokens)
    initial = init_model(config.hyperparameters(len(vocab)), seed=5)
    for name, value in initial.params.items():
        assert np.array_equal(result.model.params[name], value), name


def test_worker_count_does_not_change_gradients():
    records, _ = edge_type_dataset(14, seed=2, holdout=0.0)
    graphs, vocab = encoded(records)
    hyper = Hyperparameters(d=8, d_edge=8, hops=2, dropout=0.3, vocab_size=len(vocab))
    params = init_model(hyper, seed=0).params
    loss_1, grads_1 = batch_gradients(params, graphs, hyper, seed=3, step=7, shard_size=2, workers=1)
    loss_4, grads_4 = batch_gradients(params, graphs, hyper, seed=3, step=7, shard_size=2, workers=4)
    assert loss_1 == loss_4
    assert all(np.array_equal(grads_1[k], grads_4[k]) for k in grads_1)


def test_shards_average_to_the_full_batch():
    records, _ = edge_type_dataset(10, seed=4, holdout=0.0)
    graphs, vocab = encoded(records)
    hyper = Hyperparameters(d=8, d_edge=8, hops=2, dropout=0.0, vocab_size=len(vocab))
    params = init_model(hyper, seed=1).params
    loss_sharded, grads_sharded = batch_gradients(params, graphs, hyper, seed=0, step=0, shard_size=3,
                                                  train=False)
    loss_whole, grads_whole = batch_gradients(params, graphs, hyper, seed=0, step=0, shard_size=len(graphs),
                                              train=False)
    assert loss_sharded == pytest.approx(loss_whole, abs=1e-12)
    for k in grads_whole:
        np.testing.assert_allclose(grads_sharded[k], grads_whole[k], rtol=0, atol=1e-12)


def test_overfits_a_single_graph():
    record = six_node_graph(seed=0, label=1)
    graphs, vocab = encoded([record])
    hyper = Hyperparameters(d=8, d_edge=8, hops=2, dropout=0.0, vocab_size=len(vocab))
    model = init_model(hyper, seed=0)
    optimizer = Adam(model.params, lr=0.05)
    batch = GraphBatch.from_graphs(graphs)
    for step in range(500):
        loss, grads = batch_gradients(model.params, graphs, hyper, seed=0, step=step, train=False)
        if loss < 1e-3:
            break
        optimizer.step(model.params, grads)
    _, final = batch_loss(model.params, batch, hyper)
    assert final.item() < 1e-3


def test_single_example_loss_never_increases():
    graphs, vocab = encoded([six_node_graph(seed=4, label=1)])
    config = TrainConfig(**TINY, batch=1, epochs=50, lr=0.001, seed=4)
    result = train(graphs, [], config, vocab.tokens)
    losses = [row["train_loss"] for row in result.history]
    assert len(losses) == 50
    assert all(later <= earlier + 1e-6 for earlier, later in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_non_finite_loss_diverges():
    records, _ = edge_type_dataset(8, seed=0, holdout=0.0)
    graphs, vocab = encoded(records)
    config = TrainConfig(**TINY, epochs=1, batch=4)
    model = init_model(config.hyperparameters(len(vocab)), vocabulary=vocab.tokens)
    model.params["W_out"][:] = np.nan
    with pytest.raises(Diverged):
        train(graphs, [], config, vocab.tokens, model=model)


# ---- training loop ----

def test_history_and_earliest_best_epoch():
    train_set, held_out = edge_type_dataset(16, seed=3)
    graphs, vocab = encoded(train_set)
    config = TrainConfig(**TINY, lr=0.0, epochs=3, batch=8)
    result = train(graphs, encode_records(held_out, vocab), config, vocab.tokens)
    assert [row["epoch"] for row in result.history] == [1, 2, 3]
    assert {"train_loss", "val_f1", "val_accuracy", "val_precision", "val_recall"} <= set(result.history[0])
    # nothing changes with lr=0, so the first epoch stays best
    assert result.best_epoch == 1
    assert result.model.meta["best_epoch"] == 1


def test_vocabulary_comes_from_train_records_only():
    train_set = [six_node_graph(seed=0)]
    config = TrainConfig(min_freq=1)
    vocab = build_vocabulary(train_set, config)
    assert set(vocab.tokens[2:]) == set(record_tokens(train_set[0]))


def test_train_records_needs_graphs():
    with pytest.raises(DatasetError):
        train_records([], [], TrainConfig())


def test_evaluate_nothing():
    model = init_model(Hyperparameters(d=4, d_edge=4, hops=1))
    assert evaluate_graphs(model, []) == {"precision": 0.0, "recall": 0.0, "f1": 0.0, "accuracy": 0.0}


def held_out_accuracy(config: TrainConfig, seed: int = 0) -> float:
    train_set, held_out = edge_type_dataset(400, seed)
    result = train_records(train_set, held_out, config)
    graphs = encode_records(held_out, Vocabulary(result.model.vocabulary))
    return evaluate_graphs(result.model, graphs)["accuracy"]


SEPARABILITY = dict(d=16, d_edge=16, hops=1, dropout=0.0, lr=0.01, batch=32, epochs=30, seed=0, min_freq=1)


@pytest.mark.slow
def test_edge_aware_model_separates_edge_types():
    assert held_out_accuracy(TrainConfig(**SEPARABILITY)) >= 0.95


@pytest.mark.slow
def test_tied_ggnn_cannot_see_edge_types():
    config = TrainConfig(**SEPARABILITY, variant=Variant.GGNN, tie_edge_types=True)
    assert held_out_accuracy(config) <= 0.60


def test_twins_differ_only_in_one_edge_type():
    neg, pos = edge_type_dataset(2, seed=9, holdout=0.0)[0]
    if neg["label"] == 1:
        neg, pos = pos, neg
    assert neg["nodes"] == pos["nodes"]
    diff = [(a, b) for a, b in zip(neg["edges"], pos["edges"]) if a != b]
    assert len(diff) == 1
    vocab = Vocabulary.build([record_tokens(neg)], min_freq=1)
    assert encode_graph(neg, vocab).node_tokens == encode_graph(pos, vocab).node_tokens
