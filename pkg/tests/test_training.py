import math
from dataclasses import replace

import numpy as np
import pytest

from transtagger import numerics as nx
from transtagger.config import RunConfig
from transtagger.training import TrainingError, evaluate, train

from fixtures import tiny_config, tiny_data


@pytest.fixture(scope="module")
def data():
    return tiny_data()


@pytest.mark.parametrize("variant", ["trans", "hier", "mtl"])
def test_each_variant_trains_and_evaluates(data, variant):
    pois, train_posts, val, _ = data
    result = train(tiny_config(variant), train_posts, val, pois)
    assert [row["epoch"] for row in result.history] == [1, 2]
    assert all(0.0 <= row["val_acc1"] <= 1.0 for row in result.history)
    report = evaluate(result.tagger, val)
    assert report.acc1 <= report.acc5 <= report.acc20 == 1.0
    assert report.n_examples == len(val)


def test_loss_drops_below_initial(data):
    pois, train_posts, val, _ = data
    result = train(tiny_config(epochs=1), train_posts, val, pois)
    assert result.initial_loss == pytest.approx(math.log(6), abs=0.05)
    assert result.history[0]["train_loss"] < result.initial_loss


def test_same_seed_same_metrics_different_seed_differs(data):
    pois, train_posts, val, _ = data
    a = evaluate(train(tiny_config(), train_posts, val, pois).tagger, val)
    b = evaluate(train(tiny_config(), train_posts, val, pois).tagger, val)
    assert a == b
    c = train(tiny_config(seed=8), train_posts, val, pois).tagger
    d = train(tiny_config(), train_posts, val, pois).tagger
    assert not np.array_equal(c.poi_scores(val), d.poi_scores(val))


def test_zero_epochs_returns_untrained_model(data):
    pois, train_posts, val, _ = data
    result = train(tiny_config(epochs=0), train_posts, val, pois)
    assert result.initial_loss is None and result.history == []
    assert result.tagger.poi_scores(val).shape == (len(val), 6)


def test_hier_scores_are_path_products(data):
    pois, train_posts, val, _ = data
    tagger = train(tiny_config("hier", epochs=1, theta=0.0), train_posts, val, pois).tagger
    np.testing.assert_allclose(tagger.poi_scores(val).sum(axis=1), 1.0, atol=1e-9)
    assert set(tagger.lcpn.classifiers) == {p for p in tagger.tree.parents() if len(tagger.tree.nodes[p].children) > 1}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverging_run_raises(data):
    pois, train_posts, val, _ = data
    cfg = tiny_config(epochs=1)
    cfg.lr = float("inf")
    with pytest.raises(TrainingError):
        train(cfg, train_posts, val, pois)


def test_train_rejects_unlabelled_posts(data):
    pois, train_posts, val, _ = data
    with pytest.raises(ValueError):
        train(tiny_config(), [replace(train_posts[0], label=None)], [], pois)


def test_evaluate_rejects_unknown_label(data):
    pois, train_posts, val, _ = data
    tagger = train(tiny_config(epochs=0), train_posts, val, pois).tagger
    with pytest.raises(ValueError, match="not among"):
        evaluate(tagger, [replace(val[0], label="nowhere")])


def test_run_config_round_trip_and_validation(tmp_path):
    cfg = tiny_config("mtl", data="posts.jsonl")
    cfg.save(tmp_path / "run.json")
    loaded = RunConfig.load(tmp_path / "run.json")
    assert loaded.data == str(tmp_path / "posts.jsonl")
    loaded.data = cfg.data
    assert loaded == cfg
    assert RunConfig.from_dict({}) == RunConfig()
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.from_dict({"learning_rate": 1})
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.from_dict({"fusion": {"depth": 2}})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"variant": "flat"})
