import math

import numpy as np
import pytest

from transtagger import layers
from transtagger import numerics as nx
from transtagger.data import Post
from transtagger.fusion import (
    FeatureSchema,
    FusionConfig,
    TransTagger,
    apply_positions,
    classify,
    fuse,
    make_positional_encoding,
)
from transtagger.textenc import EncoderConfig

from oracles import positional_encoding_mp

TINY_ENC = EncoderConfig(layers=1, heads=2, hidden=8, ff=8, dropout=0.0, max_len=16)
TINY_FUSION = FusionConfig(layers=1, heads=2, width=8, ff=8, dropout=0.0)


def _posts(n=4):
    sources = ["iphone", "android", "web"]
    return [
        Post(
            f"p{i}",
            f"coffee near the river {i % 3}",
            ["Melbourne", "Carlton"][i % 2],
            "likes food" if i % 2 else "",
            sources[i % 3],
            f"2021-0{1 + i % 9}-0{1 + i % 7}T{(3 * i) % 24:02d}:15:00Z",
            -37.8,
            144.9,
            label=f"poi{i % 2}",
        )
        for i in range(n)
    ]


def _model(schema=None, fusion=TINY_FUSION, enc=TINY_ENC, seed=0, n_classes=2):
    schema = schema or FeatureSchema()
    classes = {"poi": [f"poi{i}" for i in range(n_classes)]}
    return TransTagger.build(schema, enc, fusion, classes, _posts(6), np.random.default_rng(seed))


# --- positional encoding -------------------------------------------------


@pytest.mark.parametrize("hidden", [2, 8, 128, 256])
def test_positional_encoding_matches_high_precision_oracle(hidden):
    pe = make_positional_encoding(64, hidden)
    cols = range(hidden) if hidden <= 8 else [0, 1, 2, 3, hidden // 2, hidden // 2 + 1, hidden - 2, hidden - 1]
    worst = max(abs(pe[pos, d] - positional_encoding_mp(pos, d, hidden)) for pos in range(64) for d in cols)
    assert worst <= 1e-12


def test_positional_encoding_pythagorean_pairs():
    pe = make_positional_encoding(64, 256)
    np.testing.assert_allclose(pe[:, 0::2] ** 2 + pe[:, 1::2] ** 2, 1.0, atol=1e-12)


def test_positional_encoding_row_zero_and_first_sine():
    for hidden in (4, 128):
        pe = make_positional_encoding(3, hidden)
        np.testing.assert_array_equal(pe[0], np.tile([0.0, 1.0], hidden // 2))
        assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-15)
    assert pe[1, 0] == pytest.approx(0.841471, abs=1e-6)


def test_positional_encoding_rejects_odd_width():
    with pytest.raises(ValueError):
        make_positional_encoding(4, 7)


def test_apply_positions_modes():
    pe = make_positional_encoding(4, 128)
    F = nx.Tensor(np.random.default_rng(0).normal(size=(4, 128)))
    cat = apply_positions(F, pe, "concat").data
    assert cat.shape == (4, 256)
    np.testing.assert_array_equal(cat[:, :128], F.data)
    np.testing.assert_array_equal(cat[:, 128:], pe)
    np.testing.assert_array_equal(apply_positions(nx.Tensor(np.zeros((4, 128))), pe, "add").data, pe)
    assert apply_positions(F, pe, "none") is F
    with pytest.raises(ValueError):
        apply_positions(F, make_positional_encoding(3, 128), "concat")


# --- fusion and head ----------------------------------------------------


def _fusion_params(cfg, d_in, rows=4, n_classes=3, seed=0):
    rng = np.random.default_rng(seed)
    p = {}
    layers.init_linear(p, "fusion.in", d_in, cfg.width, rng)
    for i in range(cfg.active_layers):
        layers.init_encoder_block(p, f"fusion.block{i}", cfg.width, cfg.ff, rng)
    layers.init_linear(p, "head.poi", rows * cfg.width, n_classes, rng)
    return p


def test_fuse_output_shape():
    cfg = FusionConfig(layers=2, heads=2, width=8, ff=8, dropout=0.0)
    p = _fusion_params(cfg, 16)
    X = nx.Tensor(np.random.default_rng(1).normal(size=(3, 4, 16)))
    assert fuse(X, cfg, p).shape == (3, 4, 8)
    with pytest.raises(ValueError):
        fuse(nx.Tensor(np.zeros((3, 4, 8))), cfg, p)


def test_zero_layers_equals_disabled_encoder():
    X = nx.Tensor(np.random.default_rng(2).normal(size=(2, 4, 16)))
    off = FusionConfig(layers=2, heads=2, width=8, ff=8, use_fusion_encoder=False, dropout=0.0)
    zero = FusionConfig(layers=0, heads=2, width=8, ff=8, dropout=0.0)
    p = _fusion_params(zero, 16)
    np.testing.assert_array_equal(fuse(X, off, p).data, fuse(X, zero, p).data)


def test_swapping_rows_after_concat_changes_output():
    cfg = FusionConfig(layers=1, heads=2, width=8, ff=8, dropout=0.0)
    p = _fusion_params(cfg, 16)
    F = np.random.default_rng(3).normal(size=(1, 4, 8))
    swapped = F[:, [1, 0, 2, 3]]
    pe = make_positional_encoding(4, 8)
    a = fuse(apply_positions(nx.Tensor(F), pe, "concat"), cfg, p).data
    b = fuse(apply_positions(nx.Tensor(swapped), pe, "concat"), cfg, p).data
    # without positions the output rows would simply swap too
    assert not np.allclose(a[:, [1, 0, 2, 3]], b)


def test_equal_rows_stay_equal_without_positions():
    cfg = FusionConfig(layers=2, heads=2, width=8, ff=8, position_mode="none", dropout=0.0)
    p = _fusion_params(cfg, 8)
    row = np.random.default_rng(4).normal(size=8)
    out = fuse(nx.Tensor(np.tile(row, (1, 4, 1))), cfg, p).data[0]
    np.testing.assert_allclose(out, np.tile(out[0], (4, 1)), atol=1e-12)


def test_classify_sums_to_one_and_zero_weights_are_uniform():
    cfg = FusionConfig(layers=1, heads=2, width=8, ff=8, dropout=0.0)
    p = _fusion_params(cfg, 16, n_classes=5)
    h = nx.Tensor(np.random.default_rng(5).normal(size=(3, 4, 8)))
    probs = classify(h, p).data
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(probs > 0) and np.all(probs.argmax(axis=1) < 5)
    p["head.poi.w"].data[:] = 0.0
    p["head.poi.b"].data[:] = 0.0
    np.testing.assert_allclose(classify(h, p).data, 0.2, atol=1e-15)


def test_build_rejects_empty_class_list():
    with pytest.raises(ValueError):
        _model(n_classes=0)


# --- full model ----------------------------------------------------------


def test_assemble_features_shape_and_row_order():
    schema = FeatureSchema(text_fields=["text", "user_location"], ct_fields=["source"], time_fields=["created_at"])
    m = _model(schema)
    posts = _posts(3)
    F = m.assemble_features(posts).data
    assert F.shape == (3, 4, 8)
    loc = m.encode_strings([p.user_location for p in posts]).data
    np.testing.assert_allclose(F[:, 1], loc, atol=1e-12)


def test_field_order_permutes_rows():
    a = FeatureSchema(text_fields=["text", "user_location"])
    b = FeatureSchema(text_fields=["user_location", "text"])
    ma, mb = _model(a), _model(b)
    mb.params = ma.params
    posts = _posts(2)
    Fa, Fb = ma.assemble_features(posts).data, mb.assemble_features(posts).data
    np.testing.assert_array_equal(Fa[:, [1, 0, 2, 3]], Fb)


def test_ct_mode_is_irrelevant_without_ct_fields():
    text = FeatureSchema(ct_fields=[], ct_mode="text")
    onehot = FeatureSchema(ct_fields=[], ct_mode="onehot")
    ma, mb = _model(text), _model(onehot)
    assert set(ma.params) == set(mb.params)
    mb.params = ma.params
    posts = _posts(3)
    np.testing.assert_array_equal(ma.predict_proba(posts), mb.predict_proba(posts))


@pytest.mark.parametrize("ct_mode", ["text", "onehot"])
@pytest.mark.parametrize("time_mode", ["text", "onehot", "unihier"])
def test_predict_proba_shape_for_every_combination(ct_mode, time_mode):
    m = _model(FeatureSchema(ct_mode=ct_mode, time_mode=time_mode), n_classes=3)
    probs = m.predict_proba(_posts(5))
    assert probs.shape == (5, 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_duplicate_posts_give_identical_rows():
    m = _model(fusion=FusionConfig(layers=1, heads=2, width=8, ff=8, dropout=0.1))
    p = _posts(2)
    probs = m.predict_proba([p[0], p[1], p[0]])
    np.testing.assert_array_equal(probs[0], probs[2])


def test_unseen_category_maps_to_unk_row():
    m = _model(FeatureSchema(ct_mode="onehot"))
    out = m.encode_categorical("source", ["never-seen", "[UNK]"]).data
    np.testing.assert_array_equal(out[0], out[1])


def test_missing_field_is_reported():
    with pytest.raises(KeyError, match="bio"):
        _model(FeatureSchema(text_fields=["text", "bio"]))
    m = _model()
    m.schema = FeatureSchema(text_fields=["text", "bio"])
    with pytest.raises(KeyError, match="bio"):
        m.assemble_features(_posts(1))


def test_end_to_end_grad_check():
    schema = FeatureSchema(text_fields=["text"], ct_fields=["source"], time_fields=["created_at"], ct_mode="onehot")
    m = _model(schema, fusion=FusionConfig(layers=1, heads=2, width=8, ff=8, dropout=0.0))
    posts = _posts(2)
    labels = np.array([0, 1])

    def loss():
        return nx.cross_entropy(m.logits(posts)["poi"], labels)

    assert nx.grad_check(loss, list(m.params.values()), eps=1e-5) <= 1e-4


def test_gradients_reach_every_table():
    schema = FeatureSchema(ct_mode="onehot", time_mode="unihier")
    m = _model(schema, fusion=FusionConfig(layers=1, heads=2, width=8, ff=8, dropout=0.0))
    posts = _posts(6)
    grads = nx.backward(nx.cross_entropy(m.logits(posts)["poi"], np.array([0, 1, 0, 1, 0, 1])))
    for name in (
        "text.tok_emb",
        "text.pos_emb",
        "time.unihier.hour",
        "ct.source.proj",
        "fusion.in.w",
        "fusion.block0.attn.q.w",
        "head.poi.w",
    ):
        assert np.abs(grads[name]).max() > 0, name
    assert set(grads) >= set(m.params) - {"text.seg_emb"}
