import json
import math

import numpy as np
import pytest

from knnblend.core import DimensionMismatchError
from knnblend.model import (
    Model,
    ModelConfig,
    ModelFormatError,
    ModelLoadError,
    ModelShapeError,
    ModelVersionError,
    POOLING_MODES,
    pool,
)

from helpers import scalar_forward


def small_config(**overrides):
    base = dict(input_dim=5, hidden_dim=4, emb_dim=3, num_labels=3)
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# pooling


def test_pool_mean_max_cls():
    seq = [(1.0, 3.0), (3.0, 1.0)]
    np.testing.assert_array_equal(pool(seq, "mean"), [2.0, 2.0])
    np.testing.assert_array_equal(pool(seq, "max"), [3.0, 3.0])
    np.testing.assert_array_equal(pool(seq, "cls"), [1.0, 3.0])


def test_pool_singleton_is_identity_for_every_mode():
    rng = np.random.default_rng(1)
    vec = rng.normal(size=6)
    for mode in POOLING_MODES:
        np.testing.assert_array_equal(pool([vec], mode), vec)


def test_pool_accepts_flat_vector_as_single_token():
    np.testing.assert_array_equal(pool((4.0, 5.0), "mean"), [4.0, 5.0])


def test_pool_rejects_bad_input():
    with pytest.raises(ValueError):
        pool([(1.0, 2.0)], "median")
    with pytest.raises(ValueError):
        pool(np.zeros((0, 3)), "mean")
    with pytest.raises(ValueError):
        pool([(np.nan, 1.0)], "cls")


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults_and_key_dim():
    cfg = ModelConfig()
    assert cfg.resolved_retrieval_dim == cfg.emb_dim
    assert cfg.key_dim == cfg.emb_dim
    narrow = small_config(retrieval_dim=2)
    assert narrow.key_dim == 2
    shared = small_config(decouple_enabled=False)
    assert shared.key_dim == shared.emb_dim


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(input_dim=0)
    with pytest.raises(ValueError):
        small_config(num_labels=0)
    with pytest.raises(ValueError):
        small_config(retrieval_dim=0)
    with pytest.raises(ValueError):
        small_config(pooling="first")
    with pytest.raises(ValueError):
        small_config(activation="relu")


# ---------------------------------------------------------------------------
# initialization


def test_initialize_is_seeded_and_deterministic():
    cfg = small_config()
    a = Model.initialize(cfg, 33)
    b = Model.initialize(cfg, 33)
    c = Model.initialize(cfg, 34)
    for name, arr in a.parameters().items():
        np.testing.assert_array_equal(arr, b.parameters()[name])
    assert any(
        not np.array_equal(arr, c.parameters()[name])
        for name, arr in a.parameters().items()
    )


def test_initialize_respects_fan_in_bounds():
    cfg = ModelConfig(input_dim=16, hidden_dim=9, emb_dim=4, num_labels=3)
    model = Model.initialize(cfg, 0)
    assert np.abs(model.enc_w1).max() <= 1.0 / math.sqrt(16)
    assert np.abs(model.enc_w2).max() <= 1.0 / math.sqrt(9)
    assert np.abs(model.head_w).max() <= 1.0 / math.sqrt(4)
    assert np.abs(model.dec_w1).max() <= 1.0 / math.sqrt(4)
    assert np.abs(model.dec_w2).max() <= 1.0 / math.sqrt(9)


def test_initialize_without_decoupling_has_no_extra_weights():
    model = Model.initialize(small_config(decouple_enabled=False), 5)
    assert model.dec_w1 is None and model.dec_w2 is None
    assert set(model.parameters()) == {"enc_w1", "enc_b1", "enc_w2", "enc_b2", "head_w"}


# ---------------------------------------------------------------------------
# forward passes


def zero_model(cfg):
    shapes = {
        "enc_w1": (cfg.hidden_dim, cfg.input_dim),
        "enc_b1": (cfg.hidden_dim,),
        "enc_w2": (cfg.emb_dim, cfg.hidden_dim),
        "enc_b2": (cfg.emb_dim,),
        "head_w": (cfg.num_labels, cfg.emb_dim),
    }
    if cfg.decouple_enabled:
        shapes.update(
            dec_w1=(cfg.hidden_dim, cfg.emb_dim),
            dec_b1=(cfg.hidden_dim,),
            dec_w2=(cfg.resolved_retrieval_dim, cfg.hidden_dim),
            dec_b2=(cfg.resolved_retrieval_dim,),
        )
    return Model(config=cfg, **{k: np.zeros(s) for k, s in shapes.items()})


def test_encode_zero_weights_gives_zero_h0():
    model = zero_model(small_config())
    h0, r = model.encode(np.ones(5))
    np.testing.assert_array_equal(h0, np.zeros(3))
    np.testing.assert_array_equal(r, np.zeros(3))


def test_encode_without_decoupling_returns_h0_as_r():
    model = Model.initialize(small_config(decouple_enabled=False), 2)
    h0, r = model.encode(np.arange(5.0))
    np.testing.assert_array_equal(h0, r)
    cache = model.features(np.arange(5.0)[None, :])
    assert cache.r is cache.h0


def test_encode_with_decoupling_gives_distinct_r():
    model = Model.initialize(small_config(retrieval_dim=2), 2)
    h0, r = model.encode(np.arange(5.0))
    assert h0.shape == (3,)
    assert r.shape == (2,)


def test_forward_matches_scalar_oracle():
    rng = np.random.default_rng(88)
    for decouple in (True, False):
        for _ in range(10):
            cfg = small_config(decouple_enabled=decouple)
            model = Model.initialize(cfg, int(rng.integers(1 << 30)))
            x = rng.normal(size=5) * 3
            h0, r = model.encode(x)
            expected = scalar_forward(model, x)
            np.testing.assert_allclose(h0, expected["h0"], rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(r, expected["r"], rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(
                model.classify(h0), expected["probs"], rtol=1e-12, atol=1e-15
            )


def test_classify_zero_head_is_uniform():
    model = zero_model(small_config())
    np.testing.assert_array_equal(
        model.classify(np.array([0.3, -0.2, 0.9])), np.full(3, 1.0 / 3.0)
    )


def test_classify_output_is_valid_distribution():
    rng = np.random.default_rng(10)
    model = Model.initialize(small_config(), 4)
    for _ in range(50):
        probs = model.classify(rng.normal(size=3) * 10)
        assert abs(probs.sum() - 1.0) <= 1e-9
        assert probs.min() >= 0.0


def test_encode_and_classify_are_deterministic():
    model = Model.initialize(small_config(), 21)
    x = np.linspace(-1, 1, 5)
    h0_a, r_a = model.encode(x)
    h0_b, r_b = model.encode(x)
    np.testing.assert_array_equal(h0_a, h0_b)
    np.testing.assert_array_equal(r_a, r_b)
    np.testing.assert_array_equal(model.classify(h0_a), model.classify(h0_b))


def test_features_batch_shape_checks():
    model = Model.initialize(small_config(), 1)
    with pytest.raises(DimensionMismatchError):
        model.features(np.zeros((2, 4)))
    with pytest.raises(DimensionMismatchError):
        model.encode(np.zeros(4))
    with pytest.raises(DimensionMismatchError):
        model.classify(np.zeros(2))


def test_model_rejects_inconsistent_weights():
    cfg = small_config()
    good = Model.initialize(cfg, 0)
    kwargs = {k: v.copy() for k, v in good.parameters().items()}
    bad = dict(kwargs)
    bad["enc_w1"] = np.zeros((2, 2))
    with pytest.raises(ValueError):
        Model(config=cfg, **bad)
    bad = dict(kwargs)
    bad["head_w"] = np.full((3, 3), np.nan)
    with pytest.raises(ValueError):
        Model(config=cfg, **bad)
    with pytest.raises(ValueError):
        Model(
            config=small_config(decouple_enabled=False),
            enc_w1=kwargs["enc_w1"], enc_b1=kwargs["enc_b1"],
            enc_w2=kwargs["enc_w2"], enc_b2=kwargs["enc_b2"],
            head_w=kwargs["head_w"], dec_w1=kwargs["dec_w1"],
        )


# ---------------------------------------------------------------------------
# persistence


def test_save_load_round_trip(tmp_path):
    model = Model.initialize(small_config(retrieval_dim=2), 99)
    path = tmp_path / "model.json"
    model.save(path)
    loaded = Model.load(path)
    assert loaded.config == model.config
    for name, arr in model.parameters().items():
        np.testing.assert_array_equal(loaded.parameters()[name], arr)


def test_predictions_survive_round_trip(tmp_path):
    rng = np.random.default_rng(31)
    model = Model.initialize(small_config(), 7)
    path = tmp_path / "model.json"
    model.save(path)
    loaded = Model.load(path)
    for _ in range(100):
        x = rng.normal(size=5)
        h0_a, r_a = model.encode(x)
        h0_b, r_b = loaded.encode(x)
        np.testing.assert_array_equal(h0_a, h0_b)
        np.testing.assert_array_equal(r_a, r_b)
        np.testing.assert_array_equal(model.classify(h0_a), loaded.classify(h0_b))


def test_load_rejects_wrong_format_marker(tmp_path):
    model = Model.initialize(small_config(), 1)
    path = tmp_path / "model.json"
    model.save(path)
    doc = json.loads(path.read_text())
    doc["format"] = "something-else"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError):
        Model.load(path)


def test_load_rejects_non_object_document(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("[1, 2, 3]")
    with pytest.raises(ModelFormatError):
        Model.load(path)


def test_load_rejects_unsupported_version(tmp_path):
    model = Model.initialize(small_config(), 1)
    path = tmp_path / "model.json"
    model.save(path)
    doc = json.loads(path.read_text())
    doc["version"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelVersionError):
        Model.load(path)


def test_load_rejects_missing_or_misshapen_weights(tmp_path):
    model = Model.initialize(small_config(), 1)
    path = tmp_path / "model.json"

    model.save(path)
    doc = json.loads(path.read_text())
    del doc["weights"]["enc_w2"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelShapeError):
        Model.load(path)

    model.save(path)
    doc = json.loads(path.read_text())
    doc["weights"]["head_w"] = [[1.0, 2.0]]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelShapeError):
        Model.load(path)

    model.save(path)
    doc = json.loads(path.read_text())
    doc["weights"]["mystery"] = [1.0]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelShapeError):
        Model.load(path)


def test_load_rejects_truncated_json(tmp_path):
    model = Model.initialize(small_config(), 1)
    path = tmp_path / "model.json"
    model.save(path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelLoadError):
        Model.load(path)


def test_load_rejects_bad_metadata(tmp_path):
    model = Model.initialize(small_config(), 1)
    path = tmp_path / "model.json"
    model.save(path)
    doc = json.loads(path.read_text())
    del doc["input_dim"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelLoadError):
        Model.load(path)


def test_copy_is_independent():
    model = Model.initialize(small_config(), 3)
    clone = model.copy()
    clone.enc_w1[0, 0] += 1.0
    assert model.enc_w1[0, 0] != clone.enc_w1[0, 0]
