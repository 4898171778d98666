import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negground import formats
from negground.adapter import (AttentionDiagnostics, LoraAdapter, LoraLinear, PlacementConfig,
                               attention_by_class, gradient_check, numerical_gradients, placement,
                               random_layer, relative_error)
from negground.exceptions import DimensionMismatch, RowNotNormalized, ShapeMismatch, UnknownScheme
from oracles import attention_accumulate


def hand_layer(alpha=0.5):
    return LoraLinear(np.eye(2), [[1.0, 0.0]], [[1.0], [0.0]], alpha)


def test_forward_hand_arithmetic():
    np.testing.assert_array_equal(hand_layer().forward([1.0, -1.0]), [1.5, -1.0])


def test_forward_dead_zone():
    np.testing.assert_array_equal(hand_layer().forward([-1.0, 0.0]), [-1.0, 0.0])


def test_identity_at_init():
    rng = np.random.default_rng(3)
    for _ in range(20):
        d = int(rng.integers(1, 9))
        layer = LoraLinear.init(rng.normal(size=(d, d)), min(4, d), random_state=1)
        x = rng.normal(size=d)
        assert np.array_equal(layer.forward(x), layer.W @ x)


def test_init_distribution():
    layer = LoraLinear.init(np.eye(16), 4, random_state=0)
    assert np.all(np.abs(layer.A) <= 1 / 4) and not layer.B.any()


def test_batch_equals_rowwise():
    rng = np.random.default_rng(1)
    layer = random_layer(5, 3, rng)
    X = rng.normal(size=(7, 5))
    np.testing.assert_allclose(layer.forward(X), np.array([layer.forward(x) for x in X]), atol=1e-12)


def test_dimension_errors():
    layer = hand_layer()
    with pytest.raises(DimensionMismatch):
        layer.forward([1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatch):
        layer.backward([1.0, 2.0], [1.0])
    with pytest.raises(DimensionMismatch):
        LoraLinear(np.eye(2), np.ones((1, 3)), np.ones((2, 1)))


def test_zero_B_kills_A_gradient():
    rng = np.random.default_rng(2)
    layer = LoraLinear.init(rng.normal(size=(4, 4)), 2, random_state=0)
    x = np.abs(rng.normal(size=4)) + 0.1
    layer.A[:] = np.abs(layer.A) + 0.01
    gA, gB = layer.backward(x, rng.normal(size=4))
    assert not gA.any()
    assert gB.any()


def test_dead_rectifier_zero_gradients():
    layer = LoraLinear(np.eye(3), -np.ones((2, 3)), np.ones((3, 2)))
    gA, gB = layer.backward(np.ones(3), np.ones(3))
    assert not gA.any() and not gB.any()


def test_small_layer_against_finite_differences():
    rng = np.random.default_rng(4)
    layer = random_layer(4, 2, rng)
    x, g = rng.normal(size=4), rng.normal(size=4)
    assert np.all(np.abs(layer.A @ x) > 1e-3)
    ana = layer.backward(x, g)
    num = numerical_gradients(layer, x, g, eps=1e-5)
    assert relative_error(ana[0], num[0]) < 1e-4
    assert relative_error(ana[1], num[1]) < 1e-4


def test_gradient_check_bulk():
    res = gradient_check(n_layers=50, seed=11)
    assert res["max_relative_error"] < 1e-4


def test_W_never_changes():
    rng = np.random.default_rng(5)
    layer = random_layer(6, 3, rng)
    digest = hashlib.sha256(layer.W.tobytes()).hexdigest()
    for _ in range(10):
        x, g = rng.normal(size=6), rng.normal(size=6)
        layer.step(*layer.backward(x, g), learning_rate=0.1)
    assert hashlib.sha256(layer.W.tobytes()).hexdigest() == digest
    with pytest.raises(ValueError):
        layer.W[0, 0] = 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_update_linear_in_alpha(seed, a1, a2):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 7))
    base = random_layer(d, int(rng.integers(1, d + 1)), rng)
    x = rng.normal(size=d)
    delta = lambda a: LoraLinear(base.W, base.A, base.B, a).forward(x) - base.W @ x
    np.testing.assert_allclose(delta(a1 + a2), delta(a1) + delta(a2), atol=1e-9)


@pytest.mark.parametrize("scheme, blocks", [("deep", (3, 4, 5)), ("shallow", (0, 1, 2)),
                                            ("strided", (1, 3, 5))])
def test_placement(scheme, blocks):
    assert placement(scheme) == blocks
    assert PlacementConfig(scheme).block_indices == blocks


def test_unknown_scheme():
    with pytest.raises(UnknownScheme):
        placement("middle")


def test_attention_uniform():
    diag = attention_by_class([np.full((3, 4), 0.25)], ["NOUN", "NEG", "NOUN", "OTHER"])
    assert diag.per_class == {"NEG": 0.25, "NOUN": 0.25, "OTHER": 0.25}


def test_attention_delta():
    attn = np.zeros((2, 3))
    attn[:, 1] = 1.0
    diag = attention_by_class([attn], ["NOUN", "NEG", "VERB"])
    assert diag.per_class == {"NEG": 1.0, "NOUN": 0.0, "VERB": 0.0}


def test_attention_matches_accumulation_oracle():
    rng = np.random.default_rng(9)
    labels = ["NOUN", "NEG", "VERB", "ADJ", "DET"]
    for _ in range(50):
        t = int(rng.integers(2, 9))
        classes = list(rng.choice(labels, size=t))
        blocks = []
        for _ in range(int(rng.integers(1, 5))):
            shape = (int(rng.integers(1, 4)), int(rng.integers(1, 6)), t)
            raw = rng.random(shape if rng.random() < 0.5 else shape[1:])
            blocks.append(raw / raw.sum(axis=-1, keepdims=True))
        diag = attention_by_class(blocks, classes)
        overall, per_block = attention_accumulate(blocks, classes)
        assert set(diag.per_class) == set(overall)
        for c, v in overall.items():
            assert abs(diag.per_class[c] - v) < 1e-9
        for got, want in zip(diag.per_block, per_block):
            for c, v in want.items():
                assert abs(got[c] - v) < 1e-9


def test_attention_errors():
    with pytest.raises(ShapeMismatch):
        attention_by_class([np.full((2, 3), 1 / 3)], ["NOUN", "NEG"])
    with pytest.raises(RowNotNormalized):
        attention_by_class([np.full((2, 2), 0.6)], ["NOUN", "NEG"])
    assert isinstance(attention_by_class([np.eye(2)], ["A", "B"]), AttentionDiagnostics)


def test_lora_adapter_fits_low_rank_target():
    rng = np.random.default_rng(0)
    d = 6
    B_true = rng.normal(size=(d, 2))
    A_true = rng.normal(size=(2, d))
    X = rng.normal(size=(200, d))
    Y = X + np.maximum(X @ A_true.T, 0) @ B_true.T
    est = LoraAdapter(rank=4, learning_rate=0.05, max_iter=3000, random_state=0).fit(X, Y)
    assert est.loss_curve_[-1] < 0.2 * est.loss_curve_[0]
    assert est.predict(X).shape == Y.shape
    assert est.get_params()["rank"] == 4


def test_lora_adapter_shape_error():
    with pytest.raises(DimensionMismatch):
        LoraAdapter().fit(np.ones((3, 2)), np.ones((3, 3)))


def test_checkpoint_roundtrip(tmp_path):
    layer = random_layer(5, 2, np.random.default_rng(8), alpha=0.7)
    path = tmp_path / "layer.ckpt"
    formats.save_layer(path, layer)
    back = formats.load_layer(path)
    # blocks are float32 on disk: values come back rounded once, then stable
    for name in ("W", "A", "B"):
        want = getattr(layer, name).astype(np.float32).astype(np.float64)
        assert np.array_equal(getattr(back, name), want)
    assert back.alpha == layer.alpha
    formats.save_layer(tmp_path / "again.ckpt", back)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
