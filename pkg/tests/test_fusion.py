from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sttrid.fusion import (
    FUSION_WEIGHTS, SHARED_WEIGHTS, FusionHead, FusionHeadConfig, LossWeights, fuse_embeddings,
    fusion_head_forward, fusion_loss, shared_loss,
)
from sttrid.model import CONCAT_ORDER, PHASES, IdentityModel, ModelConfig, check_phase
from sttrid.numerics import Parameter, ShapeError, Tape, Tensor, finite_difference_check, ops
from sttrid.skeleton import build_skeleton_graph

losses = st.floats(0.0, 50.0, allow_nan=False)


def test_presets():
    assert (SHARED_WEIGHTS.w_str, SHARED_WEIGHTS.w_ttr) == (0.5, 0.5)
    assert (FUSION_WEIGHTS.w_str, FUSION_WEIGHTS.w_ttr, FUSION_WEIGHTS.w_fusion) == (0.3, 0.3, 0.4)
    with pytest.raises(ValueError):
        LossWeights(-0.1, 0.5, 0.0)


def test_shared_loss_examples():
    assert shared_loss(Tensor(1.0), Tensor(2.0)).item() == 1.5
    assert shared_loss(Tensor(0.7), Tensor(0.7)).item() == 0.7


def test_shared_loss_gradient_is_half():
    a, b = Parameter(np.array(1.3)), Parameter(np.array(2.9))
    with Tape() as tape:
        loss = shared_loss(a, b)
    tape.backward(loss)
    assert a.grad == 0.5 and b.grad == 0.5


def test_fusion_loss_examples():
    assert fusion_loss(Tensor(1.0), Tensor(1.0), Tensor(1.0)).item() == pytest.approx(1.0, abs=1e-15)
    assert fusion_loss(Tensor(0.0), Tensor(0.0), Tensor(2.0)).item() == 0.8
    ln_k = math.log(8)
    assert fusion_loss(Tensor(ln_k), Tensor(ln_k), Tensor(ln_k)).item() == pytest.approx(ln_k, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(losses, losses, losses)
def test_losses_equal_hand_weighted_sums(a, b, c):
    assert shared_loss(Tensor(a), Tensor(b)).item() == 0.5 * a + 0.5 * b
    assert fusion_loss(Tensor(a), Tensor(b), Tensor(c)).item() == (0.3 * a + 0.3 * b) + 0.4 * c


def test_fuse_embeddings_examples():
    e_str = np.zeros((1, 256))
    e_str[0, :2] = [3.0, 4.0]
    fused = fuse_embeddings(e_str, np.zeros((1, 256))).data
    assert fused.shape == (1, 512)
    np.testing.assert_allclose(fused[0, :2], [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(fused[0, 256:], 0.0)

    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 256)), rng.standard_normal((3, 256))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    np.testing.assert_allclose(fuse_embeddings(a, b).data, np.concatenate([a, b], axis=1), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_fused_row_norm_and_order(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((4, 256)) * 10, rng.standard_normal((4, 256))
    fused = fuse_embeddings(a, b).data
    np.testing.assert_allclose(np.linalg.norm(fused, axis=1), math.sqrt(2), atol=1e-9)
    np.testing.assert_allclose(fused[:, :256], a / np.linalg.norm(a, axis=1, keepdims=True), atol=1e-12)
    assert CONCAT_ORDER == ("str", "ttr")


def test_fuse_width_mismatch():
    with pytest.raises(ShapeError):
        fuse_embeddings(np.zeros((2, 256)), np.zeros((2, 128)))


def test_head_config_validation():
    with pytest.raises(ValueError):
        FusionHeadConfig(3, input_width=7)
    with pytest.raises(ValueError):
        FusionHeadConfig(3, dropout_p=1.0)


def test_head_shape_and_eval_determinism():
    head = FusionHead(FusionHeadConfig(5), seed=1)
    x = Tensor(np.random.default_rng(2).standard_normal((4, 512)))
    head.train()
    assert head(x).shape == (4, 5)
    a = fusion_head_forward(x, head, training=False).data
    b = fusion_head_forward(x, head, training=False).data
    np.testing.assert_array_equal(a, b)


def test_head_dropout_changes_with_step():
    head = FusionHead(FusionHeadConfig(5), seed=1)
    x = Tensor(np.random.default_rng(2).standard_normal((4, 512)))
    first = fusion_head_forward(x, head, training=True).data
    np.testing.assert_array_equal(first, fusion_head_forward(x, head, training=True).data)
    head.step += 1
    assert not np.array_equal(first, fusion_head_forward(x, head, training=True).data)


def test_tiny_head_gradcheck():
    head = FusionHead(FusionHeadConfig(3, input_width=8, hidden=(8, 4)), seed=3)
    head.train()
    x = Parameter(np.random.default_rng(4).standard_normal((5, 8)))
    labels = np.array([0, 1, 2, 1, 0])
    err = finite_difference_check(lambda xx, *_: ops.cross_entropy(head(xx), labels), [x] + head.parameters())
    assert err < 1e-5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_argmax_invariant_to_embedding_scale(seed, s1, s2):
    rng = np.random.default_rng(seed)
    head = FusionHead(FusionHeadConfig(4, hidden=(16, 8), classifier_init_scale=1.0), seed=seed % 1000)
    head.eval()
    a, b = rng.standard_normal((6, 256)), rng.standard_normal((6, 256))
    base = head(fuse_embeddings(a, b)).data.argmax(axis=1)
    scaled = head(fuse_embeddings(a * s1, b * s2)).data.argmax(axis=1)
    np.testing.assert_array_equal(base, scaled)


# -- the phase container ----------------------------------------------------

TINY = ModelConfig(num_classes=3, heads=2, dk_ratio=0.5, dv_ratio=0.5, attention_blocks=1,
                   str_stem=(4, 8), ttr_stem=(4, 8), ttr_temporal_kernel=3, fusion_hidden=(8, 6),
                   classifier_init_scale=1.0)
PATH4 = build_skeleton_graph([(0, 1), (1, 2), (2, 3)], 4)


def test_phase_validation():
    assert PHASES == ("str-only", "ttr-only", "joint-shared", "joint-fusion")
    with pytest.raises(ValueError):
        check_phase("fusion")


@pytest.mark.parametrize("phase,prefixes", [
    ("str-only", {"str"}), ("ttr-only", {"ttr"}), ("joint-shared", {"str", "ttr"}),
    ("joint-fusion", {"str", "ttr", "fusion"}),
])
def test_phase_scoping_of_parameters(phase, prefixes):
    model = IdentityModel(TINY, phase)
    names = [n for n, _ in model.named_parameters()]
    assert {n.split(".")[0] for n in names} == prefixes
    assert all(p.name == n for n, p in model.named_parameters())


def test_stream_weights_match_across_phases():
    a = IdentityModel(TINY, "str-only", seed=4).state_dict()
    b = IdentityModel(TINY, "joint-fusion", seed=4).state_dict()
    for name, value in a.items():
        np.testing.assert_array_equal(b[name], value)


@pytest.mark.parametrize("phase", PHASES)
def test_model_loss_composition(phase):
    model = IdentityModel(TINY, phase, seed=1)
    model.eval()
    x = np.random.default_rng(5).standard_normal((4, 3, 6, 17))
    labels = np.array([0, 1, 2, 0])
    out = model(x)
    total = model.loss(out, labels).item()
    ce = {k: ops.cross_entropy(getattr(out, k).logits, labels).item() for k in ("str", "ttr") if getattr(out, k)}
    if phase == "str-only":
        assert total == ce["str"]
    elif phase == "ttr-only":
        assert total == ce["ttr"]
    elif phase == "joint-shared":
        assert total == 0.5 * ce["str"] + 0.5 * ce["ttr"]
    else:
        cf = ops.cross_entropy(out.fusion_logits, labels).item()
        assert total == (0.3 * ce["str"] + 0.3 * ce["ttr"]) + 0.4 * cf
    scores = model.scores(out)
    np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("phase", ["joint-shared", "joint-fusion"])
def test_joint_model_gradcheck(phase):
    model = IdentityModel(TINY, phase, seed=2, graph=PATH4)
    model.train()
    x = Parameter(np.random.default_rng(6).standard_normal((3, 3, 6, 4)))
    labels = np.array([0, 1, 2])
    err = finite_difference_check(lambda xx, *_: model.loss(model(xx), labels), [x] + model.parameters(),
                                  max_coords=8)
    assert err < 1e-4
