from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moledit import numerics as nx
from moledit.expertise import ExpertiseSegmentation, Segment, SegmentationMismatch
from moledit.meka import AdapterConfig, EmptySegment, MEKAdapter, gate_expertise, gate_token, top_k_mask
from moledit.numerics import Tensor

D = 5


def adapter(kind="encoder", seed=0, **kw):
    return MEKAdapter(AdapterConfig(d_model=D, **kw), kind, seed=seed)


def identity_gate(a):
    a.gate.data = np.eye(a.config.n_experts, D)
    return a


def random_experts(a, rng):
    for ws in a.experts:
        ws[0].data = rng.normal(size=(D, D))
    return a


# --- gates ---------------------------------------------------------------------------
@pytest.mark.parametrize("gate_fn", ["segment", "token"])
def test_equal_logits_pick_expert_zero(gate_fn):
    a = adapter()
    a.gate.data[:] = 0.0
    z = np.ones((2, D))
    g = gate_expertise(a, z, [0, 1]) if gate_fn == "segment" else gate_token(a, z[0])
    assert g.weights.tolist() == [0.2, 0.0, 0.0, 0.0, 0.0]


@pytest.mark.parametrize("gate_fn", ["segment", "token"])
def test_hand_softmax_top1(gate_fn):
    a = identity_gate(adapter())
    z = np.array([[2.0, 1.0, 0.0, 0.0, 0.0]])
    g = gate_expertise(a, z, [0]) if gate_fn == "segment" else gate_token(a, z[0])
    expected = math.exp(2) / (math.exp(2) + math.exp(1) + 3)
    assert g.nonzero == 1 and g.expert == 0
    assert g.weights[0] == pytest.approx(expected, abs=1e-15)


def test_segment_gate_uses_mean():
    a = identity_gate(adapter())
    z = np.array([[4.0, 0, 0, 0, 0], [0.0, 2, 0, 0, 0], [9.0, 9, 9, 9, 9]])
    assert np.array_equal(gate_expertise(a, z, [0, 1]).weights, gate_token(a, np.array([2.0, 1, 0, 0, 0])).weights)


def test_top_k_equal_p_is_full_softmax():
    a = adapter(top_k=5, seed=4)
    g = gate_token(a, np.random.default_rng(0).normal(size=D))
    assert g.nonzero == 5
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_empty_segment():
    with pytest.raises(EmptySegment):
        gate_expertise(adapter(), np.ones((2, D)), [])


def test_top_k_mask_ties():
    assert top_k_mask(np.array([0.3, 0.3, 0.3]), 2).tolist() == [[1.0, 1.0, 0.0]]


@settings(max_examples=50)
@given(st.integers(1, 5), st.integers(0, 1000), st.booleans())
def test_gate_sparsity(k, seed, training):
    a = adapter(top_k=k, seed=seed)
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(4, D))
    for i in range(4):
        g = gate_token(a, z[i], training=training, rng=rng)
        assert g.nonzero <= k
        assert np.all((g.weights >= 0) & (g.weights <= 1))
    probs = nx.softmax(Tensor(z @ a.gate.data.T), axis=1).data
    assert np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-12)


def test_training_noise_needs_rng():
    with pytest.raises(ValueError):
        gate_token(adapter(), np.ones(D), training=True)


def test_noise_is_silent_at_inference():
    a = adapter(gate_noise_std=5.0)
    z = np.arange(D, dtype=float)
    a1 = gate_token(a, z, rng=np.random.default_rng(1)).weights
    a2 = gate_token(a, z, rng=np.random.default_rng(2)).weights
    assert np.array_equal(a1, a2)


def test_noise_changes_training_gates():
    a = adapter(gate_noise_std=5.0, top_k=5)
    z = np.arange(D, dtype=float)
    a1 = gate_token(a, z, training=True, rng=np.random.default_rng(1)).weights
    a2 = gate_token(a, z, training=True, rng=np.random.default_rng(2)).weights
    assert not np.array_equal(a1, a2)


@pytest.mark.parametrize("k, p", [(0, 5), (6, 5)])
def test_config_rejects_bad_k(k, p):
    with pytest.raises(ValueError):
        AdapterConfig(n_experts=p, top_k=k)


# --- encoder site ----------------------------------------------------------------------
def _seg(assign):
    return ExpertiseSegmentation.from_assignment(["a", "b", "c"], assign)


def test_zero_experts_are_identity():
    rng = np.random.default_rng(0)
    z, base = Tensor(rng.normal(size=(4, D))), Tensor(rng.normal(size=(4, D)))
    enc = adapter("encoder").apply_encoder(z, _seg([0, 0, 1, 1]), base)
    dec = adapter("decoder").apply_decoder(z, base)
    assert np.array_equal(enc.data, base.data) and np.array_equal(dec.data, base.data)


def test_one_segment_formula():
    rng = np.random.default_rng(1)
    a = random_experts(adapter(seed=2), rng)
    z, base = rng.normal(size=(3, D)), rng.normal(size=(3, D))
    g = gate_expertise(a, z, [0, 1, 2])
    p = g.expert
    out = a.apply_encoder(Tensor(z), _seg([0, 0, 0]), Tensor(base)).data
    assert np.allclose(out, base + g.weights[p] * z @ a.experts[p][0].data.T, atol=1e-12)


def test_two_segments_match_dense_reference():
    rng = np.random.default_rng(3)
    a = random_experts(adapter(seed=3, top_k=2), rng)
    z, base = rng.normal(size=(5, D)), rng.normal(size=(5, D))
    assign = [0, 1, 0, 1, 1]
    out = a.apply_encoder(Tensor(z), _seg(assign), Tensor(base)).data
    expected = base.copy()
    for n in (0, 1):
        rows = [i for i, s in enumerate(assign) if s == n]
        g = gate_expertise(a, z, rows).weights
        for i in rows:
            expected[i] += sum(g[p] * a.experts[p][0].data @ z[i] for p in range(5))
    assert np.allclose(out, expected, atol=1e-12)


def test_routing_locality():
    rng = np.random.default_rng(5)
    a = random_experts(adapter(seed=5), rng)
    z, base = rng.normal(size=(4, D)), np.zeros((4, D))
    seg = _seg([0, 0, 1, 1])
    before = a.apply_encoder(Tensor(z), seg, Tensor(base)).data
    z2 = z.copy()
    z2[0:2] += rng.normal(size=(2, D))
    after = a.apply_encoder(Tensor(z2), seg, Tensor(base)).data
    assert np.array_equal(before[2:], after[2:])


def test_segmentation_mismatch():
    with pytest.raises(SegmentationMismatch):
        adapter().apply_encoder(Tensor(np.ones((3, D))), _seg([0, 1]), Tensor(np.ones((3, D))))


@pytest.mark.parametrize("segments", [(), (Segment("a", (0, 1)), Segment("b", (1,))), (Segment("a", ()), Segment("b", (0, 1)))])
def test_bad_partition_rejected(segments):
    with pytest.raises(SegmentationMismatch):
        ExpertiseSegmentation(segments, 2)


# --- decoder site ---------------------------------------------------------------------
def _decoder_delta(lam, seed=7):
    rng = np.random.default_rng(seed)
    a = random_experts(adapter("decoder", seed=seed, lam=lam), rng)
    # zero base output so the delta is read off without a rounding subtraction
    return a.apply_decoder(Tensor(rng.normal(size=(3, D))), Tensor(np.zeros((3, D)))).data


def test_lambda_zero_is_identity():
    assert np.array_equal(_decoder_delta(0.0), np.zeros((3, D)))


def test_lambda_linearity():
    assert np.array_equal(_decoder_delta(2.0), 2.0 * _decoder_delta(1.0))


def test_decoder_tokens_gate_independently():
    rng = np.random.default_rng(9)
    a = random_experts(adapter("decoder", seed=9), rng)
    z = rng.normal(size=(3, D))
    out = a.apply_decoder(Tensor(z), Tensor(np.zeros((3, D)))).data
    for i in range(3):
        g = gate_token(a, z[i])
        assert np.allclose(out[i], g.weights[g.expert] * a.experts[g.expert][0].data @ z[i], atol=1e-12)


# --- parameters ------------------------------------------------------------------------
def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    a = random_experts(adapter(top_k=2, seed=11), rng)
    z, base = Tensor(rng.normal(size=(4, D))), Tensor(rng.normal(size=(4, D)))
    seg = _seg([0, 1, 1, 2])
    assert nx.fd_check(lambda: nx.mean(nx.mul(a.apply_encoder(z, seg, base), base)), a.parameters()) <= 1e-4


def test_state_dict_round_trip():
    rng = np.random.default_rng(0)
    a = random_experts(adapter(seed=1), rng)
    b = adapter(seed=2)
    b.name = a.name
    b.load_state_dict(a.state_dict("adapter/"), "adapter/")
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.parameters(), b.parameters()))
    assert all(k.startswith("adapter/encoder/") for k in a.state_dict("adapter/"))


def test_two_layer_experts_start_as_identity():
    rng = np.random.default_rng(0)
    z, base = Tensor(rng.normal(size=(2, D))), Tensor(rng.normal(size=(2, D)))
    a = adapter("decoder", expert_hidden=8)
    assert np.array_equal(a.apply_decoder(z, base).data, base.data)
