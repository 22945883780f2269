import math

import numpy as np
import pytest

from moedrive import numerics as nx
from moedrive.encoders import FUSED_DIM
from moedrive.experts import (
    GLOBAL, GRU_HIDDEN, WP_INPUT_SCALE, Expert, ExpertBank, SpeedHead, expert_forward, predict_speed,
)
from moedrive.numerics import ParamSet, ShapeError


def vec_tanh(v):
    return [math.tanh(a) for a in v]


def matvec(W, b, x):
    return [b[i] + sum(W[i][j] * x[j] for j in range(len(x))) for i in range(len(W))]


def sig(a):
    return 1.0 / (1.0 + math.exp(-a))


def oracle_expert(e: Expert, F):
    """Element-by-element recomputation of the expert wiring."""
    h = list(F)
    layers = e.trunk.layers
    for W, b in layers:
        h = vec_tanh(matvec(W.value.tolist(), b.value.tolist(), h))
    f = h
    hid = matvec(e.h0_W.value.tolist(), e.h0_b.value.tolist(), f)
    Wx, Wh, bg = e.gru.Wx.value.tolist(), e.gru.Wh.value.tolist(), e.gru.b.value.tolist()
    H = GRU_HIDDEN
    wp = [0.0, 0.0]
    points = []
    for _ in range(4):
        x = [wp[0] * WP_INPUT_SCALE, wp[1] * WP_INPUT_SCALE]
        gx = matvec(Wx, [0.0] * 3 * H, x)
        gh = matvec(Wh, [0.0] * 3 * H, hid)
        new = []
        for i in range(H):
            z = sig(gx[i] + gh[i] + bg[i])
            r = sig(gx[H + i] + gh[H + i] + bg[H + i])
            n = math.tanh(gx[2 * H + i] + r * gh[2 * H + i] + bg[2 * H + i])
            new.append((1 - z) * n + z * hid[i])
        hid = new
        d = matvec(e.delta_W.value.tolist(), e.delta_b.value.tolist(), hid)
        wp = [wp[0] + d[0], wp[1] + d[1]]
        points.extend(wp)
    value = matvec(e.value_W.value.tolist(), e.value_b.value.tolist(), f)[0]
    feat = matvec(e.feat_W.value.tolist(), e.feat_b.value.tolist(), f)
    return points, value, feat


def zero_all(ps):
    for _, p in ps:
        p.value[...] = 0.0


def test_zero_params_give_zero_outputs():
    ps = ParamSet(0)
    e = Expert(ps, "e")
    zero_all(ps)
    wps, v, j = expert_forward(e, np.ones(FUSED_DIM)).numpy()
    assert wps.shape == (4, 2)
    assert np.array_equal(wps, np.zeros((4, 2)))
    assert v == 0.0
    assert np.array_equal(j, np.zeros(64))


def test_expert_matches_scalar_oracle():
    ps = ParamSet(9)
    e = Expert(ps, "e")
    F = np.random.default_rng(1).normal(size=FUSED_DIM)
    wps, v, j = expert_forward(e, F).numpy()
    o_wp, o_v, o_j = oracle_expert(e, F.tolist())
    assert np.allclose(wps.ravel(), o_wp, rtol=0, atol=1e-12)
    assert v == pytest.approx(o_v, abs=1e-12)
    assert np.allclose(j, o_j, rtol=0, atol=1e-12)


def test_expert_rejects_wrong_width():
    e = Expert(ParamSet(0), "e")
    with pytest.raises(ShapeError):
        expert_forward(e, np.zeros(FUSED_DIM + 1))


def test_speed_head_zero_and_scalar():
    ps = ParamSet(0)
    bank = ExpertBank(ps)
    assert isinstance(predict_speed(bank, np.ones(FUSED_DIM)), float)
    zero_all(ps)
    assert predict_speed(bank, np.ones(FUSED_DIM)) == 0.0
    assert isinstance(bank.speed_head, SpeedHead)


def test_bank_forward_all_matches_individual_calls():
    bank = ExpertBank(ParamSet(3))
    F = np.random.default_rng(2).normal(size=(3, FUSED_DIM))
    with nx.no_grad():
        outs = bank.forward_all(nx.const(F))
    assert len(outs) == 6
    for k, out in zip([GLOBAL, 0, 1, 2, 3, 4], outs):
        single = expert_forward(bank.expert(k), F)
        assert np.array_equal(out.waypoints.value, single.waypoints.value)
        assert np.array_equal(out.value.value, single.value.value)
        assert np.array_equal(out.feature.value, single.feature.value)


def test_identical_params_identical_outputs():
    ps = ParamSet(3)
    bank = ExpertBank(ps)
    for name in ps.names("expert.global."):
        suffix = name[len("expert.global."):]
        for k in range(5):
            ps[f"expert.scene{k}.{suffix}"].value[...] = ps[name].value
    F = np.random.default_rng(0).normal(size=(2, FUSED_DIM))
    with nx.no_grad():
        outs = bank.forward_all(nx.const(F))
    for out in outs[1:]:
        assert np.array_equal(out.waypoints.value, outs[0].waypoints.value)


def test_experts_have_disjoint_parameters():
    ps = ParamSet(0)
    ExpertBank(ps)
    prefixes = ["expert.global."] + [f"expert.scene{k}." for k in range(5)]
    groups = [set(ps.names(p)) for p in prefixes]
    assert all(len(g) > 0 for g in groups)
    assert sum(len(g) for g in groups) == len(set().union(*groups))
