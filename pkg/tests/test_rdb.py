import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zira_lab import tensorcore as tc
from zira_lab.errors import DimensionError, DomainError
from zira_lab.rdb import (BranchParams, Rdb, consolidate_with_pretrained, merge_hlrb_into_llrb, rdb_forward,
                          reset_hlrb)
from zira_lab.tensorcore import Tensor


def random_rdb(rng, kind, d_in, d_out, k=3, s=None, hlrb=True):
    shape = (d_out, d_in) if kind == "linear" else (d_out, d_in, k, k)
    pad = 0 if kind == "linear" else k // 2

    def branch(on=True):
        w = rng.normal(size=shape) if on else np.zeros(shape)
        b = rng.normal(size=d_out) if on else np.zeros(d_out)
        return BranchParams(kind, Tensor(w), Tensor(b), pad)

    s = rng.normal() if s is None else s
    return Rdb(branch(), branch(hlrb), Tensor(np.array(s)), s_init=0.5), branch()


def random_input(rng, kind, d_in, size=5):
    return Tensor(rng.normal(size=(3, d_in)) if kind == "linear" else rng.normal(size=(2, d_in, size, size)))


def test_hand_example():
    one = lambda v: Tensor(np.array([[v]]))
    r = Rdb(BranchParams("linear", one(3.0), Tensor([-1.0])), BranchParams("linear", one(2.0), Tensor([1.0])),
            Tensor(np.array(0.5)), s_init=1.0)
    assert rdb_forward(r, one(4.0)).output.item() == 15.5


def test_merge_hand_example():
    r = Rdb(BranchParams("linear", Tensor([[3.0]]), Tensor([0.0])), BranchParams("linear", Tensor([[1.0]]),
            Tensor([0.0])), Tensor(np.array(2.0)), s_init=1.0)
    merge_hlrb_into_llrb(r)
    assert r.llrb.weight.data.tolist() == [[5.0]]
    assert r.hlrb.weight.data.tolist() == [[0.0]] and float(r.s.data) == 1.0


@pytest.mark.parametrize("kind", ["linear", "conv"])
def test_zero_branches(kind):
    rng = np.random.default_rng(0)
    r, _ = random_rdb(rng, kind, 3, 4, hlrb=False)
    x = random_input(rng, kind, 3)
    out = rdb_forward(r, x)
    np.testing.assert_array_equal(out.output.data, r.llrb.forward(x).data)
    assert not np.any(out.hlrb_scaled.data)
    z = Rdb.zeros(kind, r.llrb.weight.shape, r.llrb.padding)
    assert not np.any(rdb_forward(z, x).output.data)


@pytest.mark.parametrize("kind", ["linear", "conv"])
def test_merge_with_zero_hlrb_is_bitwise_noop(kind):
    rng = np.random.default_rng(1)
    r, _ = random_rdb(rng, kind, 2, 3, hlrb=False)
    w, b = r.llrb.weight.data.copy(), r.llrb.bias.data.copy()
    merge_hlrb_into_llrb(r)
    np.testing.assert_array_equal(r.llrb.weight.data, w)
    np.testing.assert_array_equal(r.llrb.bias.data, b)


def test_reset_idempotent_and_exact():
    rng = np.random.default_rng(2)
    r, _ = random_rdb(rng, "conv", 2, 2)
    x = random_input(rng, "conv", 2)
    reset_hlrb(r)
    once = {k: t.data.copy() for k, t in r.parameters().items()}
    reset_hlrb(r)
    for k, t in r.parameters().items():
        np.testing.assert_array_equal(t.data, once[k])
    np.testing.assert_array_equal(rdb_forward(r, x).output.data, r.llrb.forward(x).data)
    assert float(r.s.data) == r.s_init


def test_carry_s_keeps_scale():
    rng = np.random.default_rng(3)
    r, _ = random_rdb(rng, "linear", 2, 2, s=1.7)
    merge_hlrb_into_llrb(r, reset_s=False)
    assert float(r.s.data) == 1.7


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["linear", "conv"]), st.integers(1, 8), st.integers(1, 8), st.sampled_from([1, 3]),
       st.integers(0, 2**31 - 1))
def test_merge_and_consolidation_preserve_function(kind, d_in, d_out, k, seed):
    rng = np.random.default_rng(seed)
    r, ptb = random_rdb(rng, kind, d_in, d_out, k)
    x = random_input(rng, kind, d_in)
    before = rdb_forward(r, x).output.data
    fused = consolidate_with_pretrained(r, ptb)
    np.testing.assert_allclose(fused.forward(x).data, ptb.forward(x).data + before, rtol=1e-9, atol=1e-12)
    assert fused.n_params() == ptb.n_params()
    merge_hlrb_into_llrb(r)
    np.testing.assert_allclose(rdb_forward(r, x).output.data, before, rtol=0, atol=1e-12)


def test_conv_kernel_additivity_against_loop_oracle():
    from test_tensorcore import loop_conv
    rng = np.random.default_rng(4)
    r, ptb = random_rdb(rng, "conv", 2, 3, 3)
    x = rng.normal(size=(1, 2, 5, 5))
    fused = consolidate_with_pretrained(r, ptb)
    s = float(r.s.data)
    want = (loop_conv(x, ptb.weight.data, ptb.bias.data, 1) + s * loop_conv(x, r.hlrb.weight.data, r.hlrb.bias.data, 1)
            + loop_conv(x, r.llrb.weight.data, r.llrb.bias.data, 1))
    np.testing.assert_allclose(fused.forward(Tensor(x)).data, want, rtol=0, atol=1e-12)


def test_all_zero_rdb_fuses_to_ptb_bitwise():
    rng = np.random.default_rng(5)
    _, ptb = random_rdb(rng, "conv", 3, 3)
    fused = consolidate_with_pretrained(Rdb.zeros("conv", ptb.weight.shape, 1, s_init=0.1), ptb)
    np.testing.assert_array_equal(fused.weight.data, ptb.weight.data)
    np.testing.assert_array_equal(fused.bias.data, ptb.bias.data)


def test_layout_errors():
    with pytest.raises(DimensionError):
        BranchParams("linear", Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))
    with pytest.raises(DomainError):
        BranchParams("rnn", Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))
    with pytest.raises(DimensionError):
        Rdb(BranchParams.zeros("linear", (2, 3)), BranchParams.zeros("linear", (3, 3)), Tensor(np.array(1.0)), 1.0)
    with pytest.raises(DomainError):
        Rdb.zeros("linear", (2, 2), eta=1.5)
    rng = np.random.default_rng(6)
    r, _ = random_rdb(rng, "linear", 2, 2)
    with pytest.raises(DimensionError):
        consolidate_with_pretrained(r, BranchParams.zeros("linear", (2, 3)))
    with pytest.raises(DimensionError):
        rdb_forward(r, Tensor(np.zeros((1, 5))))


def test_rdb_graph_gradients():
    from zira_lab.gradcheck import grad_check
    rng = np.random.default_rng(7)

    def build(x, wl, bl, wh, bh, s):
        r = Rdb(BranchParams("conv", wl, bl, 1), BranchParams("conv", wh, bh, 1), s, s_init=0.1)
        out = rdb_forward(r, x)
        return tc.add(tc.reduce_norm(out.output, "l2_mean"), tc.reduce_norm(out.hlrb_scaled, "l1_mean"))

    shapes = [(2, 2, 4, 4), (2, 2, 3, 3), (2,), (2, 2, 3, 3), (2,), ()]
    assert grad_check(build, [rng.normal(size=s) for s in shapes]).passed
