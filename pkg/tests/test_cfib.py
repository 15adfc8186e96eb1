import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfinet import functional as F
from lfinet.cfib import (
    FrequencyGatedModulation,
    HfbConfig,
    HighFrequencyBlock,
    SpatialTransformer,
    StConfig,
    split_channels,
)
from lfinet.tensor import Tensor, no_grad


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


@pytest.mark.parametrize("c", [32, 64, 128])
def test_split_ratio(c):
    assert split_channels(c) == (c // 8, 3 * c // 8, c // 2)


@given(st.integers(1, 64))
def test_split_sizes_sum_to_width(k):
    sizes = split_channels(8 * k)
    assert sum(sizes) == 8 * k and sizes[1] == 3 * sizes[0] and sizes[2] == 4 * sizes[0]


@pytest.mark.parametrize("c", [12, 20, 100])
def test_hfb_width_must_divide_by_eight(c):
    with pytest.raises(ValueError, match="divisible"):
        HfbConfig(c)


def test_hfb_shape_contract(rng):
    hfb = HighFrequencyBlock(HfbConfig(64), rng)
    with no_grad():
        out, inter = hfb(Tensor(rng.standard_normal((1, 1, 128, 128))), return_intermediates=True)
    assert out.shape == (1, 64, 128, 128)
    assert [s.shape[1] for s in inter.splits] == [8, 24, 32]
    assert inter.gate.shape == (1, 64, 1, 1)


def test_hfb_with_open_gate_is_aggregate_plus_projection(rng):
    hfb = HighFrequencyBlock(HfbConfig(16), rng).astype(np.float64)
    hfb.se_expand.weight.data[...] = 0.0
    hfb.se_expand.bias.data[...] = 800.0  # sigmoid saturates to exactly 1.0
    x = t64(rng.standard_normal((2, 1, 10, 10)))
    with no_grad():
        out = hfb(x).data
        # by-hand composition from primitives
        p = hfb.proj
        proj = F.relu(F.batch_norm2d(F.conv2d(x, p.conv.weight, padding=1), p.bn.weight, p.bn.bias,
                                     np.zeros(16), np.ones(16), True))
        base = F.conv2d(proj, hfb.dw_base.weight, hfb.dw_base.bias, padding=5, groups=16)
        fa, fb, fc = base.data[:, :2], base.data[:, 2:8], base.data[:, 8:]
        f1 = F.conv2d(t64(fb), hfb.dw_b.weight, hfb.dw_b.bias, padding=4, dilation=2, groups=6)
        f2 = F.conv2d(t64(fc), hfb.dw_c.weight, hfb.dw_c.bias, padding=9, dilation=3, groups=8)
        cat = F.conv2d(F.concat([t64(fa), f1, f2]), hfb.pw.weight, hfb.pw.bias)
    np.testing.assert_array_equal(out, cat.data + proj.data)


def test_hfb_rejects_wrong_input_channels(rng):
    hfb = HighFrequencyBlock(HfbConfig(8), rng)
    with pytest.raises(ValueError, match="input channels"):
        hfb(Tensor(np.zeros((1, 2, 8, 8))))


# ------------------------------------------------------------------- ST


def test_st_shape_contract(rng):
    st_ = SpatialTransformer(StConfig(), rng)
    with no_grad():
        out = st_(Tensor(rng.random((1, 1, 8, 8))))
    assert out.shape == (1, 128, 8, 8)


def test_st_rejects_wrong_token_count(rng):
    st_ = SpatialTransformer(StConfig(dim=16, tokens=4), rng)
    with pytest.raises(ValueError, match="tokens"):
        st_(Tensor(np.zeros((1, 1, 4, 4))))


def test_st_is_not_permutation_invariant(rng):
    st_ = SpatialTransformer(StConfig(dim=16, heads=4, tokens=16), rng).astype(np.float64)
    x = rng.random((1, 1, 4, 4))
    perm = rng.permutation(16)
    with no_grad():
        out = st_(t64(x)).data.reshape(16, 16)
        out_p = st_(t64(x.reshape(-1)[perm].reshape(1, 1, 4, 4))).data.reshape(16, 16)
    # undoing the permutation would recover the output if positions were ignored
    assert not np.allclose(out_p[:, np.argsort(perm)], out)


def test_identity_st_is_embedding_only(rng):
    st_ = SpatialTransformer(StConfig(dim=16, tokens=4), rng, identity=True)
    assert [n for n, _ in st_.named_parameters()] == ["embed.weight", "embed.bias"]


# ------------------------------------------------------------------ FGM


@given(st.integers(0, 2**32 - 1))
def test_fgm_weights_and_gate_ranges(seed):
    rng = np.random.default_rng(seed)
    fgm = FrequencyGatedModulation(8, 16, 2, rng)
    hf, lf = Tensor(rng.standard_normal((2, 8, 8, 8)) * 3), Tensor(rng.standard_normal((2, 16, 4, 4)) * 3)
    with no_grad():
        out, inter = fgm(hf, lf, return_intermediates=True)
    assert out.shape == (2, 8, 8, 8)
    np.testing.assert_allclose(inter.weights.data.sum(axis=1), 1.0, atol=1e-6)
    assert (inter.gate.data > 0).all() and (inter.gate.data < 1).all()


def test_fgm_residual_stream_vanishes_for_zero_input(rng):
    fgm = FrequencyGatedModulation(8, 16, 4, rng).astype(np.float64)
    fgm.res.bias.data[...] = 0.0
    fgm.value_bn.bias.data[...] = rng.standard_normal(8)
    with no_grad():
        _, inter = fgm(t64(np.zeros((1, 8, 16, 16))), t64(rng.standard_normal((1, 16, 4, 4))), True)
    assert not inter.m_res.data.any()
    # V = GELU(BN(DW(0))) = GELU(beta) per channel
    expected = F.gelu(t64(fgm.value_bn.bias.data)).data
    np.testing.assert_allclose(inter.value.data[0, :, 0, 0], expected)


def test_fgm_equal_weights_average_streams(rng):
    fgm = FrequencyGatedModulation(8, 16, 2, rng, equal_weights=True)
    with no_grad():
        out, inter = fgm(Tensor(rng.standard_normal((1, 8, 8, 8))), Tensor(rng.standard_normal((1, 16, 4, 4))), True)
    expected = (inter.m_gate.data + inter.m_diff.data + inter.m_res.data) / 3.0
    np.testing.assert_allclose(out.data, expected, rtol=1e-5, atol=1e-6)
    assert not hasattr(fgm, "fuse")


def test_fgm_rejects_resolution_mismatch(rng):
    fgm = FrequencyGatedModulation(8, 16, 2, rng)
    with pytest.raises(ValueError, match="upsampled"):
        fgm(Tensor(np.zeros((1, 8, 8, 8))), Tensor(np.zeros((1, 16, 2, 2))))
