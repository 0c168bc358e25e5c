# Backend/test_ere.py

import numpy as np
import pytest

from Backend.conftest import assert_gradients_match
from Backend.WaveformEngine.ere import (
    ERE_MODES,
    AttentionConfig,
    AttentionHead,
    Conv1DBaseline,
    EreSettings,
    EreStack,
    Involution1D,
    InvolutionConfig,
    MultiHeadAttention,
    attention_weights,
    conv1d_baseline,
    expansion_product,
    format_mode,
    involution1d,
    mode_names,
    parse_mode,
    register_mode,
)
from Backend.WaveformEngine.errors import ShapeMismatch, UnknownMode
from Backend.WaveformEngine.numerics import Param, Tensor, grad_check, square, sum_


def _leaky(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def _windows(x, k):
    left = k // 2
    return np.pad(x, ((left, k - 1 - left), (0, 0)))


def _randomize(module, rng):
    for p in module.parameters():
        p.data[...] = rng.normal(scale=0.5, size=p.shape)


class TestInvolution:
    def test_expansion_product(self, rng):
        a, b = rng.normal(size=(2, 3, 5, 2)), rng.normal(size=(2, 3, 5, 4))
        out = expansion_product(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(out, np.einsum("...kg,...kc->...kgc", a, b))
        with pytest.raises(ShapeMismatch):
            expansion_product(Tensor(a), Tensor(b[..., :4, :]))

    @pytest.mark.parametrize("groups", [1, 2])
    def test_matches_explicit_loops(self, rng, groups):
        emb, channels, k = 6, 3, 3
        cfg = InvolutionConfig(kernel_size=k, groups=groups)
        phi = Involution1D(channels, cfg, rng)
        _randomize(phi, rng)
        x = rng.normal(size=(emb, channels))

        out = involution1d(Tensor(x), cfg, phi).data

        padded = _windows(x, k)
        expected = np.zeros_like(x)
        for j in range(emb):
            window = padded[j : j + k]
            hidden = _leaky(window.reshape(-1) @ phi.fc1_w.data + phi.fc1_b.data)
            kernel = (hidden @ phi.fc2_w.data + phi.fc2_b.data).reshape(k, groups)
            for c in range(channels):
                expected[j, c] = sum(kernel[kk, g] * window[kk, c] for kk in range(k) for g in range(groups))
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_rows_do_not_mix(self, rng):
        cfg = InvolutionConfig(kernel_size=3)
        phi = Involution1D(2, cfg, rng)
        block = rng.normal(size=(4, 5, 2))
        full = involution1d(Tensor(block), cfg, phi).data
        for row in range(4):
            np.testing.assert_allclose(full[row], involution1d(Tensor(block[row]), cfg, phi).data)

    def test_even_kernel(self, rng):
        with pytest.raises(ShapeMismatch):
            Involution1D(2, InvolutionConfig(kernel_size=4), rng)

    def test_gradients(self, rng):
        cfg = InvolutionConfig(kernel_size=3, groups=2)
        phi = Involution1D(2, cfg, rng)
        _randomize(phi, rng)
        x = Param(rng.normal(size=(3, 5, 2)), "x")
        report = grad_check(lambda: sum_(square(involution1d(x, cfg, phi))), phi.parameters() + [x])
        assert_gradients_match(report)


class TestConvBaseline:
    def test_matches_explicit_loops(self, rng):
        emb, channels, k = 5, 3, 3
        conv = Conv1DBaseline(channels, k, rng)
        _randomize(conv, rng)
        assert conv.weight.shape == (k, channels)
        x = rng.normal(size=(2, emb, channels))
        out = conv1d_baseline(Tensor(x), conv).data

        W = conv.weight.data
        for row in range(2):
            padded = _windows(x[row], k)
            for j in range(emb):
                for c in range(channels):
                    expected = sum(W[kk, c] * padded[j + kk, c] for kk in range(k))
                    assert out[row, j, c] == pytest.approx(expected, abs=1e-12)

    def test_channels_do_not_mix(self, rng):
        conv = Conv1DBaseline(3, 3, rng)
        x = np.zeros((6, 3))
        x[:, 1] = rng.normal(size=6)
        out = conv1d_baseline(Tensor(x), conv).data
        np.testing.assert_array_equal(out[:, [0, 2]], 0.0)

    def test_delta_kernel_is_identity(self, rng):
        conv = Conv1DBaseline(2, 5, rng)
        conv.weight.data[...] = 0.0
        conv.weight.data[2] = 1.0
        x = rng.normal(size=(7, 2))
        np.testing.assert_array_equal(conv1d_baseline(Tensor(x), conv).data, x)

    def test_all_ones_single_channel_is_box_filter(self):
        conv = Conv1DBaseline(1, 3, np.random.default_rng(0))
        conv.weight.data[...] = 1.0
        x = np.arange(1.0, 6.0).reshape(5, 1)
        out = conv1d_baseline(Tensor(x), conv).data[:, 0]
        np.testing.assert_allclose(out, [3.0, 6.0, 9.0, 12.0, 9.0])

    def test_channel_count_checked(self, rng):
        with pytest.raises(ShapeMismatch):
            conv1d_baseline(Tensor(np.zeros((4, 3))), Conv1DBaseline(2, 3, rng))

    def test_gradients(self, rng):
        conv = Conv1DBaseline(2, 3, rng)
        x = Param(rng.normal(size=(3, 5, 2)), "x")
        report = grad_check(lambda: sum_(square(conv1d_baseline(x, conv))), conv.parameters() + [x])
        assert_gradients_match(report)


class TestAttention:
    def test_weights_are_row_stochastic(self, rng):
        head = AttentionHead(6, rng)
        w = attention_weights(Tensor(rng.normal(size=(2, 4, 6))), head).data
        assert w.shape == (2, 4, 4)
        np.testing.assert_allclose(w.sum(axis=-1), np.ones((2, 4)))
        assert (w >= 0).all()

    def test_scaling_option(self, rng):
        head = AttentionHead(4, rng)
        x = rng.normal(size=(3, 4))
        logits = (x @ head.w_q.data) @ (x @ head.w_k.data).T / 2.0
        expected = np.exp(logits - logits.max(axis=-1, keepdims=True))
        expected /= expected.sum(axis=-1, keepdims=True)
        np.testing.assert_allclose(attention_weights(Tensor(x), head, scale_by_sqrt_d=True).data, expected)

    def test_permutation_equivariant(self, rng):
        mha = MultiHeadAttention(AttentionConfig(heads=3, d_model=4), rng)
        x = rng.normal(size=(5, 4))
        perm = rng.permutation(5)
        np.testing.assert_allclose(mha(Tensor(x[perm])).data, mha(Tensor(x)).data[perm], atol=1e-12)

    def test_head_count_sets_output_projection(self, rng):
        mha = MultiHeadAttention(AttentionConfig(heads=5, d_model=4), rng)
        assert len(mha.heads) == 5
        assert mha.w_o.shape == (20, 4)


class TestModes:
    def test_registry(self):
        assert set(mode_names()) >= {"krl_only", "invo", "conv", "attn", "invo_then_attn", "attn_then_invo"}

    @pytest.mark.parametrize(
        "text, expected",
        [
            ("attn(3)", ("attn", 3)),
            ("attn", ("attn", 3)),
            (" invo_then_attn( 8 ) ", ("invo_then_attn", 8)),
            ("invo", ("invo", 3)),
        ],
    )
    def test_parse(self, text, expected):
        assert parse_mode(text) == expected

    @pytest.mark.parametrize("text", ["bogus", "invo(2)", "krl_only(1)", "attn(0)", "attn(x)", ""])
    def test_rejects(self, text):
        with pytest.raises(UnknownMode):
            parse_mode(text)

    def test_format(self):
        assert format_mode("attn", 1) == "attn(1)"
        assert format_mode("conv", 3) == "conv"

    def test_register_custom_mode(self):
        @register_mode("twice_invo")
        def _twice(emb_dim, channels, heads, settings, rng):
            return [Involution1D(channels, settings.involution, rng) for _ in range(2)]

        try:
            stack = EreStack("twice_invo", 2, 4, 2, EreSettings(involution=InvolutionConfig(kernel_size=3)), 0, 0)
            assert len(stack.stages) == 2
        finally:
            ERE_MODES.pop("twice_invo")


class TestEreStack:
    SETTINGS = EreSettings(heads=2, involution=InvolutionConfig(kernel_size=3))

    def test_krl_only_flattens(self, rng):
        stack = EreStack("krl_only", 3, 4, 2, self.SETTINGS, seed=0, stream=0)
        block = rng.normal(size=(3, 4, 2))
        np.testing.assert_array_equal(stack(Tensor(block)).data, block.reshape(-1))

    @pytest.mark.parametrize("mode", ["krl_only", "invo", "conv", "attn(2)", "invo_then_attn", "attn_then_invo(1)"])
    def test_output_length_is_mode_independent(self, rng, mode):
        stack = EreStack(mode, 3, 4, 2, self.SETTINGS, seed=0, stream=0)
        assert stack(Tensor(rng.normal(size=(5, 3, 4, 2)))).shape == (5, 24)

    def test_wrong_block_shape(self, rng):
        stack = EreStack("invo", 3, 4, 2, self.SETTINGS, seed=0, stream=0)
        with pytest.raises(ShapeMismatch):
            stack(Tensor(rng.normal(size=(5, 3, 4, 3))))

    def test_seeded(self):
        first = EreStack("invo_then_attn(2)", 3, 4, 2, self.SETTINGS, seed=4, stream=1)
        second = EreStack("invo_then_attn(2)", 3, 4, 2, self.SETTINGS, seed=4, stream=1)
        for (name, a), (_, b) in zip(first.named_parameters(), second.named_parameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)

    @pytest.mark.parametrize("mode", ["invo", "conv", "attn(2)", "invo_then_attn(2)", "attn_then_invo(1)"])
    def test_gradients(self, rng, mode):
        stack = EreStack(mode, 3, 4, 2, self.SETTINGS, seed=0, stream=0)
        blocks = Param(rng.normal(size=(2, 3, 4, 2)), "blocks")
        report = grad_check(
            lambda: sum_(square(stack(blocks))),
            stack.parameters() + [blocks],
            max_entries_per_param=30,
        )
        assert_gradients_match(report)
