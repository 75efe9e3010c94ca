"""Numeric-core tests.

Oracles are kept deliberately dumb and independent: the sliding-block
enumeration for cross masks, a six-loop convolution reference, and central
finite differences for every backward op.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossgo import nn
from crossgo import features as ft


def brute_force_cross_area(n, c):
    """Union of all c x c blocks sliding corner-to-corner on both diagonals."""
    mask = np.zeros((n, n), dtype=np.float32)
    for t in range(n - c + 1):
        mask[t : t + c, t : t + c] = 1
        mask[t : t + c, n - c - t : n - t] = 1
    return mask


def naive_conv(x, layer):
    """Six-loop reference convolution in float64."""
    w = np.asarray(layer.effective_weights(), dtype=np.float64)
    bias = np.asarray(layer.bias, dtype=np.float64)
    stride, pad = layer.stride, layer.pad
    chans, height, width = x.shape
    out_ch, _, n, _ = w.shape
    xp = np.zeros((chans, height + 2 * pad, width + 2 * pad), dtype=np.float64)
    xp[:, pad : pad + height, pad : pad + width] = x
    out_h = (height + 2 * pad - n) // stride + 1
    out_w = (width + 2 * pad - n) // stride + 1
    out = np.zeros((out_ch, out_h, out_w))
    for o in range(out_ch):
        for i in range(out_h):
            for j in range(out_w):
                acc = bias[o]
                for ch in range(chans):
                    for a in range(n):
                        for b in range(n):
                            acc += xp[ch, i * stride + a, j * stride + b] * w[o, ch, a, b]
                out[o, i, j] = acc
    return out


def random_layer(rng, in_ch, out_ch, n, stride=1, pad=0, mask=None, dtype=np.float64):
    fan = in_ch * n * n
    weights = rng.standard_normal((out_ch, in_ch, n, n)) / np.sqrt(fan)
    if mask is not None:
        weights = weights * mask
    return nn.ConvLayer(
        weights=weights.astype(dtype),
        bias=(rng.standard_normal(out_ch) * 0.1).astype(dtype),
        stride=stride,
        pad=pad,
        mask=None if mask is None else mask.astype(dtype),
    )


def rel_err(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / scale


class TestCrossMask:
    def test_n5_c1_is_an_x(self):
        mask = nn.cross_mask(5, 1)
        assert mask.sum() == 9
        assert np.array_equal(mask, brute_force_cross_area(5, 1))

    def test_n5_c2(self):
        mask = nn.cross_mask(5, 2)
        assert mask.sum() == 21
        # complement: four isolated single-cell "triangles"
        off = np.argwhere(mask == 0)
        assert {tuple(p) for p in off} == {(0, 2), (2, 0), (2, 4), (4, 2)}

    def test_n5_c3_is_normal_conv(self):
        assert nn.cross_mask(5, 3).sum() == 25

    def test_c0_is_zero_conv(self):
        assert nn.cross_mask(7, 0).sum() == 0

    def test_closed_form_matches_brute_force_exhaustive(self):
        for n in range(2, 40):
            for c in range(1, nn.max_cross_width(n) + 1):
                got = nn.cross_mask(n, c)
                want = brute_force_cross_area(n, c)
                assert np.array_equal(got, want), (n, c)

    def test_complement_is_four_triangles(self):
        # The inactive region splits into exactly 4 connected components of
        # equal size (one per side) for every in-range width.
        from scipy import ndimage

        for n in range(4, 40):
            for c in range(1, nn.max_cross_width(n) + 1):
                mask = nn.cross_mask(n, c)
                labels, count = ndimage.label(mask == 0)
                assert count == 4, (n, c)
                sizes = np.bincount(labels.ravel())[1:]
                assert len(set(sizes)) == 1

    def test_dihedral_invariance(self):
        for n in (5, 7, 12, 39):
            for c in range(1, nn.max_cross_width(n) + 1):
                mask = nn.cross_mask(n, c)
                for sym in range(8):
                    assert np.array_equal(ft.transform_planes(mask, sym), mask)

    def test_validated_type_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            nn.CrossMask(5, 3)
        with pytest.raises(ValueError):
            nn.CrossMask(5, 0)
        assert nn.CrossMask(5, 2).active_count == 21

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            nn.cross_mask(1, 1)
        with pytest.raises(ValueError):
            nn.cross_mask(5, -1)


class TestConvForward:
    def test_one_by_one_identity(self):
        layer = nn.ConvLayer(
            weights=np.ones((1, 1, 1, 1), dtype=np.float32),
            bias=np.zeros(1, dtype=np.float32),
        )
        x = np.random.default_rng(0).standard_normal((1, 6, 6)).astype(np.float32)
        assert np.allclose(nn.conv2d_forward(x, layer), x)

    def test_impulse_response(self):
        layer = nn.ConvLayer(
            weights=np.ones((1, 1, 3, 3), dtype=np.float32),
            bias=np.zeros(1, dtype=np.float32),
            pad=1,
        )
        x = np.zeros((1, 7, 7), dtype=np.float32)
        x[0, 3, 3] = 1.0
        out = nn.conv2d_forward(x, layer)
        assert out.shape == (1, 7, 7)
        assert out[0, 2:5, 2:5].sum() == 9
        assert out.sum() == 9
        x[:] = 0
        # clipped at a corner
        x2 = np.zeros((1, 7, 7), dtype=np.float32)
        x2[0, 0, 0] = 1.0
        out2 = nn.conv2d_forward(x2, layer)
        assert out2.sum() == 4

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_matches_naive_reference(self, seed):
        rng = np.random.default_rng(seed)
        in_ch = int(rng.integers(1, 4))
        out_ch = int(rng.integers(1, 5))
        n = int(rng.integers(1, 6))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 3))
        h = int(rng.integers(n, 11))
        w = int(rng.integers(n, 11))
        mask = None
        if n >= 3 and rng.random() < 0.4:
            mask = nn.cross_mask(n, 1)
        layer = random_layer(rng, in_ch, out_ch, n, stride, pad, mask, dtype=np.float32)
        x = rng.standard_normal((in_ch, h, w)).astype(np.float32) * 0.5
        got = nn.conv2d_forward(x, layer)
        want = naive_conv(np.asarray(x, dtype=np.float64), layer)
        assert got.shape == want.shape
        assert np.abs(got - want).max() < 1e-5

    def test_batch_matches_per_sample(self):
        rng = np.random.default_rng(1)
        layer = random_layer(rng, 3, 4, 3, pad=1, dtype=np.float32)
        xs = rng.standard_normal((5, 3, 9, 9)).astype(np.float32)
        batched = nn.conv2d_forward(xs, layer)
        for i in range(5):
            assert np.array_equal(batched[i], nn.conv2d_forward(xs[i], layer))

    def test_channel_mismatch_raises(self):
        layer = random_layer(np.random.default_rng(0), 3, 2, 3)
        with pytest.raises(ValueError):
            nn.conv2d_forward(np.zeros((2, 8, 8), dtype=np.float32), layer)

    def test_kernel_larger_than_input_raises(self):
        layer = random_layer(np.random.default_rng(0), 1, 1, 5)
        with pytest.raises(ValueError):
            nn.conv2d_forward(np.zeros((1, 3, 3), dtype=np.float32), layer)

    def test_masked_weights_contribute_nothing(self):
        rng = np.random.default_rng(2)
        mask = nn.cross_mask(5, 1)
        layer = random_layer(rng, 2, 3, 5, pad=2, mask=mask, dtype=np.float32)
        # corrupt the masked-out coordinates; output must not change
        corrupted = nn.ConvLayer(
            weights=layer.weights + 100.0 * (1 - mask),
            bias=layer.bias,
            stride=1,
            pad=2,
            mask=layer.mask,
        )
        x = rng.standard_normal((2, 9, 9)).astype(np.float32)
        assert np.array_equal(
            nn.conv2d_forward(x, layer), nn.conv2d_forward(x, corrupted)
        )


class TestConvBackward:
    @pytest.mark.parametrize("seed", range(22))
    def test_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        in_ch = int(rng.integers(1, 3))
        out_ch = int(rng.integers(1, 4))
        n = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        h = int(rng.integers(n + 1, 7))
        mask = nn.cross_mask(n, 1) if (n == 3 and seed % 3 == 0) else None
        layer = random_layer(rng, in_ch, out_ch, n, stride, pad, mask)
        x = rng.standard_normal((in_ch, h, h))
        probe = rng.standard_normal(nn.conv2d_forward(x, layer).shape)

        def loss_at(x_val, w_val, b_val):
            trial = nn.ConvLayer(w_val, b_val, stride, pad, layer.mask)
            return float((nn.conv2d_forward(x_val, trial) * probe).sum())

        gx, gw, gb = nn.conv2d_backward(probe, x, layer)

        step = 1e-3
        for target, grad, make_args in (
            (x, gx, lambda t: (t, layer.weights, layer.bias)),
            (layer.weights, gw, lambda t: (x, t, layer.bias)),
            (layer.bias, gb, lambda t: (x, layer.weights, t)),
        ):
            flat = target.ravel()
            idx = rng.choice(flat.size, size=min(8, flat.size), replace=False)
            for k in idx:
                bumped = flat.copy()
                bumped[k] += step
                up = loss_at(*make_args(bumped.reshape(target.shape)))
                bumped[k] -= 2 * step
                down = loss_at(*make_args(bumped.reshape(target.shape)))
                numeric = (up - down) / (2 * step)
                analytic = grad.ravel()[k]
                denom = max(abs(numeric), abs(analytic), 1e-6)
                assert abs(numeric - analytic) / denom < 1e-3, (seed, k)

    def test_masked_coordinates_get_zero_gradient(self):
        rng = np.random.default_rng(7)
        mask = nn.cross_mask(5, 1)
        layer = random_layer(rng, 2, 2, 5, pad=2, mask=mask)
        x = rng.standard_normal((2, 8, 8))
        out = nn.conv2d_forward(x, layer)
        _, gw, _ = nn.conv2d_backward(np.ones_like(out), x, layer)
        assert np.array_equal(gw * (1 - mask), np.zeros_like(gw))

    def test_zero_grad_out_gives_zero_grads(self):
        rng = np.random.default_rng(8)
        layer = random_layer(rng, 2, 3, 3, pad=1)
        x = rng.standard_normal((2, 6, 6))
        out = nn.conv2d_forward(x, layer)
        gx, gw, gb = nn.conv2d_backward(np.zeros_like(out), x, layer)
        assert not gx.any() and not gw.any() and not gb.any()


class TestPointwiseOps:
    def test_relu_values(self):
        out = nn.relu(np.array([-1.0, 0.0, 2.0], dtype=np.float32))
        assert np.array_equal(out, [0.0, 0.0, 2.0])

    def test_relu_gradient_gate(self):
        saved = np.array([-1.0, 0.0, 2.0], dtype=np.float32)
        grad = nn.relu_backward(np.array([5.0, 5.0, 5.0], dtype=np.float32), saved)
        assert np.array_equal(grad, [0.0, 0.0, 5.0])

    def test_concat_shapes_and_order(self):
        a = np.ones((2, 19, 19), dtype=np.float32)
        b = np.full((3, 19, 19), 2.0, dtype=np.float32)
        out = nn.concat_channels([a, b])
        assert out.shape == (5, 19, 19)
        assert (out[:2] == 1).all() and (out[2:] == 2).all()

    def test_concat_single_input_identity(self):
        a = np.random.default_rng(0).standard_normal((4, 5, 5)).astype(np.float32)
        assert np.array_equal(nn.concat_channels([a]), a)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ValueError):
            nn.concat_channels(
                [np.zeros((1, 19, 19), np.float32), np.zeros((1, 9, 19), np.float32)]
            )

    def test_concat_backward_round_trip(self):
        rng = np.random.default_rng(3)
        parts = [rng.standard_normal((c, 7, 7)) for c in (2, 3, 4)]
        grad = rng.standard_normal((9, 7, 7))
        splits = nn.concat_channels_backward(grad, [2, 3, 4])
        assert [s.shape[0] for s in splits] == [2, 3, 4]
        assert np.array_equal(np.concatenate(splits, axis=0), grad)
        del parts


class TestSoftmaxCrossEntropy:
    def test_uniform_scores(self):
        scores = np.zeros(361, dtype=np.float32)
        loss, grad = nn.softmax_cross_entropy(scores, 42)
        assert loss == pytest.approx(np.log(361), abs=1e-5)
        assert grad[42] == pytest.approx(1 / 361 - 1, abs=1e-6)
        assert grad[0] == pytest.approx(1 / 361, abs=1e-6)

    def test_saturated_label(self):
        scores = np.zeros(361, dtype=np.float32)
        scores[7] = 1000.0
        loss, _ = nn.softmax_cross_entropy(scores, 7)
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            nn.softmax_cross_entropy(np.zeros(10, dtype=np.float32), 10)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_vs_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.standard_normal(10)
        label = int(rng.integers(10))
        _, grad = nn.softmax_cross_entropy(scores, label)
        step = 1e-4
        for k in range(10):
            bumped = scores.copy()
            bumped[k] += step
            up, _ = nn.softmax_cross_entropy(bumped, label)
            bumped[k] -= 2 * step
            down, _ = nn.softmax_cross_entropy(bumped, label)
            numeric = (up - down) / (2 * step)
            assert abs(numeric - grad[k]) / max(abs(numeric), abs(grad[k]), 1e-6) < 1e-4

    def test_batch_matches_singles(self):
        rng = np.random.default_rng(9)
        scores = rng.standard_normal((6, 20)).astype(np.float32)
        labels = rng.integers(0, 20, size=6)
        loss, grads = nn.softmax_cross_entropy_batch(scores, labels)
        single_losses = []
        for i in range(6):
            l, g = nn.softmax_cross_entropy(scores[i], int(labels[i]))
            single_losses.append(l)
            assert np.allclose(grads[i] * 6, g, atol=1e-6)
        assert loss == pytest.approx(np.mean(single_losses), abs=1e-6)


class TestSgd:
    def test_basic_step(self):
        p = np.array([1.0], dtype=np.float32)
        nn.sgd_step([p], [np.array([2.0], dtype=np.float32)], lr=0.1)
        assert p[0] == pytest.approx(0.8)

    def test_zero_lr(self):
        p = np.array([1.0, 2.0], dtype=np.float32)
        nn.sgd_step([p], [np.ones(2, dtype=np.float32)], lr=0.0)
        assert np.array_equal(p, [1.0, 2.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.sgd_step([np.zeros(3)], [np.zeros(4)], lr=0.1)

    def test_masked_coordinates_stay_exactly_zero(self):
        rng = np.random.default_rng(4)
        mask = nn.cross_mask(5, 2)
        layer = nn.init_conv(rng, 3, 4, 5, pad=2, mask=mask)
        x = rng.standard_normal((3, 9, 9)).astype(np.float32)
        for _ in range(100):
            out = nn.conv2d_forward(x, layer)
            grad_out = rng.standard_normal(out.shape).astype(np.float32)
            _, gw, gb = nn.conv2d_backward(grad_out, x, layer)
            nn.sgd_step([layer.weights, layer.bias], [gw, gb], lr=0.01)
            off = layer.weights[:, :, mask == 0]
            assert (off == 0.0).all()


class TestInit:
    def test_fan_in_counts_active_weights_only(self):
        rng = np.random.default_rng(0)
        mask = nn.cross_mask(7, 1)  # 13 of 49 active
        dense = nn.init_conv(rng, 16, 64, 7)
        sparse = nn.init_conv(np.random.default_rng(0), 16, 64, 7, mask=mask)
        active_std = sparse.weights[:, :, mask == 1].std()
        dense_std = dense.weights.std()
        assert active_std > dense_std * 1.5  # sqrt(49/13) ~ 1.94
        assert (sparse.weights[:, :, mask == 0] == 0).all()


class TestCheckpoint:
    def build_layers(self):
        rng = np.random.default_rng(5)
        return [
            nn.init_conv(rng, 24, 16, 7, pad=3),
            nn.init_conv(rng, 16, 4, 7, pad=3, mask=nn.cross_mask(7, 1)),
            nn.init_conv(rng, 4, 2, 39, pad=19, mask=nn.cross_mask(39, 5)),
            nn.init_conv(rng, 2, 1, 1),
        ]

    def test_round_trip_bit_exact(self, tmp_path):
        layers = self.build_layers()
        path = tmp_path / "net.ckpt"
        nn.save_checkpoint(path, layers)
        loaded = nn.load_checkpoint(path)
        assert len(loaded) == len(layers)
        for a, b in zip(layers, loaded):
            assert a.weights.tobytes() == b.weights.tobytes()
            assert a.bias.tobytes() == b.bias.tobytes()
            assert a.stride == b.stride and a.pad == b.pad
            if a.mask is None:
                assert b.mask is None
            else:
                assert np.array_equal(a.mask, b.mask)

    def test_save_is_deterministic(self, tmp_path):
        layers = self.build_layers()
        nn.save_checkpoint(tmp_path / "a.ckpt", layers)
        nn.save_checkpoint(tmp_path / "b.ckpt", layers)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            nn.load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "net.ckpt"
        nn.save_checkpoint(path, self.build_layers())
        blob = path.read_bytes()
        path.write_bytes(blob + b"\x00")
        with pytest.raises(ValueError):
            nn.load_checkpoint(path)


class TestDebugFiniteMode:
    def test_trips_on_nan(self):
        nn.set_debug_finite(True)
        try:
            layer = nn.ConvLayer(
                weights=np.full((1, 1, 1, 1), np.nan, dtype=np.float32),
                bias=np.zeros(1, dtype=np.float32),
            )
            with pytest.raises(FloatingPointError):
                nn.conv2d_forward(np.ones((1, 3, 3), dtype=np.float32), layer)
        finally:
            nn.set_debug_finite(False)
