import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import gradcheck
from nasfas import functional as F
from nasfas.tensor import (ConfigError, GraphError, Parameter, ShapeError, Tensor, default_dtype, load_snapshot,
                           no_grad, save_snapshot, snapshot_bytes, snapshot_from_bytes)


def direct_conv(x, w, stride=1, padding=0):
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    for ci in range(c):
                        for di in range(k):
                            for dj in range(k):
                                out[b, o, i, j] += w[o, ci, di, dj] * xp[b, ci, i * stride + di, j * stride + dj]
    return out


class TestConv:
    def test_ones(self):
        y = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        assert y.shape == (1, 1, 1, 1)
        assert y.data.item() == 9.0

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 1, 5, 6)).astype(np.float32)
        k = np.zeros((1, 1, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1
        np.testing.assert_array_equal(F.conv2d(Tensor(x), Tensor(k), padding=1).data, x)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_direct_oracle(self, rng, stride, padding):
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        got = F.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding).data
        want = direct_conv(x, w, stride, padding)
        assert np.abs(got - want).max() / np.abs(want).max() <= 1e-6

    def test_output_size_floor(self):
        assert F.conv_output_size(6, 3, 2, 0) == 2
        assert F.conv_output_size(64, 3, 2, 1) == 32

    def test_bad_geometry(self):
        with pytest.raises(ConfigError):
            F.conv_output_size(2, 5, 1, 0)
        with pytest.raises(ConfigError):
            F.conv_output_size(8, 3, 0, 1)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            F.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear(self, seed, a, b):
        r = np.random.default_rng(seed)
        x1, x2 = r.normal(size=(2, 2, 6, 6, 2)).transpose(4, 0, 1, 2, 3)
        w = Tensor(r.normal(size=(3, 2, 3, 3)))
        lhs = F.conv2d(Tensor(a * x1 + b * x2), w, padding=1).data
        rhs = a * F.conv2d(Tensor(x1), w, padding=1).data + b * F.conv2d(Tensor(x2), w, padding=1).data
        assert np.abs(lhs - rhs).max() <= 1e-5 * max(1.0, np.abs(rhs).max())

    def test_depthwise_matches_per_channel(self, rng):
        x = rng.normal(size=(1, 3, 6, 6))
        w = rng.normal(size=(3, 1, 3, 3))
        got = F.conv2d(Tensor(x), Tensor(w), padding=1, groups=3).data
        for c in range(3):
            want = direct_conv(x[:, c:c + 1], w[c:c + 1], 1, 1)
            np.testing.assert_allclose(got[:, c:c + 1], want, rtol=1e-10, atol=1e-12)


class TestElementwise:
    def test_softmax_uniform(self):
        np.testing.assert_allclose(F.softmax(Tensor(np.zeros(3)), axis=0).data, [1 / 3] * 3)

    def test_avg_pool_constant(self):
        y = F.avg_pool2d(Tensor(np.full((1, 2, 8, 8), 7.0)), 3, 2, 1)
        # zero padding pulls the border down; the interior stays 7
        np.testing.assert_allclose(y.data[..., 1:, 1:], 7.0)
        y = F.avg_pool2d(Tensor(np.full((1, 2, 9, 9), 7.0)), 3, 2, 0)
        np.testing.assert_allclose(y.data, 7.0)

    def test_max_pool(self):
        y = F.max_pool2d(Tensor(np.array([[[[1.0, 2], [3, 4]]]])), 2)
        assert y.data.item() == 4.0

    def test_softmax_bad_axis(self):
        with pytest.raises((ValueError, IndexError)):
            F.softmax(Tensor(np.zeros(3)), axis=2)

    def test_concat_and_batch_norm(self, rng):
        a, b = rng.normal(size=(2, 2, 3, 4, 4))
        y = F.concat([Tensor(a), Tensor(b)], axis=1)
        assert y.shape == (2, 6, 4, 4)
        z = F.batch_norm(y).data
        np.testing.assert_allclose(z.mean(axis=(0, 2, 3)), 0, atol=1e-9)
        np.testing.assert_allclose(z.var(axis=(0, 2, 3)), 1, atol=1e-3)


class TestBackward:
    def test_square(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_unused_parameter(self):
        x = Parameter(np.ones(3))
        y = Parameter(np.ones(3))
        (x * 2.0).sum().backward()
        assert y.grad is None or not np.any(y.grad)

    def test_accumulates_across_uses(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x * 3.0 + x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 3.0 + 2 * x.data)

    def test_non_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GraphError):
            (x * 2.0).backward()

    def test_twice(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GraphError):
            loss.backward()

    def test_no_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * 2.0).sum()
        assert not y.requires_grad

    def test_conv_relu_mean_pipeline(self, rng):
        x = rng.normal(size=(2, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))

        def f(x, w):
            return F.conv2d(x, w, padding=1).relu().mean()

        assert gradcheck(f, x, w) < 1e-4


class TestDeterminismAndSnapshots:
    def test_forward_determinism(self, rng):
        x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        a = F.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = F.conv2d(Tensor(x), Tensor(w), padding=1).data
        assert a.tobytes() == b.tobytes()

    def test_snapshot_layout(self):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        buf = snapshot_bytes(arr)
        assert buf[:4] == b"CDNT"
        assert buf[4] == 1
        assert struct.unpack_from("<I", buf, 5)[0] == 2
        assert struct.unpack_from("<2I", buf, 9) == (2, 3)
        np.testing.assert_array_equal(np.frombuffer(buf[17:], "<f4"), arr.ravel())
        np.testing.assert_array_equal(snapshot_from_bytes(buf).data, arr)

    def test_snapshot_file(self, tmp_path, rng):
        arr = rng.normal(size=(2, 1, 3)).astype(np.float32)
        save_snapshot(tmp_path / "t.cdnt", arr)
        np.testing.assert_array_equal(load_snapshot(tmp_path / "t.cdnt").data, arr)

    def test_snapshot_rejects_garbage(self):
        with pytest.raises(ValueError):
            snapshot_from_bytes(b"XXXX\x01")

    def test_default_dtype(self):
        with default_dtype(np.float64):
            assert Tensor([1, 2]).dtype == np.float64
        assert Tensor([1, 2]).dtype == np.float32
