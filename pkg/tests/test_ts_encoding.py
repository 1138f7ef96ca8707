import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oceankg.errors import ConfigurationError, ShapeError
from oceankg.ts_encoding import (
    RevIN,
    RevinStats,
    PatchEncoder,
    encode_patches,
    patch_count,
    patchify,
    patchify_batch,
    revin_denormalize,
    revin_normalize,
)


class TestRevin:
    def test_already_standard(self):
        y, st_ = revin_normalize([-1.0, 1.0], eps=1e-12)
        assert np.allclose(y, [-1, 1], atol=1e-10)
        assert (st_.mean, st_.std) == (0.0, 1.0)

    def test_constant_series(self):
        y, _ = revin_normalize([5.0, 5.0, 5.0], eps=1e-5)
        assert np.array_equal(y, [0.0, 0.0, 0.0])

    def test_output_moments(self):
        x = np.random.default_rng(0).normal(3, 2, 64)
        y, _ = revin_normalize(x, 1e-5)
        assert abs(y.mean()) < 1e-9
        assert abs(y.std() - 1) < 1e-4

    def test_population_std(self):
        x = np.array([1.0, 2.0, 4.0])
        _, s = revin_normalize(x)
        m = sum(x) / 3
        assert s.std == pytest.approx((sum((v - m) ** 2 for v in x) / 3) ** 0.5)

    def test_denormalize_zero_maps_to_mean(self):
        assert np.array_equal(revin_denormalize([0.0, 0.0], RevinStats(3.0, 2.0, 0.0)), [3.0, 3.0])

    def test_denormalize_affine_oracle(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=10)
        s = RevinStats(float(rng.normal()), float(rng.uniform(0.1, 3)), 1e-5)
        assert np.allclose(revin_denormalize(y, s), [v * (s.std + s.eps) + s.mean for v in y], rtol=0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(ShapeError):
            revin_normalize([])

    def test_module_matches_functions(self):
        x = torch.randn(4, 12, dtype=torch.float64) * 3 + 10
        rev = RevIN(1e-5)
        out, mean, std = rev.normalize(x)
        for i in range(4):
            ref, s = revin_normalize(x[i].numpy(), 1e-5)
            assert np.allclose(out[i].numpy(), ref, atol=1e-12)
            assert float(mean[i]) == pytest.approx(s.mean) and float(std[i]) == pytest.approx(s.std)
        assert torch.allclose(rev.denormalize(out, mean, std), x, atol=1e-10)

    def test_affine_roundtrip(self):
        rev = RevIN(1e-5, affine=True)
        with torch.no_grad():
            rev.weight.fill_(2.0)
            rev.bias.fill_(-0.5)
        x = torch.randn(3, 8, dtype=torch.float64)
        out, m, s = rev.normalize(x)
        assert torch.allclose(rev.denormalize(out, m, s), x.to(out.dtype), atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=64))
    def test_roundtrip_property(self, xs):
        x = np.array(xs)
        y, s = revin_normalize(x)
        assert np.max(np.abs(revin_denormalize(y, s) - x)) < 1e-6


class TestPatching:
    def test_formula_example(self):
        assert patch_count(16, 4, 4) == 5 == patchify(np.arange(16.0), 4, 4).count

    def test_full_length_patch(self):
        x = np.arange(8.0)
        ps = patchify(x, 8, 4)
        assert ps.count == 2
        assert np.array_equal(ps.patches[1], [4, 5, 6, 7, 7, 7, 7, 7])

    def test_stride_one_windows(self):
        x = np.arange(10.0)
        ps = patchify(x, 3, 1)
        assert ps.count == 9
        padded = np.append(x, x[-1])
        assert all(np.array_equal(ps.patches[i], padded[i:i + 3]) for i in range(9))

    def test_too_long_patch(self):
        with pytest.raises(ConfigurationError):
            patchify(np.arange(4.0), 5, 1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(8, 64).flatmap(lambda T: st.tuples(
        st.just(T), st.integers(2, T).flatmap(lambda L: st.tuples(st.just(L), st.integers(1, L))))))
    def test_only_real_or_replicated_values(self, args):
        T, (L, S) = args
        x = np.random.default_rng(T * 100 + L).normal(size=T)
        ps = patchify(x, L, S)
        assert ps.count == (T - L) // S + 2
        allowed = set(x.tolist())
        assert all(v in allowed for v in ps.patches.ravel().tolist())
        assert ps.patches.shape[1] == L

    def test_batch_matches_single(self):
        x = torch.randn(5, 13, dtype=torch.float64)
        batch = patchify_batch(x, 4, 3)
        for i in range(5):
            assert np.array_equal(batch[i].numpy(), patchify(x[i].numpy(), 4, 3).patches)


class TestEncodePatches:
    def test_zero_input(self):
        X = np.zeros((5, 4))
        w1, w2 = np.random.default_rng(0).normal(size=(2, 4, 4))
        assert np.array_equal(encode_patches(X, w1, np.zeros(4), w2, np.zeros(4)), np.zeros((5, 4)))

    def test_identity(self):
        X = np.abs(np.random.default_rng(1).normal(size=(5, 4)))
        I = np.eye(4)
        assert np.array_equal(encode_patches(X, I, np.zeros(4), I, np.zeros(4)), X)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            encode_patches(np.zeros((2, 4)), np.zeros((3, 5)), np.zeros(5), np.zeros((5, 2)), np.zeros(2))

    def test_gradient_w1_finite_difference(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(6, 4))
        w1, b1 = rng.normal(size=(4, 8)), rng.normal(size=8)
        w2, b2 = rng.normal(size=(8, 3)), rng.normal(size=3)
        c = rng.normal(size=(6, 3))

        def f(w):
            return float(np.sum(c * encode_patches(X, w, b1, w2, b2)))

        wt = torch.tensor(w1, requires_grad=True)
        out = encode_patches(torch.tensor(X), wt, torch.tensor(b1), torch.tensor(w2), torch.tensor(b2))
        (out * torch.tensor(c)).sum().backward()
        h = 1e-5
        num = np.zeros_like(w1)
        for idx in np.ndindex(w1.shape):
            e = np.zeros_like(w1)
            e[idx] = h
            num[idx] = (f(w1 + e) - f(w1 - e)) / (2 * h)
        assert np.linalg.norm(wt.grad.numpy() - num) / np.linalg.norm(num) < 1e-4

    def test_permutation_equivariant(self):
        enc = PatchEncoder(4, 8)
        X = torch.randn(2, 6, 4)
        perm = torch.randperm(6)
        assert torch.allclose(enc(X)[:, perm], enc(X[:, perm]))

    def test_module_shapes(self):
        assert PatchEncoder(4, 8)(torch.randn(3, 5, 4)).shape == (3, 5, 8)
        assert PatchEncoder(4, 8, linear=True)(torch.randn(3, 5, 4)).shape == (3, 5, 8)
        assert PatchEncoder(4, 8).fc1.out_features == 16
