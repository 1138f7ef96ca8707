import numpy as np
import pytest
import torch

from oracles import decoder_loop, mha_loop
from oceankg.decoder import (
    Decoder,
    DecoderLayer,
    ForecastHead,
    decode,
    l1_loss,
    last_valid,
    multi_head_attention,
    project,
)
from oceankg.alignment import attention_allowed
from oceankg.errors import ConfigurationError, EmptySequenceError, ShapeError
from oceankg.ts_encoding import revin_normalize


def rand(*shape, seed=0):
    return torch.tensor(np.random.default_rng(seed).normal(size=shape))


def causal(L):
    return attention_allowed(torch.ones(1, L, dtype=torch.bool))


class TestMultiHead:
    def test_two_heads_loop_oracle(self):
        x = rand(1, 6, 8)
        ws = [rand(8, 8, seed=i) for i in range(1, 5)]
        b = rand(8, seed=5)
        out, w = multi_head_attention(x, *ws, b, heads=2, allowed=causal(6))
        ref = mha_loop(x[0].numpy(), *(t.numpy() for t in ws), b.numpy(), 2)
        assert np.allclose(out[0].numpy(), ref, atol=1e-6)
        assert w.shape == (1, 2, 6, 6)
        assert torch.allclose(w.sum(-1), torch.ones(1, 2, 6, dtype=w.dtype), atol=1e-6)

    def test_single_head_matches_plain_attention(self):
        x = rand(1, 5, 4)
        wq, wk, wv, wo = (rand(4, 4, seed=i) for i in range(1, 5))
        out, _ = multi_head_attention(x, wq, wk, wv, wo, torch.zeros(4, dtype=torch.float64), 1)
        q, k, v = x[0] @ wq, x[0] @ wk, x[0] @ wv
        ref = torch.softmax(q @ k.T / 2.0, -1) @ v @ wo
        assert torch.allclose(out[0], ref, atol=1e-12)

    def test_indivisible_heads(self):
        with pytest.raises(ConfigurationError):
            DecoderLayer(6, 4)
        with pytest.raises(ConfigurationError):
            multi_head_attention(torch.zeros(1, 2, 6), *[torch.zeros(6, 6)] * 4, torch.zeros(6), heads=4)


class TestDecode:
    @pytest.mark.parametrize("heads,layers", [(1, 1), (2, 1), (4, 2)])
    def test_full_decoder_loop_oracle(self, heads, layers):
        torch.manual_seed(heads + layers)
        dec = Decoder(8, heads, layers).double()
        h = rand(1, 6, 8, seed=heads)
        assert np.allclose(decode(h, dec)[0].detach().numpy(), decoder_loop(dec, h[0].numpy()), atol=1e-6)

    def test_padding_does_not_leak(self):
        dec = Decoder(8, 2, 2).double()
        h = rand(2, 7, 8)
        h[1, :4] = h[0, :4]
        mask = torch.zeros(2, 7, dtype=torch.bool)
        mask[:, :4] = True
        out = decode(h, dec, mask)
        assert torch.allclose(out[0, :4], out[1, :4], atol=1e-12)
        assert np.allclose(out[0, :4].detach().numpy(), decoder_loop(dec, h[0, :4].numpy()), atol=1e-6)

    def test_causal(self):
        dec = Decoder(8, 2, 2).double()
        h = rand(1, 6, 8)
        base = decode(h, dec)
        g = h.clone()
        g[0, 4] += 10
        assert torch.allclose(decode(g, dec)[0, :4], base[0, :4], atol=1e-12)


class TestProject:
    def test_zero_weights_map_to_mean(self):
        refined = rand(1, 3, 4).float()
        f, _ = project(refined, torch.ones(1, 3, dtype=torch.bool), torch.zeros(5, 4), torch.zeros(5),
                       torch.tensor([[3.0]]), torch.tensor([[1.0]]), 0.0, 5)
        assert torch.equal(f, torch.full((1, 5), 3.0, dtype=f.dtype))

    def test_identity_stats(self):
        refined = rand(2, 3, 4)
        W, b = rand(3, 4, seed=1), rand(3, seed=2)
        f, z = project(refined, torch.ones(2, 3, dtype=torch.bool), W, b,
                       torch.zeros(2, 1, dtype=torch.float64), torch.ones(2, 1, dtype=torch.float64), 0.0)
        assert torch.equal(f, z) and torch.allclose(z, refined[:, -1] @ W.T + b)

    def test_two_step_oracle_last_valid(self):
        refined = rand(2, 5, 4)
        mask = torch.tensor([[True] * 5, [True, True, True, False, False]])
        W, b = rand(3, 4, seed=1), rand(3, seed=2)
        mean, std = torch.tensor([[2.0], [-1.0]], dtype=torch.float64), torch.tensor([[0.5], [3.0]], dtype=torch.float64)
        f, _ = project(refined, mask, W, b, mean, std, 1e-5, 3)
        for i, pos in enumerate([4, 2]):
            raw = refined[i, pos].numpy() @ W.numpy().T + b.numpy()
            assert np.allclose(f[i].numpy(), raw * (std[i, 0].item() + 1e-5) + mean[i, 0].item(), atol=1e-12)

    def test_inversion_consistency(self):
        x = np.random.default_rng(3).normal(20, 2, 16)
        _, st = revin_normalize(x, 1e-5)
        refined, W, b = rand(1, 3, 4), rand(8, 4, seed=1), rand(8, seed=2)
        f, z = project(refined, torch.ones(1, 3, dtype=torch.bool), W, b,
                       torch.tensor([[st.mean]]), torch.tensor([[st.std]]), st.eps)
        back = (f.numpy()[0] - st.mean) / (st.std + st.eps)
        assert np.allclose(back, z.numpy()[0], atol=1e-6)

    def test_empty_sequence(self):
        with pytest.raises(EmptySequenceError):
            last_valid(torch.zeros(2, 3, 4), torch.tensor([[True, False, False], [False, False, False]]))

    def test_horizon_mismatch(self):
        with pytest.raises(ShapeError):
            project(torch.zeros(1, 2, 4), torch.ones(1, 2, dtype=torch.bool), torch.zeros(3, 4), torch.zeros(3),
                    torch.zeros(1, 1), torch.ones(1, 1), 0.0, 4)
        with pytest.raises(ConfigurationError):
            ForecastHead(4, 0)


class TestL1:
    def test_perfect(self):
        assert l1_loss(np.ones((2, 3)), np.ones((2, 3))) == 0.0

    def test_hand_example(self):
        assert l1_loss(np.array([[1.0, 2.0]]), np.array([[1.0, 4.0]])) == 1.0

    def test_random_loop_and_symmetry(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(2, 5, 8))
        ref = sum(abs(a[i, j] - b[i, j]) for i in range(5) for j in range(8)) / 40
        assert l1_loss(a, b) == pytest.approx(ref, rel=1e-12)
        assert l1_loss(a, b) == l1_loss(b, a) > 0
        assert float(l1_loss(torch.tensor(a), torch.tensor(b))) == pytest.approx(ref, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(np.zeros((2, 3)), np.zeros((3, 2)))


def test_gradient_through_project_and_decode():
    torch.manual_seed(0)
    dec = Decoder(8, 2, 1).double()
    head = ForecastHead(8, 4).double()
    h = rand(2, 5, 8)
    mask = torch.ones(2, 5, dtype=torch.bool)
    mean, std = torch.zeros(2, 1, dtype=torch.float64), torch.ones(2, 1, dtype=torch.float64)
    y = rand(2, 4, seed=9) * 5  # far from outputs so no residual sits at a kink
    params = [p for p in list(dec.parameters()) + list(head.parameters())]

    def loss():
        f, _ = head(decode(h, dec, mask), mask, mean, std, 0.0)
        return l1_loss(f, y)

    loss().backward()
    step = 1e-6
    for p in (dec.layers[0].w_q, dec.layers[0].ff1.weight, head.linear.weight):
        grad = p.grad.clone().view(-1)
        idx = torch.randperm(p.numel())[:10]
        num = []
        with torch.no_grad():
            flat = p.view(-1)
            for i in idx:
                flat[i] += step
                up = float(loss())
                flat[i] -= 2 * step
                down = float(loss())
                flat[i] += step
                num.append((up - down) / (2 * step))
        num = np.array(num)
        assert np.linalg.norm(grad[idx].numpy() - num) / np.linalg.norm(num) < 1e-4
    assert all(p.grad is not None for p in params)
