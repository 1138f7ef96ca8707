import numpy as np
import pytest
import torch
from torch import nn

from conftest import small_config
from oracles import cross_attend_loop
from oceankg.alignment import (
    CausalTransformerBackbone,
    CrossAlignment,
    HFBackbone,
    attention_allowed,
    backbone_forward,
    build_query,
    cross_attend,
)
from oceankg.errors import ContextLengthError, PreconditionError, ShapeError
from oceankg.graph import Entity, KnowledgeGraph, Relation, Triple
from oceankg.model import compact, key_regions


def rand(*shape, seed=0):
    return torch.tensor(np.random.default_rng(seed).normal(size=shape))


class TestBuildQuery:
    def test_moments_default_affine(self):
        ln = nn.LayerNorm(8).double()
        q = build_query(rand(8), rand(5, 8, seed=1), ln)
        assert q.shape == (6, 8)
        assert torch.allclose(q.mean(-1), torch.zeros(6, dtype=q.dtype), atol=1e-4)
        assert torch.allclose(q.var(-1, unbiased=False), torch.ones(6, dtype=q.dtype), atol=1e-4)

    def test_no_temporal_tokens(self):
        ln = nn.LayerNorm(4).double()
        e = rand(4)
        q = build_query(e, torch.zeros(0, 4, dtype=torch.float64), ln)
        assert q.shape == (1, 4)
        assert torch.allclose(q[0], ln(e))

    def test_three_step_oracle(self):
        ln = nn.LayerNorm(6).double()
        with torch.no_grad():
            ln.weight.copy_(rand(6, seed=2))
            ln.bias.copy_(rand(6, seed=3))
        e, ts = rand(6, seed=4), rand(3, 6, seed=5)
        stacked = np.vstack([e.numpy(), ts.numpy()])
        std = (stacked - stacked.mean(1, keepdims=True)) / np.sqrt(stacked.var(1, keepdims=True) + ln.eps)
        ref = std * ln.weight.detach().numpy() + ln.bias.detach().numpy()
        assert np.allclose(build_query(e, ts, ln).detach().numpy(), ref, atol=1e-12)

    def test_batched(self):
        ln = nn.LayerNorm(4).double()
        e, ts = rand(3, 4), rand(3, 2, 4, seed=1)
        q = build_query(e, ts, ln)
        assert q.shape == (3, 3, 4)
        assert torch.allclose(q[1], build_query(e[1], ts[1], ln))

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            build_query(torch.zeros(3), torch.zeros(2, 4), nn.LayerNorm(4))


class TestCrossAttend:
    def test_loop_oracle_4x7(self):
        q, k = rand(4, 5), rand(7, 6, seed=1)
        wq, wk, wv = rand(5, 3, seed=2), rand(6, 3, seed=3), rand(6, 3, seed=4)
        out, w = cross_attend(q, k, wq, wk, wv)
        ref, ref_w = cross_attend_loop(q.numpy(), k.numpy(), wq.numpy(), wk.numpy(), wv.numpy())
        assert np.allclose(out.numpy(), ref, atol=1e-6) and np.allclose(w.numpy(), ref_w, atol=1e-6)
        assert torch.allclose(w.sum(-1), torch.ones(4, dtype=w.dtype), atol=1e-6)

    def test_masked_loop_oracle(self):
        q, k = rand(3, 4), rand(6, 4, seed=1)
        wq, wk, wv = rand(4, 4, seed=2), rand(4, 4, seed=3), rand(4, 2, seed=4)
        mask = torch.tensor([True, False, True, True, False, True])
        out, w = cross_attend(q, k, wq, wk, wv, mask)
        ref, _ = cross_attend_loop(q.numpy(), k.numpy(), wq.numpy(), wk.numpy(), wv.numpy(), mask.tolist())
        assert np.allclose(out.numpy(), ref, atol=1e-6)
        assert float(w[:, ~mask].abs().max()) == 0.0

    def test_single_key_returns_value_projection(self):
        k = rand(1, 5)
        wv = rand(5, 3, seed=1)
        out, _ = cross_attend(rand(4, 2, seed=2), k, rand(2, 3, seed=3), rand(5, 3, seed=4), wv)
        assert torch.equal(out, (k @ wv).expand(4, 3))

    def test_zero_query_projection_is_mean(self):
        k, wv = rand(7, 4), rand(4, 3, seed=1)
        out, w = cross_attend(rand(2, 4, seed=2), k, torch.zeros(4, 3, dtype=torch.float64), rand(4, 3, seed=3), wv)
        assert torch.allclose(out, (k @ wv).mean(0).expand(2, 3), atol=1e-12)
        assert torch.allclose(w, torch.full((2, 7), 1 / 7, dtype=w.dtype))

    def test_zero_keys(self):
        with pytest.raises(PreconditionError):
            cross_attend(torch.zeros(2, 3), torch.zeros(0, 3), torch.zeros(3, 2), torch.zeros(3, 2), torch.zeros(3, 2))

    def test_all_keys_masked(self):
        with pytest.raises(PreconditionError):
            cross_attend(torch.zeros(2, 3), torch.zeros(4, 3), torch.zeros(3, 2), torch.zeros(3, 2),
                         torch.zeros(3, 2), torch.zeros(4, dtype=torch.bool))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cross_attend(torch.zeros(2, 3), torch.zeros(4, 3), torch.zeros(3, 2), torch.zeros(3, 5), torch.zeros(3, 2))

    def test_uniform_key_scaling_keeps_argmax(self):
        q, k = rand(3, 4), rand(6, 4, seed=1)
        wq, wk, wv = rand(4, 4, seed=2), rand(4, 4, seed=3), rand(4, 4, seed=4)
        _, w = cross_attend(q, k, wq, wk, wv)
        _, w2 = cross_attend(q, 3.0 * k, wq, wk, wv)
        assert torch.equal(w.argmax(-1), w2.argmax(-1))

    def test_module_residual(self):
        m = CrossAlignment(4, 6, 5, residual=True).double()
        q, k = rand(2, 3, 4), rand(2, 8, 6, seed=1)
        out, w = m(q, k, return_weights=True)
        base, _ = cross_attend(q, k, m.w_q, m.w_k, m.w_v)
        assert torch.allclose(out, base + q @ m.residual.weight.T)
        assert CrossAlignment(4, 6, 5).residual is None


class TestKeyRegions:
    def test_self_first_and_limit(self):
        ents = [Entity(f"r{i}", "Region", coords=(0.0, float(i))) for i in range(4)]
        rel = [Relation("adj", "adjacent to")]
        trip = [Triple("r0", "adj", "r1"), Triple("r0", "adj", "r2"), Triple("r0", "adj", "r3")]
        g = KnowledgeGraph(ents, rel, trip)
        idx, mask = key_regions(g, ["r0", "r1", "r2", "r3"], 3)
        assert idx[0].tolist() == [0, 1, 2] and mask[0].all()
        assert idx[1].tolist()[0] == 1 and mask[1].tolist() == [True, True, False]

    def test_compact_is_stable(self):
        t = torch.arange(5.0).view(1, 5, 1)
        m = torch.tensor([[False, True, False, True, True]])
        ct, cm = compact(t, m)
        assert ct.view(-1).tolist()[:3] == [1.0, 3.0, 4.0] and cm.tolist() == [[True, True, True, False, False]]


class TestBackbone:
    def make(self, **kw):
        return CausalTransformerBackbone(**{"hidden": 16, "layers": 2, "heads": 4, "context": 32, **kw})

    def test_frozen_and_eval(self):
        bb = self.make()
        assert bb.frozen and not bb.training
        bb.train()
        assert not bb.training
        assert bb.parameter_count() > 0

    def test_seeded_identity_and_checksum(self):
        a, b, c = self.make(seed=1), self.make(seed=1), self.make(seed=2)
        assert a.checksum() == b.checksum() != c.checksum()
        assert a.identity == b.identity != c.identity

    def test_causality_probe(self):
        bb = self.make()
        x = torch.randn(1, 10, 16)
        mask = torch.ones(1, 10, dtype=torch.bool)
        base = backbone_forward(x, mask, bb)
        for j in range(1, 10):
            y = x.clone()
            y[0, j] += torch.randn(16) * 5
            out = backbone_forward(y, mask, bb)
            assert float((out[0, :j] - base[0, :j]).abs().max()) < 1e-6
            assert float((out[0, j] - base[0, j]).abs().max()) > 1e-6

    def test_padding_invariance(self):
        bb = self.make()
        x = torch.randn(2, 9, 16)
        x[1, :6] = x[0, :6]
        x[0, 6:] = 0.0
        mask = torch.zeros(2, 9, dtype=torch.bool)
        mask[:, :6] = True
        out = backbone_forward(x, mask, bb)
        assert float((out[0, :6] - out[1, :6]).abs().max()) < 1e-6
        assert float(out[:, 6:].abs().max()) == 0.0

    def test_interior_padding_is_never_attended(self):
        bb = self.make()
        x = torch.randn(1, 6, 16)
        mask = torch.tensor([[True, False, True, True, True, True]])
        y = x.clone()
        y[0, 1] = 100.0
        assert torch.allclose(backbone_forward(x, mask, bb), backbone_forward(y, mask, bb), atol=1e-6)

    def test_context_limit(self):
        bb = self.make(context=8)
        with pytest.raises(ContextLengthError):
            backbone_forward(torch.zeros(1, 9, 16), torch.ones(1, 9, dtype=torch.bool), bb)

    def test_unfrozen_rejected(self):
        bb = self.make()
        next(bb.parameters()).requires_grad_(True)
        with pytest.raises(PreconditionError):
            backbone_forward(torch.zeros(1, 2, 16), torch.ones(1, 2, dtype=torch.bool), bb)

    def test_mask_shape(self):
        with pytest.raises(ShapeError):
            backbone_forward(torch.zeros(1, 3, 16), torch.ones(1, 4, dtype=torch.bool), self.make())

    def test_gradient_flows_to_inputs_not_weights(self):
        bb = self.make()
        x = torch.randn(2, 5, 16, requires_grad=True)
        backbone_forward(x, torch.ones(2, 5, dtype=torch.bool), bb).sum().backward()
        assert x.grad is not None and float(x.grad.abs().sum()) > 0
        assert all(p.grad is None for p in bb.parameters())

    def test_attention_allowed(self):
        a = attention_allowed(torch.tensor([[True, True, False]]))[0, 0]
        assert a.tolist() == [[True, False, False], [True, True, False], [False, False, True]]


class TestHFBackbone:
    @pytest.fixture
    def gpt2(self):
        transformers = pytest.importorskip("transformers")
        torch.manual_seed(0)
        cfg = transformers.GPT2Config(n_embd=16, n_layer=2, n_head=2, n_positions=32, vocab_size=10)
        return HFBackbone(transformers.GPT2Model(cfg), identity="hf:tiny-gpt2")

    def test_contract(self, gpt2):
        assert gpt2.frozen and gpt2.hidden_size == 16 and gpt2.context_limit == 32
        x = torch.randn(2, 6, 16)
        out = backbone_forward(x, torch.ones(2, 6, dtype=torch.bool), gpt2)
        assert out.shape == (2, 6, 16)

    def test_causal(self, gpt2):
        x = torch.randn(1, 6, 16)
        mask = torch.ones(1, 6, dtype=torch.bool)
        base = backbone_forward(x, mask, gpt2)
        y = x.clone()
        y[0, 4] += 3.0
        assert float((backbone_forward(y, mask, gpt2)[0, :4] - base[0, :4]).abs().max()) < 1e-6

    def test_plugs_into_forecaster(self, gpt2):
        from oceankg.model import Forecaster
        from oceankg.synthetic import correlated_dataset
        from oceankg.transe import pretrain

        cfg = small_config()
        ds = correlated_dataset(cfg.synthetic)
        table = pretrain(ds.graph, cfg.kge)
        ids = list(ds.data.region_ids)[:3]
        model = Forecaster(cfg, ds.graph, table, ids, backbone=gpt2)
        out = model(torch.randn(2, cfg.lookback), torch.tensor([0, 2]))
        assert out["pred"].shape == (2, cfg.horizon)
