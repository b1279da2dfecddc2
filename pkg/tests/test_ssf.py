import math

import pytest
import torch

from styler.errors import InvalidInputError
from styler.ssf import SsfModule, concat_fusion, mlp_hidden_width, ssf_forward
from styler.substrate import finite_diff_grad


def zeroed_ssf(c_cs, c_r, c_merge):
    module = SsfModule(c_cs, c_r, c_merge)
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def seeded_ssf(c_cs, c_r, c_merge, seed):
    module = SsfModule(c_cs, c_r, c_merge)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen) * 0.5)
    return module


class TestSsfForward:
    def test_zero_mlp_halves_content(self):
        module = zeroed_ssf(3, 2, 4)
        gen = torch.Generator().manual_seed(0)
        f_cs = torch.rand(3, 5, 5, generator=gen)
        f_r = torch.rand(2, 5, 5, generator=gen)
        out = ssf_forward(module, f_cs, f_r)
        assert torch.equal(out[:3], 0.5 * f_cs)

    def test_output_channels(self):
        module = seeded_ssf(512, 128, 64, seed=1)
        gen = torch.Generator().manual_seed(2)
        out = ssf_forward(module, torch.rand(512, 8, 8, generator=gen),
                          torch.rand(128, 8, 8, generator=gen))
        assert out.shape == (576, 8, 8)

    def test_hand_trace_1x1(self):
        module = SsfModule(2, 1, 2)
        w1 = torch.tensor([[1.0, 0.0, 0.0],
                           [0.0, 1.0, 0.0],
                           [0.0, 0.0, 1.0],
                           [0.5, 0.5, 0.5]])
        b1 = torch.tensor([0.1, -0.2, 0.0, 0.3])
        w2 = torch.tensor([[1.0, -1.0, 0.5, 0.0],
                           [0.0, 0.5, -0.25, 1.0]])
        b2 = torch.tensor([0.05, -0.1])
        with torch.no_grad():
            module.mlp1.weight.copy_(w1)
            module.mlp1.bias.copy_(b1)
            module.mlp2.weight.copy_(w2)
            module.mlp2.bias.copy_(b2)
            module.refine.weight.zero_()
            module.refine.weight[0, 0, 1, 1] = 2.0
            module.refine.weight[1, 2, 1, 1] = -1.0
            module.refine.bias.copy_(torch.tensor([0.25, 0.4]))
        a, b, r = 0.8, -0.3, 0.6
        f_cs = torch.tensor([[[a]], [[b]]])
        f_r = torch.tensor([[[r]]])
        out = ssf_forward(module, f_cs, f_r)

        # independent scalar trace: pooled vector is just (a, b, r)
        hidden = [max(0.0, v) for v in
                  (a + 0.1, b - 0.2, r + 0.0, 0.5 * (a + b + r) + 0.3)]
        logits = [
            hidden[0] - hidden[1] + 0.5 * hidden[2] + 0.05,
            0.5 * hidden[1] - 0.25 * hidden[2] + hidden[3] - 0.1,
        ]
        m = [1.0 / (1.0 + math.exp(-z)) for z in logits]
        refined = [max(0.0, 2.0 * a + 0.25), max(0.0, -1.0 * r + 0.4)]
        expected = torch.tensor([[[m[0] * a]], [[m[1] * b]], [[refined[0]]], [[refined[1]]]])
        assert torch.allclose(out, expected, atol=1e-6)

    def test_attention_in_open_interval(self):
        module = seeded_ssf(6, 3, 4, seed=3)
        gen = torch.Generator().manual_seed(4)
        f_csr = torch.cat([torch.rand(6, 4, 4, generator=gen),
                           torch.rand(3, 4, 4, generator=gen)]).unsqueeze(0)
        with torch.no_grad():
            m = module.attention(f_csr)
        assert float(m.min()) > 0.0 and float(m.max()) < 1.0

    def test_attention_saturation(self):
        module = seeded_ssf(4, 2, 4, seed=5)
        gen = torch.Generator().manual_seed(6)
        f_cs = torch.rand(4, 4, 4, generator=gen)
        f_r = torch.rand(2, 4, 4, generator=gen)
        with torch.no_grad():
            module.mlp2.bias.fill_(40.0)  # drive every logit far positive
        out = ssf_forward(module, f_cs, f_r)
        assert torch.allclose(out[:4], f_cs, atol=1e-6)

    def test_spatial_mismatch_names_shapes(self):
        module = seeded_ssf(3, 2, 4, seed=7)
        with pytest.raises(InvalidInputError, match=r"\(1, 3, 5, 5\).*\(1, 2, 4, 4\)"):
            ssf_forward(module, torch.rand(3, 5, 5), torch.rand(2, 4, 4))

    def test_channel_mismatch(self):
        module = seeded_ssf(3, 2, 4, seed=8)
        with pytest.raises(InvalidInputError, match="channel mismatch"):
            ssf_forward(module, torch.rand(4, 5, 5), torch.rand(2, 5, 5))

    def test_pure_function(self):
        module = seeded_ssf(3, 2, 4, seed=9)
        gen = torch.Generator().manual_seed(10)
        f_cs = torch.rand(3, 4, 4, generator=gen)
        f_r = torch.rand(2, 4, 4, generator=gen)
        assert torch.equal(ssf_forward(module, f_cs, f_r), ssf_forward(module, f_cs, f_r))

    def test_hidden_width(self):
        assert mlp_hidden_width(3) == 4
        assert mlp_hidden_width(640) == 80


class TestConcatFusion:
    def test_equals_ssf_with_ones_attention(self):
        module = seeded_ssf(4, 2, 4, seed=11)
        gen = torch.Generator().manual_seed(12)
        f_cs = torch.rand(4, 6, 6, generator=gen)
        f_r = torch.rand(2, 6, 6, generator=gen)
        out = concat_fusion(module, f_cs, f_r)
        f_csr = torch.cat([f_cs, f_r]).unsqueeze(0)
        expected = torch.cat(
            [f_cs, torch.relu(module.refine(f_csr)).squeeze(0)]
        )
        assert torch.equal(out, expected)

    def test_output_channels(self):
        module = seeded_ssf(4, 2, 3, seed=13)
        out = concat_fusion(module, torch.rand(4, 4, 4), torch.rand(2, 4, 4))
        assert out.shape == (7, 4, 4)

    def test_gradient_through_both_paths(self):
        module = seeded_ssf(2, 1, 2, seed=14).double()
        gen = torch.Generator().manual_seed(15)
        f_cs = torch.rand(2, 3, 3, generator=gen, dtype=torch.float64)
        f_r = torch.rand(1, 3, 3, generator=gen, dtype=torch.float64)

        def scalar(x):
            return float((concat_fusion(module, x, f_r) ** 2).sum())

        x_ad = f_cs.clone().requires_grad_(True)
        (concat_fusion(module, x_ad, f_r) ** 2).sum().backward()
        numeric = finite_diff_grad(scalar, f_cs, 1e-6)
        assert (numeric - x_ad.grad).norm() / x_ad.grad.norm() < 1e-3
        # the concat path alone would give gradient 2*f_cs; the conv path
        # must contribute on top of it
        assert not torch.allclose(x_ad.grad, 2.0 * f_cs)


class TestSsfGradients:
    def test_matches_finite_differences(self):
        module = seeded_ssf(4, 2, 4, seed=16).double()
        gen = torch.Generator().manual_seed(17)
        f_cs = torch.rand(4, 4, 4, generator=gen, dtype=torch.float64)
        f_r = torch.rand(2, 4, 4, generator=gen, dtype=torch.float64)

        x_ad = f_cs.clone().requires_grad_(True)
        (ssf_forward(module, x_ad, f_r) ** 2).sum().backward()
        numeric = finite_diff_grad(
            lambda x: float((ssf_forward(module, x, f_r) ** 2).sum()), f_cs, 1e-6
        )
        assert (numeric - x_ad.grad).norm() / x_ad.grad.norm() < 1e-3

        w_ad = module.mlp1.weight.detach().clone().requires_grad_(True)
        module.mlp1.weight.requires_grad_(True)
        loss = (ssf_forward(module, f_cs, f_r) ** 2).sum()
        (param_grad,) = torch.autograd.grad(loss, module.mlp1.weight)

        def weight_scalar(w):
            with torch.no_grad():
                saved = module.mlp1.weight.detach().clone()
                module.mlp1.weight.copy_(w)
            try:
                return float((ssf_forward(module, f_cs, f_r) ** 2).sum())
            finally:
                with torch.no_grad():
                    module.mlp1.weight.copy_(saved)

        numeric_w = finite_diff_grad(weight_scalar, w_ad.detach(), 1e-6)
        assert (numeric_w - param_grad).norm() / param_grad.norm() < 1e-3
