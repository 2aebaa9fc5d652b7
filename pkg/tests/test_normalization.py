import numpy as np
import pytest
import torch

from _fd import grad_check
from cuenhance.normalization import (
    EPS,
    MODES,
    StyleAffine,
    StyleHead,
    VinBlock,
    ada_in,
    ada_lin,
    ada_ln,
    clamp_blend_weights,
    instance_stats,
    layer_stats,
)


def rand64(*shape, seed=0):
    rng = np.random.default_rng(seed)
    return torch.as_tensor(rng.standard_normal(shape))


def identity_style(x):
    b, c = x.shape[0], x.shape[1]
    return StyleAffine(torch.ones(b, c, dtype=x.dtype), torch.zeros(b, c, dtype=x.dtype))


def brute_stats(x, axes):
    """Independent two-pass oracle on a numpy copy."""
    a = x.numpy()
    mu = a.mean(axis=axes)
    var = ((a - a.mean(axis=axes, keepdims=True)) ** 2).mean(axis=axes)
    return mu, np.sqrt(var + EPS)


def test_instance_stats_hand_case():
    x = torch.tensor([[[[1.0, 3.0]]]], dtype=torch.float64)
    st = instance_stats(x)
    assert st.mu.item() == pytest.approx(2.0, abs=1e-12)
    assert st.sigma.item() == pytest.approx(np.sqrt(1.0 + EPS), abs=1e-12)


def test_instance_stats_constant_floor():
    st = instance_stats(torch.full((1, 2, 4, 4), 5.0, dtype=torch.float64))
    assert torch.allclose(st.sigma, torch.full((1, 2), np.sqrt(EPS), dtype=torch.float64))


def test_instance_stats_oracle():
    x = rand64(2, 3, 5, 7, seed=10)
    st = instance_stats(x)
    mu_o, sig_o = brute_stats(x, (2, 3))
    assert np.abs(st.mu.numpy() - mu_o).max() < 1e-6
    assert np.abs(st.sigma.numpy() - sig_o).max() < 1e-6


def test_layer_stats_hand_case():
    x = torch.zeros(1, 2, 2, 2, dtype=torch.float64)
    x[0, 0] = 1.0
    x[0, 1] = 3.0
    st = layer_stats(x)
    assert st.mu.shape == (1, 1)
    assert st.mu.item() == pytest.approx(2.0, abs=1e-12)


def test_layer_stats_constant_floor():
    st = layer_stats(torch.full((3, 2, 4, 4), -1.5, dtype=torch.float64))
    assert torch.allclose(st.sigma, torch.full((3, 1), np.sqrt(EPS), dtype=torch.float64))


def test_layer_stats_oracle():
    x = rand64(2, 3, 4, 6, seed=11)
    st = layer_stats(x)
    mu_o, sig_o = brute_stats(x, (1, 2, 3))
    assert np.abs(st.mu.numpy().ravel() - mu_o).max() < 1e-6
    assert np.abs(st.sigma.numpy().ravel() - sig_o).max() < 1e-6


def test_stats_reject_degenerate():
    with pytest.raises(ValueError):
        instance_stats(torch.zeros(1, 1, 1, 1))
    with pytest.raises(ValueError):
        layer_stats(torch.zeros(1, 1, 1, 1))


def test_ada_in_moment_matching():
    x = rand64(2, 3, 8, 8, seed=1)
    gamma = torch.full((2, 3), 2.0, dtype=torch.float64)
    beta = torch.full((2, 3), 3.0, dtype=torch.float64)
    out = ada_in(x, StyleAffine(gamma, beta))
    assert (out.mean(dim=(2, 3)) - 3.0).abs().max().item() < 1e-4
    assert (out.std(dim=(2, 3), unbiased=False) - 2.0).abs().max().item() < 1e-3


def test_ada_in_self_statistics_fixed_point():
    x = rand64(1, 2, 8, 8, seed=2)
    st = instance_stats(x)
    out = ada_in(x, StyleAffine(st.sigma, st.mu))
    assert (out - x).abs().max().item() < 1e-4


def test_ada_in_zero_gamma_gives_beta():
    x = rand64(1, 2, 4, 4, seed=3)
    beta = torch.tensor([[0.7, -0.2]], dtype=torch.float64)
    out = ada_in(x, StyleAffine(torch.zeros(1, 2, dtype=torch.float64), beta))
    assert (out[0, 0] - 0.7).abs().max().item() < 1e-12
    assert (out[0, 1] + 0.2).abs().max().item() < 1e-12


def test_ada_ln_single_channel_equals_ada_in():
    x = rand64(2, 1, 8, 8, seed=4)
    style = StyleAffine(torch.rand(2, 1, dtype=torch.float64) + 0.5, rand64(2, 1, seed=5))
    assert (ada_ln(x, style) - ada_in(x, style)).abs().max().item() < 1e-6


def test_ada_ln_oracle():
    x = rand64(2, 3, 4, 4, seed=6)
    gamma = torch.rand(2, 3, dtype=torch.float64) + 0.5
    beta = rand64(2, 3, seed=7)
    out = ada_ln(x, StyleAffine(gamma, beta))
    mu_o, sig_o = brute_stats(x, (1, 2, 3))
    expected = gamma.numpy()[:, :, None, None] * (
        (x.numpy() - mu_o[:, None, None, None]) / sig_o[:, None, None, None]
    ) + beta.numpy()[:, :, None, None]
    assert np.abs(out.numpy() - expected).max() < 1e-6


def test_ada_ln_identity_on_standardized_input():
    x = rand64(1, 3, 8, 8, seed=8)
    st = layer_stats(x)
    z = (x - st.mu.view(1, 1, 1, 1)) / st.sigma.view(1, 1, 1, 1)
    out = ada_ln(z, identity_style(z))
    assert (out - z).abs().max().item() < 1e-3


def test_ada_lin_endpoints_and_midpoint():
    x = rand64(2, 3, 6, 6, seed=9)
    style = StyleAffine(torch.rand(2, 3, dtype=torch.float64) + 0.5, rand64(2, 3, seed=12))
    a_in, a_ln = ada_in(x, style), ada_ln(x, style)
    assert (ada_lin(x, style, 1.0) - a_in).abs().max().item() < 1e-7
    assert (ada_lin(x, style, 0.0) - a_ln).abs().max().item() < 1e-7
    assert (ada_lin(x, style, 0.5) - 0.5 * (a_in + a_ln)).abs().max().item() < 1e-7


def test_ada_lin_rejects_out_of_range_rho():
    x = rand64(1, 1, 4, 4, seed=13)
    with pytest.raises(ValueError):
        ada_lin(x, identity_style(x), 1.5)
    with pytest.raises(ValueError):
        ada_lin(x, identity_style(x), -0.1)


def test_ada_in_rejects_bad_style_shape():
    x = rand64(1, 3, 4, 4, seed=14)
    bad = StyleAffine(torch.ones(1, 2, dtype=torch.float64), torch.zeros(1, 2, dtype=torch.float64))
    with pytest.raises(ValueError):
        ada_in(x, bad)
    with pytest.raises(ValueError):
        ada_ln(x, bad)


def test_gradients_match_finite_differences():
    x = rand64(2, 3, 4, 4, seed=20).requires_grad_(True)
    gamma = (torch.rand(2, 3, dtype=torch.float64) + 0.5).requires_grad_(True)
    beta = rand64(2, 3, seed=21).requires_grad_(True)
    rho = torch.tensor(0.3, dtype=torch.float64, requires_grad=True)
    w = rand64(2, 3, 4, 4, seed=22)  # fixed projection so the scalar mixes everything

    def loss_in():
        return (ada_in(x, StyleAffine(gamma, beta)) * w).sum()

    def loss_ln():
        return (ada_ln(x, StyleAffine(gamma, beta)) * w).sum()

    def loss_lin():
        return (ada_lin(x, StyleAffine(gamma, beta), rho) * w).sum()

    assert grad_check(loss_in, [x, gamma, beta]) < 1e-4
    assert grad_check(loss_ln, [x, gamma, beta]) < 1e-4
    assert grad_check(loss_lin, [x, gamma, beta, rho]) < 1e-4


def test_style_head_identity_at_init():
    head = StyleHead(80, 16)
    v = torch.randn(3, 80)
    style = head(v)
    assert torch.all(style.gamma == 1.0)
    assert torch.all(style.beta == 0.0)


def test_style_head_distinct_after_perturbation():
    torch.manual_seed(0)
    head = StyleHead(8, 4)
    with torch.no_grad():
        for p in head.parameters():
            p.add_(torch.randn_like(p))
    s1, s2 = head(torch.randn(1, 8)), head(torch.randn(1, 8))
    assert not torch.allclose(s1.gamma, s2.gamma)
    assert torch.all(s1.gamma > 0) and torch.all(s2.gamma > 0)


@pytest.mark.parametrize("mode", MODES)
def test_vin_block_shape_and_identity_at_init(mode):
    torch.manual_seed(1)
    block = VinBlock(6, 10, mode=mode)
    r = torch.randn(2, 6, 8, 8)
    v = torch.randn(2, 10)
    h = block(r, v)
    assert h.shape == r.shape
    assert torch.allclose(h, r)  # zero-initialized conv makes the block identity


def test_vin_adain_only_equals_adalin_rho_one():
    torch.manual_seed(2)
    a = VinBlock(4, 6, mode="adalin")
    b = VinBlock(4, 6, mode="adain_only")
    with torch.no_grad():
        for p in a.parameters():
            p.copy_(torch.randn_like(p) * 0.3)
        a.rho.fill_(1.0)
        b.style.load_state_dict(a.style.state_dict())
        b.conv.load_state_dict(a.conv.state_dict())
    r, v = torch.randn(1, 4, 6, 6), torch.randn(1, 6)
    assert (a(r, v) - b(r, v)).abs().max().item() < 1e-6


def test_vin_block_rejects_odd_spatial():
    block = VinBlock(4, 6)
    with pytest.raises(ValueError):
        block(torch.randn(1, 4, 5, 6), torch.randn(1, 6))


def test_vin_block_degenerate_1x1():
    torch.manual_seed(3)
    for mode in ("adalin", "adain_only", "adaln_only", "add"):
        block = VinBlock(4, 6, mode=mode)
        with torch.no_grad():
            for p in block.parameters():
                p.add_(torch.randn_like(p) * 0.1)
            if mode == "adalin":
                block.rho.clamp_(0, 1)
        r = torch.randn(2, 4, 1, 1, requires_grad=True)
        h = block(r, torch.randn(2, 6))
        assert h.shape == r.shape
        h.sum().backward()  # graph stays connected
        assert r.grad is not None


def test_vin_block_rejects_bad_mode():
    with pytest.raises(ValueError):
        VinBlock(4, 6, mode="attention")


def test_clamp_blend_weights():
    block = VinBlock(4, 6, mode="adalin")
    with torch.no_grad():
        block.rho.fill_(1.7)
    model = torch.nn.Sequential()
    model.add_module("vin", block)
    clamp_blend_weights(model)
    assert block.rho.item() == 1.0
    with torch.no_grad():
        block.rho.fill_(-0.4)
    clamp_blend_weights(model)
    assert block.rho.item() == 0.0
