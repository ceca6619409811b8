import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings, strategies as st

from tiergan.errors import CapabilityError, FormatError, InvalidParameterError
from tiergan.losses import (LossWeights, adversarial_losses, critic_loss, gradient_penalty, perceptual_loss,
                            reconstruction_loss)
from tiergan.priors import MockExtractor


class Linear(nn.Module):
    def __init__(self, w):
        super().__init__()
        self.w = nn.Parameter(w)

    def forward(self, x):
        return (x.flatten(1) * self.w.flatten()).sum(1)


def linear_critic(norm, shape=(3, 4, 4), seed=0):
    w = torch.randn(shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    return Linear(w / w.norm() * norm)


@pytest.mark.parametrize("norm,expected", [(1.0, 0.0), (3.0, 4.0), (0.5, 0.25)])
def test_gp_linear_critic(norm, expected):
    real = torch.randn(6, 3, 4, 4, dtype=torch.float64)
    fake = torch.randn(6, 3, 4, 4, dtype=torch.float64)
    gp = gradient_penalty(linear_critic(norm), real, fake, seed=1)
    assert abs(gp.item() - expected) < 1e-6


def two_layer_critic():
    torch.manual_seed(3)
    return nn.Sequential(nn.Flatten(), nn.Linear(12, 7), nn.Tanh(), nn.Linear(7, 1)).double()


def fd_gradient_norm(f, x, h=1e-6):
    grad = np.zeros(x.numel())
    flat = x.flatten()
    for i in range(flat.numel()):
        e = torch.zeros_like(flat)
        e[i] = h
        grad[i] = (f((flat + e).view_as(x)) - f((flat - e).view_as(x))) / (2 * h)
    return np.linalg.norm(grad)


def test_gp_matches_finite_difference_oracle():
    critic = two_layer_critic()
    real = torch.randn(4, 3, 2, 2, dtype=torch.float64)
    fake = torch.randn(4, 3, 2, 2, dtype=torch.float64)
    gp = gradient_penalty(critic, real, fake, seed=7).item()
    eps = torch.rand((4, 1, 1, 1), generator=torch.Generator().manual_seed(7), dtype=torch.float64)
    interp = eps * real + (1 - eps) * fake
    with torch.no_grad():
        norms = [fd_gradient_norm(lambda v: critic(v.unsqueeze(0)).item(), interp[b]) for b in range(4)]
    oracle = float(np.mean((np.array(norms) - 1) ** 2))
    assert abs(gp - oracle) <= 1e-3 * abs(oracle)


def test_gp_seeded_and_nonnegative():
    critic = two_layer_critic()
    real, fake = torch.randn(5, 3, 2, 2, dtype=torch.float64), torch.randn(5, 3, 2, 2, dtype=torch.float64)
    assert gradient_penalty(critic, real, fake, seed=2).item() == gradient_penalty(critic, real, fake, seed=2).item()
    assert gradient_penalty(critic, real, fake, seed=2).item() >= 0


def test_gp_needs_differentiable_critic():
    with pytest.raises(CapabilityError):
        gradient_penalty(lambda x: torch.zeros(x.shape[0]), torch.zeros(2, 3), torch.ones(2, 3))
    with pytest.raises(FormatError):
        gradient_penalty(Linear(torch.ones(3)), torch.zeros(2, 3), torch.ones(3, 3))


class Const(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.p = nn.Parameter(torch.zeros(()))
        self.c = c

    def forward(self, x):
        return self.c + 0 * x.flatten(1).sum(1) + 0 * self.p


def test_adversarial_constant_critic():
    real, fake = torch.randn(3, 3, 4, 4), torch.randn(3, 3, 4, 4)
    d_loss, g_loss = adversarial_losses(Const(2.5), real, fake, LossWeights(gp_coef=0))
    assert d_loss.item() == 0
    assert g_loss.item() == -2.5


def test_adversarial_real_equals_fake_leaves_gp_only():
    critic = linear_critic(3.0, shape=(12,))
    x = torch.randn(4, 12, dtype=torch.float64)
    d_loss, _ = adversarial_losses(critic, x, x.clone(), LossWeights(), seed=0)
    assert abs(d_loss.item() - 10 * 4.0) < 1e-9


def test_patch_critic_means_over_positions():
    critic = nn.Conv2d(3, 1, 3, bias=False).double()
    real, fake = torch.randn(2, 3, 8, 8, dtype=torch.float64), torch.randn(2, 3, 8, 8, dtype=torch.float64)
    d_loss, g_loss = adversarial_losses(critic, real, fake, LossWeights(gp_coef=0))
    with torch.no_grad():
        assert abs(g_loss.item() + critic(fake).mean().item()) < 1e-12
        assert abs(d_loss.item() - (critic(fake).mean() - critic(real).mean()).item()) < 1e-12


def test_toy_critic_separates_point_masses():
    torch.manual_seed(0)
    critic = nn.Sequential(nn.Linear(1, 16), nn.LeakyReLU(0.2), nn.Linear(16, 1))
    opt = torch.optim.Adam(critic.parameters(), 1e-3, betas=(0.5, 0.999))
    real, fake = torch.full((16, 1), 1.0), torch.full((16, 1), -1.0)
    for _ in range(200):
        loss = critic_loss(critic, real, fake, LossWeights())
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        assert (critic(real).mean() - critic(fake).mean()).item() > 0.5


def test_loss_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.alpha1, w.alpha2, w.lambda_p, w.gp_coef) == (10, 10, 0.1, 10)
    with pytest.raises(InvalidParameterError):
        LossWeights(alpha1=-1)


# --- perceptual -------------------------------------------------------------

def numpy_conv_stride2(x, w):
    """Plain-loop correlation with stride 2, padding 1 (oracle for the mock extractor)."""
    c_out, c_in, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    h = (x.shape[1] + 2 - k) // 2 + 1
    wd = (x.shape[2] + 2 - k) // 2 + 1
    out = np.zeros((c_out, h, wd))
    for i in range(h):
        for j in range(wd):
            patch = xp[:, 2 * i:2 * i + k, 2 * j:2 * j + k]
            out[:, i, j] = np.tensordot(w, patch, axes=([1, 2, 3], [0, 1, 2]))
    return out


def test_perceptual_one_pixel_linear_response():
    ext = MockExtractor().double()
    x = torch.rand(3, 16, 16, dtype=torch.float64) * 2 - 1
    y = x.clone()
    y[1, 7, 9] += 0.5
    got = perceptual_loss(x, y, ext).item()
    delta = (y - x).numpy()
    expected = 0.0
    for conv in ext.convs:
        delta = numpy_conv_stride2(delta, conv.weight.detach().numpy())
        expected += np.abs(delta).mean()
    assert abs(got - expected) < 1e-10


def test_perceptual_identity_and_symmetry():
    ext = MockExtractor()
    x, y = torch.rand(3, 32, 32), torch.rand(3, 32, 32)
    assert perceptual_loss(x, x, ext).item() == 0
    assert perceptual_loss(x, y, ext).item() == pytest.approx(perceptual_loss(y, x, ext).item(), rel=1e-6)
    assert perceptual_loss(x, y, ext).item() > 0
    with pytest.raises(FormatError):
        perceptual_loss(x, torch.rand(3, 16, 16), ext)


# --- reconstruction ---------------------------------------------------------

def test_reconstruction_loss():
    t = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    assert reconstruction_loss(t, t).item() == 0
    assert reconstruction_loss(t + 1, t).item() == pytest.approx(1.0, abs=1e-12)
    p = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    oracle = sum((a - b) ** 2 for a, b in zip(p.flatten().tolist(), t.flatten().tolist())) / p.numel()
    assert abs(reconstruction_loss(p, t).item() - oracle) < 1e-9
    with pytest.raises(FormatError):
        reconstruction_loss(p, t[..., :4])


# --- gradients of the losses w.r.t. inputs -----------------------------------

def _fd_check(f, x, rel=1e-3):
    x = x.clone().requires_grad_(True)
    (g,) = torch.autograd.grad(f(x), x)
    h = 1e-6
    flat = x.detach().flatten()
    fd = torch.zeros_like(flat)
    for i in range(flat.numel()):
        e = torch.zeros_like(flat)
        e[i] = h
        fd[i] = (f((flat + e).view_as(x)) - f((flat - e).view_as(x))) / (2 * h)
    assert torch.allclose(g.flatten(), fd, rtol=rel, atol=1e-6)


def test_loss_gradients_match_finite_differences():
    torch.manual_seed(0)
    target = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    _fd_check(lambda v: reconstruction_loss(v, target), torch.rand(1, 3, 8, 8, dtype=torch.float64))
    ext = MockExtractor().double()
    _fd_check(lambda v: perceptual_loss(v, target, ext), torch.rand(1, 3, 8, 8, dtype=torch.float64))
    critic = two_layer_critic()
    real = torch.randn(2, 3, 2, 2, dtype=torch.float64)
    _fd_check(lambda v: adversarial_losses(critic, real, v, LossWeights(gp_coef=0))[1],
              torch.randn(2, 3, 2, 2, dtype=torch.float64))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 10))
def test_losses_finite_and_gp_nonnegative(seed, scale):
    g = torch.Generator().manual_seed(seed)
    real = torch.randn(3, 3, 2, 2, generator=g, dtype=torch.float64) * scale
    fake = torch.randn(3, 3, 2, 2, generator=g, dtype=torch.float64) * scale
    critic = two_layer_critic()
    gp = gradient_penalty(critic, real, fake, seed=seed).item()
    d_loss, g_loss = adversarial_losses(critic, real, fake, seed=seed)
    assert gp >= 0
    assert np.isfinite([gp, d_loss.item(), g_loss.item(), reconstruction_loss(real, fake).item()]).all()
