"""Training objectives: WGAN-GP adversarial terms, perceptual and reconstruction losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .errors import CapabilityError, FormatError, InvalidParameterError
from .priors import FeatureStack, extract_features


@dataclass
class LossWeights:
    alpha1: float = 10.0    # semantic reconstruction
    alpha2: float = 10.0    # texture reconstruction
    lambda_p: float = 0.1   # perceptual
    gp_coef: float = 10.0   # gradient penalty

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "lambda_p", "gp_coef"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise FormatError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def gradient_penalty(critic, real: torch.Tensor, fake: torch.Tensor, seed: Optional[int] = None,
                     generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Mean over the batch of ``(||grad critic(interp)||_2 - 1)**2``.

    ``interp = eps * real + (1 - eps) * fake`` with one uniform ``eps`` per
    example. Patch critics are reduced by summing their score map, so the
    gradient is that of the total score. The result keeps its graph for use
    in the critic update.
    """
    _check_same_shape(real, fake, "gradient_penalty")
    if generator is None and seed is not None:
        generator = torch.Generator(device=real.device).manual_seed(seed)
    eps_shape = (real.shape[0],) + (1,) * (real.ndim - 1)
    eps = torch.rand(eps_shape, generator=generator, device=real.device, dtype=real.dtype)
    interp = (eps * real.detach() + (1 - eps) * fake.detach()).requires_grad_(True)
    scores = critic(interp)
    if not scores.requires_grad:
        raise CapabilityError("critic output is not differentiable w.r.t. its input")
    (grad,) = torch.autograd.grad(scores.sum(), interp, create_graph=True)
    norms = grad.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def critic_loss(critic, real, fake, weights: LossWeights = LossWeights(), seed=None, generator=None):
    """``mean D(fake) - mean D(real) + gp_coef * GP``; ``fake`` is detached."""
    fake = fake.detach()
    loss = critic(fake).mean() - critic(real).mean()
    if weights.gp_coef:
        loss = loss + weights.gp_coef * gradient_penalty(critic, real, fake, seed=seed, generator=generator)
    return loss


def generator_adv_loss(critic, fake):
    return -critic(fake).mean()


def adversarial_losses(critic, real, fake, weights: LossWeights = LossWeights(), seed=None, generator=None):
    """Return ``(critic_loss, generator_loss)`` of the WGAN-GP game."""
    _check_same_shape(real, fake, "adversarial_losses")
    return (critic_loss(critic, real, fake, weights, seed=seed, generator=generator),
            generator_adv_loss(critic, fake))


def _features(x, extractor):
    if isinstance(x, FeatureStack):
        return x.maps
    try:
        return extract_features(x, extractor).maps
    except CapabilityError:
        raise
    except (RuntimeError, TypeError) as exc:
        raise CapabilityError(f"feature extraction failed: {exc}") from exc


def perceptual_loss(x, y, extractor) -> torch.Tensor:
    """Sum over tapped layers of the mean absolute feature difference.

    Either argument may be a precomputed :class:`FeatureStack`.
    """
    if isinstance(x, torch.Tensor) and isinstance(y, torch.Tensor):
        _check_same_shape(x, y, "perceptual_loss")
    fx, fy = _features(x, extractor), _features(y, extractor)
    total = 0.0
    for a, b in zip(fx, fy):
        if a.shape != b.shape:
            b = b.expand_as(a) if b.shape[0] == 1 else b
        total = total + (a - b).abs().mean()
    return total


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check_same_shape(pred, target, "reconstruction_loss")
    return F.mse_loss(pred, target)


def _item(x):
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def semantic_objective(adv, rec, perc, weights: LossWeights):
    """Generator objective of a semantic stage, returned with its terms."""
    total = adv + weights.alpha1 * rec + weights.lambda_p * perc
    return total, {"adv": _item(adv), "rec": _item(rec), "perc": _item(perc), "total": _item(total)}


def texture_objective(adv, rec, weights: LossWeights):
    total = adv + weights.alpha2 * rec
    return total, {"adv": _item(adv), "rec": _item(rec), "total": _item(total)}
