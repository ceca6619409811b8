"""Structural prior (GAN inversion + latent jitter dataset) and semantic feature extractors.

Pretrained backends (a BigGAN-class generator for inversion, VGG-19 and
Inception for features) are optional. When their weights cannot be loaded a
:class:`CapabilityError` is raised; the deterministic mocks in this module
cover every code path without downloads.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CapabilityError, FormatError, InvalidParameterError, OptimizationError
from .pyramid import resize


# --- feature extractors -----------------------------------------------------

@dataclass
class FeatureStack:
    maps: List[torch.Tensor]
    layer_ids: List[str]

    def __len__(self):
        return len(self.maps)


class FeatureExtractor(nn.Module):
    """Maps images in [-1, 1] to an ordered list of feature maps.

    Subclasses implement ``_features(x)`` on the already normalized batch.
    Inputs smaller than ``min_size`` are upsampled first.
    """

    layer_ids: Sequence[str] = ()
    min_size: int = 1

    def normalize(self, x):
        return x

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        if x.ndim == 3:
            x = x.unsqueeze(0)
        if x.ndim != 4 or x.shape[1] != 3:
            raise FormatError(f"feature extractor expects 3-channel images, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if min(h, w) < self.min_size:
            scale = self.min_size / min(h, w)
            x = F.interpolate(x, size=(math.ceil(h * scale), math.ceil(w * scale)),
                              mode="bicubic", align_corners=False)
        return self._features(self.normalize(x))

    def _features(self, x):
        raise NotImplementedError


class MockExtractor(FeatureExtractor):
    """Three stacked stride-2 random convolutions, linear and bias-free.

    Each tap halves the spatial size (``out = floor(in / 2)``), so a 32x32
    input yields maps of 16x16, 8x8 and 4x4 with ``channels`` channels.
    Weights are drawn from a fixed seed and frozen.
    """

    def __init__(self, channels=(8, 16, 32), seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        c_in = 3
        for c_out in channels:
            conv = nn.Conv2d(c_in, c_out, kernel_size=4, stride=2, padding=1, bias=False)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) / math.sqrt(c_in * 16))
            conv.weight.requires_grad_(False)
            convs.append(conv)
            c_in = c_out
        self.convs = nn.ModuleList(convs)
        self.layer_ids = [f"conv{i + 1}" for i in range(len(channels))]
        self.min_size = 2 ** len(channels)

    def _features(self, x):
        maps = []
        for conv in self.convs:
            x = conv(x)
            maps.append(x)
        return maps


_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class _ImageNetNormalized(FeatureExtractor):
    def __init__(self):
        super().__init__()
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))

    def normalize(self, x):
        return ((x + 1.0) / 2.0 - self.mean) / self.std


# Indices of the ReLU modules in torchvision's vgg19().features.
VGG19_RELU = {
    "relu1_1": 1, "relu1_2": 3, "relu2_1": 6, "relu2_2": 8,
    "relu3_1": 11, "relu3_2": 13, "relu3_3": 15, "relu3_4": 17,
    "relu4_1": 20, "relu4_2": 22, "relu4_3": 24, "relu4_4": 26,
    "relu5_1": 29, "relu5_2": 31, "relu5_3": 33, "relu5_4": 35,
}


class VGGExtractor(_ImageNetNormalized):
    """Activations of a pretrained VGG-19 (default taps relu5_1..relu5_3)."""

    def __init__(self, layers=("relu5_1", "relu5_2", "relu5_3"), weights="DEFAULT"):
        super().__init__()
        try:
            import torchvision
            vgg = torchvision.models.vgg19(weights=weights)
        except Exception as exc:  # download or hub failure
            raise CapabilityError(
                "VGG-19 weights unavailable; set prior.extractor=mock to use the mock extractor") from exc
        unknown = [l for l in layers if l not in VGG19_RELU]
        if unknown:
            raise InvalidParameterError(f"unknown VGG layers {unknown}; valid: {sorted(VGG19_RELU)}")
        self.layer_ids = list(layers)
        self._taps = [VGG19_RELU[l] for l in layers]
        self.body = vgg.features[: max(self._taps) + 1].eval()
        for p in self.body.parameters():
            p.requires_grad_(False)
        self.min_size = 32

    def _features(self, x):
        maps = []
        for i, layer in enumerate(self.body):
            x = layer(x)
            if i in self._taps:
                maps.append(x)
        return maps


class InceptionExtractor(_ImageNetNormalized):
    """First block of a pretrained Inception-v3 (up to the first max-pool), 64 channels."""

    def __init__(self, weights="DEFAULT"):
        super().__init__()
        try:
            import torchvision
            net = torchvision.models.inception_v3(weights=weights, aux_logits=True, init_weights=False)
        except Exception as exc:
            raise CapabilityError(
                "Inception-v3 weights unavailable; set metrics.extractor=mock to use the mock extractor") from exc
        self.body = nn.Sequential(net.Conv2d_1a_3x3, net.Conv2d_2a_3x3, net.Conv2d_2b_3x3, net.maxpool1).eval()
        for p in self.body.parameters():
            p.requires_grad_(False)
        self.layer_ids = ["pool1"]
        self.min_size = 32

    def _features(self, x):
        return [self.body(x)]


def get_extractor(name: str = "mock", **kwargs) -> FeatureExtractor:
    if name == "mock":
        return MockExtractor(**kwargs)
    if name in ("vgg", "real"):
        return VGGExtractor(**kwargs)
    if name == "inception":
        return InceptionExtractor(**kwargs)
    raise InvalidParameterError(f"unknown extractor {name!r}; valid: mock, vgg, inception")


def extract_features(image: torch.Tensor, extractor: FeatureExtractor) -> FeatureStack:
    maps = extractor(image)
    return FeatureStack(maps=list(maps), layer_ids=list(extractor.layer_ids))


# --- inversion backends -----------------------------------------------------

class InversionBackend(nn.Module):
    """A pretrained generator that can be inverted.

    ``generate(z, class_code)`` maps a batch of latents ``(B, *latent_shape)``
    to images ``(B, 3, *native_size)``. Subclasses that cannot backpropagate set
    ``differentiable = False``.
    """

    latent_shape: tuple = ()
    native_size: tuple = (128, 128)
    differentiable: bool = True

    def generate(self, z, class_code=None):
        raise NotImplementedError

    def initial_latent(self, generator: Optional[torch.Generator] = None):
        return torch.zeros(self.latent_shape)


class BroadcastBackend(InversionBackend):
    """Mock prior: the latent is a low-resolution image upsampled to native size.

    With ``latent_shape=(3, 1, 1)`` the output is the latent colour broadcast
    over every pixel. A learnable per-channel gain and bias stand in for the
    generator parameters during fine-tuning; at init they are 1 and 0, so
    ``generate`` is exactly the upsampled latent.
    """

    def __init__(self, latent_shape=(3, 1, 1), native_size=(64, 64)):
        super().__init__()
        self.latent_shape = tuple(latent_shape)
        self.native_size = tuple(native_size)
        self.gain = nn.Parameter(torch.ones(1, 3, 1, 1))
        self.bias = nn.Parameter(torch.zeros(1, 3, 1, 1))

    def generate(self, z, class_code=None):
        if z.ndim == len(self.latent_shape):
            z = z.unsqueeze(0)
        if tuple(z.shape[-2:]) == (1, 1):
            img = z.expand(-1, -1, *self.native_size)
        else:
            img = F.interpolate(z, size=self.native_size, mode="bicubic", align_corners=False)
        return self.gain * img + self.bias


class BigGANBackend(InversionBackend):
    """Class-conditional BigGAN from the ``pytorch_pretrained_biggan`` package."""

    def __init__(self, model_name="biggan-deep-256", class_index=0, truncation=0.4):
        super().__init__()
        try:
            from pytorch_pretrained_biggan import BigGAN
            self.model = BigGAN.from_pretrained(model_name)
        except Exception as exc:
            raise CapabilityError(
                "pretrained BigGAN unavailable; set prior.backend=mock to use the mock prior") from exc
        res = int(model_name.rsplit("-", 1)[-1])
        self.native_size = (res, res)
        self.latent_shape = (self.model.config.z_dim,)
        self.truncation = truncation
        self.class_code = F.one_hot(torch.tensor([class_index]), self.model.config.num_classes).float()

    def generate(self, z, class_code=None):
        if z.ndim == 1:
            z = z.unsqueeze(0)
        code = self.class_code if class_code is None else class_code
        return self.model(z, code.expand(z.shape[0], -1), self.truncation)


def get_backend(name: str = "mock", **kwargs) -> InversionBackend:
    if name == "mock":
        return BroadcastBackend(**kwargs)
    if name == "real":
        return BigGANBackend(**kwargs)
    raise InvalidParameterError(f"unknown prior backend {name!r}; valid: mock, real")


# --- inversion --------------------------------------------------------------

@dataclass
class LatentCode:
    z_star: torch.Tensor
    class_code: Optional[torch.Tensor] = None
    residual: float = 0.0
    history: List[float] = field(default_factory=list)


def invert(target: torch.Tensor, backend: InversionBackend, steps: int = 500, fine_tune: bool = False,
           extractor: Optional[FeatureExtractor] = None, perceptual_weight: float = 0.1,
           lr: float = 0.05, param_lr: float = 1e-3, warmup: float = 0.25,
           init: Optional[torch.Tensor] = None, class_code=None) -> LatentCode:
    """Joint latent (and optionally generator) optimization to reconstruct ``target``.

    Minimizes pixel MSE, plus ``perceptual_weight`` times the perceptual loss
    when ``extractor`` is given. The latent is optimized from the first step;
    with ``fine_tune`` the backend parameters join after ``warmup * steps``.
    The best iterate is returned and the backend parameters are restored to
    the state that produced it.
    """
    from .losses import perceptual_loss

    if not backend.differentiable:
        raise CapabilityError(f"{type(backend).__name__} does not support gradients")
    if steps < 1:
        raise InvalidParameterError("steps must be >= 1")
    if target.ndim == 3:
        target = target.unsqueeze(0)
    if target.ndim != 4 or target.shape[1] != 3 or tuple(target.shape[-2:]) != tuple(backend.native_size):
        raise FormatError(f"target must be (3, {backend.native_size[0]}, {backend.native_size[1]}), "
                          f"got {tuple(target.shape)}")

    z = (backend.initial_latent() if init is None else init.detach().clone()).float()
    z.requires_grad_(True)
    opt_z = torch.optim.Adam([z], lr=lr)
    sched_z = torch.optim.lr_scheduler.CosineAnnealingLR(opt_z, T_max=steps)
    params = [p for p in backend.parameters() if p.requires_grad]
    opt_p = torch.optim.Adam(params, lr=param_lr) if fine_tune and params else None
    start_ft = int(math.ceil(warmup * steps))

    def objective():
        out = backend.generate(z, class_code)
        loss = F.mse_loss(out, target)
        if extractor is not None:
            loss = loss + perceptual_weight * perceptual_loss(out, target, extractor)
        return loss

    best = math.inf
    best_z = z.detach().clone()
    best_params = None
    history = []
    for step in range(steps + 1):
        loss = objective()
        value = float(loss.detach())
        if not math.isfinite(value):
            raise OptimizationError(f"inversion diverged at step {step}", iteration=step,
                                    last_finite={"residual": best})
        if value < best:
            best = value
            best_z = z.detach().clone()
            if opt_p is not None:
                best_params = {k: v.detach().clone() for k, v in backend.state_dict().items()}
        history.append(best)
        if step == steps:
            break
        opt_z.zero_grad()
        if opt_p is not None:
            opt_p.zero_grad()
        loss.backward()
        opt_z.step()
        sched_z.step()
        if opt_p is not None and step >= start_ft:
            opt_p.step()

    if best_params is not None:
        backend.load_state_dict(best_params)
    return LatentCode(z_star=best_z, class_code=class_code, residual=max(best, 0.0), history=history)


# --- jittered dataset -------------------------------------------------------

@dataclass
class StructuralDataset:
    samples: torch.Tensor  # (M, 3, h0, w0)
    jittered: int
    copies: int
    stddevs: List[float] = field(default_factory=list)
    seed: int = 0

    def __len__(self):
        return self.samples.shape[0]

    @property
    def counts(self):
        return self.jittered, self.copies

    def save(self, directory) -> None:
        from .imgio import write_image

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(self.samples):
            write_image(directory / f"{i:06d}.png", img)
        manifest = {"jittered": self.jittered, "copies": self.copies,
                    "stddevs": list(self.stddevs), "seed": self.seed,
                    "size": list(self.samples.shape[-2:])}
        tmp = directory / "dataset.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2))
        os.replace(tmp, directory / "dataset.json")

    @classmethod
    def load(cls, directory) -> "StructuralDataset":
        from .imgio import read_image

        directory = Path(directory)
        manifest = json.loads((directory / "dataset.json").read_text())
        total = manifest["jittered"] + manifest["copies"]
        samples = torch.stack([read_image(directory / f"{i:06d}.png") for i in range(total)])
        return cls(samples=samples, jittered=manifest["jittered"], copies=manifest["copies"],
                   stddevs=manifest["stddevs"], seed=manifest["seed"])


def jitter_dataset(latent: LatentCode, backend: InversionBackend, stddevs: Sequence[float],
                   per_stddev: int, x0: torch.Tensor, copies: int, seed: int = 0,
                   batch: int = 50) -> StructuralDataset:
    """Render ``G(z* + dz)`` for Gaussian ``dz`` at each stddev, downsampled to ``x0``'s size,
    followed by ``copies`` exact copies of ``x0``."""
    stddevs = [float(s) for s in stddevs]
    if not stddevs:
        raise InvalidParameterError("stddevs must be non-empty")
    if per_stddev < 0 or copies < 0:
        raise InvalidParameterError("per_stddev and copies must be non-negative")
    if x0.ndim != 3 or x0.shape[0] != 3:
        raise FormatError(f"x0 must be (3, h, w), got {tuple(x0.shape)}")
    size = tuple(x0.shape[-2:])
    gen = torch.Generator().manual_seed(seed)
    z_star = latent.z_star.detach()
    rendered = []
    with torch.no_grad():
        for sigma in stddevs:
            for start in range(0, per_stddev, batch):
                b = min(batch, per_stddev - start)
                dz = torch.randn((b, *z_star.shape), generator=gen) * sigma
                imgs = backend.generate(z_star.unsqueeze(0) + dz, latent.class_code)
                rendered.append(resize(imgs, size))
    parts = rendered + [x0.detach().unsqueeze(0).expand(copies, -1, -1, -1)]
    samples = torch.cat([p for p in parts if p.shape[0] > 0] or [x0.new_zeros((0, 3, *size))]).contiguous()
    return StructuralDataset(samples=samples, jittered=per_stddev * len(stddevs), copies=copies,
                             stddevs=stddevs, seed=seed)
