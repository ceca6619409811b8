"""Per-stage generators and critics, and the stage plan describing the cascade."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .errors import FormatError, InvalidParameterError
from .pyramid import upsample

STRUCTURAL, SEMANTIC, TEXTURE = "structural", "semantic", "texture"
KINDS = (STRUCTURAL, SEMANTIC, TEXTURE)

# Ablation plans, keyed by their compact name.
PRESETS = {
    "Te7": "Te.7",
    "St1Te6": "St.1 Te.6",
    "St1Se1Te5": "St.1 Se.1 Te.5",
    "St1Se3Te3": "St.1 Se.3 Te.3",
    "St1Se6": "St.1 Se.6",
    "Te1Se3Te3": "Te.1 Se.3 Te.3",
}
DEFAULT_PRESET = "St1Se3Te3"


@dataclass
class StageSpec:
    index: int
    kind: str
    input_size: Tuple[int, int]
    channels: int = 32
    conv_layers: int = 5
    kernel: int = 3
    noise_dim: int = 8
    pe_channels: int = 8
    norm: str = "instance"
    zero_head: bool = True  # texture stages start as the identity map

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown stage kind {self.kind!r}")
        self.input_size = (int(self.input_size[0]), int(self.input_size[1]))


@dataclass
class StagePlan:
    specs: List[StageSpec]
    name: str = ""

    @property
    def N(self) -> int:
        return len(self.specs) - 1

    @property
    def n(self) -> int:
        """Index of the last semantic stage (0 when there is none)."""
        sem = [s.index for s in self.specs if s.kind == SEMANTIC]
        return max(sem) if sem else 0

    @property
    def kinds(self) -> List[str]:
        return [s.kind for s in self.specs]

    def validate(self) -> "StagePlan":
        kinds = self.kinds
        if not kinds:
            raise InvalidParameterError("empty stage plan")
        if kinds[0] == SEMANTIC:
            raise InvalidParameterError("stage 0 must be structural or texture")
        if STRUCTURAL in kinds[1:]:
            raise InvalidParameterError("structural kind is only allowed at stage 0")
        rest = kinds[1:]
        first_tex = rest.index(TEXTURE) if TEXTURE in rest else len(rest)
        if SEMANTIC in rest[first_tex:]:
            raise InvalidParameterError("semantic stages must precede all upper texture stages")
        for i, s in enumerate(self.specs):
            if s.index != i:
                raise InvalidParameterError(f"spec at position {i} has index {s.index}")
        return self

    def to_dict(self) -> dict:
        return {"name": self.name, "specs": [asdict(s) for s in self.specs]}

    @classmethod
    def from_dict(cls, d: dict) -> "StagePlan":
        return cls(specs=[StageSpec(**s) for s in d["specs"]], name=d.get("name", "")).validate()


def parse_preset(name: str) -> List[Tuple[str, int]]:
    """``"St.1 Se.3 Te.3"`` or ``"St1Se3Te3"`` -> [(structural, 1), (semantic, 3), (texture, 3)]."""
    text = PRESETS.get(name, name)
    parts = re.findall(r"(St|Se|Te)\.?\s*(\d+)", text)
    if not parts or "".join(a + b for a, b in parts) != re.sub(r"[\s.]", "", text):
        raise InvalidParameterError(f"cannot parse plan {name!r}; presets: {', '.join(PRESETS)}")
    abbrev = {"St": STRUCTURAL, "Se": SEMANTIC, "Te": TEXTURE}
    return [(abbrev[a], int(b)) for a, b in parts]


def make_plan(preset: str, sizes: Sequence[Tuple[int, int]], **stage_kwargs) -> StagePlan:
    """Expand a preset over the schedule sizes. The preset must cover ``len(sizes)`` stages."""
    kinds = [kind for kind, count in parse_preset(preset) for _ in range(count)]
    if len(kinds) != len(sizes):
        raise InvalidParameterError(f"plan {preset!r} has {len(kinds)} stages but the schedule has {len(sizes)}")
    specs = []
    for i, (kind, size) in enumerate(zip(kinds, sizes)):
        kw = dict(stage_kwargs)
        if i > 0 or kind != STRUCTURAL:
            kw["pe_channels"] = 0
        specs.append(StageSpec(index=i, kind=kind, input_size=size, **kw))
    return StagePlan(specs=specs, name=preset).validate()


def plan_stage_count(preset: str) -> int:
    return sum(count for _, count in parse_preset(preset))


# --- positional encoding ----------------------------------------------------

def positional_encoding(height: int, width: int, channels: int) -> torch.Tensor:
    """Sinusoidal 2-D encoding of shape (channels, height, width).

    Channel pair ``(2j, 2j+1)`` holds ``sin`` / ``cos`` of ``pos / 10000**(2j/channels)``,
    where ``pos`` is the row index for even ``j`` and the column index for odd ``j``.
    """
    if channels < 2 or channels % 2:
        raise InvalidParameterError(f"channels must be even and >= 2, got {channels}")
    rows = torch.arange(height, dtype=torch.float64).view(height, 1).expand(height, width)
    cols = torch.arange(width, dtype=torch.float64).view(1, width).expand(height, width)
    pe = torch.empty(channels, height, width, dtype=torch.float64)
    for j in range(channels // 2):
        pos = rows if j % 2 == 0 else cols
        angle = pos / 10000.0 ** (2 * j / channels)
        pe[2 * j] = torch.sin(angle)
        pe[2 * j + 1] = torch.cos(angle)
    return pe.float()


# --- building blocks --------------------------------------------------------

def _norm(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    if kind == "none":
        return nn.Identity()
    raise InvalidParameterError(f"unknown norm {kind!r}; valid: instance, none")


class ConvGenerator(nn.Module):
    """``layers`` same-padded convolutions; leaky-ReLU hidden layers, tanh output."""

    def __init__(self, in_channels, channels=32, layers=5, kernel=3, norm="instance", out_channels=3):
        super().__init__()
        blocks = []
        c = in_channels
        for _ in range(layers - 1):
            blocks += [nn.Conv2d(c, channels, kernel, padding=kernel // 2), _norm(norm, channels),
                       nn.LeakyReLU(0.2)]
            c = channels
        self.body = nn.Sequential(*blocks)
        self.head = nn.Conv2d(c, out_channels, kernel, padding=kernel // 2)

    def zero_head(self):
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        return self

    def forward(self, x):
        return torch.tanh(self.head(self.body(x)))


class NoiseGenerator(nn.Module):
    """Stage-0 generator: spatial noise (plus optional positional encoding) to image."""

    def __init__(self, spec: StageSpec):
        super().__init__()
        self.noise_dim = spec.noise_dim
        self.pe_channels = spec.pe_channels
        self.net = ConvGenerator(spec.noise_dim + spec.pe_channels, spec.channels, spec.conv_layers,
                                 spec.kernel, spec.norm)

    def with_encoding(self, noise):
        if not self.pe_channels:
            return noise
        h, w = noise.shape[-2:]
        pe = positional_encoding(h, w, self.pe_channels).to(noise)
        return torch.cat([noise, pe.unsqueeze(0).expand(noise.shape[0], -1, -1, -1)], dim=1)

    def forward(self, noise):
        if noise.shape[1] != self.noise_dim:
            raise FormatError(f"expected {self.noise_dim} noise channels, got {noise.shape[1]}")
        return self.net(self.with_encoding(noise))


class FCDiscriminator(nn.Module):
    """Three stride-2 convolutions and one fully connected layer; one score per image."""

    def __init__(self, spec: StageSpec):
        super().__init__()
        c = spec.channels
        self.features = nn.Sequential(
            nn.Conv2d(3, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
        )
        h, w = spec.input_size
        with torch.no_grad():
            flat = self.features(torch.zeros(1, 3, h, w)).numel()
        self.fc = nn.Linear(flat, 1)

    def forward(self, x):
        return self.fc(self.features(x).flatten(1)).squeeze(1)


class PatchDiscriminator(nn.Module):
    """``layers`` unpadded convolutions; emits a (B, 1, H', W') score map.

    Each 3x3 layer trims one pixel per border, so ``H' = H - layers*(kernel-1)``.
    """

    def __init__(self, channels=32, layers=5, kernel=3):
        super().__init__()
        blocks = []
        c = 3
        for _ in range(layers - 1):
            blocks += [nn.Conv2d(c, channels, kernel), nn.LeakyReLU(0.2)]
            c = channels
        blocks.append(nn.Conv2d(c, 1, kernel))
        self.net = nn.Sequential(*blocks)
        self.layers, self.kernel = layers, kernel

    def output_size(self, h, w):
        trim = self.layers * (self.kernel - 1)
        return h - trim, w - trim

    def forward(self, x):
        return self.net(x)


def build_structural_generator(spec: StageSpec) -> NoiseGenerator:
    if spec.kind != STRUCTURAL:
        raise InvalidParameterError(f"stage {spec.index} is {spec.kind}, not structural")
    return NoiseGenerator(spec)


def build_fc_discriminator(spec: StageSpec) -> FCDiscriminator:
    if spec.kind != STRUCTURAL:
        raise InvalidParameterError(f"stage {spec.index} is {spec.kind}, not structural")
    return FCDiscriminator(spec)


def build_conv_stage(spec: StageSpec) -> Tuple[ConvGenerator, PatchDiscriminator]:
    if spec.kind not in (SEMANTIC, TEXTURE):
        raise InvalidParameterError(f"stage {spec.index} is {spec.kind}; expected semantic or texture")
    gen = ConvGenerator(3, spec.channels, spec.conv_layers, spec.kernel, spec.norm)
    if spec.kind == TEXTURE and spec.zero_head:
        gen.zero_head()
    return gen, PatchDiscriminator(spec.channels, spec.conv_layers, spec.kernel)


def build_stage(spec: StageSpec) -> Tuple[nn.Module, nn.Module]:
    """Generator and critic for any stage.

    A texture stage at index 0 is the single-image baseline: noise in, patch critic.
    """
    if spec.kind == STRUCTURAL:
        return build_structural_generator(spec), build_fc_discriminator(spec)
    if spec.index == 0:
        return NoiseGenerator(replace(spec, pe_channels=0)), PatchDiscriminator(spec.channels, spec.conv_layers,
                                                                                spec.kernel)
    return build_conv_stage(spec)


# --- forward rules ----------------------------------------------------------

def texture_forward(generator: nn.Module, y_prev: torch.Tensor, target_size) -> torch.Tensor:
    """Residual step: ``clamp(up(y_prev) + G(up(y_prev)), -1, 1)``."""
    up = upsample(y_prev, target_size)
    if tuple(up.shape[-2:]) != tuple(target_size):
        raise RuntimeError(f"upsample produced {tuple(up.shape[-2:])}, wanted {tuple(target_size)}")
    return (up + generator(up)).clamp(-1.0, 1.0)


def semantic_forward(generator: nn.Module, y_prev: torch.Tensor, target_size) -> torch.Tensor:
    """Non-residual step: ``G(up(y_prev))``."""
    return generator(upsample(y_prev, target_size))


def stage_forward(spec: StageSpec, generator: nn.Module, y_prev: Optional[torch.Tensor] = None,
                  noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    if spec.index == 0:
        return generator(noise)
    if spec.kind == SEMANTIC:
        return semantic_forward(generator, y_prev, spec.input_size)
    return texture_forward(generator, y_prev, spec.input_size)
