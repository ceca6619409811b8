"""Stage size schedules and image pyramids.

Two schedules are available. The cubic schedule grows the shorter image side as

    H_s = H_0 * (1 + s*t + s*(s-1)*(s-2)/k * t**3),   s = 0..N

with ``t`` solved by bisection so that ``H_N`` hits the target size. Its slope
is non-zero at ``s = 0`` and steepens towards the top stages. The geometric
schedule ``H_s = H_N * r**(N-s)`` is kept for comparison.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateScheduleError, FormatError, InvalidParameterError, InvalidScheduleError

MIN_SIDE = 3
BISECT_LO, BISECT_HI, BISECT_TOL = 1e-6, 10.0, 1e-9

Size = Tuple[int, int]


@dataclass
class RescaleSchedule:
    N: int
    base_short: int
    max_long: int
    t: float
    k: float
    sizes: List[Size]
    kind: str = "cubic"
    # Pre-rounding shorter side per stage.
    exact_short: List[float] = field(default_factory=list)

    @property
    def shorter_sides(self) -> List[int]:
        return [min(h, w) for h, w in self.sizes]

    @property
    def r(self) -> float:
        """Equivalent geometric ratio, ``t = 1/r - 1``."""
        return 1.0 / (1.0 + self.t)

    def table(self) -> str:
        lines = [f"{'stage':>5}  {'height':>6}  {'width':>6}"]
        lines += [f"{s:>5}  {h:>6}  {w:>6}" for s, (h, w) in enumerate(self.sizes)]
        return "\n".join(lines)

    def rows(self) -> List[Tuple[int, int, int]]:
        return [(s, h, w) for s, (h, w) in enumerate(self.sizes)]

    def to_dict(self) -> dict:
        return {
            "N": self.N, "base_short": self.base_short, "max_long": self.max_long,
            "t": self.t, "k": self.k, "kind": self.kind,
            "sizes": [list(s) for s in self.sizes], "exact_short": list(self.exact_short),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RescaleSchedule":
        return cls(N=d["N"], base_short=d["base_short"], max_long=d["max_long"], t=d["t"],
                   k=d["k"], sizes=[tuple(s) for s in d["sizes"]], kind=d["kind"],
                   exact_short=list(d.get("exact_short", [])))


def cubic_factor(s, t, k):
    """Growth factor ``H_s / H_0`` of the cubic schedule."""
    return 1.0 + s * t + s * (s - 1) * (s - 2) / k * t ** 3


def capped_size(input_size: Size, max_long: int) -> Size:
    h, w = int(input_size[0]), int(input_size[1])
    long_side = max(h, w)
    if long_side <= max_long:
        return h, w
    scale = max_long / long_side
    return max(MIN_SIDE, int(round(h * scale))), max(MIN_SIDE, int(round(w * scale)))


def solve_t(N: int, k: float, ratio: float) -> float:
    """Bisection for ``cubic_factor(N, t, k) == ratio`` on [1e-6, 10]."""
    lo, hi = BISECT_LO, BISECT_HI
    f_lo = cubic_factor(N, lo, k) - ratio
    f_hi = cubic_factor(N, hi, k) - ratio
    if f_lo > 0 or f_hi < 0:
        raise InvalidScheduleError(
            f"cannot bracket schedule root: factor target {ratio:.6g} not reachable for "
            f"N={N}, k={k} with t in [{lo}, {hi}]")
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if cubic_factor(N, mid, k) - ratio < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_common(input_size, N, base_short, max_long):
    if N < 1:
        raise DegenerateScheduleError(f"need at least one stage above stage 0, got N={N}")
    h, w = input_size
    if min(h, w) < base_short:
        raise InvalidParameterError(f"input {h}x{w} has a side below base_short={base_short}")
    if base_short < MIN_SIDE or max_long < base_short:
        raise InvalidParameterError(f"bad size limits base_short={base_short}, max_long={max_long}")


def _emit_sizes(top: Size, short_exact: List[float]) -> List[Size]:
    h, w = top
    short_top = min(h, w)
    sizes = []
    for short in short_exact[:-1]:
        scale = short / short_top
        sizes.append((max(MIN_SIDE, int(round(h * scale))), max(MIN_SIDE, int(round(w * scale)))))
    sizes.append((h, w))
    return sizes


def make_schedule(input_size: Size, N: int = 6, k: float = 2.0, base_short: int = 32,
                  max_long: int = 256) -> RescaleSchedule:
    """Cubic stage schedule driven by the shorter side.

    The input is first downscaled (if needed) so its longer side is at most
    ``max_long``; that capped size is stage N. Stage 0 has shorter side
    ``base_short`` and every stage keeps the input aspect ratio.
    """
    if k == 0:
        raise InvalidParameterError("k must be non-zero")
    _check_common(input_size, N, base_short, max_long)
    top = capped_size(input_size, max_long)
    ratio = min(top) / base_short
    if ratio <= 1.0:
        raise InvalidScheduleError(f"top shorter side {min(top)} does not exceed base_short={base_short}")
    t = solve_t(N, k, ratio)
    exact = [base_short * cubic_factor(s, t, k) for s in range(N + 1)]
    exact[-1] = float(min(top))
    return RescaleSchedule(N=N, base_short=base_short, max_long=max_long, t=t, k=k,
                           sizes=_emit_sizes(top, exact), kind="cubic", exact_short=exact)


def basic_schedule(input_size: Size, N: int = 6, r: float | None = None, base_short: int = 32,
                   max_long: int = 256) -> RescaleSchedule:
    """Geometric schedule ``H_s = H_N * r**(N-s)``.

    With ``r=None`` the ratio is chosen so that stage 0 lands on ``base_short``.
    An explicit ``r`` is honoured as given, so stage 0 may then differ from
    ``base_short``.
    """
    _check_common(input_size, N, base_short, max_long)
    top = capped_size(input_size, max_long)
    if r is None:
        r = (base_short / min(top)) ** (1.0 / N)
    if not 0.0 < r < 1.0:
        raise InvalidParameterError(f"geometric ratio must lie in (0, 1), got {r}")
    exact = [min(top) * r ** (N - s) for s in range(N + 1)]
    exact[-1] = float(min(top))
    return RescaleSchedule(N=N, base_short=base_short, max_long=max_long, t=1.0 / r - 1.0,
                           k=float("nan"), sizes=_emit_sizes(top, exact), kind="geometric",
                           exact_short=exact)


# --- resampling -------------------------------------------------------------

def as_image(image) -> torch.Tensor:
    """Convert to a float32 tensor of shape (3, H, W) with values in [-1, 1].

    Accepts uint8 HxWx3 arrays (mapped from [0, 255]), float HxWx3 arrays
    already in [-1, 1], or tensors of shape (3, H, W).
    """
    if isinstance(image, torch.Tensor):
        x = image.detach().float()
        if x.ndim != 3 or x.shape[0] != 3:
            raise FormatError(f"expected a (3, H, W) tensor, got {tuple(x.shape)}")
        return x
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"expected an HxWx3 array, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 127.5 - 1.0
    x = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(2, 0, 1).contiguous()
    return x


def resize(x: torch.Tensor, size: Size) -> torch.Tensor:
    """Bicubic resampling of a (3, H, W) or (B, 3, H, W) tensor.

    Downscaling is anti-aliased. Same-size calls return the input unchanged.
    Output is clamped to [-1, 1] to remove bicubic overshoot.
    """
    size = (int(size[0]), int(size[1]))
    if tuple(x.shape[-2:]) == size:
        return x
    batched = x.ndim == 4
    xb = x if batched else x.unsqueeze(0)
    down = size[0] < xb.shape[-2] or size[1] < xb.shape[-1]
    y = F.interpolate(xb, size=size, mode="bicubic", align_corners=False, antialias=down)
    y = y.clamp(-1.0, 1.0)
    return y if batched else y.squeeze(0)


def upsample(x: torch.Tensor, size: Size) -> torch.Tensor:
    """Bicubic upsampling without clamping, so it stays linear in ``x``."""
    size = (int(size[0]), int(size[1]))
    if tuple(x.shape[-2:]) == size:
        return x
    batched = x.ndim == 4
    xb = x if batched else x.unsqueeze(0)
    y = F.interpolate(xb, size=size, mode="bicubic", align_corners=False)
    return y if batched else y.squeeze(0)


@dataclass
class ImagePyramid:
    levels: List[torch.Tensor]
    schedule: RescaleSchedule
    value_range: Tuple[float, float] = (-1.0, 1.0)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, s):
        return self.levels[s]


def build_pyramid(image, schedule: RescaleSchedule) -> ImagePyramid:
    x = as_image(image)
    if x.min() < -1.0 - 1e-6 or x.max() > 1.0 + 1e-6:
        raise FormatError("image values must lie in [-1, 1]")
    levels = [resize(x, size).clone() for size in schedule.sizes]
    return ImagePyramid(levels=levels, schedule=schedule)
