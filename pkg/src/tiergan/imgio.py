"""Lossless image I/O. Tensors are (3, H, W) float in [-1, 1]; files are 8-bit RGB PNG."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .pyramid import as_image


def read_image(path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return as_image(arr)


def to_uint8(x: torch.Tensor) -> np.ndarray:
    arr = ((x.detach().cpu().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    return arr.permute(1, 2, 0).numpy()


def write_image(path, x: torch.Tensor) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(to_uint8(x)).save(tmp, format="PNG")
    os.replace(tmp, path)


def read_mask(path) -> np.ndarray:
    """Read a mask image as a 2-D array; values are kept so callers can validate binariness."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return arr
