"""Sampling and guide-injection tasks: editing, harmonization and paint-to-image."""
from __future__ import annotations

from typing import List, Optional

import numpy as np
import torch
from scipy import ndimage

from .errors import FormatError, InvalidParameterError
from .pyramid import as_image, resize
from .training import TrainedModel


def sample(model: TrainedModel, count: int = 1, seed: int = 0) -> List[torch.Tensor]:
    """Draw ``count`` images at the top-level size. Same seed, same images."""
    if not model.complete:
        raise InvalidParameterError(f"model has {model.trained} of {len(model.plan.specs)} stages trained")
    gen = torch.Generator().manual_seed(seed)
    out = []
    with torch.no_grad():
        for _ in range(count):
            out.append(model.run(0, noise=model.noise(1, gen))[0])
    return out


def inject(model: TrainedModel, guide, entry_stage: int = 1) -> torch.Tensor:
    """Use a subsampled ``guide`` as the output of stage ``entry_stage - 1`` and run the rest."""
    N = len(model.plan.specs) - 1
    if not 1 <= entry_stage <= N:
        raise InvalidParameterError(f"entry_stage must be in [1, {N}], got {entry_stage}")
    if model.trained <= N:
        raise InvalidParameterError("model is not fully trained")
    y = resize(as_image(guide), model.schedule.sizes[entry_stage - 1]).unsqueeze(0)
    with torch.no_grad():
        return model.run(entry_stage, y_prev=y)[0]


def feather_weights(mask: np.ndarray, radius: Optional[int] = None) -> np.ndarray:
    """Dilate a binary mask by ``radius`` then ramp linearly to zero over another ``radius``.

    Pixels inside the dilated mask get weight 1 exactly; pixels farther than
    ``2 * radius`` from the mask get 0 exactly.
    """
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask[..., 0] if mask.shape[-1] in (1, 3) else mask[0]
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise FormatError("mask must be binary (values 0 and 1 only)")
    mask = mask.astype(bool)
    if radius is None:
        radius = max(1, int(round(0.02 * max(mask.shape))))
    if not mask.any():
        return np.zeros(mask.shape)
    dilated = ndimage.binary_dilation(mask, iterations=radius) if radius > 0 else mask
    if dilated.all():
        return np.ones(mask.shape)
    dist = ndimage.distance_transform_edt(~dilated)
    return np.clip(1.0 - dist / max(radius, 1), 0.0, 1.0)


def blend(synthesis: torch.Tensor, original: torch.Tensor, weights: np.ndarray) -> torch.Tensor:
    w = torch.from_numpy(weights).to(original.dtype)
    return synthesis * w + original * (1 - w)


def edit_composite(model: TrainedModel, edited, original, mask, entry_stage: int = 1,
                   radius: Optional[int] = None) -> torch.Tensor:
    """Run the edited image through the model from ``entry_stage`` and paste the
    result back into ``original`` over the feathered mask."""
    edited, original = as_image(edited), as_image(original)
    mask = np.asarray(mask)
    if edited.shape != original.shape or mask.shape[:2] != tuple(original.shape[-2:]):
        raise FormatError("edited, original and mask must share the same size")
    weights = feather_weights(mask, radius)
    synthesis = resize(inject(model, edited, entry_stage), original.shape[-2:])
    return blend(synthesis, original, weights)


def harmonize(model: TrainedModel, composite, original, mask, entry_stage: int = 1,
              radius: Optional[int] = None) -> torch.Tensor:
    """Blend a pasted object into the background; same procedure as editing."""
    return edit_composite(model, composite, original, mask, entry_stage, radius)


def paint_to_image(model: TrainedModel, painting, entry_stage: int = 1) -> torch.Tensor:
    return inject(model, painting, entry_stage)
