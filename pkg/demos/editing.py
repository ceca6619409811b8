"""
Editing, harmonization and paint-to-image
=========================================

Run demos/toy_training.py first; this script reuses its checkpoint.
"""

import sys

import numpy as np

from tiergan.imgio import write_image
from tiergan.tasks import edit_composite, feather_weights, harmonize, paint_to_image
from tiergan.training import TrainedModel

out = sys.argv[1] if len(sys.argv) > 1 else "toy_run"
model = TrainedModel.load(f"{out}/checkpoint")
original = model.pyramid[-1]

# a crude edit: paint a flat patch into the middle
edited = original.clone()
edited[:, 24:40, 24:40] = 0.6
mask = np.zeros((64, 64))
mask[24:40, 24:40] = 1

# the feather ramp is what keeps the seam soft
w = feather_weights(mask, radius=2)
print("weights along row 32:", np.round(w[32, 18:30], 2))

write_image(f"{out}/edited.png", edit_composite(model, edited, original, mask, radius=2))
write_image(f"{out}/harmonized.png", harmonize(model, edited, original, mask, radius=2))

# a painting only needs the rough layout; it is subsampled to the first level
painting = np.zeros((32, 32, 3), np.float32)
painting[:20] = (-0.8, -0.2, 0.9)
painting[20:] = (-0.5, 0.4, -0.3)
write_image(f"{out}/painted.png", paint_to_image(model, painting))
print(f"results written to {out}/")
