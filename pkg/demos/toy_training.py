"""
A three-stage toy model
=======================

Structure, semantics and texture, one stage each, trained on a 64x64
procedural image with the mock prior backends. Takes a few minutes on CPU.
"""

import sys
import time

import numpy as np
import torch

from tiergan.imgio import write_image
from tiergan.priors import BroadcastBackend, MockExtractor
from tiergan.pyramid import upsample
from tiergan.tasks import sample
from tiergan.training import PriorConfig, StageConfig, StructuralConfig, TrainConfig, train_pipeline

out = sys.argv[1] if len(sys.argv) > 1 else "toy_run"

# a sky gradient over striped ground, in [-1, 1]
yy, xx = np.mgrid[0:64, 0:64] / 63.0
img = np.zeros((64, 64, 3), np.float32)
img[..., 2] = 1 - yy
img[..., 1] = np.where(yy > 0.6, 0.5 + 0.3 * np.sin(xx * 25), 0.2)
img = img * 2 - 1

cfg = TrainConfig(structural=StructuralConfig(epochs=200), stage=StageConfig(epochs=200))
prior = PriorConfig(per_stddev=4, copies=12, invert_steps=200)

t0 = time.time()
model = train_pipeline(img, "St1Se1Te1", cfg, backend=BroadcastBackend((3, 8, 8), (64, 64)),
                       extractor=MockExtractor(), prior=prior, checkpoint_dir=f"{out}/checkpoint")
print(f"trained in {time.time() - t0:.0f}s, sizes {model.schedule.sizes}")

# the top texture stage should recover some of what upsampling alone misses
N = model.plan.N
top = model.pyramid[N].unsqueeze(0)
base = torch.mean((upsample(model.pyramid[N - 1].unsqueeze(0), model.schedule.sizes[N]) - top) ** 2).item()
rec = torch.mean((model.reconstruct_stage(N) - top) ** 2).item()
print(f"reconstruction MSE {rec:.2e} vs upsampling only {base:.2e}")

for i, s in enumerate(sample(model, 4, seed=0)):
    write_image(f"{out}/sample_{i}.png", s)
print(f"samples written to {out}/")
