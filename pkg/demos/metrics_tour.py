"""
SIFID and SSIM diversity
========================

Both metrics on synthetic corruptions of one image, with the mock feature
extractor standing in for a pretrained network.
"""

import numpy as np

from tiergan.metrics import diversity, frechet_distance, sifid, ssim
from tiergan.priors import MockExtractor

rng = np.random.default_rng(0)
yy, xx = np.mgrid[0:96, 0:96] / 95.0
x = np.stack([np.sin(6 * xx), np.cos(4 * yy), xx * yy * 2 - 1], axis=-1).astype(np.float32)

# the 1-D case by hand: (0 - 1)^2 + 1 + 1 - 2 = 1
print("FD 1-D:", frechet_distance([0.0], [[1.0]], [1.0], [[1.0]]))

ext = MockExtractor()
for sigma in (0.0, 0.05, 0.2, 0.5):
    y = np.clip(x + sigma * rng.normal(size=x.shape), -1, 1).astype(np.float32)
    print(f"noise {sigma:4.2f}  SIFID {sifid(x, y, ext):.5f}  SSIM {ssim(x, y):.4f}")

# lower mean SSIM against the original means a more varied sample set
shifted = [np.roll(x, k, axis=1) for k in (0, 8, 24)]
print("diversity of shifted copies:", round(diversity(x, shifted), 4))
