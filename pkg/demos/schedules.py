"""
Cubic versus geometric stage sizes
==================================

The cubic schedule keeps the first three steps on a straight line and
spends the remaining growth near the top, so coarse stages stay close
together while the final stages take large steps.
"""

from tiergan.pyramid import basic_schedule, make_schedule

size = (256, 256)

# the solver finds t so that the top stage lands exactly on the capped size
cubic = make_schedule(size, N=6, k=2.0)
geometric = basic_schedule(size, N=6)
print(f"t = {cubic.t:.6f}   r = {geometric.r:.6f}\n")

print("stage  cubic  geometric")
for s, (a, b) in enumerate(zip(cubic.shorter_sides, geometric.shorter_sides)):
    print(f"{s:5d}  {a:5d}  {b:9d}")

# larger k flattens the cubic term and pushes the schedule toward linear
for k in (1.0, 2.0, 8.0):
    print(f"k={k:<4}", make_schedule(size, N=6, k=k).shorter_sides)

# non-square inputs: the short side starts at 32 and the long side is capped at 256
print(make_schedule((300, 800), N=6).table())
