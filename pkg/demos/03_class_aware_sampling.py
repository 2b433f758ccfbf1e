"""
Class-aware sampling
====================

Drawing images uniformly lets common classes swamp rare ones. Drawing a class
first and then an image containing it evens out how often each class is seen.
"""

import numpy as np

from oidkit import BBox, GroundTruthBox
from oidkit.sampling import build_index, exposure_histogram, imbalance_ratio, sample_epoch

rng = np.random.default_rng(0)
box = BBox(0.1, 0.1, 0.9, 0.9)
gts = [GroundTruthBox(f"p{i}", "person", box) for i in range(900)]
gts += [GroundTruthBox(f"c{i}", "car", box) for i in range(90)]
gts += [GroundTruthBox(f"k{i}", "cooker", box) for i in range(3)]
print("imbalance ratio:", imbalance_ratio(gts))

index = build_index(gts)
stream = sample_epoch(index, 30_000, seed=7)
print(stream.draws[:5])

# Each class shows up about a third of the time
hist = exposure_histogram(stream, index)
for label, n in sorted(hist.items()):
    print(f"{label:8s} {n / len(stream.draws):.3f}")

# The same seed replays the same stream
print(sample_epoch(index, 10, seed=7).draws == stream.draws[:10])
