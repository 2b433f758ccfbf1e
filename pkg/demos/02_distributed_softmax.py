"""
Softmax cross-entropy with several correct labels
=================================================

When a box is both a "car" and a "vehicle" the target spreads its mass evenly
over the two. With a single active label this reduces to the usual loss.
"""

import math

import numpy as np

from oidkit import DATA_DIR, load_hierarchy
from oidkit.loss import (
    build_label_distribution,
    distributed_softmax_ce,
    distributed_softmax_grad,
    finite_diff_check,
    standard_softmax_ce,
)

h = load_hierarchy(DATA_DIR / "toy_hierarchy.json")
index = {label: i for i, label in enumerate(h.names)}
print(index)

y = build_label_distribution(h, "/m/car", index)
print("target for a car box:", y)

x = np.array([0.2, 2.5, -1.0, 0.0, 1.8])
print("loss:", distributed_softmax_ce(x, y))
print("grad:", distributed_softmax_grad(x, y))
print("worst finite-difference gap:", finite_diff_check(x, y))

# One active label gives back the standard loss
one = np.eye(5)[index["/m/bus"]]
print(distributed_softmax_ce(x, one), standard_softmax_ce(x, index["/m/bus"]))

# Equal logits cost ln C
print(distributed_softmax_ce(np.zeros(5), one), math.log(5))

# Adding a constant to every logit changes nothing
print(distributed_softmax_ce(x + 100.0, y) - distributed_softmax_ce(x, y))
