"""
Compound scaling of depth, width and resolution
===============================================

Search a small grid for the best (depth, width, resolution) triple whose cost
d * w^2 * r^2 is about 2, then raise it to a power to grow the network.
"""

from oidkit.scaling import (
    B0_PLAN,
    BUILTIN_ORACLES,
    compound_scale,
    constraint_value,
    default_grid,
    grid_scan,
    grid_search_base,
    plan_variant,
)

oracle = BUILTIN_ORACLES["separable-concave"]
grid = default_grid()
records = grid_scan(oracle, grid)
print(len(records), "triples,", sum(r.feasible for r in records), "within budget")

base = grid_search_base(oracle, grid)
print("base:", base, "cost", round(constraint_value(base), 4))

# Cost grows as 2^phi
for phi in range(4):
    t = compound_scale(base, phi)
    print(phi, [round(v, 3) for v in t.as_tuple()], round(constraint_value(t), 3))

# Keep the input resolution fixed and deepen the fourth stage instead
plan = plan_variant(B0_PLAN, compound_scale(base, 3), fix_resolution=True, stage4_extra=2)
print(B0_PLAN.block_counts, "->", plan.block_counts, "resolution", plan.resolution)
