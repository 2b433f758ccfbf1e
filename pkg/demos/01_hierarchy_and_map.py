"""
Hierarchical labels and mean average precision
==============================================

A detection of "car" is also a detection of "vehicle". Scoring a detector
on a label tree means copying every box up to its ancestors before matching.
"""

from oidkit import DATA_DIR, load_hierarchy
from oidkit.evaluation import confusable_categories, confusion_matrix, evaluate_flat, hierarchical_map
from oidkit.io import read_detections, read_ground_truth
from oidkit.labelspace import expand_ground_truth

h = load_hierarchy(DATA_DIR / "toy_hierarchy.json")
gts = read_ground_truth(DATA_DIR / "toy_gt.csv")
dets = read_detections(DATA_DIR / "toy_dets.csv")

for label in h.names:
    print(label, "->", h.ancestors(label))

# Every car and bus box gains a vehicle copy
print(len(gts), "boxes before expansion,", len(expand_ground_truth(h, gts)), "after")

# Flat scoring treats "vehicle" as its own class and gets almost nothing right
flat = evaluate_flat(dets, gts)
tree = hierarchical_map(dets, gts, h)
for label in sorted(tree.ap):
    print(f"{label:15s} flat={flat.ap[label]:.3f} hierarchical={tree.ap[label]:.3f}")
print(f"mAP flat={flat.mAP:.4f} hierarchical={tree.mAP:.4f}")

# Rows are ground truth, columns predictions. Torch boxes called flashlight
# show up off the diagonal, as do buses called cars.
cm = confusion_matrix(dets, gts, h, iou_thr=0.5, score_thr=0.0)
print(cm.labels)
print(cm.counts)

# Candidate extra classes for a car expert: whatever else gets called a car
print(confusable_categories(cm, ["/m/car"], top_n=3))
