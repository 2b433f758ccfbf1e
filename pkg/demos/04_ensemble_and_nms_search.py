"""
Weighted ensembling and per-class NMS thresholds
================================================

Each model is trusted on a class in proportion to how far its validation AP
sits above the class mean. The pooled boxes are then suppressed with a
threshold picked per class on validation data.
"""

from oidkit import DATA_DIR, load_hierarchy
from oidkit.ensembling import (
    ModelRun,
    ThresholdTable,
    fuse,
    search_nms_thresholds,
    weight_table,
)
from oidkit.evaluation import hierarchical_map
from oidkit.io import read_ap_table, read_detections, read_ground_truth

h = load_hierarchy(DATA_DIR / "toy_hierarchy.json")
gts = read_ground_truth(DATA_DIR / "toy_gt.csv")
runs = [
    ModelRun("a", tuple(read_detections(DATA_DIR / "toy_dets.csv")),
             read_ap_table(DATA_DIR / "toy_ap_model_a.csv")),
    ModelRun("b", tuple(read_detections(DATA_DIR / "toy_dets_model_b.csv")),
             read_ap_table(DATA_DIR / "toy_ap_model_b.csv")),
]

wt = weight_table(runs, alpha=0.1)
for (model, label), w in sorted(wt.weights.items()):
    print(f"{model} {label:15s} {w:.3f}")

pooled = [d for r in runs for d in r.detections]
# lam=0 ignores distance from the default and takes the best-AP threshold
tt = search_nms_thresholds(pooled, gts, h, default_d=0.5,
                           grid=[0.3, 0.4, 0.5, 0.6, 0.7], lam=0.0)
print(dict(tt.thresholds))

for name, table in [("uniform 0.5", ThresholdTable.uniform(tt.thresholds, 0.5)),
                    ("searched", tt)]:
    fused = fuse(runs, wt, table)
    print(f"{name:12s} boxes={len(fused)} mAP={hierarchical_map(fused, gts, h).mAP:.4f}")
for r in runs:
    print(f"model {r.model_id} alone mAP={hierarchical_map(r.detections, gts, h).mAP:.4f}")
