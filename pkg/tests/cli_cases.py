"""One invocation per subcommand over the bundled toy data."""

from oidkit import DATA_DIR
from oidkit.cli import main

D = DATA_DIR


def cases(out):
    """(name, argv, output files) with outputs placed under ``out``."""
    hier = ["--hierarchy", str(D / "toy_hierarchy.json")]
    return [
        ("evaluate", [*hier, "evaluate", "-d", str(D / "toy_dets.csv"), "-g", str(D / "toy_gt.csv"),
                      "-o", str(out / "ap.csv")], ["ap.csv"]),
        ("ensemble", ["ensemble", "-m", str(D / "toy_manifest.json"), "-o", str(out / "fused.csv")],
         ["fused.csv"]),
        ("nms-search", [*hier, "--jobs", "2", "nms-search", "-d", str(D / "toy_dets.csv"),
                        "-g", str(D / "toy_gt.csv"), "-o", str(out / "thr.csv")], ["thr.csv"]),
        ("sample", ["--seed", "11", "sample", "-g", str(D / "toy_gt.csv"), "-n", "500",
                    "--draws", str(out / "draws.csv"), "--histogram", str(out / "hist.csv")],
         ["draws.csv", "hist.csv"]),
        ("scale-search", ["scale-search", "--grid", str(D / "toy_scale_grid.json"),
                          "-o", str(out / "scan.csv"), "--phi", "2",
                          "--plan-output", str(out / "plan.json")], ["scan.csv", "plan.json"]),
        ("augment", ["--seed", "5", "augment", "--image", str(D / "toy_image.ppm"),
                     "--boxes", str(D / "toy_boxes.csv"), "--output-image", str(out / "aug.ppm"),
                     "--output-boxes", str(out / "aug_boxes.csv")], ["aug.ppm", "aug_boxes.csv"]),
        ("loss-check", ["loss-check", "-i", str(D / "toy_logits.csv"), "-o", str(out / "loss.csv")],
         ["loss.csv"]),
        ("expand", [*hier, "expand", "-d", str(D / "toy_dets.csv"), "--mode", "ancestors+ambiguity",
                    "-o", str(out / "expanded.csv")], ["expanded.csv"]),
    ]


def run_all(out):
    """Run every case; returns {name: (exit code, {file: bytes})}."""
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for name, argv, files in cases(out):
        code = main(argv)
        results[name] = (code, {f: (out / f).read_bytes() for f in files if (out / f).exists()})
    return results
