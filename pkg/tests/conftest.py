import sys
from pathlib import Path

import pytest

from oidkit import DATA_DIR, BBox, Detection, GroundTruthBox, load_hierarchy
from oidkit.io import read_detections, read_ground_truth

sys.path.insert(0, str(Path(__file__).parent))


def det(img, label, score, *box):
    return Detection(img, label, score, BBox(*box))


def gt(img, label, *box):
    return GroundTruthBox(img, label, BBox(*box))


def hierarchy(nodes, edges=(), groups=()):
    return load_hierarchy({
        "nodes": [{"id": n, "name": n} for n in nodes],
        "edges": [{"child": c, "parent": p} for c, p in edges],
        "ambiguity_groups": [list(g) for g in groups],
    })


@pytest.fixture
def chain():
    return hierarchy("ABC", [("B", "A"), ("C", "B")])


@pytest.fixture
def diamond():
    return hierarchy("ABCD", [("B", "A"), ("C", "A"), ("D", "B"), ("D", "C")])


@pytest.fixture(scope="session")
def toy():
    return {
        "hierarchy": load_hierarchy(DATA_DIR / "toy_hierarchy.json"),
        "gts": read_ground_truth(DATA_DIR / "toy_gt.csv"),
        "dets": read_detections(DATA_DIR / "toy_dets.csv"),
        "dets_b": read_detections(DATA_DIR / "toy_dets_model_b.csv"),
    }


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
