import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oidkit import DataError, iou
from oidkit.boxes import batched_nms
from oidkit.ensembling import (
    INVERSE_SQUARE,
    PENALTY,
    ModelRun,
    ThresholdTable,
    WeightTable,
    category_weight,
    classifier_reweight,
    expert_consensus,
    fuse,
    penalized_objective,
    reweight_detections,
    search_nms_thresholds,
    select_threshold,
    weight_table,
)
from oidkit.labelspace import expand_detections, expand_ground_truth

import oracles
from conftest import det


class TestCategoryWeight:
    def test_best_model(self):
        assert category_weight(0.6, 0.4, 0.6, 0.2) == 1.0

    def test_mean_model(self):
        assert category_weight(0.4, 0.4, 0.6, 0.2) == 0.2

    def test_hand_value(self):
        # (0.5-0.4)/(0.6-0.4) + 0.2 (0.6-0.5)/(0.6-0.4) = 0.5 + 0.1
        assert category_weight(0.5, 0.4, 0.6, 0.2) == pytest.approx(0.6, abs=1e-15)

    def test_below_mean_clamped(self):
        assert category_weight(0.1, 0.4, 0.6, 0.3) == 0.3

    def test_all_equal(self):
        assert category_weight(0.5, 0.5, 0.5, 0.1) == 1.0

    def test_bad_args(self):
        with pytest.raises(ValueError):
            category_weight(0.5, 0.4, 0.6, 1.5)
        with pytest.raises(ValueError):
            category_weight(0.5, 0.7, 0.6, 0.1)

    def test_matches_literal_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            mu, t = sorted(rng.uniform(0, 1, 2))
            s = rng.uniform(mu, t)
            a = rng.uniform(0, 1)
            lit = (s - mu) / (t - mu) + a * (t - s) / (t - mu)
            assert category_weight(s, mu, t, a) == pytest.approx(lit, abs=1e-12)


@settings(max_examples=300)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.floats(0, 1))
def test_weight_table_properties(aps, alpha):
    runs = [ModelRun(f"m{i}", (), {"c": s}) for i, s in enumerate(aps)]
    wt = weight_table(runs, alpha)
    w = [wt.get(f"m{i}", "c") for i in range(len(aps))]
    mu, t = min(sum(aps) / len(aps), max(aps)), max(aps)
    for s, wi in zip(aps, w):
        assert alpha <= wi <= 1.0
        if t > mu and s <= mu:
            assert wi == alpha
    # the best model always holds the top weight
    assert w[int(np.argmax(aps))] == max(w)
    if alpha < 1:
        assert {i for i, x in enumerate(w) if x == max(w)} == {i for i, s in enumerate(aps) if s == t}
    # monotone in s
    order = np.argsort(aps, kind="stable")
    ws = [w[i] for i in order]
    assert all(a <= b for a, b in zip(ws, ws[1:]))


@settings(max_examples=300)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_weight_monotone_on_interval(a, b, u, v, alpha):
    mu, t = sorted((a, b))
    s1, s2 = sorted((mu + u * (t - mu), mu + v * (t - mu)))
    assert category_weight(s1, mu, t, alpha) <= category_weight(s2, mu, t, alpha)


class TestWeightTable:
    def test_single_model(self):
        wt = weight_table([ModelRun("m", (), {"a": 0.3, "b": 0.9})], 0.1)
        assert set(wt.weights.values()) == {1.0}

    def test_two_models(self):
        wt = weight_table([ModelRun("good", (), {"c": 0.8}), ModelRun("bad", (), {"c": 0.2})], 0.1)
        assert wt.get("good", "c") == 1.0 and wt.get("bad", "c") == 0.1

    def test_all_equal(self):
        runs = [ModelRun(m, (), {"c": 0.4}) for m in "xyz"]
        assert set(weight_table(runs, 0.3).weights.values()) == {1.0}

    def test_empty(self):
        with pytest.raises(ValueError):
            weight_table([], 0.1)

    def test_ap_range_checked(self):
        with pytest.raises(DataError):
            ModelRun("m", (), {"c": 1.2})


class TestReweight:
    def run(self, score=0.8):
        return ModelRun("m", (det("i", "c", score, 0, 0, 1, 1),), {"c": 0.5})

    def test_identity(self):
        assert reweight_detections(self.run(), WeightTable({("m", "c"): 1.0}, 0.1))[0].score == 0.8

    def test_product(self):
        assert reweight_detections(self.run(), WeightTable({("m", "c"): 0.6}, 0.1))[0].score == pytest.approx(0.48)

    def test_zero(self):
        assert reweight_detections(self.run(), WeightTable({("m", "c"): 0.0}, 0.0))[0].score == 0.0

    def test_missing(self):
        with pytest.raises(DataError):
            reweight_detections(self.run(), WeightTable({}, 0.1))

    def test_preserves_order(self):
        run = ModelRun("m", tuple(det("i", "c", s, 0, 0, 1, 1) for s in (0.9, 0.2, 0.5)), {"c": 0.5})
        out = reweight_detections(run, WeightTable({("m", "c"): 0.37}, 0.1))
        assert np.argsort([d.score for d in out]).tolist() == [1, 2, 0]


class TestClassifier:
    d = det("i", "c", 0.9, 0.1, 0.1, 0.5, 0.5)

    def test_identity(self):
        assert classifier_reweight([self.d], {("i", "c", self.d.box.key()): 1.0}) == [self.d]

    def test_product(self):
        out = classifier_reweight([self.d], {("i", "c", self.d.box.key()): 0.5})
        assert out[0].score == pytest.approx(0.45)

    def test_missing(self):
        assert classifier_reweight([self.d], {}) == [self.d]
        assert classifier_reweight([self.d], {}, drop_missing=True) == []

    def test_range(self):
        with pytest.raises(DataError):
            classifier_reweight([self.d], {("i", "c", self.d.box.key()): 1.5})


class TestExpertConsensus:
    def runs(self):
        r1 = ModelRun("e1", (det("i", "A", 0.5, 0, 0, 1, 1), det("i", "B", 0.6, 0, 0, 1, 1)), {})
        r2 = ModelRun("e2", (det("i", "B", 0.7, 0, 0, 1, 1), det("i", "C", 0.8, 0, 0, 1, 1)), {})
        return r1, r2

    def test_overlap(self):
        out = expert_consensus(self.runs(), {"e1": {"A", "B"}, "e2": {"B", "C"}})
        assert sorted(d.label for d in out) == ["B", "B"]

    def test_single_expert(self):
        assert expert_consensus(self.runs()[:1], {"e1": {"A", "B"}}) == []

    def test_identical_subsets(self):
        r1 = ModelRun("e1", (det("i", "A", 0.5, 0, 0, 1, 1),), {})
        r2 = ModelRun("e2", (det("i", "B", 0.5, 0, 0, 1, 1),), {})
        out = expert_consensus([r1, r2], {"e1": {"A", "B"}, "e2": {"A", "B"}})
        assert len(out) == 2

    def test_outside_subset(self):
        with pytest.raises(DataError):
            expert_consensus(self.runs(), {"e1": {"A"}, "e2": {"B", "C"}})

    def test_output_in_pairwise_intersections(self):
        subsets = {"e1": {"A", "B", "D"}, "e2": {"B", "C"}, "e3": {"C", "D", "E"}}
        runs = [ModelRun(m, tuple(det("i", l, 0.5, 0, 0, 1, 1) for l in sorted(s)), {})
                for m, s in subsets.items()]
        allowed = set().union(*(a & b for a, b in itertools.combinations(subsets.values(), 2)))
        out = expert_consensus(runs, subsets)
        assert {d.label for d in out} == allowed == {"B", "C", "D"}


class TestFuse:
    def test_single_model_is_plain_nms(self, toy):
        run = ModelRun("m", tuple(toy["dets"]), {})
        labels = {d.label for d in toy["dets"]}
        wt = WeightTable({("m", l): 1.0 for l in labels}, 1.0)
        out = fuse([run], wt, ThresholdTable.uniform(labels, 0.5))
        assert sorted(map(repr, out)) == sorted(map(repr, batched_nms(toy["dets"], 0.5)))

    def test_identical_box(self):
        a = ModelRun("a", (det("i", "c", 0.9, 0, 0, 0.5, 0.5),), {})
        b = ModelRun("b", (det("i", "c", 0.7, 0, 0, 0.5, 0.5),), {})
        wt = WeightTable({("a", "c"): 1.0, ("b", "c"): 1.0}, 1.0)
        out = fuse([a, b], wt, ThresholdTable.uniform(["c"], 0.5))
        assert [d.score for d in out] == [0.9]

    def test_disjoint_labels(self):
        a = ModelRun("a", (det("i", "x", 0.9, 0, 0, 0.5, 0.5),), {})
        b = ModelRun("b", (det("i", "y", 0.7, 0, 0, 0.5, 0.5),), {})
        wt = WeightTable({("a", "x"): 1.0, ("b", "y"): 1.0}, 1.0)
        out = fuse([a, b], wt, ThresholdTable.uniform(["x", "y"], 0.5))
        assert [d.label for d in out] == ["x", "y"]

    def test_missing_threshold(self):
        a = ModelRun("a", (det("i", "x", 0.9, 0, 0, 0.5, 0.5),), {})
        with pytest.raises(DataError):
            fuse([a], WeightTable({("a", "x"): 1.0}, 1.0), ThresholdTable({}, 0.5))

    def test_pairwise_iou_bound(self, toy):
        runs = [ModelRun("a", tuple(toy["dets"]), {}), ModelRun("b", tuple(toy["dets_b"]), {})]
        labels = {d.label for r in runs for d in r.detections}
        wt = WeightTable({(r.model_id, l): 0.8 for r in runs for l in labels}, 0.1)
        thr = {l: t for l, t in zip(sorted(labels), (0.3, 0.4, 0.5, 0.6, 0.7))}
        out = fuse(runs, wt, ThresholdTable(thr, 0.5))
        for a, b in itertools.combinations(out, 2):
            if (a.image_id, a.label) == (b.image_id, b.label):
                assert iou(a.box, b.box) <= thr[a.label]


class TestSelectThreshold:
    grid = [0.3, 0.4, 0.5, 0.6, 0.7]

    def test_flat_penalty_picks_default(self):
        assert select_threshold(dict.fromkeys(self.grid, 0.4), 0.5, PENALTY, 1.0)[0] == 0.5

    def test_flat_penalty_default_off_grid(self):
        assert select_threshold(dict.fromkeys([0.3, 0.45, 0.7], 0.4), 0.5, PENALTY, 1.0)[0] == 0.45

    def test_pure_argmax(self):
        prof = {0.3: 0.1, 0.4: 0.2, 0.5: 0.3, 0.6: 0.9, 0.7: 0.4}
        assert select_threshold(prof, 0.5, PENALTY, 0.0)[0] == 0.6

    def test_synthetic_profile_exhaustive(self):
        prof = {0.3: 0.50, 0.4: 0.58, 0.5: 0.60, 0.6: 0.63, 0.7: 0.66}
        want = max(self.grid, key=lambda h: prof[h] - 1.0 * (h - 0.5) ** 2)
        assert select_threshold(prof, 0.5, PENALTY, 1.0)[0] == want == 0.7

    def test_inverse_square_adjacent(self):
        grid = [0.3, 0.4, 0.45, 0.6, 0.7]
        assert select_threshold(dict.fromkeys(grid, 0.5), 0.5, INVERSE_SQUARE)[0] == 0.45

    def test_inverse_square_rejects_default_in_grid(self):
        with pytest.raises(ValueError):
            select_threshold(dict.fromkeys(self.grid, 0.5), 0.5, INVERSE_SQUARE)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            select_threshold({}, 0.5)
        with pytest.raises(ValueError):
            select_threshold({1.0: 0.3}, 0.5)
        with pytest.raises(ValueError):
            select_threshold({0.3: 0.3}, 0.5, PENALTY, -1.0)

    def test_objective(self):
        assert penalized_objective(0.5, 0.4, 0.5, INVERSE_SQUARE) == pytest.approx(100.5)
        assert penalized_objective(0.5, 0.4, 0.5, PENALTY, 2.0) == pytest.approx(0.48)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.floats(0.3, 0.7))
def test_zero_lambda_is_unregularized_argmax(aps, d):
    grid = [0.3, 0.4, 0.5, 0.6, 0.7]
    prof = dict(zip(grid, aps))
    best = max(aps)
    h, obj = select_threshold(prof, d, PENALTY, 0.0)
    assert prof[h] == best == obj
    ties = [g for g in grid if prof[g] == best]
    assert h == min(ties, key=lambda g: (abs(g - d), g))


def _oracle_threshold(dets, gts, label, grid, d, lam):
    """Independent scan: suppress with a plain greedy loop, score with the brute-force AP."""
    ds = [x for x in dets if x.label == label]
    gs = [(g.image_id, g.label, g.box.as_tuple()) for g in gts if g.label == label]
    best = None
    for h in grid:
        kept = []
        for img in sorted({x.image_id for x in ds}):
            group = sorted((x for x in ds if x.image_id == img), key=lambda x: -x.score)
            keep = []
            for x in group:
                if all(iou(x.box, k.box) <= h for k in keep):
                    keep.append(x)
            kept += keep
        ap = oracles.brute_force_ap([(k.image_id, k.label, k.score, k.box.as_tuple()) for k in kept], gs)
        obj = ap - lam * (h - d) ** 2
        key = (-obj, abs(h - d), h)
        if best is None or key < best[0]:
            best = (key, h)
    return best[1]


def test_search_on_toy_data_matches_exhaustive_scan(toy):
    h = toy["hierarchy"]
    pooled = toy["dets"] + toy["dets_b"]
    grid = [0.1, 0.3, 0.5, 0.7, 0.9]
    for lam in (0.0, 1.0):
        tt = search_nms_thresholds(pooled, toy["gts"], h, 0.5, grid, PENALTY, lam)
        eg = expand_ground_truth(h, toy["gts"])
        ed = expand_detections(h, pooled)
        for label in sorted({g.label for g in eg}):
            assert tt.get(label) == _oracle_threshold(ed, eg, label, grid, 0.5, lam)


def test_search_parallel_equals_serial(toy):
    pooled = toy["dets"] + toy["dets_b"]
    a = search_nms_thresholds(pooled, toy["gts"], toy["hierarchy"], 0.5, [0.2, 0.4, 0.6], jobs=1)
    b = search_nms_thresholds(pooled, toy["gts"], toy["hierarchy"], 0.5, [0.2, 0.4, 0.6], jobs=4)
    assert a == b


def test_search_inverse_square_rejects_default(toy):
    with pytest.raises(ValueError):
        search_nms_thresholds(toy["dets"], toy["gts"], None, 0.5, [0.4, 0.5], INVERSE_SQUARE)
