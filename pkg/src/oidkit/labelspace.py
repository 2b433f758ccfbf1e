"""Hierarchical label space: parent links, ambiguity groups and box expansion.

The hierarchy is a DAG (a child may have several parents).  Ambiguity groups
hold labels that annotators confuse with each other (Torch / Flashlight) but
that are not related by the parent relation.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .boxes import Detection, GroundTruthBox
from .errors import HierarchyError

ANCESTORS = "ancestors"
ANCESTORS_AMBIGUITY = "ancestors+ambiguity"
EXPANSION_MODES = (ANCESTORS, ANCESTORS_AMBIGUITY)


@dataclass(frozen=True)
class LabelHierarchy:
    names: Mapping[str, str]
    parents: Mapping[str, tuple[str, ...]]
    ambiguity_groups: tuple[frozenset, ...] = ()
    _ancestors: Mapping = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table = {n: _ancestor_order(self.parents, n) for n in self.names}
        object.__setattr__(self, "_ancestors", MappingProxyType(table))

    @property
    def nodes(self) -> frozenset:
        return frozenset(self.names)

    def __contains__(self, label: str) -> bool:
        return label in self.names

    def check(self, label: str) -> None:
        if label not in self.names:
            raise HierarchyError(f"unknown label {label!r}")

    def children(self, label: str) -> list[str]:
        self.check(label)
        return sorted(c for c, ps in self.parents.items() if label in ps)

    def ancestors(self, label: str) -> tuple[str, ...]:
        return ancestors(self, label)

    def partners(self, label: str) -> tuple[str, ...]:
        """Other members of every ambiguity group containing ``label``."""
        self.check(label)
        out = set()
        for g in self.ambiguity_groups:
            if label in g:
                out |= g
        out.discard(label)
        return tuple(sorted(out))

    def levels(self) -> dict[str, int]:
        """Depth of every node; roots are level 1, a child is one below its deepest parent."""
        depth: dict[str, int] = {}

        def visit(n):
            if n not in depth:
                ps = self.parents.get(n, ())
                depth[n] = 1 + max((visit(p) for p in ps), default=0)
            return depth[n]

        for n in sorted(self.names):
            visit(n)
        return depth

    def parent_nodes(self) -> list[str]:
        return sorted({p for ps in self.parents.values() for p in ps})

    @classmethod
    def flat(cls, labels: Iterable[str]) -> "LabelHierarchy":
        """A parentless hierarchy over ``labels``."""
        return cls(MappingProxyType({l: l for l in sorted(set(labels))}), MappingProxyType({}))


def _fail(msg: str):
    raise HierarchyError(msg)


def load_hierarchy(document) -> LabelHierarchy:
    """Build and validate a hierarchy from a parsed JSON document.

    ``document`` may be a mapping, a JSON string, or a path to a JSON file.
    """
    if isinstance(document, Path) or (
        isinstance(document, str) and not document.lstrip().startswith("{")
    ):
        document = json.loads(Path(document).read_text())
    elif isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, Mapping) or "nodes" not in document:
        _fail("malformed hierarchy document: expected an object with a 'nodes' list")

    names: dict[str, str] = {}
    for node in document["nodes"]:
        if not isinstance(node, Mapping) or not node.get("id"):
            _fail(f"malformed node entry {node!r}")
        nid = str(node["id"])
        if nid in names:
            _fail(f"duplicate id {nid!r}")
        names[nid] = str(node.get("name") or nid)

    parents: dict[str, list[str]] = {}
    for edge in document.get("edges", []):
        try:
            child, parent = str(edge["child"]), str(edge["parent"])
        except (KeyError, TypeError):
            _fail(f"malformed edge entry {edge!r}")
        for end in (child, parent):
            if end not in names:
                _fail(f"dangling edge {child!r} -> {parent!r}: unknown id {end!r}")
        if child == parent:
            _fail(f"self-edge on {child!r}")
        if parent not in parents.setdefault(child, []):
            parents[child].append(parent)

    frozen_parents = {c: tuple(sorted(ps)) for c, ps in parents.items()}
    _check_acyclic(names, frozen_parents)

    groups = []
    for raw in document.get("ambiguity_groups", []):
        g = frozenset(str(x) for x in raw)
        for lab in g:
            if lab not in names:
                _fail(f"ambiguity group references unknown id {lab!r}")
        if len(g) >= 2:
            groups.append(g)

    h = LabelHierarchy(
        MappingProxyType(names),
        MappingProxyType(frozen_parents),
        tuple(sorted(groups, key=sorted)),
    )
    for g in h.ambiguity_groups:
        for a in g:
            anc = set(ancestors(h, a))
            for b in g:
                if b in anc:
                    _fail(f"ambiguity pair {a!r}/{b!r} is also an ancestor relation")
    return h


def _check_acyclic(names, parents) -> None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(names, WHITE)
    for start in sorted(names):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(parents.get(start, ())))]
        color[start] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
            elif color[nxt] == GREY:
                _fail(f"cycle detected through {nxt!r}")
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(parents.get(nxt, ()))))


def hierarchy_from_openimages(tree: Mapping, names: Mapping[str, str] | None = None,
                              skip_root: bool = True) -> LabelHierarchy:
    """Convert the nested ``LabelName`` / ``Subcategory`` tree used by Open Images.

    Convenience only; ``names`` maps ids to display names (the class
    description CSV).  The synthetic root is dropped by default.
    """
    names = names or {}
    nodes: dict[str, str] = {}
    edges: list[dict] = []

    def walk(node, parent, top):
        lid = node["LabelName"]
        drop = top and skip_root
        if not drop:
            nodes.setdefault(lid, names.get(lid, lid))
            if parent is not None:
                edges.append({"child": lid, "parent": parent})
        for sub in node.get("Subcategory", []):
            walk(sub, None if drop else lid, False)

    walk(tree, None, True)
    return load_hierarchy({"nodes": [{"id": k, "name": v} for k, v in nodes.items()],
                           "edges": edges})


def ancestors(h: LabelHierarchy, label: str) -> tuple[str, ...]:
    """Strict ancestors of ``label``, nearest first.

    Order is topological over the ancestor sub-graph (a node precedes its own
    parents) with ties broken by id.
    """
    h.check(label)
    return h._ancestors[label]


def _ancestor_order(parents: Mapping[str, tuple[str, ...]], label: str) -> tuple[str, ...]:
    found: set[str] = set()
    stack = list(parents.get(label, ()))
    while stack:
        p = stack.pop()
        if p not in found:
            found.add(p)
            stack.extend(parents.get(p, ()))

    # in-degree within the ancestor sub-graph; edges out of `label` don't count
    indeg = dict.fromkeys(found, 0)
    for n in found:
        for p in parents.get(n, ()):
            indeg[p] += 1
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for p in parents.get(n, ()):
            indeg[p] -= 1
            if indeg[p] == 0:
                heapq.heappush(heap, p)
    return tuple(order)


def expand_ground_truth(h: LabelHierarchy, gts: Sequence[GroundTruthBox]) -> list[GroundTruthBox]:
    """Add one copy of each box for every strict ancestor of its label.

    Input boxes are all kept.  An ancestor copy is skipped when the same
    (image, label, box) is already present, which makes the operation
    idempotent and collapses diamonds.
    """
    for g in gts:
        h.check(g.label)
    seen = {(g.image_id, g.label, g.box) for g in gts}
    out = list(gts)
    for g in gts:
        for a in ancestors(h, g.label):
            key = (g.image_id, a, g.box)
            if key not in seen:
                seen.add(key)
                out.append(g.with_label(a))
    return out


def expand_detections(h: LabelHierarchy, dets: Sequence[Detection],
                      mode: str = ANCESTORS) -> list[Detection]:
    """Duplicate detections to ancestors (and ambiguity partners).

    Input detections are all kept.  Copies keep box and score; a copy is only
    added when its (image, label, box) is not already an input detection, and
    copies colliding with each other keep the highest score.
    """
    if mode not in EXPANSION_MODES:
        raise ValueError(f"unknown expansion mode {mode!r}; expected one of {EXPANSION_MODES}")
    for d in dets:
        h.check(d.label)
    present = {(d.image_id, d.label, d.box) for d in dets}
    copies: dict[tuple, Detection] = {}
    for d in dets:
        targets = list(ancestors(h, d.label))
        if mode == ANCESTORS_AMBIGUITY:
            targets.extend(h.partners(d.label))
        for lab in targets:
            key = (d.image_id, lab, d.box)
            if key in present:
                continue
            cur = copies.get(key)
            if cur is None or d.score > cur.score:
                copies[key] = d.with_label(lab)
    return [*dets, *copies.values()]
