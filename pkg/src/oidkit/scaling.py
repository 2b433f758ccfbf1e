"""Compound scaling of (depth, width, resolution) coefficients.

The base triple is grid-searched under ``depth * width**2 * resolution**2``
close to a target (2 for one doubling of compute), then raised to a power
to reach larger models.  :func:`plan_variant` turns a scaled triple into a
per-stage block plan, optionally freezing resolution and deepening stage 4.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import shlex
import subprocess
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Optional, Sequence

from .errors import InfeasibleError

DEFAULT_TARGET = 2.0
DEFAULT_TOL = 0.05


@dataclass(frozen=True, order=True)
class ScaleTriple:
    depth: float
    width: float
    resolution: float

    def __post_init__(self):
        if not all(v > 0 for v in self.as_tuple()):
            raise ValueError(f"scale coefficients must be positive: {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.depth, self.width, self.resolution)


@dataclass(frozen=True)
class Stage:
    blocks: int
    width: float = 1.0


@dataclass(frozen=True)
class ArchPlan:
    stages: tuple[Stage, ...]
    resolution: float = 1.0

    def __post_init__(self):
        if not self.stages:
            raise ValueError("a plan needs at least one stage")
        for s in self.stages:
            if s.blocks < 1 or s.width <= 0:
                raise ValueError(f"invalid stage {s}")

    @property
    def block_counts(self) -> list[int]:
        return [s.blocks for s in self.stages]

    def to_json(self) -> str:
        return json.dumps({"resolution": self.resolution,
                           "stages": [asdict(s) for s in self.stages]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ArchPlan":
        doc = json.loads(text)
        return cls(tuple(Stage(int(s["blocks"]), float(s.get("width", 1.0)))
                         for s in doc["stages"]), float(doc.get("resolution", 1.0)))


# Block repeats of the seven MBConv stages of the B0 baseline.
B0_PLAN = ArchPlan(tuple(Stage(n) for n in (1, 2, 2, 3, 3, 4, 1)))


def constraint_value(t: ScaleTriple) -> float:
    return t.depth * t.width ** 2 * t.resolution ** 2


def default_grid(step: float = 0.05) -> dict[str, list[float]]:
    def axis(hi):
        n = int(round((hi - 1.0) / step))
        return [round(1.0 + i * step, 10) for i in range(n + 1)]

    return {"depth": axis(2.0), "width": axis(1.5), "resolution": axis(1.5)}


@dataclass(frozen=True)
class ScanRecord:
    triple: ScaleTriple
    constraint: float
    feasible: bool
    score: Optional[float]


def grid_scan(oracle: Callable[[ScaleTriple], float], grid: Mapping[str, Sequence[float]],
              target: float = DEFAULT_TARGET, tol: float = DEFAULT_TOL) -> list[ScanRecord]:
    """Evaluate ``oracle`` on every feasible grid triple (lexicographic order)."""
    if tol < 0:
        raise ValueError(f"tolerance must be >= 0, got {tol}")
    axes = [list(grid[k]) for k in ("depth", "width", "resolution")]
    if any(not a for a in axes):
        raise InfeasibleError("every grid axis needs at least one value")
    records = []
    for d, w, r in itertools.product(*(sorted(set(a)) for a in axes)):
        t = ScaleTriple(d, w, r)
        c = constraint_value(t)
        ok = abs(c - target) <= tol
        records.append(ScanRecord(t, c, ok, float(oracle(t)) if ok else None))
    return records


def best_of_scan(records: Sequence[ScanRecord], target: float = DEFAULT_TARGET) -> ScaleTriple:
    feasible = [r for r in records if r.feasible]
    if not feasible:
        raise InfeasibleError("no grid triple satisfies the compute constraint")
    best = min(feasible, key=lambda r: (-r.score, abs(r.constraint - target), r.triple.as_tuple()))
    return best.triple


def grid_search_base(oracle: Callable[[ScaleTriple], float],
                     grid: Mapping[str, Sequence[float]] | None = None,
                     target: float = DEFAULT_TARGET, tol: float = DEFAULT_TOL) -> ScaleTriple:
    """Highest-scoring triple with ``|d * w^2 * r^2 - target| <= tol``.

    Ties prefer the smaller constraint deviation, then the lexicographically
    smaller triple.
    """
    grid = grid if grid is not None else default_grid()
    return best_of_scan(grid_scan(oracle, grid, target, tol), target)


def compound_scale(base: ScaleTriple, phi: float) -> ScaleTriple:
    if phi < 0:
        raise ValueError(f"phi must be non-negative, got {phi}")
    return ScaleTriple(base.depth ** phi, base.width ** phi, base.resolution ** phi)


def plan_variant(base: ArchPlan, scaled: ScaleTriple, fix_resolution: bool = True,
                 stage4_extra: int = 0) -> ArchPlan:
    """Apply a scale triple to a stage plan.

    Block counts are multiplied by the depth coefficient and rounded up,
    widths by the width coefficient.  With ``fix_resolution`` the input
    resolution stays at 1; ``stage4_extra`` blocks go to the fourth stage.
    """
    if stage4_extra < 0:
        raise ValueError("stage4_extra must be >= 0")
    if stage4_extra > 0 and len(base.stages) < 4:
        raise ValueError(f"plan has {len(base.stages)} stages; stage 4 does not exist")
    stages = []
    for i, s in enumerate(base.stages):
        # small slack so 10 * 1.1 = 11.000000000000002 rounds to 11
        blocks = max(1, math.ceil(s.blocks * scaled.depth - 1e-9))
        if i == 3:
            blocks += stage4_extra
        stages.append(Stage(blocks, s.width * scaled.width))
    res = 1.0 if fix_resolution else base.resolution * scaled.resolution
    return ArchPlan(tuple(stages), res)


# ---------------------------------------------------------------------------
# synthetic oracles


class SeparableConcave:
    """Negative weighted squared distance to a peak."""

    name = "separable-concave"
    optimum = ScaleTriple(1.25, 1.1, 1.15)

    def __call__(self, t: ScaleTriple) -> float:
        p = self.optimum
        return 1.0 - (
            1.0 * (t.depth - p.depth) ** 2
            + 4.0 * (t.width - p.width) ** 2
            + 4.0 * (t.resolution - p.resolution) ** 2
        )


class RosenbrockValley:
    """Curved valley with a single minimum, mapped to a score in (0, 1]."""

    name = "rosenbrock"
    optimum = ScaleTriple(1.65, 1.05, 1.05)

    def __call__(self, t: ScaleTriple) -> float:
        p = self.optimum
        a, b, c = t.depth - p.depth, t.width - p.width, t.resolution - p.resolution
        f = a ** 2 + 10.0 * (b - a ** 2) ** 2 + 10.0 * (c - b ** 2) ** 2
        return 1.0 / (1.0 + f)


class NoisyPlateau:
    """Flat plateau with deterministic jitter and one narrow bump."""

    name = "noisy-plateau"
    optimum = ScaleTriple(1.05, 1.2, 1.15)

    def __call__(self, t: ScaleTriple) -> float:
        key = ",".join(f"{v:.6f}" for v in t.as_tuple()).encode()
        jitter = int.from_bytes(hashlib.sha256(key).digest()[:4], "big") / 2 ** 32 * 1e-3
        dist2 = sum((x - y) ** 2 for x, y in zip(t.as_tuple(), self.optimum.as_tuple()))
        return 0.5 + jitter + 0.4 * math.exp(-dist2 / 0.001)


BUILTIN_ORACLES = {o.name: o for o in (SeparableConcave(), RosenbrockValley(), NoisyPlateau())}


class ExecOracle:
    """Score triples with an external command.

    The child reads ``depth width resolution`` lines on stdin and answers each
    with one score line.  Calls are sequential.
    """

    def __init__(self, command: str):
        self.command = command
        self._proc = subprocess.Popen(shlex.split(command), stdin=subprocess.PIPE,
                                      stdout=subprocess.PIPE, text=True, bufsize=1)

    def __call__(self, t: ScaleTriple) -> float:
        self._proc.stdin.write(" ".join(repr(v) for v in t.as_tuple()) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError(f"oracle process {self.command!r} closed its output")
        return float(line.strip())

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def resolve_oracle(choice: str):
    """``builtin:<name>`` or ``exec:<command>``."""
    kind, _, arg = choice.partition(":")
    if kind == "builtin":
        try:
            return BUILTIN_ORACLES[arg]
        except KeyError:
            raise ValueError(f"unknown builtin oracle {arg!r}; have {sorted(BUILTIN_ORACLES)}")
    if kind == "exec" and arg:
        return ExecOracle(arg)
    raise ValueError(f"oracle must be builtin:<name> or exec:<command>, got {choice!r}")
