"""Per-run counters and cross-trial summaries."""

from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .netsim import MESSAGE_KINDS

COVERAGE_FRACTIONS = (0.5, 0.75, 0.85, 1.0)


@dataclass
class TrialStats:
    seed: int
    protocol: str
    n_nodes: int
    model: str = "static"
    speed: float = 0.0
    mode: str = "oracle"
    transfers: int = 0
    messages_by_kind: Counter = field(default_factory=Counter)
    coverage_curve: list = field(default_factory=list)  # (transfers, |covered|)
    visit_histogram: dict = field(default_factory=dict)  # visits -> node count
    completion_time: float = math.nan
    walk_time: float = math.nan
    complete: bool = False
    covered: int = 0
    requests: int = 0
    announces_without_request: int = 0
    isolated: bool = False
    timed_out: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def total_messages(self) -> int:
        return sum(self.messages_by_kind.values())

    @property
    def requests_per_transfer(self) -> float:
        return self.requests / self.transfers if self.transfers else math.nan

    @property
    def max_visits(self) -> int:
        return max(self.visit_histogram) if self.visit_histogram else 0

    def record_coverage(self, transfers: int, covered: int) -> None:
        curve = self.coverage_curve
        if curve and curve[-1][1] == covered and curve[-1][0] == transfers:
            return
        curve.append((transfers, covered))

    def row(self) -> dict:
        out = {
            "seed": self.seed,
            "protocol": self.protocol,
            "n_nodes": self.n_nodes,
            "model": self.model,
            "speed": self.speed,
            "mode": self.mode,
            "complete": int(self.complete),
            "transfers": self.transfers,
            "covered": self.covered,
        }
        for f in COVERAGE_FRACTIONS:
            out[f"overhead_{round(f * 100)}"] = exploration_overhead(self, f)
        for k in MESSAGE_KINDS:
            out[f"msg_{k.value.lower()}"] = self.messages_by_kind.get(k, 0)
        out["total_messages"] = self.total_messages
        out["requests_per_transfer"] = self.requests_per_transfer
        out["walk_time"] = self.walk_time
        out["completion_time"] = self.completion_time
        out["visit_variance"] = visit_variance(self.visit_histogram) if self.visit_histogram else math.nan
        out["max_visits"] = self.max_visits
        return out



def exploration_overhead(stats: TrialStats, at_coverage_fraction: float = 1.0) -> float:
    """Transfers per covered node at the first curve point reaching the fraction.

    NaN when the run never reached it.
    """
    target = at_coverage_fraction * stats.n_nodes - 1e-9
    curve = stats.coverage_curve
    covered = [c for _, c in curve]
    i = bisect.bisect_left(covered, target)
    if i == len(curve):
        return math.nan
    t, c = curve[i]
    return t / c


def visit_variance(histogram: dict) -> float:
    """Population variance of per-node visit counts, from a visits->count map."""
    if not histogram:
        raise ValueError("empty histogram")
    v = np.array(list(histogram.keys()), dtype=float)
    w = np.array(list(histogram.values()), dtype=float)
    mu = (v * w).sum() / w.sum()
    return float((w * (v - mu) ** 2).sum() / w.sum())


def histogram_of(visits) -> dict:
    return dict(sorted(Counter(int(v) for v in visits).items()))


@dataclass(frozen=True)
class BatchSummary:
    n: int
    median: float
    q1: float
    q3: float
    min: float
    max: float
    mean: float

    @classmethod
    def of(cls, values) -> "BatchSummary":
        a = np.sort(np.asarray([v for v in values if not (isinstance(v, float) and math.isnan(v))], dtype=float))
        if a.size == 0:
            return cls(0, *([math.nan] * 6))
        q1, med, q3 = np.percentile(a, [25, 50, 75])
        return cls(int(a.size), float(med), float(q1), float(q3), float(a[0]), float(a[-1]), float(a.mean()))


def summarize(trials: list[TrialStats], metric) -> BatchSummary:
    """``metric`` is a row column name or a callable on TrialStats."""
    if isinstance(metric, str):
        return BatchSummary.of(t.row()[metric] for t in trials)
    return BatchSummary.of(metric(t) for t in trials)


TRIAL_COLUMNS = tuple(TrialStats(0, "", 1).row().keys())
