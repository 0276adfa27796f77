"""Closed-form and brute-force references for the tests.

Nothing here imports simulator code: these are the independent side of every
cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

MAX_ORACLE_NODES = 8


@dataclass(frozen=True)
class CouponModel:
    categories: int
    draws: int = 0

    def __post_init__(self):
        if self.categories < 1:
            raise ValueError("need at least one category")


def harmonic(b: int) -> Fraction:
    return sum((Fraction(1, k) for k in range(1, b + 1)), Fraction(0))


def coupon_expected_draws(b: int) -> float:
    """Expected draws to see each of ``b`` equiprobable categories: b * H_b."""
    CouponModel(b)
    return float(b * harmonic(b))


def coupon_monte_carlo(b: int, trials: int, rng: np.random.Generator) -> float:
    """Mean draws-to-completion over ``trials`` simulated collections."""
    total = 0
    chunk = max(64, 4 * b)
    for _ in range(trials):
        seen = np.zeros(b, dtype=bool)
        left = b
        draws = 0
        while left:
            batch = rng.integers(0, b, chunk)
            for i, c in enumerate(batch):
                if not seen[c]:
                    seen[c] = True
                    left -= 1
                    if not left:
                        draws += i + 1
                        break
            else:
                draws += chunk
        total += draws
    return total / trials


def _adjacency(graph) -> list[list[int]]:
    if isinstance(graph, np.ndarray):
        a = np.asarray(graph, dtype=bool)
        return [list(np.flatnonzero(a[i] & (np.arange(len(a)) != i))) for i in range(len(a))]
    if isinstance(graph, dict):
        n = len(graph)
        return [sorted(graph[i]) for i in range(n)]
    return [sorted(x) for x in graph]


def markov_cover_expectation(graph, start: int = 0) -> float:
    """Exact expected cover time (steps) of a simple random walk from ``start``.

    ``graph`` is an adjacency list, a {node: neighbors} dict or a boolean
    adjacency matrix.  Solves one linear system per visited set, largest sets
    first; the state is (current node, set of visited nodes).
    """
    adj = _adjacency(graph)
    n = len(adj)
    if n == 0:
        raise ValueError("empty graph")
    if n > MAX_ORACLE_NODES:
        raise ValueError(f"oracle is limited to {MAX_ORACLE_NODES} nodes")
    full = (1 << n) - 1
    # connectivity
    seen, stack = {0}, [0]
    while stack:
        for v in adj[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != n:
        raise ValueError("graph is disconnected")
    if n == 1:
        return 0.0

    value: dict[int, dict[int, float]] = {full: {v: 0.0 for v in range(n)}}
    masks = sorted(range(1, full), key=lambda m: -bin(m).count("1"))
    for mask in masks:
        members = [v for v in range(n) if mask >> v & 1]
        idx = {v: i for i, v in enumerate(members)}
        k = len(members)
        a = np.eye(k)
        rhs = np.ones(k)
        for v in members:
            d = len(adj[v])
            for u in adj[v]:
                if mask >> u & 1:
                    a[idx[v], idx[u]] -= 1.0 / d
                else:
                    rhs[idx[v]] += value[mask | 1 << u][u] / d
        sol = np.linalg.solve(a, rhs)
        value[mask] = {v: float(sol[idx[v]]) for v in members}
    return value[1 << start][start]


def exact_distinct(stream) -> int:
    return len(set(stream))


def predicted_hier_messages(n: int, delta: int) -> int:
    """N * (P + 1) with P = floor(log4(n / delta)), computed in integers."""
    if delta < 1 or n < 1:
        raise ValueError("n and delta must be >= 1")
    if delta > n:
        raise ValueError("delta cannot exceed n")
    p = 0
    while delta * 4 ** (p + 1) <= n:
        p += 1
    return n * (p + 1)


def gossip_projection(n: int, exponent: float) -> float:
    """Message model n * ln(n)^exponent for multi-resolution spatial gossip."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return n * math.log(n) ** exponent


def gossip_advantage(n: int, exponent: float) -> float:
    """Ratio of the gossip model to the N ln N hierarchical cost."""
    return math.log(n) ** (exponent - 1)
