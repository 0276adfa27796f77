"""Hierarchical EZ-AG: one token walk per square cell at every level.

Level-0 cells have side R/sqrt(2), so members of one level-0 cell are always
in radio range of each other; four adjoining level-j cells make one level-j+1
cell.  A single global push phase serves every level: a visited node folds in
only the pushed states whose senders were inside the token's cell when they
pushed.  Floods, requests and transfers are confined to the cell's current
members; everything else that hears them discards the message.
"""

from __future__ import annotations

import csv
import io
import math
import random
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .mobility import MobilityConfig, make_mobility
from .netsim import Medium, MediumConfig, MsgKind, Simulator
from .oracles import gossip_advantage, gossip_projection, predicted_hier_messages
from .protocol import EzagOptions, _seeds
from .synopsis import Kind, OdiSynopsis, parse_kind
from .world import DEFAULT_DENSITY, World, WorldConfig, build_world

TRANSACTION_ESTIMATE = 0.027  # seconds per announce/request/transfer round


def levels_for(n: int, delta: int) -> int:
    """P + 1 with P = floor(log4(n / delta))."""
    if delta < 1 or n < 1:
        raise ValueError("n and delta must be >= 1")
    p = 0
    while delta * 4 ** (p + 1) <= n:
        p += 1
    return p + 1


@dataclass(frozen=True)
class HierarchyConfig:
    delta: int = 16
    levels: int | None = None  # default: taken from the world's cell grid
    refresh_periods: tuple | None = None  # per level; default delta * 4^j transactions
    terminate_after_n_steps: bool = True
    aggregate: str = "max"
    token_start_delay: float = 0.02
    horizon: float = 3600.0
    ezag: EzagOptions = field(default_factory=EzagOptions)

    def validate(self, n: int | None = None) -> None:
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.refresh_periods is not None and any(p <= 0 for p in self.refresh_periods):
            raise ValueError("refresh periods must be > 0")
        if n is not None and self.levels is not None:
            top = self.delta * 4 ** (self.levels - 1)
            if not n / 4 <= top <= 4 * n:
                raise ValueError(f"4^P * delta = {top} is not within a factor of 4 of N = {n}")
        parse_kind(self.aggregate)
        self.ezag.validate()

    def refresh_period(self, level: int) -> float:
        if self.refresh_periods is not None:
            return self.refresh_periods[min(level, len(self.refresh_periods) - 1)]
        return self.delta * 4 ** level * TRANSACTION_ESTIMATE


def hierarchy_world(n: int, delta: int = 16, density: float = DEFAULT_DENSITY, seed: int = 0) -> World:
    """Uniform world whose level-0 cells hold ``delta`` nodes on average.

    R^2 = 2 delta / density, so a cell of side R/sqrt(2) has expected
    population delta; the geo-dense condition must still hold.
    """
    side = math.sqrt(n / density)
    r = math.sqrt(2.0 * delta / density)
    cfg = WorldConfig(n, side, density, r, rng_seed=seed)
    return build_world(cfg)


@dataclass
class CellToken:
    level: int
    cell_id: int
    holder: int
    synopsis: OdiSynopsis | None = None
    transfer_count: int = 0
    covered: int = 0  # bitset of ids reflected in the synopsis


@dataclass
class CellRecord:
    level: int
    cell_id: int
    members: int
    transfers: int
    covered: int
    complete: bool
    start: float
    completion_time: float
    isolated: bool


class CellInstance:
    """One EZ-AG run confined to a cell."""

    def __init__(self, run: "HierRun", level: int, cell: int, members: list[int]):
        self.run = run
        self.level = level
        self.cell = cell
        self.members = members
        self.member_bits = 0
        for u in members:
            self.member_bits |= 1 << u
        self.medium = run.level_media[level]
        self.visits: Counter = Counter()
        self.request_seen: set[int] = set()
        self.result_seen: set[int] = set()
        self.pending: dict[int, int] = {}
        self.round = 0
        self.round_requests: list[tuple[int, int]] = []
        self.attempts = 0
        self.walking = False
        self.done = False
        self.isolated = False
        self.start_time = math.nan
        self.end_time = math.nan
        self.token = CellToken(level, cell, members[0])

    def in_cell(self, u: int) -> bool:
        return self.run.cell_now(u, self.level) == self.cell

    # -- flood --------------------------------------------------------------

    def start(self) -> None:
        run = self.run
        self.start_time = run.sim.now
        present = [u for u in self.members if self.in_cell(u)]
        if not present:
            run.orphaned_instances += 1
            self._finish(None)
            return
        initiator = present[run.rng.randrange(len(present))]
        self.token.holder = initiator
        self._accept_request(initiator)
        run.sim.schedule(run.config.token_start_delay, self._start_token)

    def _accept_request(self, u: int) -> None:
        self.request_seen.add(u)
        self.medium.broadcast(u, MsgKind.AGG_REQUEST_FLOOD, None, self._on_request)

    def _on_request(self, r: int, sender: int, _payload) -> None:
        if r not in self.request_seen and self.in_cell(r):
            self._accept_request(r)

    # -- walk -------------------------------------------------------------------

    def _start_token(self) -> None:
        self.walking = True
        u = self.token.holder
        self.visits[u] += 1
        self._absorb(u)
        if not self._walk_finished():
            self._announce()

    def _absorb(self, u: int) -> None:
        syn, bits = self.run.restricted_push(u, self.level, self.cell)
        t = self.token
        t.synopsis = syn if t.synopsis is None else t.synopsis.merge(syn)
        t.covered |= bits

    def _walk_finished(self) -> bool:
        t = self.token
        if self.run.config.terminate_after_n_steps:
            finished = t.transfer_count >= len(self.members) or len(self.members) == 1
        else:
            finished = (t.covered & self.member_bits) == self.member_bits
        if finished:
            self._end_walk()
        return finished

    def _announce(self) -> None:
        self.round += 1
        self.round_requests = []
        self.medium.broadcast(self.token.holder, MsgKind.TOKEN_ANNOUNCE, self.round, self._on_announce)
        cfg = self.medium.config
        o = self.run.config.ezag
        close = cfg.max_latency(MsgKind.TOKEN_ANNOUNCE) + o.request_window + cfg.max_latency(MsgKind.TOKEN_REQUEST)
        self.run.sim.schedule(close, self._close_window, self.round)

    def _on_announce(self, r: int, holder: int, rnd: int) -> None:
        if rnd != self.round or r not in self.request_seen or not self.in_cell(r):
            return
        o = self.run.config.ezag
        p = min(self.visits[r], o.priority_cap)
        self.pending[r] = rnd
        self.run.sim.schedule(self.run.rng.random() * o.request_jitter + o.request_slope * p, self._fire_request, r, rnd)

    def _fire_request(self, r: int, rnd: int) -> None:
        if self.pending.get(r) != rnd:
            return
        del self.pending[r]
        self.medium.broadcast(r, MsgKind.TOKEN_REQUEST, (rnd, self.visits[r]), self._on_token_request)

    def _on_token_request(self, r: int, sender: int, payload) -> None:
        rnd, advertised = payload
        if r == self.token.holder and self.walking and rnd == self.round:
            self.round_requests.append((advertised, sender))
        elif self.pending.get(r) == rnd and advertised <= self.visits[r]:
            del self.pending[r]

    def _close_window(self, rnd: int) -> None:
        if rnd != self.round or not self.walking:
            return
        o = self.run.config.ezag
        # only requesters still inside the cell may take the token
        reqs = [(v, s) for v, s in self.round_requests if self.in_cell(s)]
        if not reqs:
            self.attempts += 1
            if self.attempts >= o.max_announce_attempts:
                self.isolated = True
                self._end_walk()
            else:
                self.run.sim.schedule(o.transfer_timeout, self._announce)
            return
        self.attempts = 0
        low = min(v for v, _ in reqs)
        cands = [s for v, s in reqs if v == low]
        dest = cands[self.run.rng.randrange(len(cands))] if len(cands) > 1 else cands[0]
        if not self.in_cell(dest):
            self.run.confinement_violations += 1
        if not self.medium.unicast(self.token.holder, dest, MsgKind.TOKEN_TRANSFER, rnd, self._on_transfer):
            self.run.sim.schedule(o.transfer_timeout, self._announce)

    def _on_transfer(self, r: int, sender: int, rnd: int) -> None:
        if rnd != self.round or not self.walking:
            return
        t = self.token
        t.transfer_count += 1
        t.holder = r
        self.visits[r] += 1
        self._absorb(r)
        if not self._walk_finished():
            self._announce()

    def _end_walk(self) -> None:
        self.walking = False
        self._accept_result(self.token.holder)

    # -- result -----------------------------------------------------------------

    def _accept_result(self, u: int) -> None:
        self.result_seen.add(u)
        self.run.results[self.level][u] = self.token.synopsis
        self.medium.broadcast(u, MsgKind.RESULT_FLOOD, self.cell, self._on_result)
        if not self.done:
            self._finish(self.token)

    def _on_result(self, r: int, sender: int, _cell) -> None:
        if r not in self.result_seen and self.in_cell(r):
            self._accept_result(r)

    def _finish(self, token) -> None:
        self.done = True
        self.run.active -= 1
        if math.isnan(self.end_time):
            self.end_time = self.run.sim.now

    def record(self) -> CellRecord:
        t = self.token
        covered = (t.covered & self.member_bits).bit_count()
        return CellRecord(
            self.level,
            self.cell,
            len(self.members),
            t.transfer_count,
            covered,
            covered == len(self.members),
            self.start_time,
            self.end_time - self.start_time,
            self.isolated,
        )


@dataclass
class LevelStats:
    level: int
    cells: int
    transfers: list
    completion_times: list
    messages_by_kind: Counter
    complete_cells: int
    members: list

    @property
    def messages(self) -> int:
        return sum(self.messages_by_kind.values())

    @property
    def mean_transfers(self) -> float:
        return float(np.mean(self.transfers)) if self.transfers else math.nan

    @property
    def median_completion(self) -> float:
        return float(np.median(self.completion_times)) if self.completion_times else math.nan

    def row(self) -> dict:
        return {
            "level": self.level,
            "cells": self.cells,
            "mean_transfers_per_cell": self.mean_transfers,
            "messages": self.messages,
            "median_completion_time": self.median_completion,
            "complete_cells": self.complete_cells,
        }


LEVEL_COLUMNS = ("level", "cells", "mean_transfers_per_cell", "messages", "median_completion_time", "complete_cells")


@dataclass
class HierarchyResult:
    n_nodes: int
    delta: int
    levels: list[LevelStats]
    push_messages: int
    cells: list[CellRecord]
    results: list[list]
    confinement_violations: int
    orphaned_instances: int
    timed_out: bool

    @property
    def total_messages(self) -> int:
        return self.push_messages + sum(lv.messages for lv in self.levels)

    @property
    def predicted_messages(self) -> int:
        return predicted_hier_messages(self.n_nodes, self.delta)

    def transfer_ratios(self) -> list[float]:
        m = [lv.mean_transfers for lv in self.levels]
        return [m[j] / m[j - 1] for j in range(1, len(m))]

    def level_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=LEVEL_COLUMNS, lineterminator="\n")
        w.writeheader()
        for lv in self.levels:
            w.writerow(lv.row())
        return buf.getvalue()


class HierRun:
    def __init__(self, world: World, mobility: MobilityConfig | None = None, config: HierarchyConfig | None = None, medium: MediumConfig | None = None, seed: int = 0):
        self.config = cfg = config or HierarchyConfig()
        cfg.validate(world.n)
        self.mobility_config = mobility or MobilityConfig()
        mob_seed, medium_seed, proto_seed = _seeds(seed, 3)
        self.world = world.copy()
        self.n = n = self.world.n
        self.levels = min(cfg.levels, self.world.max_level + 1) if cfg.levels else self.world.max_level + 1
        self.sim = Simulator()
        medium_rng = random.Random(medium_seed)
        self.push_medium = Medium(self.sim, self.world, medium, medium_rng)
        self.level_media = [Medium(self.sim, self.world, medium, medium_rng) for _ in range(self.levels)]
        self.rng = random.Random(proto_seed)
        self.mobility = make_mobility(self.mobility_config, self.world, np.random.default_rng(mob_seed))
        self.kind = parse_kind(cfg.aggregate)
        self.own = [self._contribution(u) for u in range(n)]
        self.push_bits = [1 << u for u in range(n)]
        self.push_cells = np.zeros((self.levels, n), dtype=np.int64)
        self._restricted: dict = {}
        self._cells_version = -1
        self._cells_now: list[np.ndarray] = []
        self.results: list[list] = [[None] * n for _ in range(self.levels)]
        self.instances: list[CellInstance] = []
        self.active = 0
        self.confinement_violations = 0
        self.orphaned_instances = 0

    def _contribution(self, u: int) -> OdiSynopsis:
        if self.kind is Kind.COUNT_SKETCH:
            o = self.config.ezag
            return OdiSynopsis.empty(Kind.COUNT_SKETCH, m=o.sketch_registers, hash_seed=o.hash_seed).insert(u)
        return OdiSynopsis(self.kind, value=u)

    def cell_now(self, u: int, level: int) -> int:
        w = self.world
        if self._cells_version != w.version:
            self._cells_now = [w.cells(j) for j in range(self.levels)]
            self._cells_version = w.version
        return int(self._cells_now[level][u])

    def _tick(self) -> None:
        dt = self.mobility_config.tick
        self.mobility.step(self.world, dt)
        self.sim.schedule(dt, self._tick, daemon=True)

    # -- push, shared by all levels -----------------------------------------------

    def _push(self, u: int) -> None:
        for j in range(self.levels):
            self.push_cells[j, u] = self.cell_now(u, j)
        self.push_medium.broadcast(u, MsgKind.PUSH, None, self._on_push)

    def _on_push(self, r: int, sender: int, _payload) -> None:
        self.push_bits[r] |= 1 << sender

    def restricted_push(self, u: int, level: int, cell: int) -> tuple[OdiSynopsis, int]:
        """Node ``u``'s push state limited to senders that pushed from ``cell``."""
        key = (u, level, cell)
        hit = self._restricted.get(key)
        if hit is not None:
            return hit
        bits = 1 << u
        syn = self.own[u]
        rest = self.push_bits[u] & ~bits
        cells = self.push_cells[level]
        while rest:
            low = rest & -rest
            s = low.bit_length() - 1
            rest ^= low
            if cells[s] == cell:
                bits |= low
                syn = syn.merge(self.own[s])
        self._restricted[key] = (syn, bits)
        return syn, bits

    # -- driver ---------------------------------------------------------------------

    def run(self) -> HierarchyResult:
        cfg = self.config
        if self.mobility_config.model != "static":
            self.sim.schedule(self.mobility_config.tick, self._tick, daemon=True)
        spread = cfg.ezag.push_spread
        for u in range(self.n):
            self.sim.schedule(self.rng.random() * spread, self._push, u)
        start0 = spread + self.push_medium.config.max_latency(MsgKind.PUSH)
        for j in range(self.levels):
            cells = self.world.cells(j)
            groups: dict[int, list[int]] = {}
            for u, c in enumerate(cells.tolist()):
                groups.setdefault(c, []).append(u)
            period = cfg.refresh_period(j)
            for c in sorted(groups):
                inst = CellInstance(self, j, c, groups[c])
                self.instances.append(inst)
                self.active += 1
                self.sim.schedule(start0 + self.rng.random() * period, inst.start)
        _, timed_out = self.sim.run(horizon=cfg.horizon)
        return self._collect(timed_out)

    def _collect(self, timed_out: bool) -> HierarchyResult:
        records = [inst.record() for inst in self.instances]
        levels = []
        for j in range(self.levels):
            recs = [r for r in records if r.level == j]
            levels.append(
                LevelStats(
                    level=j,
                    cells=len(recs),
                    transfers=[r.transfers for r in recs],
                    completion_times=[r.completion_time for r in recs if not math.isnan(r.completion_time)],
                    messages_by_kind=Counter(self.level_media[j].counts),
                    complete_cells=sum(r.complete for r in recs),
                    members=[r.members for r in recs],
                )
            )
        return HierarchyResult(
            n_nodes=self.n,
            delta=self.config.delta,
            levels=levels,
            push_messages=self.push_medium.counts[MsgKind.PUSH],
            cells=records,
            results=self.results,
            confinement_violations=self.confinement_violations,
            orphaned_instances=self.orphaned_instances,
            timed_out=timed_out,
        )


def run_hier(world: World, mobility: MobilityConfig | None = None, config: HierarchyConfig | None = None, medium: MediumConfig | None = None, seed: int = 0) -> HierarchyResult:
    return HierRun(world, mobility, config, medium, seed).run()


def projection_csv(sizes, exponent: float = 5.4) -> str:
    """Projected message counts: gossip model vs the N ln N hierarchical cost."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "gossip_messages", "hierarchical_messages", "advantage"])
    for n in sizes:
        w.writerow([n, gossip_projection(n, exponent), n * math.log(n), gossip_advantage(n, exponent)])
    return buf.getvalue()


__all__ = [
    "CellInstance",
    "CellRecord",
    "CellToken",
    "HierRun",
    "HierarchyConfig",
    "HierarchyResult",
    "LEVEL_COLUMNS",
    "LevelStats",
    "gossip_projection",
    "hierarchy_world",
    "levels_for",
    "predicted_hier_messages",
    "projection_csv",
    "run_hier",
]
