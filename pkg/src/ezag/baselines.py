"""Comparison protocols: plain random walk, self-repelling walk without push,
and a refresh-based aggregation tree."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .metrics import TrialStats
from .mobility import MobilityConfig, make_mobility
from .netsim import EventLog, Medium, MediumConfig, MsgKind, Simulator
from .protocol import EzagOptions, EzagRun, _seeds, plain_rw_options, srrw_options
from .synopsis import Kind, OdiSynopsis, parse_kind


class SrrwRun(EzagRun):
    protocol_name = "srrw"


class PlainRwRun(EzagRun):
    protocol_name = "plain_rw"


def run_srrw(world, mobility: MobilityConfig | None = None, options: EzagOptions | None = None, medium: MediumConfig | None = None, seed: int = 0, log: EventLog | None = None) -> TrialStats:
    """Self-repelling walk with push disabled, run to full coverage."""
    return SrrwRun(world, mobility, srrw_options(options), medium, seed, log).run()


def run_plain_rw(world, mobility: MobilityConfig | None = None, options: EzagOptions | None = None, medium: MediumConfig | None = None, seed: int = 0, log: EventLog | None = None) -> TrialStats:
    """Same round mechanics, but the holder ignores visit counts."""
    return PlainRwRun(world, mobility, plain_rw_options(options), medium, seed, log).run()


# -- aggregation tree ---------------------------------------------------------


@dataclass(frozen=True)
class TreeOptions:
    refresh_period: float = 2.0
    data_spread: float = 0.025
    retransmit_timeout: float = 0.100
    aggregate: str = "max"
    sketch_registers: int = 64
    hash_seed: int = 0
    horizon: float = 600.0
    initiator: int = 0

    def validate(self) -> None:
        for name in ("refresh_period", "data_spread", "retransmit_timeout", "horizon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        parse_kind(self.aggregate)


@dataclass
class TreeState:
    """Per-node tree variables, stored column-wise."""

    n: int
    parent: list = field(init=False)
    epoch: list = field(init=False)
    queue_bits: list = field(init=False)  # ids waiting to be sent
    queue_syn: list = field(init=False)
    flight_bits: list = field(init=False)  # ids sent but not yet acked
    flight_syn: list = field(init=False)
    flight_seq: list = field(init=False)
    attempts: list = field(init=False)  # transmissions of the current in-flight batch

    def __post_init__(self):
        n = self.n
        self.parent = [None] * n
        self.epoch = [-1] * n
        self.queue_bits = [0] * n
        self.queue_syn = [None] * n
        self.flight_bits = [0] * n
        self.flight_syn = [None] * n
        self.flight_seq = [0] * n
        self.attempts = [0] * n


class TreeRun:
    """Initiator-rooted tree, rebuilt by a fresh request flood every refresh period.

    Every node that hears a new epoch's flood adopts the sender as parent and
    schedules a data transmission within ``data_spread``.  Data is unicast up
    the tree with a per-hop ack and retransmitted every ``retransmit_timeout``
    until acked; whatever sits in a node's queue at a transmission opportunity
    goes out merged as one message.  The run ends as soon as the root holds
    every id.
    """

    protocol_name = "tree"

    def __init__(self, world, mobility: MobilityConfig | None = None, options: TreeOptions | None = None, medium: MediumConfig | None = None, seed: int = 0, log: EventLog | None = None):
        self.options = opts = options or TreeOptions()
        opts.validate()
        self.mobility_config = mobility or MobilityConfig()
        mob_seed, medium_seed, proto_seed = _seeds(seed, 3)
        self.world = world.copy()
        self.n = n = self.world.n
        if not 0 <= opts.initiator < n:
            raise ValueError(f"initiator {opts.initiator} outside 0..{n - 1}")
        self.sim = Simulator()
        self.medium = Medium(self.sim, self.world, medium, random.Random(medium_seed), log)
        self.rng = random.Random(proto_seed)
        self.mobility = make_mobility(self.mobility_config, self.world, np.random.default_rng(mob_seed))
        self.kind = parse_kind(opts.aggregate)
        self.state = TreeState(n)
        self.root = opts.initiator
        self.current_epoch = -1
        self.root_bits = 0
        self.root_syn = None
        self.root_count = 0
        self.done = False
        self.stale_data_dropped = 0
        self.epoch_parents: dict[int, dict[int, int | None]] = {}
        self.stats = TrialStats(seed=seed, protocol=self.protocol_name, n_nodes=n, model=self.mobility_config.model, speed=self.mobility_config.nominal_speed, mode="oracle")
        self.stats.messages_by_kind = self.medium.counts

    def _contribution(self, u: int) -> OdiSynopsis:
        if self.kind is Kind.COUNT_SKETCH:
            o = self.options
            return OdiSynopsis.empty(Kind.COUNT_SKETCH, m=o.sketch_registers, hash_seed=o.hash_seed).insert(u)
        return OdiSynopsis(self.kind, value=u)

    def _tick(self) -> None:
        dt = self.mobility_config.tick
        self.mobility.step(self.world, dt)
        self.sim.schedule(dt, self._tick, daemon=True)

    # -- flood ----------------------------------------------------------------

    def refresh(self) -> None:
        if self.done:
            return
        self.current_epoch += 1
        self._join(self.root, None, self.current_epoch)
        self.sim.schedule(self.options.refresh_period, self.refresh)

    def _join(self, u: int, parent, epoch: int) -> None:
        st = self.state
        st.epoch[u] = epoch
        st.parent[u] = parent
        self.epoch_parents.setdefault(epoch, {})[u] = parent
        self.medium.broadcast(u, MsgKind.TREE_REQUEST, epoch, self._on_request)
        if u == self.root:
            self._root_fold(1 << u, self._contribution(u))
            return
        self._enqueue(u, 1 << u, self._contribution(u))
        self.sim.schedule(self.rng.random() * self.options.data_spread, self._send, u, epoch)

    def _on_request(self, r: int, sender: int, epoch: int) -> None:
        if epoch > self.state.epoch[r] and not self.done:
            self._join(r, sender, epoch)

    # -- data -----------------------------------------------------------------

    def _enqueue(self, u: int, bits: int, syn) -> None:
        st = self.state
        st.queue_bits[u] |= bits
        st.queue_syn[u] = syn if st.queue_syn[u] is None else st.queue_syn[u].merge(syn)

    def _send(self, u: int, _epoch=None) -> None:
        """Transmission opportunity: fold the queue into the in-flight batch and send it."""
        st = self.state
        if self.done:
            return
        if st.queue_bits[u]:
            st.flight_bits[u] |= st.queue_bits[u]
            q = st.queue_syn[u]
            st.flight_syn[u] = q if st.flight_syn[u] is None else st.flight_syn[u].merge(q)
            st.queue_bits[u] = 0
            st.queue_syn[u] = None
            st.attempts[u] = 0
            st.flight_seq[u] += 1
        if not st.flight_bits[u] or st.parent[u] is None:
            return
        st.attempts[u] += 1
        seq = st.flight_seq[u]
        payload = (st.epoch[u], seq, st.flight_bits[u], st.flight_syn[u])
        self.medium.unicast(u, st.parent[u], MsgKind.TREE_DATA, payload, self._on_data)
        self.sim.schedule(self.options.retransmit_timeout, self._retransmit, u, seq)

    def _retransmit(self, u: int, seq: int) -> None:
        st = self.state
        if st.flight_seq[u] == seq and st.flight_bits[u] and not self.done:
            self._send(u)

    def _on_data(self, r: int, sender: int, payload) -> None:
        epoch, seq, bits, syn = payload
        st = self.state
        if epoch < st.epoch[r]:
            self.stale_data_dropped += 1
            return
        self.medium.unicast(r, sender, MsgKind.TREE_ACK, seq, self._on_ack)
        if r == self.root:
            self._root_fold(bits, syn)
            return
        pending = st.queue_bits[r] or st.flight_bits[r]
        self._enqueue(r, bits, syn)
        if not pending:
            self.sim.schedule(self.rng.random() * self.options.data_spread, self._send, r)

    def _on_ack(self, r: int, sender: int, seq: int) -> None:
        st = self.state
        if st.flight_seq[r] != seq or not st.flight_bits[r]:
            return
        st.flight_bits[r] = 0
        st.flight_syn[r] = None
        st.attempts[r] = 0
        if st.queue_bits[r]:
            self.sim.schedule(self.rng.random() * self.options.data_spread, self._send, r)

    def _root_fold(self, bits: int, syn) -> None:
        self.root_bits |= bits
        self.root_syn = syn if self.root_syn is None else self.root_syn.merge(syn)
        count = self.root_count = self.root_bits.bit_count()
        if count >= self.n:
            self.done = True
            self.stats.completion_time = self.sim.now

    # -- driver ------------------------------------------------------------------

    def run(self) -> TrialStats:
        if self.mobility_config.model != "static":
            self.sim.schedule(self.mobility_config.tick, self._tick, daemon=True)
        self.refresh()
        _, timed_out = self.sim.run(horizon=self.options.horizon, stop=lambda: self.done)
        s = self.stats
        s.timed_out = timed_out
        s.covered = self.root_count
        s.complete = self.done
        s.walk_time = self.sim.now
        if not self.done:
            s.completion_time = self.sim.now
        s.extra["epochs"] = self.current_epoch + 1
        s.extra["stale_data_dropped"] = self.stale_data_dropped
        s.extra["max_attempts"] = max(self.state.attempts, default=0)
        return s


def run_tree(world, mobility: MobilityConfig | None = None, options: TreeOptions | None = None, medium: MediumConfig | None = None, seed: int = 0, log: EventLog | None = None) -> TrialStats:
    return TreeRun(world, mobility, options, medium, seed, log).run()


def parent_forest_ok(parents: dict, root: int) -> bool:
    """True when every parent chain in ``parents`` ends at ``root`` without a cycle."""
    for u in parents:
        seen = set()
        v = u
        while v != root:
            if v in seen or v not in parents or parents[v] is None:
                return False
            seen.add(v)
            v = parents[v]
    return True


__all__ = [
    "PlainRwRun",
    "SrrwRun",
    "TreeOptions",
    "TreeRun",
    "TreeState",
    "parent_forest_ok",
    "run_plain_rw",
    "run_srrw",
    "run_tree",
]
