"""Push-assisted self-repelling token walk for duplicate-insensitive aggregation.

A run goes through four phases on one event loop:

1. the initiator floods an aggregate request (each node rebroadcasts once);
2. every node that hears the request pushes its own state to its neighbors once;
3. a token walks the network: the holder announces, listeners answer with a
   request after a delay that grows with how often they were visited, quieter
   requests are suppressed, and the holder hands the token to the least
   visited requester;
4. the final aggregate is flooded back to everyone.

Coverage (which node ids the token's synopsis reflects) is tracked exactly as
an integer bitset for instrumentation only; the protocol never reads it except
in ``oracle`` mode, where the walk stops as soon as coverage is complete.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace

import numpy as np

from .metrics import TrialStats, histogram_of
from .mobility import MobilityConfig, make_mobility
from .netsim import EventLog, Medium, MediumConfig, MsgKind, Simulator
from .synopsis import DEFAULT_REGISTERS, Kind, OdiSynopsis, parse_kind

SELF_REPELLING = "self_repelling"
UNIFORM = "uniform"


@dataclass(frozen=True)
class EzagOptions:
    push_enabled: bool = True
    terminate_after_n_steps: bool = False
    request_window: float = 0.009
    request_slope: float = 0.003
    request_jitter: float = 0.003
    transfer_timeout: float = 0.050
    max_announce_attempts: int = 5
    selection: str = SELF_REPELLING
    aggregate: str = "max"
    sketch_registers: int = DEFAULT_REGISTERS
    hash_seed: int = 0
    push_spread: float = 0.025
    token_start_delay: float = 0.25
    horizon: float = 3600.0
    max_transfers: int | None = None
    initiator: int = 0
    record_rounds: bool = False

    def validate(self) -> None:
        if not self.request_window > 0:
            raise ValueError("request_window must be > 0")
        if self.request_slope < 0 or self.request_jitter < 0:
            raise ValueError("request_slope and request_jitter must be >= 0")
        if self.request_jitter > self.request_window:
            raise ValueError("request_jitter cannot exceed request_window")
        if self.selection not in (SELF_REPELLING, UNIFORM):
            raise ValueError(f"unknown selection rule {self.selection!r}")
        if self.transfer_timeout <= 0 or self.max_announce_attempts < 1:
            raise ValueError("transfer_timeout must be > 0 and max_announce_attempts >= 1")
        parse_kind(self.aggregate)

    @property
    def priority_cap(self) -> int:
        """Highest visit count that still gets its own request slot in the window."""
        if self.request_slope == 0:
            return 0
        return max(0, int((self.request_window - self.request_jitter) / self.request_slope + 1e-9))

    @property
    def mode(self) -> str:
        return "terminate" if self.terminate_after_n_steps else "oracle"


def _seeds(seed: int, k: int) -> list[int]:
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


class EzagRun:
    """State machines of every node for one aggregation run."""

    protocol_name = "ezag"

    def __init__(
        self,
        world,
        mobility: MobilityConfig | None = None,
        options: EzagOptions | None = None,
        medium: MediumConfig | None = None,
        seed: int = 0,
        log: EventLog | None = None,
    ):
        self.options = opts = options or EzagOptions()
        opts.validate()
        self.mobility_config = mobility or MobilityConfig()
        self.seed = seed
        mob_seed, medium_seed, proto_seed = _seeds(seed, 3)
        self.world = world.copy()
        self.n = n = self.world.n
        self.sim = Simulator()
        self.medium = Medium(self.sim, self.world, medium, random.Random(medium_seed), log)
        self.rng = random.Random(proto_seed)
        self.mobility = make_mobility(self.mobility_config, self.world, np.random.default_rng(mob_seed))
        if not 0 <= opts.initiator < n:
            raise ValueError(f"initiator {opts.initiator} outside 0..{n - 1}")

        self.kind = parse_kind(opts.aggregate)
        self.own = [self._contribution(u) for u in range(n)]
        self.push_syn = list(self.own)
        self.push_bits = [1 << u for u in range(n)]
        self.visits = [0] * n
        self.request_seen = bytearray(n)
        self.result_seen = bytearray(n)
        self.results: list[OdiSynopsis | None] = [None] * n
        self.pending: dict[int, int] = {}

        self.holder = opts.initiator
        self.token: OdiSynopsis | None = None
        self.covered = 0
        self.covered_count = 0
        self.round = 0
        self.round_requests: list[tuple[int, int]] = []
        self.attempts = 0
        self.walking = False
        self.walk_done = False
        self.rounds_log: list[tuple[int, int, int]] = []  # (min requested, chosen pre-visit, n requests)

        self.stats = TrialStats(
            seed=seed,
            protocol=self.protocol_name,
            n_nodes=n,
            model=self.mobility_config.model,
            speed=self.mobility_config.nominal_speed,
            mode=opts.mode,
        )
        self.stats.messages_by_kind = self.medium.counts

    def _contribution(self, u: int) -> OdiSynopsis:
        if self.kind is Kind.COUNT_SKETCH:
            o = self.options
            return OdiSynopsis.empty(Kind.COUNT_SKETCH, m=o.sketch_registers, hash_seed=o.hash_seed).insert(u)
        return OdiSynopsis(self.kind, value=u)

    def central_synopsis(self) -> OdiSynopsis:
        s = self.own[0]
        for x in self.own[1:]:
            s = s.merge(x)
        return s

    # -- mobility -------------------------------------------------------------

    def _start_mobility(self) -> None:
        if self.mobility_config.model != "static":
            self.sim.schedule(self.mobility_config.tick, self._tick, daemon=True)

    def _tick(self) -> None:
        dt = self.mobility_config.tick
        self.mobility.step(self.world, dt)
        self.sim.schedule(dt, self._tick, daemon=True)

    # -- phase 1: request flood ---------------------------------------------

    def flood_request(self, initiator: int | None = None) -> None:
        u = self.options.initiator if initiator is None else initiator
        self._accept_request(u)

    def _accept_request(self, u: int) -> None:
        self.request_seen[u] = 1
        self.medium.broadcast(u, MsgKind.AGG_REQUEST_FLOOD, None, self._on_request)
        if self.options.push_enabled:
            self.sim.schedule(self.rng.random() * self.options.push_spread, self._push, u)

    def _on_request(self, r: int, sender: int, _payload) -> None:
        if not self.request_seen[r]:
            self._accept_request(r)

    # -- phase 2: push ----------------------------------------------------------

    def _push(self, u: int) -> None:
        self.medium.broadcast(u, MsgKind.PUSH, self.own[u], self._on_push)

    def _on_push(self, r: int, sender: int, syn: OdiSynopsis) -> None:
        self.push_syn[r] = self.push_syn[r].merge(syn)
        self.push_bits[r] |= 1 << sender

    # -- phase 3: token walk ----------------------------------------------------

    def start_token(self) -> None:
        u = self.holder
        self.walking = True
        self.visits[u] += 1
        self.token = self.push_syn[u]
        self._absorb(u)
        if not self._walk_finished():
            self._announce()

    def _absorb(self, u: int) -> None:
        self.covered |= self.push_bits[u]
        self.covered_count = self.covered.bit_count()
        self.stats.record_coverage(self.stats.transfers, self.covered_count)

    def _walk_finished(self) -> bool:
        o = self.options
        s = self.stats
        if o.max_transfers is not None and s.transfers >= o.max_transfers:
            self._end_walk()
            return True
        if o.terminate_after_n_steps:
            if s.transfers >= self.n:
                self._end_walk()
                return True
        elif self.covered_count >= self.n:
            self._end_walk()
            return True
        return False

    def priority(self, u: int) -> int:
        return self.visits[u] if self.options.selection == SELF_REPELLING else 0

    def _announce(self) -> None:
        self.round += 1
        self.round_requests = []
        med = self.medium
        med.broadcast(self.holder, MsgKind.TOKEN_ANNOUNCE, self.round, self._on_announce)
        cfg = med.config
        close = cfg.max_latency(MsgKind.TOKEN_ANNOUNCE) + self.options.request_window + cfg.max_latency(MsgKind.TOKEN_REQUEST)
        self.sim.schedule(close, self._close_window, self.round)

    def _on_announce(self, r: int, holder: int, rnd: int) -> None:
        if not self.request_seen[r] or rnd != self.round:
            return
        o = self.options
        p = min(self.priority(r), o.priority_cap)
        self.pending[r] = rnd
        self.sim.schedule(self.rng.random() * o.request_jitter + o.request_slope * p, self._fire_request, r, rnd)

    def _fire_request(self, r: int, rnd: int) -> None:
        if self.pending.get(r) != rnd:
            return
        del self.pending[r]
        self.stats.requests += 1
        self.medium.broadcast(r, MsgKind.TOKEN_REQUEST, (rnd, self.priority(r)), self._on_token_request)

    def _on_token_request(self, r: int, sender: int, payload) -> None:
        rnd, advertised = payload
        if r == self.holder and self.walking and rnd == self.round:
            self.round_requests.append((advertised, sender))
        elif self.pending.get(r) == rnd and advertised <= self.priority(r):
            del self.pending[r]  # suppressed

    def _close_window(self, rnd: int) -> None:
        if rnd != self.round or not self.walking:
            return
        reqs = self.round_requests
        o = self.options
        if not reqs:
            self.attempts += 1
            self.stats.announces_without_request += 1
            if self.attempts >= o.max_announce_attempts:
                self.stats.isolated = True
                self._end_walk()
            else:
                self.sim.schedule(o.transfer_timeout, self._announce)
            return
        self.attempts = 0
        if o.selection == SELF_REPELLING:
            low = min(v for v, _ in reqs)
            cands = [s for v, s in reqs if v == low]
        else:
            low = 0
            cands = [s for _, s in reqs]
        dest = cands[self.rng.randrange(len(cands))] if len(cands) > 1 else cands[0]
        if o.record_rounds:
            self.rounds_log.append((low, self.visits[dest], len(reqs)))
        ok = self.medium.unicast(self.holder, dest, MsgKind.TOKEN_TRANSFER, rnd, self._on_transfer)
        if not ok:
            # holder keeps the token and tries again
            self.sim.schedule(o.transfer_timeout, self._announce)

    def _on_transfer(self, r: int, sender: int, rnd: int) -> None:
        if rnd != self.round or not self.walking:
            return
        self.stats.transfers += 1
        self.holder = r
        self.visits[r] += 1
        self.token = self.token.merge(self.push_syn[r])
        self._absorb(r)
        if not self._walk_finished():
            self._announce()

    def token_round(self) -> int:
        """Run exactly one announce/request/transfer transaction; return the holder."""
        self.walking = True
        before = self.stats.transfers
        self._announce()
        self.sim.run(horizon=self.sim.now + 1.0, stop=lambda: self.stats.transfers > before)
        self.round += 1  # invalidate stragglers of the finished round
        return self.holder

    def _end_walk(self) -> None:
        self.walking = False
        self.walk_done = True
        self.stats.walk_time = self.sim.now
        self.disseminate_result()

    # -- phase 4: result flood ---------------------------------------------------

    def disseminate_result(self, holder: int | None = None) -> None:
        u = self.holder if holder is None else holder
        self._accept_result(u, self.token)

    def _accept_result(self, u: int, syn) -> None:
        self.result_seen[u] = 1
        self.results[u] = syn
        self.stats.completion_time = self.sim.now
        self.medium.broadcast(u, MsgKind.RESULT_FLOOD, syn, self._on_result)

    def _on_result(self, r: int, sender: int, syn) -> None:
        if not self.result_seen[r]:
            self._accept_result(r, syn)

    # -- driver -------------------------------------------------------------------

    def run(self) -> TrialStats:
        o = self.options
        self._start_mobility()
        self.flood_request()
        self.sim.schedule(o.token_start_delay, self.start_token)
        _, timed_out = self.sim.run(horizon=o.horizon)
        return self._finalize(timed_out)

    def _finalize(self, timed_out: bool) -> TrialStats:
        s = self.stats
        s.timed_out = timed_out
        s.covered = self.covered_count
        s.complete = self.covered_count >= self.n
        s.visit_histogram = histogram_of(self.visits)
        if timed_out and math.isnan(s.walk_time):
            s.walk_time = self.sim.now
        return s


def run_ezag(world, mobility: MobilityConfig | None = None, options: EzagOptions | None = None, medium: MediumConfig | None = None, seed: int = 0, log: EventLog | None = None) -> TrialStats:
    return EzagRun(world, mobility, options, medium, seed, log).run()


def flood_request(world, initiator: int = 0, medium: MediumConfig | None = None, seed: int = 0) -> int:
    """Flood an aggregate request alone; returns the number of broadcasts."""
    run = EzagRun(world, options=EzagOptions(push_enabled=False, initiator=initiator), medium=medium, seed=seed)
    run.flood_request()
    run.sim.run()
    return run.medium.counts[MsgKind.AGG_REQUEST_FLOOD]


def push_phase(world, medium: MediumConfig | None = None, seed: int = 0, aggregate: str = "max") -> tuple[int, list[OdiSynopsis], list[set[int]]]:
    """Request flood plus push; returns (push messages, push synopses, ids folded per node)."""
    run = EzagRun(world, options=EzagOptions(aggregate=aggregate), medium=medium, seed=seed)
    run.flood_request()
    run.sim.run()
    ids = [{i for i in range(run.n) if bits >> i & 1} for bits in run.push_bits]
    return run.medium.counts[MsgKind.PUSH], run.push_syn, ids


def disseminate_result(world, holder: int, synopsis: OdiSynopsis, medium: MediumConfig | None = None, seed: int = 0) -> tuple[int, list]:
    """Flood ``synopsis`` from ``holder``; returns (messages, per-node stored results)."""
    run = EzagRun(world, options=EzagOptions(push_enabled=False), medium=medium, seed=seed)
    run.token = synopsis
    run.disseminate_result(holder)
    run.sim.run()
    return run.medium.counts[MsgKind.RESULT_FLOOD], run.results


def srrw_options(options: EzagOptions | None = None) -> EzagOptions:
    return replace(options or EzagOptions(), push_enabled=False, selection=SELF_REPELLING)


def plain_rw_options(options: EzagOptions | None = None) -> EzagOptions:
    return replace(options or EzagOptions(), push_enabled=False, selection=UNIFORM)
