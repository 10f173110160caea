"""Simulated shared-nothing cluster with barrier-synchronised rounds.

A round program is called once per machine with a :class:`MachineContext`
and returns ``(new_store, outbox)`` where ``outbox`` maps destination machine
ids to sized messages (anything with ``len``). Messages are delivered at the
barrier and become the destinations' inboxes for the next round.

Accounting, per round and machine, all in records:

* ``loaded``    -- input placed on the machine from outside (the initial scatter)
* ``sent`` / ``received`` -- runtime messages, self-sends included on both sides
* ``processed`` -- records the program reports touching (computational cost)
* ``produced``  -- new output records (join tuples); sorting produces none
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import ConfigError, RoutingError


def machine_rng(seed: int, machine_id: int) -> np.random.Generator:
    """Independent deterministic stream for one machine."""
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), machine_id]))


def message_size(msg) -> int:
    if isinstance(msg, dict):
        return sum(message_size(v) for v in msg.values())
    return len(msg)


@dataclass
class MachineState:
    id: int
    rng: np.random.Generator
    store: Any = None
    inbox: dict = field(default_factory=dict)


@dataclass
class MachineContext:
    """What a round program may see and touch for one machine."""

    id: int
    t: int
    store: Any
    inbox: dict
    rng: np.random.Generator
    processed: int = 0
    produced: int = 0

    def touch(self, n: int) -> None:
        self.processed += int(n)

    def emit(self, n: int) -> None:
        self.produced += int(n)


@dataclass
class RoundStats:
    round_index: int
    label: str
    sent: list
    received: list
    processed: list
    produced: list
    loaded: list

    @property
    def t(self) -> int:
        return len(self.sent)

    def workload(self) -> list:
        return [l + r + p for l, r, p in zip(self.loaded, self.received, self.produced)]

    def network(self) -> list:
        return [l + s + r for l, s, r in zip(self.loaded, self.sent, self.received)]


class Cluster:
    def __init__(self, t: int, seed: int = 0, workers: int = 1):
        if t < 1:
            raise ConfigError(f"machine count must be >= 1, got {t}")
        self.t = t
        self.seed = seed
        self.workers = workers
        self.machines = [MachineState(i, machine_rng(seed, i)) for i in range(1, t + 1)]
        self.round_log: list[RoundStats] = []
        self._pending_load = [0] * t

    def machine(self, machine_id: int) -> MachineState:
        return self.machines[machine_id - 1]

    def scatter(self, parts) -> None:
        """Place initial partitions; counted as ``loaded`` in the next round."""
        if len(parts) != self.t:
            raise ConfigError(f"expected {self.t} partitions, got {len(parts)}")
        for m, part in zip(self.machines, parts):
            m.store = part
            self._pending_load[m.id - 1] += message_size(part)

    def stores(self) -> list:
        return [m.store for m in self.machines]

    def _run(self, program, contexts):
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(program, contexts))
        return [program(c) for c in contexts]

    def _contexts(self):
        return [MachineContext(m.id, self.t, m.store, m.inbox, m.rng) for m in self.machines]

    def execute_round(self, program: Callable[[MachineContext], tuple], label: str = "") -> RoundStats:
        t = self.t
        contexts = self._contexts()
        results = self._run(program, contexts)

        # validate every outbox before mutating anything so a bad round aborts cleanly
        for ctx, (_, outbox) in zip(contexts, results):
            for dest in (outbox or {}):
                if not (isinstance(dest, (int, np.integer)) and 1 <= dest <= t):
                    raise RoutingError(f"machine {ctx.id} sent to machine {dest!r}; valid ids are 1..{t}")

        sent = [0] * t
        received = [0] * t
        new_inboxes = [dict() for _ in range(t)]
        for ctx, (_, outbox) in zip(contexts, results):
            for dest, msg in sorted((outbox or {}).items()):
                size = message_size(msg)
                sent[ctx.id - 1] += size
                received[dest - 1] += size
                new_inboxes[dest - 1][ctx.id] = msg

        for m, ctx, (store, _), inbox in zip(self.machines, contexts, results, new_inboxes):
            m.store = store
            m.inbox = inbox

        stats = RoundStats(
            round_index=len(self.round_log) + 1,
            label=label,
            sent=sent,
            received=received,
            processed=[c.processed for c in contexts],
            produced=[c.produced for c in contexts],
            loaded=self._pending_load,
        )
        self._pending_load = [0] * t
        self.round_log.append(stats)
        return stats

    def collect(self, program: Callable[[MachineContext], Any]) -> None:
        """Receive-side processing of the last barrier's deliveries.

        Runs ``program(ctx) -> new_store`` on every machine without sending;
        costs are charged to the most recent round, which is where the
        delivered data belongs.
        """
        if not self.round_log:
            raise ConfigError("collect() needs a completed round")
        contexts = self._contexts()
        stores = self._run(program, contexts)
        last = self.round_log[-1]
        for m, ctx, store in zip(self.machines, contexts, stores):
            m.store = store
            m.inbox = {}
            last.processed[m.id - 1] += ctx.processed
            last.produced[m.id - 1] += ctx.produced


def create_cluster(t: int, seed: int = 0, workers: int = 1) -> Cluster:
    return Cluster(t, seed, workers)
