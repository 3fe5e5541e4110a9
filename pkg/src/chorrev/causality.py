"""Causal dependencies between the message logs of a configuration.

Rolling back a message must also roll back everything that causally
depended on it.  The dependency relation between logs is built from four
ingredients and then closed under transitivity:

1. logs on the same channel are ordered by their timestamps (the channel
   is a queue fed by a single sender);
2. logs of the same sender are ordered by its send counter across all of
   its channels (the sender's own program order);
3. the static order of the choreography orders logs of different
   channels, except between loop iterations, where the start/end markers
   on the two channels are compared instead: a log of a later round
   depends on a log of an earlier round even when the static order of
   their events says the opposite.  Channels that never carry the loop's
   markers have no observable round, so no such edge is asserted for
   them.  Two marker logs of one multicast map to the same static event
   and are ordered by (2) alone;
4. at each participant, a consumed input precedes a sent output if the
   machine could not have produced that send before that receive in any
   replay of its recorded history.

The replay machinery of (4) is shared with rollback (to restore receiver
states) and with the configuration audit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .model import Channel, Chor, LOOP_END, LOOP_START, Loop, control_points, subterms
from .order import CommEvent, EventOrder, event_for_log, semantics
from .projection import System
from .runtime import ChannelState, Configuration, Log

LogRef = tuple[Channel, Log]


@dataclass(frozen=True)
class LoopRef:
    cp: int
    controller: str
    body_cps: frozenset[int]

    def contains_cp(self, cp: int) -> bool:
        return cp == self.cp or cp in self.body_cps


def loops_of(g: Chor) -> list[LoopRef]:
    out = []
    for node in subterms(g):
        if isinstance(node, Loop):
            out.append(
                LoopRef(
                    node.cp,
                    node.controller,
                    frozenset(cp for cp, _ in control_points(node.body)),
                )
            )
    return out


def round_of(log: Log, loop: LoopRef, channel_logs: tuple[Log, ...]) -> Optional[int]:
    """The iteration of ``loop`` a log on one channel belongs to.

    Rounds are measured by the loop's markers on that channel: a log after
    k end markers, or after k+1 start markers, is in round k.  The round
    is undefined when no marker of the loop appears at or before the log.
    """
    idx = channel_logs.index(log)
    ends_before = sum(
        1
        for l in channel_logs[:idx]
        if l.cp == loop.cp and l.message == LOOP_END
    )
    starts_at_or_before = sum(
        1
        for l in channel_logs[: idx + 1]
        if l.cp == loop.cp and l.message == LOOP_START
    )
    if ends_before == 0 and starts_at_or_before == 0:
        return None
    return max(ends_before, starts_at_or_before - 1)


def ongoing(loop: LoopRef, cfg: Configuration) -> bool:
    """Is the loop still running somewhere in the recorded history?

    True while some channel saw a start marker with no end marker after
    it, or an end marker is still in flight.
    """
    for _, cs in cfg.chi:
        logs = cs.all_logs
        for i, log in enumerate(logs):
            if log.cp == loop.cp and log.message == LOOP_START:
                if not any(
                    later.cp == loop.cp and later.message == LOOP_END
                    for later in logs[i + 1 :]
                ):
                    return True
        if any(l.cp == loop.cp and l.message == LOOP_END for l in cs.pending):
            return True
    return False


def all_log_refs(cfg: Configuration) -> list[LogRef]:
    return [(ch, log) for ch, cs in cfg.chi for log in cs.all_logs]


def locate_log(cfg: Configuration, log: Log) -> Channel:
    for ch, cs in cfg.chi:
        if log in cs.all_logs:
            return ch
    raise KeyError(f"log {log} is not part of the configuration")


class CausalityAnalyzer:
    """Causality queries against one projected system, with caching."""

    def __init__(self, system: System):
        self.system = system
        self.order: EventOrder = semantics(system.chor)
        self.loops = loops_of(system.chor)
        self._relations: dict[tuple, frozenset[tuple[LogRef, LogRef]]] = {}
        self._bases: dict[tuple, dict[tuple[LogRef, LogRef], list[str]]] = {}
        self._replays: dict[tuple, frozenset[tuple[int, ...]]] = {}

    # -- static helpers ------------------------------------------------

    def _event_of(self, log: Log) -> CommEvent:
        return event_for_log(self.system.chor, log.cp, log.message)

    def _innermost_common_loop(self, cp1: int, cp2: int) -> Optional[LoopRef]:
        common = [
            L for L in self.loops if L.contains_cp(cp1) and L.contains_cp(cp2)
        ]
        if not common:
            return None
        return min(common, key=lambda L: len(L.body_cps))

    def _outermost_loop(self, cp: int) -> Optional[LoopRef]:
        enclosing = [L for L in self.loops if L.contains_cp(cp)]
        if not enclosing:
            return None
        return max(enclosing, key=lambda L: len(L.body_cps))

    # -- the relation ----------------------------------------------------

    def base_relation(self, cfg: Configuration) -> dict[tuple[LogRef, LogRef], list[str]]:
        """The asserted dependency edges with the clauses that produced them."""
        if cfg.chi in self._bases:
            return self._bases[cfg.chi]
        edges: dict[tuple[LogRef, LogRef], list[str]] = {}

        def add(src: LogRef, dst: LogRef, why: str) -> None:
            edges.setdefault((src, dst), []).append(why)

        refs = all_log_refs(cfg)
        logs_on: dict[Channel, tuple[Log, ...]] = {
            ch: cs.all_logs for ch, cs in cfg.chi
        }

        # (1) queue order per channel
        for ch, logs in logs_on.items():
            for i in range(len(logs)):
                for j in range(i + 1, len(logs)):
                    add((ch, logs[i]), (ch, logs[j]), "channel-order")

        # (2) the sender's program order across its channels
        for i, (ch1, l1) in enumerate(refs):
            for ch2, l2 in refs[i + 1 :]:
                if ch1 is not ch2 and ch1.sender == ch2.sender and ch1 != ch2:
                    if l1.timestamp < l2.timestamp:
                        add((ch1, l1), (ch2, l2), "sender-order")
                    elif l2.timestamp < l1.timestamp:
                        add((ch2, l2), (ch1, l1), "sender-order")

        # (3) static order, refined by loop rounds
        for i, (ch1, l1) in enumerate(refs):
            for ch2, l2 in refs[i + 1 :]:
                if ch1 == ch2:
                    continue
                e1 = self._event_of(l1)
                e2 = self._event_of(l2)
                if e1 == e2:
                    continue
                if self.order.leq(e1, e2):
                    first, second = (ch1, l1), (ch2, l2)
                elif self.order.leq(e2, e1):
                    first, second = (ch2, l2), (ch1, l1)
                else:
                    continue
                loop = self._innermost_common_loop(
                    first[1].cp, second[1].cp
                )
                if loop is None:
                    add(first, second, "static-order")
                    continue
                sep1 = any(l.cp == loop.cp for l in logs_on[first[0]])
                sep2 = any(l.cp == loop.cp for l in logs_on[second[0]])
                if not (sep1 and sep2):
                    continue
                n = round_of(first[1], loop, logs_on[first[0]])
                m = round_of(second[1], loop, logs_on[second[0]])
                if n is None or m is None:
                    continue
                if n <= m:
                    add(first, second, "loop-rounds")
                else:
                    add(second, first, "loop-rounds")

        # (4) forced receive-before-send order at each participant
        for participant in self.system.machines:
            for pair in self._forced_pairs(cfg, participant):
                add(pair[0], pair[1], "replay-order")

        self._bases[cfg.chi] = edges
        return edges

    def relation(self, cfg: Configuration) -> frozenset[tuple[LogRef, LogRef]]:
        """The full dependency relation: reflexive-transitive closure."""
        if cfg.chi in self._relations:
            return self._relations[cfg.chi]
        refs = all_log_refs(cfg)
        succ: dict[LogRef, set[LogRef]] = {r: set() for r in refs}
        for (src, dst) in self.base_relation(cfg):
            succ[src].add(dst)
        pairs: set[tuple[LogRef, LogRef]] = set()
        for start in refs:
            seen = {start}
            stack = [start]
            while stack:
                for nxt in succ[stack.pop()]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            pairs.update((start, r) for r in seen)
        rel = frozenset(pairs)
        self._relations[cfg.chi] = rel
        return rel

    def precedes(self, cfg: Configuration, first: LogRef, second: LogRef) -> bool:
        return (first, second) in self.relation(cfg)

    def successors(self, cfg: Configuration, ref: LogRef) -> set[LogRef]:
        rel = self.relation(cfg)
        return {other for other in all_log_refs(cfg) if (ref, other) in rel and other != ref}

    def effects(self, cfg: Configuration, ref: LogRef) -> set[LogRef]:
        """Everything that must be undone together with ``ref`` (inclusive)."""
        rel = self.relation(cfg)
        return {other for other in all_log_refs(cfg) if (ref, other) in rel}

    # -- rollback points ---------------------------------------------------

    def rollback_points(self, cfg: Configuration) -> set[LogRef]:
        """Logs history can be rewound to.

        A log outside every loop qualifies only if nothing depends on it.
        A log inside a loop qualifies while its outermost loop is still
        ongoing and everything depending on it belongs to that same loop.
        """
        points: set[LogRef] = set()
        for ref in all_log_refs(cfg):
            _, log = ref
            encl = self._outermost_loop(log.cp)
            succs = self.successors(cfg, ref)
            if encl is None:
                if not succs:
                    points.add(ref)
                continue
            if not ongoing(encl, cfg):
                continue
            if all(encl.contains_cp(other[1].cp) for other in succs):
                points.add(ref)
        return points

    # -- replay ------------------------------------------------------------

    def _replay_setup(self, cfg: Configuration, participant: str):
        consumed: dict[Channel, tuple[Log, ...]] = {}
        outputs: list[LogRef] = []
        for ch, cs in cfg.chi:
            if ch.receiver == participant and cs.consumed:
                consumed[ch] = cs.consumed
            if ch.sender == participant:
                outputs.extend((ch, log) for log in cs.all_logs)
        outputs.sort(key=lambda ref: ref[1].timestamp)
        return consumed, tuple(outputs)

    def _replay_graph(self, participant: str, consumed, outputs):
        """All complete replays of a participant's recorded history.

        Returns (complete, moves) where ``complete`` maps replay nodes to
        whether a full replay is still possible from them, and ``moves``
        lists (node, action, next) triples for reachable nodes.  A node is
        (machine state, per-channel consumption index..., emission index).
        Inputs of one channel replay in queue order, outputs in timestamp
        order; an output step additionally requires the machine to be in
        the state the log recorded.
        """
        machine = self.system.machines[participant]
        channels = sorted(consumed)
        key = (
            participant,
            tuple((ch, consumed[ch]) for ch in channels),
            outputs,
        )
        if key in self._replays:
            return self._replays[key]

        start = (machine.initial,) + (0,) * len(channels) + (0,)
        n_ch = len(channels)

        def moves(node):
            state = node[0]
            out = []
            for k in range(n_ch):
                i = node[1 + k]
                queue = consumed[channels[k]]
                if i < len(queue):
                    log = queue[i]
                    ev = CommEvent(channels[k], "?", log.cp, log.message)
                    t = machine.step(state, ev)
                    if t is not None:
                        nxt = (
                            (t.dst,)
                            + node[1 : 1 + k]
                            + (i + 1,)
                            + node[2 + k : ]
                        )
                        out.append((("inp", channels[k], i), nxt))
            j = node[1 + n_ch]
            if j < len(outputs):
                ch, log = outputs[j]
                if state == log.sender_state:
                    ev = CommEvent(ch, "!", log.cp, log.message)
                    t = machine.step(state, ev)
                    if t is not None:
                        nxt = (t.dst,) + node[1:-1] + (j + 1,)
                        out.append((("out", j), nxt))
            return out

        complete: dict[tuple, bool] = {}
        all_moves: list[tuple] = []

        def is_final(node) -> bool:
            return all(
                node[1 + k] == len(consumed[channels[k]]) for k in range(n_ch)
            ) and node[1 + n_ch] == len(outputs)

        def can_complete(node) -> bool:
            if node in complete:
                return complete[node]
            if is_final(node):
                complete[node] = True
                return True
            complete[node] = False
            ok = False
            for action, nxt in moves(node):
                if can_complete(nxt):
                    ok = True
            complete[node] = ok
            return ok

        can_complete(start)
        seen = {start}
        queue = [start]
        while queue:
            node = queue.pop()
            for action, nxt in moves(node):
                if complete.get(nxt):
                    all_moves.append((node, action, nxt))
                    if nxt not in seen:
                        seen.add(nxt)
                        queue.append(nxt)

        result = (channels, start, complete, tuple(all_moves))
        self._replays[key] = result
        return result

    def _forced_pairs(self, cfg: Configuration, participant: str):
        """Input/output log pairs ordered the same way in every replay."""
        consumed, outputs = self._replay_setup(cfg, participant)
        if not consumed or not outputs:
            return []
        channels, start, complete, moves = self._replay_graph(
            participant, consumed, outputs
        )
        if not complete.get(start):
            return []
        unforced: set[tuple[int, int, int]] = set()  # (channel idx, input idx, output idx)
        for node, action, _ in moves:
            if action[0] != "out":
                continue
            j = action[1]
            for k in range(len(channels)):
                for i in range(node[1 + k], len(consumed[channels[k]])):
                    unforced.add((k, i, j))
        pairs = []
        for k, ch in enumerate(channels):
            for i, log in enumerate(consumed[ch]):
                for j, (och, olog) in enumerate(outputs):
                    if (k, i, j) not in unforced:
                        pairs.append(((ch, log), (och, olog)))
        return pairs

    def replay_end_states(self, cfg: Configuration, participant: str) -> frozenset[int]:
        """Machine states a full replay of the recorded history can end in."""
        consumed, outputs = self._replay_setup(cfg, participant)
        channels, start, complete, moves = self._replay_graph(
            participant, consumed, outputs
        )
        if not complete.get(start):
            return frozenset()
        n_ch = len(channels)

        def is_final(node) -> bool:
            return all(
                node[1 + k] == len(consumed[channels[k]]) for k in range(n_ch)
            ) and node[1 + n_ch] == len(outputs)

        finals = set()
        if is_final(start):
            finals.add(start[0])
        for _, _, nxt in moves:
            if is_final(nxt):
                finals.add(nxt[0])
        return frozenset(finals)


def audit_configuration(cfg: Configuration, system: System, analyzer: Optional[CausalityAnalyzer] = None) -> list[str]:
    """Diagnostic consistency check of a configuration against its history.

    For every participant, some complete replay of its consumed inputs and
    sent outputs must exist and be able to end in its current state.
    """
    analyzer = analyzer or CausalityAnalyzer(system)
    problems = []
    for a in sorted(system.machines):
        ends = analyzer.replay_end_states(cfg, a)
        if not ends:
            problems.append(f"{a}: recorded history cannot be replayed at all")
        elif cfg.state_of(a) not in ends:
            problems.append(
                f"{a}: current state {cfg.state_of(a)} unreachable by replay"
                f" (possible: {sorted(ends)})"
            )
    return problems
