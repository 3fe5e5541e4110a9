"""Bounded exploration of a projected system, and the metatheory checks.

Two reachability routes are kept deliberately separate.  ``reachable``
drives the full instrumented semantics (logs, timestamps, the book,
optionally reversals).  ``plain_reachable`` is an independent stepper
over the forgetful image of the machines: plain states and pending
words, nothing else.  The checks compare the two; sharing the stepping
logic between them would make the comparison circular.

Exploration is bounded in two ways: a cap on the number of transitions
(breadth-first depth) and a cap on loop rounds, enforced by refusing to
send a loop's continue marker on a channel that already carries the
maximum number of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

from . import reverse, runtime
from .causality import CausalityAnalyzer, audit_configuration
from .machine import forget_machine
from .model import LOOP_START, Channel
from .projection import System
from .reverse import ReversalCandidate
from .runtime import FULL, Configuration

PlainConfig = tuple


@dataclass(frozen=True)
class Bound:
    max_steps: int
    max_rounds: int

    def __post_init__(self):
        if self.max_steps < 0 or self.max_rounds < 1:
            raise ValueError("bounds must allow at least one round and no negative steps")


@dataclass
class ExplorationResult:
    configs: frozenset[Configuration]
    truncated: bool
    reversal_edges: tuple[tuple[Configuration, ReversalCandidate, Configuration], ...]
    steps_explored: int


@dataclass
class PlainResult:
    configs: frozenset[PlainConfig]
    truncated: bool
    steps_explored: int


def marker_count(cfg: Configuration, channel: Channel, cp: int) -> int:
    """How many continue markers of a loop the channel's history carries."""
    return sum(
        1
        for log in cfg.channel_state(channel).all_logs
        if log.message == LOOP_START and log.cp == cp
    )


def _forward_successors(
    cfg: Configuration,
    system: System,
    bound: Bound,
    scope: str,
    block_on_guard: bool,
) -> Iterator[Configuration]:
    for a, t in runtime.enabled_forward(cfg, system, scope, block_on_guard):
        ev = t.event
        if ev.polarity == "!":
            if ev.message == LOOP_START and marker_count(cfg, ev.channel, ev.cp) >= bound.max_rounds:
                continue
            yield runtime.step_output(cfg, system, a, t, scope, block_on_guard)
        else:
            yield runtime.step_input(cfg, system, a, t)


def reachable(
    system: System,
    bound: Bound,
    with_reversals: bool = False,
    scope: str = FULL,
    block_on_guard: bool = False,
    analyzer: Optional[CausalityAnalyzer] = None,
) -> ExplorationResult:
    """Breadth-first reachability of the instrumented semantics."""
    if with_reversals and analyzer is None:
        analyzer = CausalityAnalyzer(system)
    init = runtime.initial_configuration(system)
    seen = {init}
    frontier = [init]
    edges: list[tuple[Configuration, ReversalCandidate, Configuration]] = []
    depth = 0
    truncated = False
    while frontier:
        if depth == bound.max_steps:
            truncated = any(
                succ not in seen
                for cfg in frontier
                for succ in _forward_successors(cfg, system, bound, scope, block_on_guard)
            )
            break
        layer: list[Configuration] = []
        for cfg in frontier:
            for succ in _forward_successors(cfg, system, bound, scope, block_on_guard):
                if succ not in seen:
                    seen.add(succ)
                    layer.append(succ)
            if with_reversals:
                for cand in reverse.enabled_reversals(cfg, system, analyzer, scope):
                    succ = reverse.step_reverse(cfg, system, cand, analyzer, scope)
                    edges.append((cfg, cand, succ))
                    if succ not in seen:
                        seen.add(succ)
                        layer.append(succ)
        frontier = layer
        depth += 1
    return ExplorationResult(frozenset(seen), truncated, tuple(edges), depth)


# ---------------------------------------------------------------------------
# The plain route


def _plain_node(sigma: dict, words: dict, ghost: dict):
    return (
        tuple(sorted(sigma.items())),
        tuple(sorted((ch, w) for ch, w in words.items() if w)),
        tuple(sorted(ghost.items())),
    )


def _plain_successors(node, machines, bound: Bound) -> Iterator[tuple]:
    sigma_t, words_t, ghost_t = node
    sigma = dict(sigma_t)
    words = dict(words_t)
    ghost = dict(ghost_t)
    for a in sorted(sigma):
        for t in machines[a].out_of(sigma[a]):
            ev = t.event
            if ev.polarity == "!":
                key = (ev.cp, ev.channel)
                if ev.message == LOOP_START and ghost.get(key, 0) >= bound.max_rounds:
                    continue
                ns = dict(sigma)
                ns[a] = t.dst
                nw = dict(words)
                nw[ev.channel] = nw.get(ev.channel, ()) + ((ev.message, ev.cp),)
                ng = dict(ghost)
                if ev.message == LOOP_START:
                    ng[key] = ng.get(key, 0) + 1
                yield _plain_node(ns, nw, ng)
            else:
                w = words.get(ev.channel, ())
                if w and w[0] == (ev.message, ev.cp):
                    ns = dict(sigma)
                    ns[a] = t.dst
                    nw = dict(words)
                    nw[ev.channel] = w[1:]
                    yield _plain_node(ns, nw, ghost)


def plain_reachable(system: System, bound: Bound) -> PlainResult:
    """Reachability of the plain communicating machines, forward only.

    Round counting needs a memory the plain configurations lack (they
    drop consumed messages), so the search state carries ghost marker
    counters that are projected away from the reported set.
    """
    machines = {a: forget_machine(m) for a, m in system.machines.items()}
    start = _plain_node({a: m.initial for a, m in machines.items()}, {}, {})
    seen = {start}
    frontier = [start]
    depth = 0
    truncated = False
    while frontier:
        if depth == bound.max_steps:
            truncated = any(
                succ not in seen
                for node in frontier
                for succ in _plain_successors(node, machines, bound)
            )
            break
        layer = []
        for node in frontier:
            for succ in _plain_successors(node, machines, bound):
                if succ not in seen:
                    seen.add(succ)
                    layer.append(succ)
        frontier = layer
        depth += 1
    configs = frozenset((sigma, words) for sigma, words, _ in seen)
    return PlainResult(configs, truncated, depth)


# ---------------------------------------------------------------------------
# Checks


@dataclass
class CheckResult:
    name: str
    passed: bool
    inconclusive: bool
    details: str
    stats: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        if not self.passed:
            return "fail"
        return "inconclusive" if self.inconclusive else "pass"


def _format_plain(pc: PlainConfig) -> str:
    sigma, words = pc
    states = ", ".join(f"{a}:{q}" for a, q in sigma)
    if not words:
        return f"[{states}] empty channels"
    queues = "; ".join(
        f"{ch}=" + ".".join(m for m, _ in w) for ch, w in words
    )
    return f"[{states}] {queues}"


def check_soundness(
    system: System,
    bound: Bound,
    scope: str = FULL,
    block_on_guard: bool = False,
) -> CheckResult:
    """Forward runs of the instrumented semantics stay inside the plain one."""
    dec = reachable(system, bound, with_reversals=False, scope=scope, block_on_guard=block_on_guard)
    plain = plain_reachable(system, bound)
    images = {runtime.forget_config(c) for c in dec.configs}
    missing = sorted(images - plain.configs)
    stats = {
        "instrumented_configs": len(dec.configs),
        "plain_configs": len(plain.configs),
        "images": len(images),
    }
    if missing:
        detail = "instrumented run escapes the plain semantics: " + _format_plain(missing[0])
        return CheckResult("soundness", False, False, detail, stats)
    inconclusive = dec.truncated or plain.truncated
    detail = f"{len(images)} forgetful images, all plain-reachable"
    if inconclusive:
        detail += " (state space not exhausted at this bound)"
    return CheckResult("soundness", True, inconclusive, detail, stats)


def check_completeness(
    system: System,
    bound: Bound,
    scope: str = FULL,
    block_on_guard: bool = False,
) -> CheckResult:
    """Every plain behaviour is realised by some instrumented run."""
    dec = reachable(system, bound, with_reversals=False, scope=scope, block_on_guard=block_on_guard)
    plain = plain_reachable(system, bound)
    images = {runtime.forget_config(c) for c in dec.configs}
    missing = sorted(plain.configs - images)
    stats = {
        "instrumented_configs": len(dec.configs),
        "plain_configs": len(plain.configs),
        "images": len(images),
    }
    if missing:
        detail = "plain configuration never realised: " + _format_plain(missing[0])
        return CheckResult("completeness", False, False, detail, stats)
    inconclusive = dec.truncated or plain.truncated
    detail = f"{len(plain.configs)} plain configurations, all realised"
    if inconclusive:
        detail += " (state space not exhausted at this bound)"
    return CheckResult("completeness", True, inconclusive, detail, stats)


def check_causal_consistency(
    system: System,
    bound: Bound,
    scope: str = FULL,
    block_on_guard: bool = False,
) -> CheckResult:
    """Rollbacks land on configurations the plain semantics could reach.

    Every reversal edge found within the bound is checked twice: its
    target must pass the replay audit, and the target's forgetful image
    must lie in the plain reachable set.
    """
    analyzer = CausalityAnalyzer(system)
    dec = reachable(
        system,
        bound,
        with_reversals=True,
        scope=scope,
        block_on_guard=block_on_guard,
        analyzer=analyzer,
    )
    plain = plain_reachable(system, bound)
    stats = {
        "instrumented_configs": len(dec.configs),
        "plain_configs": len(plain.configs),
        "reversal_edges": len(dec.reversal_edges),
    }
    for pre, cand, post in dec.reversal_edges:
        problems = audit_configuration(post, system, analyzer)
        if problems:
            detail = (
                f"rollback of {cand.first_output.message} by {cand.participant}"
                f" leaves an inconsistent configuration: {problems[0]}"
            )
            return CheckResult("causal-consistency", False, False, detail, stats)
        if runtime.forget_config(post) not in plain.configs:
            detail = (
                f"rollback of {cand.first_output.message} by {cand.participant}"
                " reaches a configuration outside the plain semantics: "
                + _format_plain(runtime.forget_config(post))
            )
            return CheckResult("causal-consistency", False, False, detail, stats)
    if not dec.reversal_edges:
        detail = "no reversal was enabled within the bound"
        return CheckResult("causal-consistency", True, True, detail, stats)
    inconclusive = dec.truncated or plain.truncated
    detail = f"{len(dec.reversal_edges)} reversal edges, all consistent"
    if inconclusive:
        detail += " (state space not exhausted at this bound)"
    return CheckResult("causal-consistency", True, inconclusive, detail, stats)


CHECKS = {
    "soundness": check_soundness,
    "completeness": check_completeness,
    "causal-consistency": check_causal_consistency,
}


def run_checks(
    system: System,
    bound: Bound,
    names: Optional[list[str]] = None,
    scope: str = FULL,
    block_on_guard: bool = False,
) -> list[CheckResult]:
    selected = list(CHECKS) if not names else names
    out = []
    for name in selected:
        if name not in CHECKS:
            raise ValueError(f"unknown check {name!r}; pick from {', '.join(CHECKS)}")
        out.append(CHECKS[name](system, bound, scope, block_on_guard))
    return out
