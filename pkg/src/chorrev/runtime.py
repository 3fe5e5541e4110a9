"""Forward execution of a projected system.

A configuration records, for every participant, its current machine state;
for every channel, two queues of message logs (already consumed by the
receiver, and still pending); and a book of decision states, remembering
which branch families were already tried there and whether the
alternatives are exhausted.

A log carries the message, the state the sender was in when it sent it,
the control point of the originating construct, and a timestamp that is
local to the sender (its send counter across all of its channels).  Logs
are never discarded by forward execution; consuming an input only moves
the log from the pending queue to the consumed queue.  This is what makes
rollback possible later.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Union

from .machine import Committed, Ongoing, RCfsm, Transition, Unit
from .model import (
    And,
    Channel,
    CountAtom,
    GFalse,
    GTrue,
    Guard,
    MemberAtom,
    Not,
    Or,
)
from .order import CommEvent
from .projection import System

FULL = "full"
PENDING = "pending"


class NotEnabled(Exception):
    pass


@dataclass(frozen=True)
class Log:
    message: str
    sender_state: int
    cp: int
    timestamp: int

    def __str__(self) -> str:
        return f"({self.message}, {self.sender_state}, {self.cp}, {self.timestamp})"


@dataclass(frozen=True)
class ChannelState:
    consumed: tuple[Log, ...] = ()
    pending: tuple[Log, ...] = ()

    @property
    def all_logs(self) -> tuple[Log, ...]:
        return self.consumed + self.pending


EMPTY_CHANNEL = ChannelState()


@dataclass(frozen=True)
class BookEntry:
    tried: frozenset[tuple[CommEvent, Guard]] = frozenset()
    exhausted: bool = False


EMPTY_ENTRY = BookEntry()


@dataclass(frozen=True)
class Configuration:
    """An immutable, canonically ordered snapshot of the whole system."""

    sigma: tuple[tuple[str, int], ...]
    chi: tuple[tuple[Channel, ChannelState], ...]
    book: tuple[tuple[str, int, BookEntry], ...]

    @staticmethod
    def make(
        sigma: dict[str, int],
        chi: dict[Channel, ChannelState],
        book: dict[tuple[str, int], BookEntry],
    ) -> "Configuration":
        return Configuration(
            tuple(sorted(sigma.items())),
            tuple(
                sorted(
                    ((c, s) for c, s in chi.items() if s.consumed or s.pending),
                    key=lambda pair: pair[0],
                )
            ),
            tuple(
                sorted(
                    ((a, q, e) for (a, q), e in book.items() if e != EMPTY_ENTRY),
                    key=lambda triple: (triple[0], triple[1]),
                )
            ),
        )

    @cached_property
    def _sigma(self) -> dict[str, int]:
        return dict(self.sigma)

    @cached_property
    def _chi(self) -> dict[Channel, ChannelState]:
        return dict(self.chi)

    @cached_property
    def _book(self) -> dict[tuple[str, int], BookEntry]:
        return {(a, q): e for a, q, e in self.book}

    def state_of(self, participant: str) -> int:
        return self._sigma[participant]

    def channel_state(self, channel: Channel) -> ChannelState:
        return self._chi.get(channel, EMPTY_CHANNEL)

    def book_entry(self, participant: str, state: int) -> BookEntry:
        return self._book.get((participant, state), EMPTY_ENTRY)

    def sigma_dict(self) -> dict[str, int]:
        return dict(self.sigma)

    def chi_dict(self) -> dict[Channel, ChannelState]:
        return dict(self.chi)

    def book_dict(self) -> dict[tuple[str, int], BookEntry]:
        return {(a, q): e for a, q, e in self.book}


def initial_configuration(system: System) -> Configuration:
    return Configuration.make(
        {a: m.initial for a, m in system.machines.items()}, {}, {}
    )


def next_timestamp(cfg: Configuration, sender: str) -> int:
    """One past the largest timestamp the sender ever stamped on a log."""
    latest = 0
    for ch, cs in cfg.chi:
        if ch.sender == sender:
            for log in cs.all_logs:
                latest = max(latest, log.timestamp)
    return latest + 1


# ---------------------------------------------------------------------------
# Guards


def message_count(
    source: "Configuration | dict[Channel, ChannelState]",
    message: str,
    channel: Channel,
    scope: str = FULL,
) -> int:
    if isinstance(source, Configuration):
        cs = source.channel_state(channel)
    else:
        cs = source.get(channel, EMPTY_CHANNEL)
    logs = cs.pending if scope == PENDING else cs.all_logs
    return sum(1 for log in logs if log.message == message)


_OPS = {
    "<": lambda n, k: n < k,
    "<=": lambda n, k: n <= k,
    "==": lambda n, k: n == k,
    ">=": lambda n, k: n >= k,
    ">": lambda n, k: n > k,
}


def eval_guard(
    g: Guard,
    source: "Configuration | dict[Channel, ChannelState]",
    scope: str = FULL,
) -> bool:
    if isinstance(g, GTrue):
        return True
    if isinstance(g, GFalse):
        return False
    if isinstance(g, CountAtom):
        return _OPS[g.op](message_count(source, g.message, g.channel, scope), g.bound)
    if isinstance(g, MemberAtom):
        return message_count(source, g.message, g.channel, scope) >= 1
    if isinstance(g, Not):
        return not eval_guard(g.inner, source, scope)
    if isinstance(g, Or):
        return eval_guard(g.left, source, scope) or eval_guard(g.right, source, scope)
    if isinstance(g, And):
        return eval_guard(g.left, source, scope) and eval_guard(g.right, source, scope)
    raise TypeError(f"not a guard: {g!r}")


# ---------------------------------------------------------------------------
# Book updates


def upd_out(
    book: dict[tuple[str, int], BookEntry], participant: str, deco
) -> Optional[dict[tuple[str, int], BookEntry]]:
    """Book update for an output; ``None`` when the output is forbidden.

    Taking a branch family that was already tried is only allowed once the
    decision state's alternatives are exhausted; committing out of a branch
    clears the decision state's entry.
    """
    if isinstance(deco, Unit):
        return book
    entry = book.get((participant, deco.choice_state), EMPTY_ENTRY)
    if (deco.first_output, deco.guard) in entry.tried and not entry.exhausted:
        return None
    if isinstance(deco, Committed):
        cleared = dict(book)
        cleared.pop((participant, deco.choice_state), None)
        return cleared
    return book


def upd_inp(
    book: dict[tuple[str, int], BookEntry], participant: str, deco
) -> dict[tuple[str, int], BookEntry]:
    """Book update for an input (always defined)."""
    if isinstance(deco, Committed):
        cleared = dict(book)
        cleared.pop((participant, deco.choice_state), None)
        return cleared
    return dict(book)


def decoration_valid(cfg: Configuration, participant: str, deco) -> bool:
    return upd_out(cfg.book_dict(), participant, deco) is not None


# ---------------------------------------------------------------------------
# Steps


def output_blocked_by_guard(
    cfg: Configuration, participant: str, deco, scope: str = FULL
) -> bool:
    """Guard-sensitive blocking: a revertible output whose guard holds waits."""
    if isinstance(deco, Unit):
        return False
    entry = cfg.book_entry(participant, deco.choice_state)
    return not entry.exhausted and eval_guard(deco.guard, cfg, scope)


def _check_output(
    cfg: Configuration,
    participant: str,
    t: Transition,
    scope: str,
    block_on_guard: bool,
) -> Optional[str]:
    if t.event.polarity != "!":
        return "not an output transition"
    if cfg.state_of(participant) != t.src:
        return f"{participant} is not in state {t.src}"
    if upd_out(cfg.book_dict(), participant, t.decoration) is None:
        return "this branch family was already tried here"
    if block_on_guard and output_blocked_by_guard(cfg, participant, t.decoration, scope):
        return "the branch guard holds, the output is blocked"
    return None


def _check_input(cfg: Configuration, participant: str, t: Transition) -> Optional[str]:
    if t.event.polarity != "?":
        return "not an input transition"
    if cfg.state_of(participant) != t.src:
        return f"{participant} is not in state {t.src}"
    cs = cfg.channel_state(t.event.channel)
    if not cs.pending:
        return f"nothing pending on {t.event.channel}"
    head = cs.pending[0]
    if head.message != t.event.message or head.cp != t.event.cp:
        return (
            f"the head of {t.event.channel} is {head}, which does not match"
            f" {t.event.message}/{t.event.cp}"
        )
    return None


def step_output(
    cfg: Configuration,
    system: System,
    participant: str,
    t: Transition,
    scope: str = FULL,
    block_on_guard: bool = False,
) -> Configuration:
    """Send a message: stamp a log and append it to the channel's pending queue."""
    reason = _check_output(cfg, participant, t, scope, block_on_guard)
    if reason is not None:
        raise NotEnabled(reason)
    book = upd_out(cfg.book_dict(), participant, t.decoration)
    assert book is not None
    sigma = cfg.sigma_dict()
    chi = cfg.chi_dict()
    log = Log(t.event.message, sigma[participant], t.event.cp, next_timestamp(cfg, participant))
    cs = chi.get(t.event.channel, EMPTY_CHANNEL)
    chi[t.event.channel] = ChannelState(cs.consumed, cs.pending + (log,))
    sigma[participant] = t.dst
    return Configuration.make(sigma, chi, book)


def step_input(
    cfg: Configuration, system: System, participant: str, t: Transition
) -> Configuration:
    """Receive the head of the pending queue, moving its log to consumed."""
    reason = _check_input(cfg, participant, t)
    if reason is not None:
        raise NotEnabled(reason)
    sigma = cfg.sigma_dict()
    chi = cfg.chi_dict()
    cs = chi[t.event.channel]
    head = cs.pending[0]
    chi[t.event.channel] = ChannelState(cs.consumed + (head,), cs.pending[1:])
    sigma[participant] = t.dst
    book = upd_inp(cfg.book_dict(), participant, t.decoration)
    return Configuration.make(sigma, chi, book)


def enabled_forward(
    cfg: Configuration,
    system: System,
    scope: str = FULL,
    block_on_guard: bool = False,
) -> list[tuple[str, Transition]]:
    """All forward moves available in ``cfg``, in a deterministic order."""
    moves = []
    for a in sorted(system.machines):
        machine = system.machines[a]
        state = cfg.state_of(a)
        for t in machine.out_of(state):
            if t.event.polarity == "!":
                if _check_output(cfg, a, t, scope, block_on_guard) is None:
                    moves.append((a, t))
            else:
                if _check_input(cfg, a, t) is None:
                    moves.append((a, t))
    return moves


def find_transition(
    cfg: Configuration,
    system: System,
    participant: str,
    polarity: str,
    cp: int,
    channel: Optional[Channel] = None,
    message: Optional[str] = None,
) -> Transition:
    """Resolve a schedule directive to a unique transition at the current state.

    The control point alone is ambiguous for loop markers (the controller
    multicasts them over several channels, and the continue and stop
    markers share the loop's control point), so directives may name the
    channel and the message as well.
    """
    machine = system.machines[participant]
    state = cfg.state_of(participant)
    matches = [
        t
        for t in machine.out_of(state)
        if t.event.polarity == polarity
        and t.event.cp == cp
        and (channel is None or t.event.channel == channel)
        and (message is None or t.event.message == message)
    ]
    if not matches:
        raise NotEnabled(
            f"{participant} has no {'output' if polarity == '!' else 'input'}"
            f" for control point {cp} at its current state"
        )
    if len(matches) > 1:
        raise NotEnabled(
            f"control point {cp} is ambiguous for {participant} here;"
            " name the channel in the directive"
        )
    return matches[0]


def forget_config(cfg: Configuration) -> tuple:
    """The plain image of a configuration: states plus pending words.

    Consumed logs, sender states, timestamps and the book are forgotten;
    what remains is comparable with the plain communicating-machine
    semantics.
    """
    words = []
    for ch, cs in cfg.chi:
        if cs.pending:
            words.append((ch, tuple((log.message, log.cp) for log in cs.pending)))
    return (cfg.sigma, tuple(words))
