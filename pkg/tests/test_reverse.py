import itertools

import pytest

from chorrev.causality import CausalityAnalyzer
from chorrev.machine import Committed, Ongoing
from chorrev.model import Channel, CountAtom
from chorrev.order import CommEvent
from chorrev.parse import parse_choreography
from chorrev.projection import project_system
from chorrev.reverse import (
    ReversalCandidate,
    enabled_reversals,
    maximal_logs,
    rho,
    step_reverse,
)
from chorrev.runtime import (
    BookEntry,
    ChannelState,
    Configuration,
    Log,
    NotEnabled,
    enabled_forward,
    initial_configuration,
    step_output,
)

from conftest import DAG, DDAG, REPLAN_PREFIX, drive

AB = Channel("A", "B")
CD = Channel("C", "D")
TB = Channel("T", "B")
TD = Channel("T", "D")
BT = Channel("B", "T")

DEST = CommEvent(TB, "!", 8, "dest")
BOOKED = CountAtom("upd", TD, ">=", 1)


def test_maximal_logs():
    m = (AB, Log("m", 0, 1, 1))
    n = (AB, Log("n", 1, 2, 2))
    rel = frozenset({(m, n), (m, m), (n, n)})
    assert maximal_logs([m, n], rel) == {n}
    assert maximal_logs([m], rel) == {m}


# -- removal ------------------------------------------------------------------


def test_rho_of_the_booking_cone(travel_system, replan_config, dest_log):
    analyzer = CausalityAnalyzer(travel_system)
    effects = analyzer.effects(replan_config, (TB, dest_log))
    rolled = rho(replan_config, travel_system, effects, analyzer)
    assert rolled.sigma_dict() == {"T": 3, "B": 1, "D": 0}
    assert rolled.chi_dict() == {
        TD: ChannelState((), (Log(DAG, 0, 1, 1),)),
        TB: ChannelState((Log(DAG, 2, 1, 2),), ()),
    }
    # removal itself never touches the book
    assert rolled.book == replan_config.book == ()


def test_rho_replays_receivers_not_just_senders(travel_system, replan_config, dest_log):
    # B sent fullPrice from state 4; a literal sender rewind would leave it
    # there, but its surviving history only supports the branch entry state
    analyzer = CausalityAnalyzer(travel_system)
    effects = analyzer.effects(replan_config, (TB, dest_log))
    rolled = rho(replan_config, travel_system, effects, analyzer)
    assert rolled.state_of("B") == 1
    bt = replan_config.channel_state(BT)
    assert bt.consumed[0].sender_state == 4


@pytest.fixture(scope="module")
def split_system():
    return project_system(parse_choreography("par { A -> B : m | C -> D : n }"))


def split_run(split_system):
    return drive(
        split_system,
        [("out", "A", 2, None, None), ("out", "C", 3, None, None)],
    )


def test_rho_is_order_independent(split_system):
    cfg = split_run(split_system)
    m_ref = (AB, cfg.channel_state(AB).pending[0])
    n_ref = (CD, cfg.channel_state(CD).pending[0])
    outcomes = set()
    legal = 0
    for perm in itertools.permutations([m_ref, n_ref]):
        outcomes.add(rho(cfg, split_system, [m_ref, n_ref], order=list(perm)))
        legal += 1
    assert legal == 2
    assert len(outcomes) == 1
    assert rho(cfg, split_system, [m_ref, n_ref]) in outcomes
    assert next(iter(outcomes)) == initial_configuration(split_system)


def test_rho_rejects_illegal_orders(chain_run):
    cfg, system, m_ref, n_ref = chain_run
    with pytest.raises(ValueError, match="illegal removal order"):
        rho(cfg, system, [m_ref, n_ref], order=[m_ref, n_ref])
    with pytest.raises(ValueError, match="enumerate exactly"):
        rho(cfg, system, [m_ref, n_ref], order=[n_ref])


@pytest.fixture(scope="module")
def chain_run():
    system = project_system(parse_choreography("A -> B : m ; B -> C : n"))
    cfg = drive(
        system,
        [("out", "A", 1, None, None), ("inp", "B", 1, None, None), ("out", "B", 2, None, None)],
    )
    m_ref = (AB, cfg.channel_state(AB).consumed[0])
    n_ref = (Channel("B", "C"), cfg.channel_state(Channel("B", "C")).pending[0])
    return cfg, system, m_ref, n_ref


def test_rho_refuses_non_closed_targets():
    system = project_system(parse_choreography("A -> B : m ; A -> B : n"))
    cfg = drive(system, [("out", "A", 1, None, None), ("out", "A", 2, None, None)])
    first = (AB, cfg.channel_state(AB).pending[0])
    with pytest.raises(ValueError, match="not causally closed"):
        rho(cfg, system, [first])


def test_rho_rejects_foreign_targets(travel_system, replan_config):
    ghost = (TB, Log("ghost", 0, 8, 42))
    with pytest.raises(ValueError, match="logs of the configuration"):
        rho(replan_config, travel_system, [ghost])


# -- the reversal step on the travel system -----------------------------------


def test_only_the_booking_family_is_revertible(travel_system, replan_config, dest_log):
    live = enabled_reversals(replan_config, travel_system)
    assert live == [
        ReversalCandidate("T", 3, DEST, BOOKED, (TB, dest_log))
    ]


def test_step_reverse_matches_the_worked_example(travel_system, replan_config, dest_log):
    (candidate,) = enabled_reversals(replan_config, travel_system)
    post = step_reverse(replan_config, travel_system, candidate)
    assert post == Configuration.make(
        {"T": 3, "B": 1, "D": 0},
        {
            TD: ChannelState((), (Log(DAG, 0, 1, 1),)),
            TB: ChannelState((Log(DAG, 2, 1, 2),), ()),
        },
        {("T", 3): BookEntry(frozenset({(DEST, BOOKED)}), True)},
    )


def test_reversal_requires_a_current_candidate(travel_system, replan_config):
    stale = ReversalCandidate(
        "T", 3, CommEvent(TB, "!", 4, "flight"), CountAtom("upd", TD, "<", 1), (TB, Log("flight", 3, 4, 9))
    )
    with pytest.raises(NotEnabled):
        step_reverse(replan_config, travel_system, stale)


def test_forward_moves_reopen_after_reversal(travel_system, replan_config):
    (candidate,) = enabled_reversals(replan_config, travel_system)
    post = step_reverse(replan_config, travel_system, candidate)
    moves = {str(t.event) for _, t in enabled_forward(post, travel_system)}
    # the decision state is exhausted, so even the undone booking may rerun
    assert moves == {
        "T->B!flight/4",
        "T->B!car/6",
        "T->B!dest/8",
        f"T->D?{DAG}/1",
    }


# -- retries and exhaustion ----------------------------------------------------

# Both branches answer the request, so taking one does not commit it right
# away; the decider can change its mind while it waits for the reply.
RETRY_SOURCE = """
choice {
  { A -> B : m ; B -> A : r } unless count(m, A->B) >= 1
  + { A -> B : y ; B -> A : s } unless count(y, A->B) >= 1
}
"""


@pytest.fixture(scope="module")
def retry_system():
    return project_system(parse_choreography(RETRY_SOURCE))


def test_first_reversal_leaves_alternatives_open(retry_system):
    cfg = drive(retry_system, [("out", "A", 2, None, None)])
    (candidate,) = enabled_reversals(cfg, retry_system)
    assert candidate.participant == "A"
    assert candidate.first_output.message == "m"
    post = step_reverse(cfg, retry_system, candidate)
    entry = post.book_entry("A", candidate.choice_state)
    assert {ev.message for ev, _ in entry.tried} == {"m"}
    assert entry.exhausted is False
    assert post.channel_state(AB).all_logs == ()
    # the tried family is blocked, its alternative is not
    moves = {t.event.message for _, t in enabled_forward(post, retry_system)}
    assert moves == {"y"}


def test_second_reversal_exhausts_the_state(retry_system):
    cfg = drive(retry_system, [("out", "A", 2, None, None)])
    (first,) = enabled_reversals(cfg, retry_system)
    post = step_reverse(cfg, retry_system, first)
    post = drive(retry_system, [("out", "A", 4, None, None)], post)
    (second,) = enabled_reversals(post, retry_system)
    assert second.first_output.message == "y"
    done = step_reverse(post, retry_system, second)
    entry = done.book_entry("A", second.choice_state)
    assert {ev.message for ev, _ in entry.tried} == {"m", "y"}
    assert entry.exhausted is True
    # exhaustion blocks further reversals and reopens every branch
    assert enabled_reversals(done, retry_system) == []
    moves = {t.event.message for _, t in enabled_forward(done, retry_system)}
    assert moves == {"m", "y"}
    # a retried branch keeps the book until its commit clears it
    retried = drive(retry_system, [("out", "A", 2, None, None)], done)
    assert retried.book_entry("A", second.choice_state) == entry
    committed = drive(
        retry_system,
        [("inp", "B", 2, None, None), ("out", "B", 3, None, None), ("inp", "A", 3, None, None)],
        retried,
    )
    assert committed.book == ()


def test_reversing_twice_needs_a_fresh_anchor(retry_system):
    cfg = drive(retry_system, [("out", "A", 2, None, None)])
    (candidate,) = enabled_reversals(cfg, retry_system)
    post = step_reverse(cfg, retry_system, candidate)
    with pytest.raises(NotEnabled):
        step_reverse(post, retry_system, candidate)


def test_guard_premise(retry_system):
    # nothing has been sent, so neither branch guard holds yet
    cfg = initial_configuration(retry_system)
    assert enabled_reversals(cfg, retry_system) == []


def test_committed_branches_offer_no_reversal(retry_system):
    cfg = drive(
        retry_system,
        [
            ("out", "A", 2, None, None),
            ("inp", "B", 2, None, None),
            ("out", "B", 3, None, None),
            ("inp", "A", 3, None, None),
        ],
    )
    assert cfg.book == ()
    assert enabled_reversals(cfg, retry_system) == []


def test_exhausted_premise(retry_system):
    cfg = drive(retry_system, [("out", "A", 2, None, None)])
    q_hat = enabled_reversals(cfg, retry_system)[0].choice_state
    tired = Configuration.make(
        cfg.sigma_dict(),
        cfg.chi_dict(),
        {("A", q_hat): BookEntry(frozenset(), True)},
    )
    assert enabled_reversals(tired, retry_system) == []


def test_anchor_premise_needs_the_decision_state(retry_system):
    cfg = drive(retry_system, [("out", "A", 2, None, None)])
    doctored = (Log("m", 99, 2, 1),)
    broken = Configuration.make(cfg.sigma_dict(), {AB: ChannelState((), doctored)}, {})
    assert enabled_reversals(broken, retry_system) == []


@pytest.fixture(scope="module")
def looped_system():
    return project_system(
        parse_choreography(
            """
            loop @ A {
              choice {
                { A -> B : m ; B -> A : r } unless count(m, A->B) >= 1
                + { A -> B : y ; B -> A : s } unless count(y, A->B) >= 1
              }
            }
            """
        )
    )


def test_anchor_premise_needs_an_ongoing_loop(looped_system):
    # a closed loop offers no rollback points, whatever the guards say
    machine = looped_system.machines["A"]
    q_hat = next(
        t.decoration.choice_state
        for t in machine.transitions
        if isinstance(t.decoration, (Committed, Ongoing))
    )
    b_final = next(iter(looped_system.machines["B"].finals))
    closed = Configuration.make(
        {"A": q_hat, "B": b_final},
        {
            AB: ChannelState(
                (Log(DAG, 0, 1, 1), Log("m", q_hat, 3, 2), Log(DDAG, 99, 1, 3)),
                (),
            )
        },
        {},
    )
    assert enabled_reversals(closed, looped_system) == []
