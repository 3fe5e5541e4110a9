import json
from pathlib import Path

import pytest

from chorrev import machine
from chorrev.model import Channel, GTrue, Not
from chorrev.order import CommEvent
from chorrev.parse import parse_choreography
from chorrev.projection import project_system
from chorrev.runtime import (
    find_transition,
    initial_configuration,
    step_input,
    step_output,
)

DATA = Path(__file__).parent / "data"

DAG = "†"
DDAG = "‡"


@pytest.fixture(scope="session")
def travel_source():
    return (DATA / "travel.rchor").read_text()


@pytest.fixture(scope="session")
def travel_chor(travel_source):
    return parse_choreography(travel_source)


@pytest.fixture(scope="session")
def travel_system(travel_chor):
    return project_system(travel_chor)


def drive(system, script, cfg=None):
    """Execute (kind, participant, cp, channel, message) tuples in order."""
    if cfg is None:
        cfg = initial_configuration(system)
    for kind, who, cp, ch, msg in script:
        t = find_transition(cfg, system, who, "!" if kind == "out" else "?", cp, ch, msg)
        if kind == "out":
            cfg = step_output(cfg, system, who, t)
        else:
            cfg = step_input(cfg, system, who, t)
    return cfg


# The scripted run behind the worked rollback example: two loop rounds are
# opened, the first books via dest, and the second round stops right after
# B re-enters the branch state.
REPLAN_PREFIX = [
    ("out", "T", 1, Channel("T", "D"), DAG),
    ("out", "T", 1, Channel("T", "B"), DAG),
    ("inp", "B", 1, None, DAG),
    ("out", "T", 8, None, None),
    ("inp", "B", 8, None, None),
    ("out", "B", 9, None, None),
    ("inp", "T", 9, None, None),
    ("out", "T", 10, None, None),
    ("out", "T", 1, Channel("T", "D"), DAG),
    ("out", "T", 1, Channel("T", "B"), DAG),
    ("inp", "B", 1, None, DAG),
]


@pytest.fixture(scope="session")
def replan_config(travel_system):
    return drive(travel_system, REPLAN_PREFIX)


@pytest.fixture
def schedule_path():
    return DATA / "travel_replan.schedule.json"


@pytest.fixture
def dest_log(replan_config):
    tb = replan_config.channel_state(Channel("T", "B"))
    return tb.consumed[1]


def load_json(path):
    return json.loads(Path(path).read_text())


def random_pmachine(rng, owner="A", depth=3):
    """A small random pre-machine built through the public algebra."""
    alloc = machine.StateAlloc()
    peers = ["B", "C", "D"]

    def leaf():
        peer = rng.choice(peers)
        cp = rng.randint(1, 9)
        msg = rng.choice(["m", "n", "x", "y"])
        if rng.random() < 0.5:
            event = CommEvent(Channel(owner, peer), "!", cp, msg)
        else:
            event = CommEvent(Channel(peer, owner), "?", cp, msg)
        return machine.single_event(owner, event, alloc)

    def build(d):
        if d == 0 or rng.random() < 0.35:
            return leaf()
        op = rng.choice(["seq", "join", "prod"])
        left, right = build(d - 1), build(d - 1)
        if op == "seq":
            return machine.seq_machines(left, right)
        if op == "join":
            return machine.join_machines([left, right])
        return machine.product_machines(left, right, alloc)

    return build(depth)


def random_decoration_inputs(rng, m, owner="A"):
    """A guard and a total family map suitable for decorating ``m``."""
    anchor = CommEvent(Channel(owner, "B"), "!", 1, "m")
    families = {t.event: anchor for t in m.transitions}
    guard = GTrue() if rng.random() < 0.5 else Not(GTrue())
    return guard, families
