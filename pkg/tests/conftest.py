from pathlib import Path

import pytest

from swnabc.eventlog import language_from_counts
from swnabc.petrinet import Transition, build_net, load_net
from swnabc.synthetic import tree_to_net

DATA = Path(__file__).resolve().parent.parent / "data"

FIG1_COUNTS = {("a", "b", "c"): 15, ("a", "c", "b"): 35, ("a", "b", "d"): 15, ("a", "d", "b"): 35}
FIG1_EXACT = {("a", "b", "c"): 0.15, ("a", "c", "b"): 0.35, ("a", "b", "d"): 0.15, ("a", "d", "b"): 0.35}
FIG1_WEIGHTS = (1.0, 0.3, 0.35, 0.35, 1.0)

# choice inside a loop, then a closing activity
LOOP_TREE = ("seq", ("act", "a"), ("loop", ("xor", ("act", "b"), ("act", "c")), ("tau",)), ("act", "d"))
# parallel branch holding a loop, next to a choice
PAR_LOOP_TREE = (
    "seq",
    ("act", "a"),
    ("and", ("loop", ("act", "b"), ("act", "c")), ("xor", ("act", "d"), ("act", "e"))),
    ("act", "f"),
)


def fig1():
    places = ["source", "p2", "p3", "p4", "p5", "sink"]
    trans = [
        Transition("ta", "a", 1.0),
        Transition("tb", "b", 0.3),
        Transition("tc", "c", 0.35),
        Transition("td", "d", 0.35),
        Transition("tau", None, 1.0),
    ]
    arcs = {
        ("source", "ta"): 1, ("ta", "p2"): 1, ("ta", "p3"): 1,
        ("p2", "tb"): 1, ("tb", "p4"): 1,
        ("p3", "tc"): 1, ("p3", "td"): 1, ("tc", "p5"): 1, ("td", "p5"): 1,
        ("p4", "tau"): 1, ("p5", "tau"): 1, ("tau", "sink"): 1,
    }
    return build_net(places, trans, arcs, {"source": 1}, name="fig1")


@pytest.fixture
def fig1_net():
    return fig1()


@pytest.fixture
def fig1_lang():
    return language_from_counts(FIG1_COUNTS)


@pytest.fixture
def fig1_pnml_net():
    return load_net(DATA / "fig1.pnml")


@pytest.fixture
def loop_net():
    return tree_to_net(LOOP_TREE, [1.0, 0.6, 0.4, 1.0, 0.5, 0.5, 1.0], name="loop")


def chain(*labels, weights=None):
    """source -> t0 -> p1 -> t1 -> ... -> sink; ``None`` labels are silent."""
    places = ["source"] + [f"p{i}" for i in range(1, len(labels))] + ["sink"]
    trans = [Transition(f"t{i}", lab, 1.0 if weights is None else weights[i]) for i, lab in enumerate(labels)]
    arcs = {}
    for i in range(len(labels)):
        arcs[(places[i], f"t{i}")] = 1
        arcs[(f"t{i}", places[i + 1])] = 1
    return build_net(places, trans, arcs, {"source": 1})


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
