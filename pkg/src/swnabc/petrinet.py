"""Stochastic workflow nets: data model, PNML/JSON I/O and firing semantics.

A net is immutable once built. Markings are plain ``{place: tokens}``
mappings; only places holding tokens are kept in markings returned here.
"""

from __future__ import annotations

import json
import logging
import math
import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

SILENT = None


class NetError(ValueError):
    """Raised for malformed net documents or invalid net operations."""


class UnsafeMarkingError(NetError):
    """A firing put more than one token on a place."""


@dataclass(frozen=True)
class Transition:
    id: str
    label: str | None  # None marks a silent transition
    weight: float = 1.0

    @property
    def silent(self) -> bool:
        return self.label is None


@dataclass(frozen=True)
class StochasticWorkflowNet:
    places: tuple[str, ...]
    transitions: tuple[Transition, ...]
    # (source, target) -> multiplicity; one endpoint is a place, the other a transition
    arcs: Mapping[tuple[str, str], int]
    initial_marking: Mapping[str, int]
    source: str | None = None
    sink: str | None = None
    name: str = ""
    _pre: dict = field(default=None, init=False, repr=False, compare=False)
    _post: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        place_set = set(self.places)
        tids = [t.id for t in self.transitions]
        if len(place_set) != len(self.places):
            raise NetError("duplicate place id")
        if len(set(tids)) != len(tids) or place_set & set(tids):
            raise NetError("duplicate transition id")
        for t in self.transitions:
            if not (t.weight > 0 and math.isfinite(t.weight)):
                raise NetError(f"transition {t.id!r}: weight must be positive, got {t.weight}")
        pre = {tid: {} for tid in tids}
        post = {tid: {} for tid in tids}
        for (src, dst), mult in self.arcs.items():
            if mult < 0:
                raise NetError(f"negative multiplicity on arc {src}->{dst}")
            if mult == 0:
                continue
            if src in place_set and dst in pre:
                pre[dst][src] = mult
            elif src in pre and dst in place_set:
                post[src][dst] = mult
            else:
                raise NetError(f"arc {src}->{dst} must connect a place and a transition")
        for p, k in self.initial_marking.items():
            if p not in place_set:
                raise NetError(f"initial marking on unknown place {p!r}")
            if k < 0:
                raise NetError(f"negative initial marking on {p!r}")
        object.__setattr__(self, "_pre", pre)
        object.__setattr__(self, "_post", post)

    # -- lookups -----------------------------------------------------------

    @property
    def transition_ids(self) -> list[str]:
        return [t.id for t in self.transitions]

    @property
    def weights(self) -> np.ndarray:
        return np.array([t.weight for t in self.transitions], dtype=np.float64)

    @property
    def visible_labels(self) -> set[str]:
        return {t.label for t in self.transitions if t.label is not None}

    def transition(self, tid: str) -> Transition:
        for t in self.transitions:
            if t.id == tid:
                return t
        raise NetError(f"unknown transition {tid!r}")

    def preset(self, tid: str) -> Mapping[str, int]:
        return self._pre[tid]

    def postset(self, tid: str) -> Mapping[str, int]:
        return self._post[tid]

    def initial(self) -> dict[str, int]:
        return {p: k for p, k in self.initial_marking.items() if k}


def _incidence(net: StochasticWorkflowNet):
    has_in = {p: False for p in net.places}
    has_out = {p: False for p in net.places}
    for tid in net.transition_ids:
        for p in net.preset(tid):
            has_out[p] = True
        for p in net.postset(tid):
            has_in[p] = True
    return has_in, has_out


def _source_sink(places, arcs) -> tuple[str | None, str | None]:
    targets = {dst for (_, dst), m in arcs.items() if m}
    sources = {src for (src, _), m in arcs.items() if m}
    no_in = [p for p in places if p not in targets]
    no_out = [p for p in places if p not in sources]
    return (no_in[0] if len(no_in) == 1 else None, no_out[0] if len(no_out) == 1 else None)


def build_net(
    places: Sequence[str],
    transitions: Sequence[Transition],
    arcs: Mapping[tuple[str, str], int],
    initial_marking: Mapping[str, int] | None = None,
    name: str = "",
) -> StochasticWorkflowNet:
    """Assemble a net, inferring source/sink and (if absent) the initial marking."""
    arcs = dict(arcs)
    source, sink = _source_sink(places, arcs)
    if not initial_marking:
        if source is None:
            raise NetError("no initial marking given and no unique source place to infer it from")
        initial_marking = {source: 1}
    return StochasticWorkflowNet(
        places=tuple(places),
        transitions=tuple(transitions),
        arcs=arcs,
        initial_marking=dict(initial_marking),
        source=source,
        sink=sink,
        name=name,
    )


# -- PNML ------------------------------------------------------------------


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _child(elem, name):
    for c in elem:
        if _local(c.tag) == name:
            return c
    return None


def _text_of(elem) -> str | None:
    """Text of ``<x><text>..</text></x>`` or of ``<x>..</x>``."""
    if elem is None:
        return None
    t = _child(elem, "text")
    raw = t.text if t is not None else elem.text
    return raw.strip() if raw is not None else None


def _number(raw: str, what: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise NetError(f"cannot parse {what}: {raw!r}") from None


def _transition_weight(elem) -> float:
    weight = None
    if "weight" in elem.attrib:
        weight = _number(elem.attrib["weight"], "weight")
    elif _child(elem, "weight") is not None:
        weight = _number(_text_of(_child(elem, "weight")), "weight")
    for prop in elem.iter():
        if _local(prop.tag) != "property":
            continue
        key = prop.attrib.get("key")
        if key == "weight" and weight is None:
            weight = _number(prop.attrib.get("value", prop.text), "weight")
        elif key == "priority":
            log.warning("transition %s: priority ignored (all priorities are equal)", elem.attrib.get("id"))
    return 1.0 if weight is None else weight


def parse_pnml(text: str | bytes) -> StochasticWorkflowNet:
    """Parse the supported PNML subset (see README) into a net."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise NetError(f"malformed PNML: {exc}") from None
    net_elem = next((e for e in root.iter() if _local(e.tag) == "net"), root)
    name = _text_of(_child(net_elem, "name")) or net_elem.attrib.get("id", "")

    places: list[str] = []
    transitions: list[Transition] = []
    arcs: dict[tuple[str, str], int] = {}
    marking: dict[str, int] = {}
    seen: set[str] = set()

    def claim(elem) -> str:
        pid = elem.attrib.get("id")
        if not pid:
            raise NetError(f"<{_local(elem.tag)}> without id")
        if pid in seen:
            raise NetError(f"duplicate id {pid!r}")
        seen.add(pid)
        return pid

    arc_elems = []
    for elem in net_elem.iter():
        tag = _local(elem.tag)
        if tag == "place":
            pid = claim(elem)
            places.append(pid)
            im = _text_of(_child(elem, "initialMarking"))
            if im:
                k = _number(im.split(",")[-1], "initial marking")
                if k != int(k):
                    raise NetError(f"non-integer initial marking on {pid!r}")
                if k:
                    marking[pid] = int(k)
        elif tag == "transition":
            tid = claim(elem)
            label = _text_of(_child(elem, "name")) or None
            if elem.attrib.get("invisible") == "true" or any(
                _local(c.tag) == "toolspecific" and c.attrib.get("activity") == "$invisible$" for c in elem
            ):
                label = None
            weight = _transition_weight(elem)
            if weight <= 0:
                raise NetError(f"transition {tid!r}: weight must be positive, got {weight}")
            transitions.append(Transition(tid, label, weight))
        elif tag == "arc":
            arc_elems.append(elem)

    for elem in arc_elems:
        claim(elem)
        src, dst = elem.attrib.get("source"), elem.attrib.get("target")
        if src not in seen or dst not in seen:
            raise NetError(f"dangling arc {src!r}->{dst!r}")
        insc = _text_of(_child(elem, "inscription"))
        mult = _number(insc, "inscription") if insc else 1
        if mult != int(mult) or mult < 1:
            raise NetError(f"bad arc multiplicity {insc!r}")
        arcs[(src, dst)] = arcs.get((src, dst), 0) + int(mult)

    return build_net(places, transitions, arcs, marking, name=name)


def to_pnml(net: StochasticWorkflowNet) -> str:
    root = ET.Element("pnml")
    n = ET.SubElement(root, "net", id=net.name or "net", type="http://www.pnml.org/version-2009/grammar/ptnet")
    page = ET.SubElement(n, "page", id="page0")
    for p in net.places:
        pe = ET.SubElement(page, "place", id=p)
        if net.initial_marking.get(p):
            ET.SubElement(ET.SubElement(pe, "initialMarking"), "text").text = str(net.initial_marking[p])
    for t in net.transitions:
        te = ET.SubElement(page, "transition", id=t.id, weight=repr(t.weight))
        if t.label is not None:
            ET.SubElement(ET.SubElement(te, "name"), "text").text = t.label
    for i, ((src, dst), mult) in enumerate(net.arcs.items()):
        ae = ET.SubElement(page, "arc", id=f"arc{i}", source=src, target=dst)
        if mult != 1:
            ET.SubElement(ET.SubElement(ae, "inscription"), "text").text = str(mult)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode")


# -- JSON mirror -----------------------------------------------------------


def net_from_dict(data: Mapping) -> StochasticWorkflowNet:
    try:
        trans = [Transition(t["id"], t.get("label") or None, float(t.get("weight", 1.0))) for t in data["transitions"]]
        arcs: dict[tuple[str, str], int] = {}
        for a in data["arcs"]:
            key = (a["source"], a["target"])
            arcs[key] = arcs.get(key, 0) + int(a.get("multiplicity", 1))
        places = list(data["places"])
    except (KeyError, TypeError) as exc:
        raise NetError(f"malformed net JSON: {exc}") from None
    ids = places + [t.id for t in trans]
    if len(set(ids)) != len(ids):
        raise NetError("duplicate id in net JSON")
    known = set(ids)
    for src, dst in arcs:
        if src not in known or dst not in known:
            raise NetError(f"dangling arc {src!r}->{dst!r}")
    return build_net(places, trans, arcs, data.get("initial_marking"), name=data.get("name", ""))


def net_to_dict(net: StochasticWorkflowNet) -> dict:
    return {
        "name": net.name,
        "places": list(net.places),
        "transitions": [{"id": t.id, "label": t.label, "weight": t.weight} for t in net.transitions],
        "arcs": [{"source": s, "target": d, "multiplicity": m} for (s, d), m in net.arcs.items()],
        "initial_marking": dict(net.initial_marking),
    }


def load_net(path: str | Path) -> StochasticWorkflowNet:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.name.endswith(".json"):
        try:
            return net_from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise NetError(f"malformed net JSON: {exc}") from None
    return parse_pnml(text)


# -- structural validation ------------------------------------------------


def validate_workflow(net: StochasticWorkflowNet) -> list[str]:
    """Return the list of workflow-net violations (empty when the net is fine)."""
    problems = []
    has_in, has_out = _incidence(net)
    no_in = [p for p in net.places if not has_in[p]]
    no_out = [p for p in net.places if not has_out[p]]
    if len(no_in) != 1:
        problems.append(f"non-unique source: places without incoming arcs {no_in}")
    if len(no_out) != 1:
        problems.append(f"non-unique sink: places without outgoing arcs {no_out}")
    source = no_in[0] if len(no_in) == 1 else None
    sink = no_out[0] if len(no_out) == 1 else None

    m0 = net.initial()
    if source is not None and m0 != {source: 1}:
        problems.append(f"initial marking must be one token on {source!r}, got {m0}")
    elif any(k > 1 for k in m0.values()):
        problems.append(f"initial marking is not 1-safe: {m0}")

    if source is not None and sink is not None:
        succ: dict[str, set[str]] = {x: set() for x in (*net.places, *net.transition_ids)}
        for (s, d), m in net.arcs.items():
            if m:
                succ[s].add(d)
        succ[sink].add(source)  # the short-circuiting transition, as a direct edge
        pred: dict[str, set[str]] = {x: set() for x in succ}
        for s, ds in succ.items():
            for d in ds:
                pred[d].add(s)
        fwd, bwd = _reach(source, succ), _reach(source, pred)
        lost = sorted(x for x in succ if x not in fwd or x not in bwd)
        if lost:
            problems.append(f"not strongly connected after short-circuit: {lost}")
    return problems


def _reach(start, succ):
    seen = {start}
    queue = deque([start])
    while queue:
        x = queue.popleft()
        for y in succ[x]:
            if y not in seen:
                seen.add(y)
                queue.append(y)
    return seen


# -- firing semantics -------------------------------------------------------


def enabled(net: StochasticWorkflowNet, marking: Mapping[str, int]) -> list[str]:
    """Enabled transitions, in transition order."""
    return [
        t.id for t in net.transitions if all(marking.get(p, 0) >= k for p, k in net.preset(t.id).items())
    ]


def firing_probability(net: StochasticWorkflowNet, marking: Mapping[str, int], tid: str) -> float:
    en = enabled(net, marking)
    if tid not in en:
        raise NetError(f"transition {tid!r} not enabled")
    w = {t.id: t.weight for t in net.transitions}
    return w[tid] / math.fsum(w[t] for t in en)


def fire(net: StochasticWorkflowNet, marking: Mapping[str, int], tid: str) -> dict[str, int]:
    if tid not in enabled(net, marking):
        raise NetError(f"transition {tid!r} not enabled")
    out = dict(marking)
    for p, k in net.preset(tid).items():
        out[p] -= k
    for p, k in net.postset(tid).items():
        out[p] = out.get(p, 0) + k
        if out[p] > 1:
            raise UnsafeMarkingError(f"firing {tid!r} puts {out[p]} tokens on {p!r}")
    return {p: k for p, k in out.items() if k}


def with_weights(net: StochasticWorkflowNet, w: Iterable[float] | Mapping[str, float]) -> StochasticWorkflowNet:
    """Copy of ``net`` with transition weights replaced (array in transition order, or id->weight)."""
    if isinstance(w, Mapping):
        missing = set(net.transition_ids) - set(w)
        if missing:
            raise NetError(f"missing weights for {sorted(missing)}")
        values = [float(w[t]) for t in net.transition_ids]
    else:
        values = [float(x) for x in np.asarray(w, dtype=np.float64).ravel()]
    if len(values) != len(net.transitions):
        raise NetError(f"weight vector has length {len(values)}, net has {len(net.transitions)} transitions")
    if any(not (v > 0 and math.isfinite(v)) for v in values):
        raise NetError("weights must be finite and strictly positive")
    trans = tuple(Transition(t.id, t.label, v) for t, v in zip(net.transitions, values))
    return StochasticWorkflowNet(
        places=net.places,
        transitions=trans,
        arcs=net.arcs,
        initial_marking=net.initial_marking,
        source=net.source,
        sink=net.sink,
        name=net.name,
    )
