"""Labeled transition system view of trees.

States are canonical keys of unfolded trees. A transition is observable
(event plus answer), silent (a stepping branch committing), or a value
emission; delayed branches never label transitions, they only route to the
committed heads found by the closure computation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    Budget,
    CTreeExpr,
    DEFAULT_BUDGET,
    DefTable,
    Ret,
    STEPPING,
    Vis,
    apply_cont,
    ser,
    stuck_d,
    unfold,
)


class _LKeyed:
    key: str

    def __eq__(self, other):
        if isinstance(other, _LKeyed):
            return self.key == other.key
        return NotImplemented

    def __hash__(self):
        return hash(self.key)

    def __lt__(self, other: "_LKeyed"):
        return self.key < other.key


@dataclass(frozen=True, eq=False)
class Tau(_LKeyed):
    """A silent step."""

    key: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "key", "(tau)")

    def to_json(self):
        return {"kind": "tau"}

    def render(self) -> str:
        return "tau"


@dataclass(frozen=True, eq=False)
class Obs(_LKeyed):
    """An observed interaction: event name, its arguments, and the answer.

    The advertised answer domain is deliberately not part of label identity;
    only what was asked and what came back matters for comparing behaviors.
    """

    name: str
    args: tuple
    answer: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "key", f"(obs {self.name} {ser(self.args)} {ser(self.answer)})"
        )

    def to_json(self):
        return {
            "kind": "obs",
            "event": self.name,
            "args": value_to_json(self.args),
            "answer": value_to_json(self.answer),
        }

    def render(self) -> str:
        inside = ",".join(_render_value(a) for a in self.args)
        head = self.name + (f"({inside})" if inside else "")
        return f"{head}={_render_value(self.answer)}"


@dataclass(frozen=True, eq=False)
class Val(_LKeyed):
    """A value emission; the source tree is finished."""

    value: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "key", f"(val {ser(self.value)})")

    def to_json(self):
        return {"kind": "val", "value": value_to_json(self.value)}

    def render(self) -> str:
        return f"ret {_render_value(self.value)}"


TAU = Tau()

Label = object


def value_to_json(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (int, str)):
        return v
    if isinstance(v, tuple):
        return [value_to_json(e) for e in v]
    raise TypeError(f"not a JSON-renderable value: {v!r}")


def _render_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, str)):
        return str(v)
    if isinstance(v, tuple):
        return "(" + ",".join(_render_value(e) for e in v) + ")"
    return ser(v)


# The single sink state every value emission lands in.
STUCK = stuck_d()
STUCK_KEY = STUCK.key


@dataclass(frozen=True)
class ClosureResult:
    """Committed heads reachable through delayed branching.

    divergence means some delayed cycle was found (silent divergence);
    exhausted means the exploration budget cut the search and the head set
    may be incomplete.
    """

    heads: tuple
    divergence: bool
    exhausted: bool


def brd_closure(
    t: CTreeExpr, defs: Optional[DefTable] = None, budget: Budget = DEFAULT_BUDGET
) -> ClosureResult:
    """Collect the committed heads of t: returns, event nodes, and stepping
    branches, found by searching through delayed branches.

    Iterative depth-first search; a delayed node reached again while still on
    the search path is a genuine cycle and is reported as divergence, while
    mere reconvergence is deduplicated silently.
    """
    heads: dict[str, CTreeExpr] = {}
    divergence = False
    exhausted = False
    steps = 0
    limit = budget.closure_depth

    def settle(node):
        # Committed heads are recorded; a delayed branch is handed back for
        # the caller to descend into.
        if isinstance(node, (Ret, Vis)) or node.kind == STEPPING:
            heads.setdefault(node.key, node)
            return None
        return node

    root = unfold(t, defs)
    stack: list[list] = []
    on_path: set[str] = set()
    done: set[str] = set()

    first = settle(root)
    if first is not None:
        stack.append([first, 0])
        on_path.add(first.key)

    while stack:
        node, i = stack[-1]
        if i >= node.width:
            stack.pop()
            on_path.discard(node.key)
            done.add(node.key)
            continue
        stack[-1][1] = i + 1
        steps += 1
        if steps > limit:
            exhausted = True
            break
        child = unfold(apply_cont(node.cont, i), defs)
        nxt = settle(child)
        if nxt is None:
            continue
        if nxt.key in on_path:
            divergence = True
            continue
        if nxt.key in done:
            continue
        stack.append([nxt, 0])
        on_path.add(nxt.key)

    return ClosureResult(tuple(heads.values()), divergence, exhausted)


@dataclass(frozen=True)
class TransResult:
    edges: tuple  # of (Label, CTreeExpr) with unfolded targets
    complete: bool
    divergence: bool


def transitions(
    t: CTreeExpr, defs: Optional[DefTable] = None, budget: Budget = DEFAULT_BUDGET
) -> TransResult:
    """One-step transitions of t.

    Value emissions all target the designated stuck sink. Targets come back
    unfolded, ready for further exploration.
    """
    clo = brd_closure(t, defs, budget)
    edges: dict[tuple[str, str], tuple] = {}

    def add(label, target):
        edges.setdefault((label.key, target.key), (label, target))

    for h in clo.heads:
        if isinstance(h, Ret):
            add(Val(h.value), STUCK)
        elif isinstance(h, Vis):
            for a in h.event.answers:
                add(
                    Obs(h.event.name, h.event.args, a),
                    unfold(apply_cont(h.cont, a), defs),
                )
        else:
            for i in range(h.width):
                add(TAU, unfold(apply_cont(h.cont, i), defs))
    return TransResult(tuple(edges.values()), not clo.exhausted, clo.divergence)


def is_stuck(
    t: CTreeExpr, defs: Optional[DefTable] = None, budget: Budget = DEFAULT_BUDGET
) -> bool:
    """True when t certainly has no transitions (silent divergence counts as
    stuck). False if any transition exists or the budget ran out first."""
    tr = transitions(t, defs, budget)
    return tr.complete and not tr.edges


@dataclass(frozen=True, eq=False)
class FiniteLTS:
    """A finite slice of the transition system.

    unexpanded states are frontier states whose outgoing behavior was not
    computed (budget cut); they carry no edges and analyses must not draw
    conclusions that depend on their moves.
    """

    initial: str
    states: tuple
    edges: tuple  # of (src key, Label, dst key)
    unexpanded: frozenset
    partial: bool
    _out: dict = field(repr=False, default_factory=dict)

    def out(self, state: str) -> tuple:
        """Outgoing (label, target) pairs of a state."""
        if not self._out:
            table: dict[str, list] = {s: [] for s in self.states}
            for src, label, dst in self.edges:
                table[src].append((label, dst))
            for s, lst in table.items():
                self._out[s] = tuple(lst)
        return self._out.get(state, ())


def extract_lts(
    t: CTreeExpr, defs: Optional[DefTable] = None, budget: Budget = DEFAULT_BUDGET
) -> FiniteLTS:
    """Breadth-first reachable slice of the transition system from t.

    A state whose closure blew the per-state budget, or whose successors
    would push past max_states, is kept but marked unexpanded (edge-free).
    """
    root = unfold(t, defs)
    states: dict[str, bool] = {root.key: True}
    unexpanded: set[str] = set()
    edges: list = []
    queue: deque = deque([root])

    while queue:
        node = queue.popleft()
        tr = transitions(node, defs, budget)
        if not tr.complete:
            unexpanded.add(node.key)
            continue
        fresh = []
        fresh_keys = set()
        for _, tgt in tr.edges:
            if tgt.key not in states and tgt.key not in fresh_keys:
                fresh.append(tgt)
                fresh_keys.add(tgt.key)
        if len(states) + len(fresh) > budget.max_states:
            unexpanded.add(node.key)
            continue
        for tgt in fresh:
            states[tgt.key] = True
            queue.append(tgt)
        for label, tgt in tr.edges:
            edges.append((node.key, label, tgt.key))

    return FiniteLTS(
        initial=root.key,
        states=tuple(states),
        edges=tuple(edges),
        unexpanded=frozenset(unexpanded),
        partial=bool(unexpanded),
    )


def tau_closure(lts: FiniteLTS, state: str) -> frozenset:
    """States reachable by zero or more silent steps."""
    seen = {state}
    queue = deque([state])
    while queue:
        s = queue.popleft()
        for label, dst in lts.out(s):
            if label == TAU and dst not in seen:
                seen.add(dst)
                queue.append(dst)
    return frozenset(seen)


def weak_transitions(lts: FiniteLTS, state: str, label) -> frozenset:
    """Targets of weak transitions: tau* for silent labels (reflexively),
    tau* . l . tau* for everything else."""
    pre = tau_closure(lts, state)
    if label == TAU:
        return pre
    out = set()
    for s in pre:
        for l, dst in lts.out(s):
            if l == label:
                out.update(tau_closure(lts, dst))
    return frozenset(out)


def saturate(lts: FiniteLTS) -> FiniteLTS:
    """Weak-edge saturation: every state gets a reflexive silent edge, and
    visible edges absorb silent padding on both sides.

    A state whose tau closure touches an unexpanded state becomes unexpanded
    itself, since its weak moves cannot be trusted to be complete.
    """
    tc = {s: tau_closure(lts, s) for s in lts.states}
    bad = set(lts.unexpanded)
    weak_unexp = {s for s in lts.states if tc[s] & bad}

    edges: dict[tuple[str, str, str], tuple] = {}

    def add(src, label, dst):
        edges.setdefault((src, label.key, dst), (src, label, dst))

    for s in lts.states:
        if s in weak_unexp:
            continue
        for m in sorted(tc[s]):
            add(s, TAU, m)
        for m in sorted(tc[s]):
            for label, dst in lts.out(m):
                if label == TAU:
                    continue
                for n in sorted(tc[dst]):
                    add(s, label, n)

    return FiniteLTS(
        initial=lts.initial,
        states=lts.states,
        edges=tuple(edges.values()),
        unexpanded=frozenset(weak_unexp),
        partial=bool(weak_unexp),
    )


def _state_index(lts: FiniteLTS) -> dict[str, int]:
    ordered = sorted(lts.states)
    return {s: i for i, s in enumerate(ordered)}


def to_dot(lts: FiniteLTS, title: str = "lts") -> str:
    """Render to GraphViz source. Output is deterministic: states are
    numbered by sorted key, edges sorted by (source, label, target)."""
    idx = _state_index(lts)
    lines = [f"digraph {title} {{", "  rankdir=LR;", '  node [shape=circle, fontsize=10];']
    for s in sorted(lts.states):
        i = idx[s]
        attrs = []
        if s == lts.initial:
            attrs.append("shape=doublecircle")
        if s in lts.unexpanded:
            attrs.append('style=dashed')
        if s == STUCK_KEY:
            attrs.append('label="s%d\\n(stuck)"' % i)
        else:
            attrs.append(f'label="s{i}"')
        lines.append(f"  s{i} [{', '.join(attrs)}];")
    rendered = sorted(
        (idx[src], label.key, idx[dst], label) for src, label, dst in lts.edges
    )
    for si, _, di, label in rendered:
        text = label.render().replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'  s{si} -> s{di} [label="{text}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def lts_to_json(lts: FiniteLTS) -> dict:
    """JSON-ready dict with stable state numbering (sorted by key)."""
    idx = _state_index(lts)
    states = [
        {
            "id": idx[s],
            "key": s,
            "initial": s == lts.initial,
            "unexpanded": s in lts.unexpanded,
        }
        for s in sorted(lts.states)
    ]
    edges = sorted(
        (
            {"src": idx[src], "label": label.to_json(), "dst": idx[dst]}
            for src, label, dst in lts.edges
        ),
        key=lambda e: (e["src"], str(e["label"]), e["dst"]),
    )
    return {
        "initial": idx[lts.initial],
        "partial": lts.partial,
        "states": states,
        "edges": edges,
    }
