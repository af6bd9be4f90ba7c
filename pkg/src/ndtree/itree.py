"""Embedding inductive interaction trees.

The source language here has returns, events, and an explicit silent
constructor (Later); nondeterminism only enters through a distinguished
choice event. Injection maps these trees into the branching world, and
internalization turns the choice event into native stepping branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (
    Budget,
    Call,
    Cont,
    CTreeExpr,
    DEFAULT_BUDGET,
    DefTable,
    Event,
    NAME_RE,
    Br,
    Ret,
    STEPPING,
    TEMPLATES,
    UnknownTemplate,
    UnproductiveDefinition,
    Vis,
    apply_cont,
    _check_payload,
    _set_key,
    guard,
    register_builtin_def,
    register_template,
    ser,
    unfold,
)
from .equiv import EQUALITY, Verdict, _check_strong
from .lts import FiniteLTS, Obs, STUCK_KEY, TAU, Val


class _IKeyed:
    key: str

    def __eq__(self, other):
        if isinstance(other, _IKeyed):
            return self.key == other.key
        return NotImplemented

    def __hash__(self):
        return hash(self.key)


@dataclass(frozen=True, eq=False)
class IRet(_IKeyed):
    value: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _check_payload(self.value)
        _set_key(self, f"(iret {ser(self.value)})")


@dataclass(frozen=True, eq=False)
class IVis(_IKeyed):
    event: Event
    cont: Cont  # an "icont" template: answer -> ITreeExpr
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _set_key(self, f"(ivis {self.event.key} {self.cont.key})")


@dataclass(frozen=True, eq=False)
class ILater(_IKeyed):
    """One explicit silent step."""

    child: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _set_key(self, f"(ilater {ser(self.child)})")


@dataclass(frozen=True, eq=False)
class ICall(_IKeyed):
    def_id: str
    args: tuple = ()
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        if not NAME_RE.match(self.def_id):
            raise ValueError(f"bad definition id: {self.def_id!r}")
        parts = " ".join(ser(a) for a in self.args)
        _set_key(self, f"(icall {self.def_id}{' ' + parts if parts else ''})")


ITreeExpr = object


def apply_icont(k: Cont, arg: object):
    entry = TEMPLATES.get(k.name)
    if entry is None:
        raise UnknownTemplate(k.name)
    kind, fn = entry
    if kind != "icont":
        raise ValueError(f"template {k.name!r} has kind {kind!r}, expected icont")
    return fn(k.captured, arg)


def unfold_itree(it, defs: Optional[DefTable] = None):
    """Resolve call indirection at the root of an inductive tree."""
    seen: set[str] = set()
    while isinstance(it, ICall):
        if it.key in seen:
            raise UnproductiveDefinition(f"call cycle with no constructor at {it.key}")
        seen.add(it.key)
        if defs is None:
            raise ValueError("an inductive-tree call needs a definition table")
        arity, fn = defs.lookup(it.def_id)
        if len(it.args) != arity:
            raise ValueError(f"definition {it.def_id!r} expects {arity} args")
        it = fn(it.args, defs)
    if not isinstance(it, (IRet, IVis, ILater)):
        raise TypeError(f"definition produced a non-inductive-tree: {it!r}")
    return it


# ---------------------------------------------------------------------------
# The distinguished choice event.

CHOOSE = "choose"


def choose_event(n: int) -> Event:
    if not isinstance(n, int) or n < 1:
        raise ValueError("choice width must be a positive int")
    return Event(CHOOSE, (n,), tuple(range(n)))


# ---------------------------------------------------------------------------
# Injection: Later becomes a delayed spacer, event continuations gain one.


@register_template("__inject_k")
def _t_inject_k(captured: tuple, arg: object) -> CTreeExpr:
    (ik,) = captured
    return guard(Call("__inject", (apply_icont(ik, arg),)))


@register_builtin_def("__inject", 1)
def _d_inject(args: tuple, defs: DefTable) -> CTreeExpr:
    it = unfold_itree(args[0], defs)
    if isinstance(it, IRet):
        return Ret(it.value)
    if isinstance(it, ILater):
        return guard(Call("__inject", (it.child,)))
    return Vis(it.event, Cont("__inject_k", (it.cont,)))


def inject(it) -> CTreeExpr:
    """Map an inductive tree into the branching world, event for event."""
    return Call("__inject", (it,))


# ---------------------------------------------------------------------------
# Internalization: the choice event becomes a stepping branch.


@register_template("__internalize_k")
def _t_internalize_k(captured: tuple, arg: object) -> CTreeExpr:
    (k,) = captured
    return guard(Call("__internalize", (apply_cont(k, arg),)))


@register_template("__internalize_choose")
def _t_internalize_choose(captured: tuple, arg: object) -> CTreeExpr:
    k, answers = captured
    return guard(Call("__internalize", (apply_cont(k, answers[arg]),)))


@register_builtin_def("__internalize", 1)
def _d_internalize(args: tuple, defs: DefTable) -> CTreeExpr:
    root = unfold(args[0], defs)
    if isinstance(root, Ret):
        return root
    if isinstance(root, Br):
        return Br(root.kind, root.width, Cont("__internalize_k", (root.cont,)))
    if root.event.name == CHOOSE:
        answers = root.event.answers
        return Br(
            STEPPING, len(answers), Cont("__internalize_choose", (root.cont, answers))
        )
    return Vis(root.event, Cont("__internalize_k", (root.cont,)))


def internalize(t: CTreeExpr) -> CTreeExpr:
    """Replace each choice event by a stepping branch over its answers."""
    return Call("__internalize", (t,))


def embed(it) -> CTreeExpr:
    """Full embedding: inject, then internalize the choice event."""
    return internalize(inject(it))


# ---------------------------------------------------------------------------
# Equivalence up to silent steps on the inductive side, used as the
# independent oracle for the embedding theorem.

_DIV_KEY = "(idiv)"
_CUT = object()  # silent chain longer than the budget: truncated, not divergent


def _peel(it, defs: Optional[DefTable], limit: int):
    """Skip finite Later/call chains. A revisited key means real silent
    divergence (None); running out of budget first means the chain was merely
    cut (_CUT), which must stay distinguishable from divergence."""
    seen: set[str] = set()
    for _ in range(limit):
        if it.key in seen:
            return None
        seen.add(it.key)
        if isinstance(it, ICall):
            it = unfold_itree(it, defs)
            continue
        if isinstance(it, ILater):
            it = it.child
            continue
        return it
    return _CUT


def itree_lts(
    it,
    defs: Optional[DefTable] = None,
    budget: Budget = DEFAULT_BUDGET,
) -> FiniteLTS:
    """Transition view of an inductive tree with silent chains collapsed.

    Divergence is a single looping state, so equivalence up to silent steps
    on inductive trees is exactly strong bisimilarity of these systems.
    """
    limit = budget.closure_depth

    def key_of(node):
        if node is None:
            return _DIV_KEY
        if node is _CUT:
            return "(icut)"
        return node.key

    root = _peel(it, defs, limit)
    states: dict[str, object] = {key_of(root): root}
    edges: list = []
    unexpanded: set[str] = set()
    queue = [root]
    while queue:
        node = queue.pop()
        k = key_of(node)
        if node is _CUT:
            unexpanded.add(k)
            continue
        if node is None:
            edges.append((k, TAU, k))
            continue
        if isinstance(node, IRet):
            if STUCK_KEY not in states:
                states[STUCK_KEY] = False
            edges.append((k, Val(node.value), STUCK_KEY))
            continue
        pend = []
        fresh_keys: dict[str, object] = {}
        for a in node.event.answers:
            child = _peel(apply_icont(node.cont, a), defs, limit)
            ck = key_of(child)
            if ck not in states and ck not in fresh_keys:
                fresh_keys[ck] = child
            pend.append((Obs(node.event.name, node.event.args, a), ck))
        if len(states) + len(fresh_keys) > budget.max_states:
            unexpanded.add(k)
            continue
        for ck, child in fresh_keys.items():
            states[ck] = child
            queue.append(child)
        for label, ck in pend:
            edges.append((k, label, ck))

    return FiniteLTS(
        initial=key_of(root),
        states=tuple(states),
        edges=tuple(edges),
        unexpanded=frozenset(unexpanded),
        partial=bool(unexpanded),
    )


def check_eutt(
    a,
    b,
    defs: Optional[DefTable] = None,
    budget: Budget = DEFAULT_BUDGET,
) -> Verdict:
    """Equivalence of two inductive trees up to silent steps."""
    L = itree_lts(a, defs, budget)
    R = itree_lts(b, defs, budget)
    return _check_strong(L, R, EQUALITY, True, budget)
