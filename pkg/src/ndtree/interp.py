"""Interpreters and refinements.

interp rewrites every event of a tree through a handler, re-emitting branch
nodes in kind and width. refine is the converse direction: it rewrites branch
nodes through a chooser and leaves events alone, specializing nondeterminism
down to a committed strategy.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .core import (
    Br,
    Call,
    Cont,
    CTreeExpr,
    DefTable,
    Event,
    Ret,
    STEPPING,
    UnhandledEvent,
    Vis,
    apply_cont,
    apply_state,
    bind,
    guard,
    is_value,
    register_builtin_def,
    register_template,
    step,
    stuck_d,
    trigger,
    unfold,
)
from .lts import Obs, TAU, Val


@dataclass(frozen=True)
class Handler:
    """An event handler: a continuation template mapping an event to the tree
    that implements it."""

    cont: Cont

    @staticmethod
    def identity() -> "Handler":
        return Handler(Cont("__h_identity", ()))

    @staticmethod
    def step_trigger() -> "Handler":
        """Re-emit each event behind one silent step. Not a simple handler;
        it is the canonical example breaking bisimilarity preservation."""
        return Handler(Cont("__h_vis_step", ()))

    @staticmethod
    def table(entries: dict[Event, CTreeExpr]) -> "Handler":
        """Finite handler given explicitly per event. Unlisted events fault."""
        events = tuple(sorted(entries, key=lambda e: e.key))
        trees = tuple(entries[e] for e in events)
        return Handler(Cont("__h_table", (events, trees)))


@register_template("__h_identity")
def _t_h_identity(captured: tuple, arg: object) -> CTreeExpr:
    return trigger(arg)


@register_template("__h_vis_step")
def _t_h_vis_step(captured: tuple, arg: object) -> CTreeExpr:
    return step(trigger(arg))


@register_template("__h_table")
def _t_h_table(captured: tuple, arg: object) -> CTreeExpr:
    events, trees = captured
    for e, tree in zip(events, trees):
        if e == arg:
            return tree
    raise UnhandledEvent(arg)


@register_template("__interp_k")
def _t_interp_k(captured: tuple, arg: object) -> CTreeExpr:
    hc, k = captured
    return guard(Call("__interp", (hc, apply_cont(k, arg))))


@register_builtin_def("__interp", 2)
def _d_interp(args: tuple, defs: DefTable) -> CTreeExpr:
    hc, t = args
    root = unfold(t, defs)
    if isinstance(root, Ret):
        return root
    cont = Cont("__interp_k", (hc, root.cont))
    if isinstance(root, Br):
        return Br(root.kind, root.width, cont)
    return bind(apply_cont(hc, root.event), cont)


def interp(handler: Handler, t: CTreeExpr) -> CTreeExpr:
    """Interpret every event of t through the handler. Branch nodes pass
    through unchanged in kind and width; each processed node costs one
    delayed spacer in the continuation."""
    return Call("__interp", (handler.cont, t))


@dataclass(frozen=True)
class StateHandler:
    """A stateful event handler: (state, event) -> (new state, answer)."""

    cont: Cont


@register_template("__interp_state_k")
def _t_interp_state_k(captured: tuple, arg: object) -> CTreeExpr:
    hc, k, s = captured
    return guard(Call("__interp_state", (hc, apply_cont(k, arg), s)))


@register_builtin_def("__interp_state", 3)
def _d_interp_state(args: tuple, defs: DefTable) -> CTreeExpr:
    hc, t, s = args
    root = unfold(t, defs)
    if isinstance(root, Ret):
        return Ret((s, root.value))
    if isinstance(root, Br):
        return Br(root.kind, root.width, Cont("__interp_state_k", (hc, root.cont, s)))
    s2, answer = apply_state(hc, s, root.event)
    if not is_value(s2):
        raise ValueError(f"state handler produced a non-value state: {s2!r}")
    return guard(Call("__interp_state", (hc, apply_cont(root.cont, answer), s2)))


def interp_state(handler: StateHandler, t: CTreeExpr, init: object) -> CTreeExpr:
    """Interpret events through a state transformer started at init. The tree
    finishes with (final state, value) pairs; branching is untouched."""
    return Call("__interp_state", (handler.cont, t, init))


# ---------------------------------------------------------------------------
# Refinement: resolve branch nodes through a chooser.


@dataclass(frozen=True)
class BranchChooser:
    """Maps (stepping flag, width) to a tree returning the chosen index."""

    cont: Cont


@dataclass(frozen=True)
class StateChooser:
    """Stateful branch policy: (state, (stepping flag, width)) to
    (new state, index)."""

    cont: Cont


@register_template("__refine_k")
def _t_refine_k(captured: tuple, arg: object) -> CTreeExpr:
    ch, k = captured
    return guard(Call("__refine", (ch, apply_cont(k, arg))))


@register_builtin_def("__refine", 2)
def _d_refine(args: tuple, defs: DefTable) -> CTreeExpr:
    ch, t = args
    root = unfold(t, defs)
    if isinstance(root, Ret):
        return root
    if isinstance(root, Vis):
        return Vis(root.event, Cont("__refine_k", (ch, root.cont)))
    flag = 1 if root.kind == STEPPING else 0
    return bind(apply_cont(ch, (flag, root.width)), Cont("__refine_k", (ch, root.cont)))


def refine(chooser: BranchChooser, t: CTreeExpr) -> CTreeExpr:
    """Replace each branch node by the chooser's decision tree for its kind
    and width; events pass through unchanged."""
    return Call("__refine", (chooser.cont, t))


# Policies available to the constant chooser: (stepping flag, width, param)
# to an index in range.
CHOOSER_POLICIES = {
    "first": lambda b, n, param: 0,
    "last": lambda b, n, param: n - 1,
    "fixed": lambda b, n, param: param % n,
}


@register_template("__chooser_cst")
def _t_chooser_cst(captured: tuple, arg: object) -> CTreeExpr:
    policy, param = captured
    flag, width = arg
    if width == 0:
        return stuck_d()
    idx = CHOOSER_POLICIES[policy](flag, width, param)
    if not 0 <= idx < width:
        raise ValueError(f"policy {policy!r} chose {idx} outside width {width}")
    if flag == 1:
        return step(Ret(idx))
    return guard(Ret(idx))


def cst_chooser(policy: str = "first", param: int = 0) -> BranchChooser:
    if policy not in CHOOSER_POLICIES:
        raise ValueError(f"unknown chooser policy {policy!r}")
    return BranchChooser(Cont("__chooser_cst", (policy, param)))


def refine_cst(t: CTreeExpr, policy: str = "first", param: int = 0) -> CTreeExpr:
    """Refine with a constant policy: stepping branches keep one silent step
    so the refined tree stays strongly below the original; width zero is a
    dead end."""
    return refine(cst_chooser(policy, param), t)


@register_template("__chooser_round_robin", kind="state")
def _t_chooser_round_robin(captured: tuple, state: object, arg: object) -> tuple:
    flag, width = arg
    return state + 1, state % width


def round_robin_chooser() -> StateChooser:
    """Cycles through branch indices; the state counts decisions made."""
    return StateChooser(Cont("__chooser_round_robin", ()))


@register_template("__refine_state_k")
def _t_refine_state_k(captured: tuple, arg: object) -> CTreeExpr:
    hc, k, s = captured
    return guard(Call("__refine_state", (hc, apply_cont(k, arg), s)))


@register_builtin_def("__refine_state", 3)
def _d_refine_state(args: tuple, defs: DefTable) -> CTreeExpr:
    hc, t, s = args
    root = unfold(t, defs)
    if isinstance(root, Ret):
        return Ret((s, root.value))
    if isinstance(root, Vis):
        return Vis(root.event, Cont("__refine_state_k", (hc, root.cont, s)))
    if root.width == 0:
        return stuck_d()
    flag = 1 if root.kind == STEPPING else 0
    s2, idx = apply_state(hc, s, (flag, root.width))
    if not is_value(s2):
        raise ValueError(f"state chooser produced a non-value state: {s2!r}")
    if isinstance(idx, bool) or not isinstance(idx, int) or not 0 <= idx < root.width:
        raise ValueError(f"state chooser chose {idx!r} outside width {root.width}")
    nxt = Call("__refine_state", (hc, apply_cont(root.cont, idx), s2))
    if flag == 1:
        return step(nxt)
    return guard(nxt)


def refine_state(t: CTreeExpr, chooser: StateChooser, init: object) -> CTreeExpr:
    """Refine with a stateful policy, threading the policy state through and
    returning it alongside the final value. Stepping branches keep their
    silent step, so the result simulates into the original once final labels
    are compared through the state projection."""
    return Call("__refine_state", (chooser.cont, t, init))


# ---------------------------------------------------------------------------
# Direct execution by random resolution.


@dataclass(frozen=True)
class RunOutcome:
    """One random run: the labels seen, how it ended, and the final value
    when it ended in a return."""

    labels: tuple
    outcome: str  # "value" | "stuck" | "fuel"
    value: object = None


def run_random(
    t: CTreeExpr,
    defs: Optional[DefTable] = None,
    seed: int = 0,
    max_steps: int = 10_000,
) -> RunOutcome:
    """Execute one run, resolving branches and event answers uniformly at
    random. Delayed branches are resolved silently; stepping branches record
    a silent label. Fuel cuts off silent divergence."""
    rng = random.Random(seed)
    labels: list = []
    node = unfold(t, defs)
    for _ in range(max_steps):
        if isinstance(node, Ret):
            labels.append(Val(node.value))
            return RunOutcome(tuple(labels), "value", node.value)
        if isinstance(node, Vis):
            answer = rng.choice(node.event.answers)
            labels.append(Obs(node.event.name, node.event.args, answer))
            node = unfold(apply_cont(node.cont, answer), defs)
            continue
        if node.width == 0:
            return RunOutcome(tuple(labels), "stuck")
        i = rng.randrange(node.width)
        if node.kind == STEPPING:
            labels.append(TAU)
        node = unfold(apply_cont(node.cont, i), defs)
    return RunOutcome(tuple(labels), "fuel")
