"""Core term language for nondeterminism trees.

A tree is a first-order expression: returns, external events with a
continuation, stepping or delayed branch nodes, and calls into a table of
named definitions (the corecursion device). Continuations are defunctionalized
as named templates plus captured terms, so every tree has a canonical string
key and the whole development stays finite-state friendly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

NAME_RE = re.compile(r"\A[A-Za-z_][A-Za-z0-9_]*\Z")

Value = Union[int, str, tuple]

UNIT: tuple = ()


class CtreeError(Exception):
    """Base class for errors raised by the tree machinery."""


class UnknownDefinition(CtreeError):
    def __init__(self, def_id: str):
        super().__init__(f"unknown definition: {def_id!r}")
        self.def_id = def_id


class ArityMismatch(CtreeError):
    def __init__(self, def_id: str, expected: int, got: int):
        super().__init__(f"definition {def_id!r} expects {expected} args, got {got}")
        self.def_id = def_id
        self.expected = expected
        self.got = got


class UnproductiveDefinition(CtreeError):
    """A call chain revisited its own key without producing a constructor."""


class UnknownTemplate(CtreeError):
    def __init__(self, name: str):
        super().__init__(f"unknown continuation template: {name!r}")
        self.name = name


class UnhandledEvent(CtreeError):
    def __init__(self, event: "Event"):
        super().__init__(f"handler does not cover event {event.name!r}")
        self.event = event


def is_value(x: object) -> bool:
    """True for the first-order value fragment: ints, names, tuples of these."""
    if isinstance(x, (int, str)):
        return True
    if isinstance(x, tuple):
        return all(is_value(e) for e in x)
    return False


_ATOM_RE = re.compile(r"\A[A-Za-z_][A-Za-z0-9_]*\Z")


def _ser_str(s: str) -> str:
    if _ATOM_RE.match(s):
        return "$" + s
    escaped = s.replace("\\", "\\\\").replace('"', '\\"')
    return '$"' + escaped + '"'


def ser(t: object) -> str:
    """Canonical serialization of a term. Injective on well-formed terms."""
    if isinstance(t, bool):
        return str(int(t))
    if isinstance(t, int):
        return str(t)
    if isinstance(t, str):
        return _ser_str(t)
    if isinstance(t, tuple):
        if not t:
            return "(tup)"
        return "(tup " + " ".join(ser(e) for e in t) + ")"
    key = getattr(t, "key", None)
    if isinstance(key, str):
        return key
    raise TypeError(f"not a serializable term: {t!r}")


class _Keyed:
    """Mixin giving key-based equality and hashing to the node dataclasses."""

    key: str

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if isinstance(other, _Keyed):
            return self.key == other.key
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.key)


def _set_key(obj: object, key: str) -> None:
    object.__setattr__(obj, "key", key)


@dataclass(frozen=True, eq=False)
class Event(_Keyed):
    """An external interaction: a name, value arguments, and the answers the
    environment may give. The answer domain drives LTS fan-out."""

    name: str
    args: tuple = ()
    answers: tuple = (UNIT,)
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        if not NAME_RE.match(self.name):
            raise ValueError(f"bad event name: {self.name!r}")
        if not is_value(self.args):
            raise ValueError("event args must be values")
        if not self.answers:
            raise ValueError(f"event {self.name!r} has an empty answer domain")
        if not is_value(self.answers):
            raise ValueError("event answers must be values")
        if len(set(self.answers)) != len(self.answers):
            raise ValueError(f"event {self.name!r} has duplicate answers")
        _set_key(self, f"(ev {self.name} {ser(self.args)} {ser(self.answers)})")


@dataclass(frozen=True, eq=False)
class Cont(_Keyed):
    """A defunctionalized continuation: template name plus captured terms."""

    name: str
    captured: tuple = ()
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        if not NAME_RE.match(self.name):
            raise ValueError(f"bad template name: {self.name!r}")
        if not isinstance(self.captured, tuple):
            raise ValueError("captured terms must form a tuple")
        parts = " ".join(ser(c) for c in self.captured)
        _set_key(self, f"(k {self.name}{' ' + parts if parts else ''})")


@dataclass(frozen=True, eq=False)
class ARet(_Keyed):
    """Head outcome: the tree returns this value."""

    value: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _check_payload(self.value)
        _set_key(self, f"(aret {ser(self.value)})")


@dataclass(frozen=True, eq=False)
class ABr(_Keyed):
    """Head outcome: a stepping branch of the given width."""

    width: int
    cont: Cont
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _check_width(self.width)
        _set_key(self, f"(abr {self.width} {self.cont.key})")


@dataclass(frozen=True, eq=False)
class AVis(_Keyed):
    """Head outcome: an external event."""

    event: Event
    cont: Cont
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _set_key(self, f"(avis {self.event.key} {self.cont.key})")


HeadAction = Union[ARet, ABr, AVis]


def _check_payload(v: object) -> None:
    if isinstance(v, (ARet, ABr, AVis)):
        return
    if not is_value(v):
        raise ValueError(f"return payload must be a value or head action: {v!r}")


def _check_width(n: object) -> None:
    if isinstance(n, bool) or not isinstance(n, int) or n < 0:
        raise ValueError(f"branch width must be a non-negative int: {n!r}")


STEPPING = "s"
DELAYED = "d"


@dataclass(frozen=True, eq=False)
class Ret(_Keyed):
    """A finished computation."""

    value: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _check_payload(self.value)
        _set_key(self, f"(ret {ser(self.value)})")


@dataclass(frozen=True, eq=False)
class Vis(_Keyed):
    """An external event node; the continuation consumes the answer."""

    event: Event
    cont: Cont
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _set_key(self, f"(vis {self.event.key} {self.cont.key})")


@dataclass(frozen=True, eq=False)
class Br(_Keyed):
    """A branch node. Stepping branches are observable as one silent step;
    delayed branches commit only through their children."""

    kind: str
    width: int
    cont: Cont
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in (STEPPING, DELAYED):
            raise ValueError(f"bad branch kind: {self.kind!r}")
        _check_width(self.width)
        tag = "brs" if self.kind == STEPPING else "brd"
        _set_key(self, f"({tag} {self.width} {self.cont.key})")


@dataclass(frozen=True, eq=False)
class Call(_Keyed):
    """A reference into the definition table; unfolding resolves it."""

    def_id: str
    args: tuple = ()
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        if not NAME_RE.match(self.def_id):
            raise ValueError(f"bad definition id: {self.def_id!r}")
        if not isinstance(self.args, tuple):
            raise ValueError("call args must form a tuple")
        parts = " ".join(ser(a) for a in self.args)
        _set_key(self, f"(call {self.def_id}{' ' + parts if parts else ''})")


CTreeExpr = Union[Ret, Vis, Br, Call]

TemplateFn = Callable[[tuple, object], object]

# name -> (kind, fn). "cont" templates map an argument to a tree; "state"
# templates map (state, event) to a (state, answer) pair.
TEMPLATES: dict[str, tuple[str, Callable]] = {}


def register_template(name: str, kind: str = "cont"):
    """Decorator registering a continuation template under a fixed name."""

    def install(fn):
        if name in TEMPLATES:
            raise ValueError(f"template {name!r} already registered")
        if not NAME_RE.match(name):
            raise ValueError(f"bad template name: {name!r}")
        TEMPLATES[name] = (kind, fn)
        return fn

    return install


def apply_cont(k: Cont, arg: object) -> CTreeExpr:
    """Apply a continuation to an argument, producing the next tree."""
    entry = TEMPLATES.get(k.name)
    if entry is None:
        raise UnknownTemplate(k.name)
    kind, fn = entry
    if kind != "cont":
        raise ValueError(f"template {k.name!r} has kind {kind!r}, not a continuation")
    return fn(k.captured, arg)


def apply_state(k: Cont, state: Value, event: Event) -> tuple:
    """Apply a state-handler template: (state, event) -> (new state, answer)."""
    entry = TEMPLATES.get(k.name)
    if entry is None:
        raise UnknownTemplate(k.name)
    kind, fn = entry
    if kind != "state":
        raise ValueError(f"template {k.name!r} has kind {kind!r}, not a state handler")
    return fn(k.captured, state, event)


DefFn = Callable[[tuple, "DefTable"], CTreeExpr]

_BUILTIN_DEFS: dict[str, tuple[int, DefFn]] = {}


def register_builtin_def(def_id: str, arity: int):
    def install(fn):
        if def_id in _BUILTIN_DEFS:
            raise ValueError(f"builtin definition {def_id!r} already registered")
        _BUILTIN_DEFS[def_id] = (arity, fn)
        return fn

    return install


class DefTable:
    """Named tree definitions. Builtins (bind, iteration, the calculus
    operators) resolve through every table; user definitions are added during
    construction and the table is treated as read-only during analysis."""

    def __init__(self):
        self._defs: dict[str, tuple[int, DefFn]] = {}

    def register(self, def_id: str, arity: int, fn: DefFn) -> None:
        if not NAME_RE.match(def_id):
            raise ValueError(f"bad definition id: {def_id!r}")
        if def_id.startswith("__"):
            raise ValueError("definition ids starting with '__' are reserved")
        if def_id in self._defs or def_id in _BUILTIN_DEFS:
            raise ValueError(f"definition {def_id!r} already registered")
        if not isinstance(arity, int) or arity < 0:
            raise ValueError("arity must be a non-negative int")
        self._defs[def_id] = (arity, fn)

    def lookup(self, def_id: str) -> tuple[int, DefFn]:
        entry = self._defs.get(def_id) or _BUILTIN_DEFS.get(def_id)
        if entry is None:
            raise UnknownDefinition(def_id)
        return entry

    def has(self, def_id: str) -> bool:
        return def_id in self._defs or def_id in _BUILTIN_DEFS

    def ids(self) -> Iterable[str]:
        return list(self._defs)


def unfold(t: CTreeExpr, defs: Optional[DefTable] = None) -> CTreeExpr:
    """Resolve call nodes at the root until a constructor appears.

    Idempotent on constructor roots. A call chain that revisits one of its own
    keys can never produce a constructor, so that raises rather than spinning.
    """
    seen: set[str] = set()
    while isinstance(t, Call):
        if t.key in seen:
            raise UnproductiveDefinition(f"call cycle with no constructor at {t.key}")
        seen.add(t.key)
        arity, fn = (defs or _EMPTY_DEFS).lookup(t.def_id)
        if len(t.args) != arity:
            raise ArityMismatch(t.def_id, arity, len(t.args))
        t = fn(t.args, defs or _EMPTY_DEFS)
    if not isinstance(t, (Ret, Vis, Br)):
        raise TypeError(f"definition produced a non-tree: {t!r}")
    return t


# ---------------------------------------------------------------------------
# Elementary constructors.


def ret(v: object = UNIT) -> Ret:
    return Ret(v)


def vis(event: Event, cont: Cont) -> Vis:
    return Vis(event, cont)


def br(kind: str, width: int, cont: Cont) -> Br:
    return Br(kind, width, cont)


@register_template("__ret")
def _t_ret(captured: tuple, arg: object) -> CTreeExpr:
    return Ret(arg)


@register_template("__const")
def _t_const(captured: tuple, arg: object) -> CTreeExpr:
    return captured[0]


@register_template("__select")
def _t_select(captured: tuple, arg: object) -> CTreeExpr:
    if isinstance(arg, bool) or not isinstance(arg, int) or not 0 <= arg < len(captured):
        raise ValueError(f"branch index {arg!r} out of range for width {len(captured)}")
    return captured[arg]


@register_template("__table")
def _t_table(captured: tuple, arg: object) -> CTreeExpr:
    keys = captured[0]
    try:
        idx = keys.index(arg)
    except ValueError:
        raise ValueError(f"answer {arg!r} not in table {keys!r}") from None
    return captured[1 + idx]


def ret_cont() -> Cont:
    return Cont("__ret", ())


def trigger(event: Event) -> Vis:
    """Emit an event and return its answer."""
    return Vis(event, ret_cont())


def br_s_atom(n: int) -> Br:
    """Stepping branch returning the chosen index."""
    return Br(STEPPING, n, ret_cont())


def br_d_atom(n: int) -> Br:
    """Delayed branch returning the chosen index."""
    return Br(DELAYED, n, ret_cont())


def guard(t: CTreeExpr) -> Br:
    """Unary delayed branch: a spacer invisible to strong equivalence."""
    return Br(DELAYED, 1, Cont("__const", (t,)))


def step(t: CTreeExpr) -> Br:
    """Unary stepping branch: one silent step, then t."""
    return Br(STEPPING, 1, Cont("__const", (t,)))


def stuck_d() -> Br:
    """The nullary delayed branch: no transitions at all."""
    return Br(DELAYED, 0, ret_cont())


def stuck_s() -> Br:
    return Br(STEPPING, 0, ret_cont())


def br_list(kind: str, children: Iterable[CTreeExpr]) -> Br:
    """Branch over explicitly listed children."""
    kids = tuple(children)
    return Br(kind, len(kids), Cont("__select", kids))


def vis_table(event: Event, children: Iterable[CTreeExpr]) -> Vis:
    """Event node with one explicit child per answer, in answer order."""
    kids = tuple(children)
    if len(kids) != len(event.answers):
        raise ValueError(
            f"event {event.name!r} has {len(event.answers)} answers, got {len(kids)} children"
        )
    return Vis(event, Cont("__table", (event.answers,) + kids))


# ---------------------------------------------------------------------------
# Spins: silently divergent trees of either branch kind.


@register_template("__spin_k")
def _t_spin_k(captured: tuple, arg: object) -> CTreeExpr:
    kind, n = captured
    return Call("__spin", (kind, n))


@register_builtin_def("__spin", 2)
def _d_spin(args: tuple, defs: DefTable) -> CTreeExpr:
    kind, n = args
    return Br(kind, n, Cont("__spin_k", (kind, n)))


def spin_d_nary(n: int) -> CTreeExpr:
    """n-ary delayed self-loop; n = 0 degenerates to stuck."""
    _check_width(n)
    if n == 0:
        return stuck_d()
    return Call("__spin", (DELAYED, n))


def spin_s_nary(n: int) -> CTreeExpr:
    """n-ary stepping self-loop; n = 0 degenerates to stuck."""
    _check_width(n)
    if n == 0:
        return stuck_s()
    return Call("__spin", (STEPPING, n))


def spin_d() -> CTreeExpr:
    return spin_d_nary(1)


def spin_s() -> CTreeExpr:
    return spin_s_nary(1)


# ---------------------------------------------------------------------------
# Sums and pairs, encoded as tagged tuples.


def inl(v: object) -> tuple:
    return (0, v)


def inr(v: object) -> tuple:
    return (1, v)


def sum_tag(v: object) -> tuple:
    """Split an encoded sum into (is_right, payload)."""
    if not isinstance(v, tuple) or len(v) != 2 or v[0] not in (0, 1):
        raise ValueError(f"not an encoded sum: {v!r}")
    return v[0], v[1]


# ---------------------------------------------------------------------------
# Sequencing.


@register_template("__bind_k")
def _t_bind_k(captured: tuple, arg: object) -> CTreeExpr:
    h, k = captured
    return bind(apply_cont(h, arg), k)


@register_builtin_def("__bind", 2)
def _d_bind(args: tuple, defs: DefTable) -> CTreeExpr:
    t, k = args
    return bind(unfold(t, defs), k)


def bind(t: CTreeExpr, k: Cont) -> CTreeExpr:
    """Sequence t with continuation k.

    Dispatches eagerly on a constructor root (returns feed k directly, event
    and branch nodes push the bind into their children); a call root defers
    to unfolding time.
    """
    if isinstance(t, Ret):
        return apply_cont(k, t.value)
    if isinstance(t, (Vis, Br)):
        inner = Cont("__bind_k", (t.cont, k))
        if isinstance(t, Vis):
            return Vis(t.event, inner)
        return Br(t.kind, t.width, inner)
    if isinstance(t, Call):
        return Call("__bind", (t, k))
    raise TypeError(f"cannot bind over {t!r}")


def seq(t: CTreeExpr, u: CTreeExpr) -> CTreeExpr:
    """Run t, discard its value, then run u."""
    return bind(t, Cont("__const", (u,)))


# ---------------------------------------------------------------------------
# Iteration: repeat a body until it signals completion with a right injection.


@register_template("__iter_k")
def _t_iter_k(captured: tuple, arg: object) -> CTreeExpr:
    (body_id,) = captured
    tag, payload = sum_tag(arg)
    if tag == 1:
        return Ret(payload)
    return guard(Call("__iter", (body_id, payload)))


@register_builtin_def("__iter", 2)
def _d_iter(args: tuple, defs: DefTable) -> CTreeExpr:
    body_id, i = args
    if not isinstance(body_id, str):
        raise TypeError("iteration body must be named by a definition id")
    return bind(Call(body_id, (i,)), Cont("__iter_k", (body_id,)))


def iter_tree(body_id: str, init: object) -> Call:
    """Iterate the unary definition body_id from the given seed. The body
    returns (0, next seed) to continue or (1, result) to finish; each loop
    entry is spaced by a guard."""
    return Call("__iter", (body_id, init))


# ---------------------------------------------------------------------------
# Head: peel delayed branching down to the first committed action.


@register_template("__head_k")
def _t_head_k(captured: tuple, arg: object) -> CTreeExpr:
    (k,) = captured
    return Call("__head", (apply_cont(k, arg),))


@register_builtin_def("__head", 1)
def _d_head(args: tuple, defs: DefTable) -> CTreeExpr:
    root = unfold(args[0], defs)
    if isinstance(root, Ret):
        return Ret(ARet(root.value))
    if isinstance(root, Vis):
        return Ret(AVis(root.event, root.cont))
    if root.kind == STEPPING:
        return Ret(ABr(root.width, root.cont))
    return Br(DELAYED, root.width, Cont("__head_k", (root.cont,)))


def head(t: CTreeExpr) -> Call:
    """Tree computing the first action of t: delayed branches are searched
    through, everything else is reified as a head action."""
    return Call("__head", (t,))


# ---------------------------------------------------------------------------
# Stepping-branch elimination: replace every stepping branch by a delayed
# branch followed by a unary step, preserving strong equivalence.


@register_template("__brs_elim_k")
def _t_brs_elim_k(captured: tuple, arg: object) -> CTreeExpr:
    tag, k = captured
    inner = guard(Call("__brs_elim", (apply_cont(k, arg),)))
    if tag == STEPPING:
        return step(inner)
    return inner


@register_builtin_def("__brs_elim", 1)
def _d_brs_elim(args: tuple, defs: DefTable) -> CTreeExpr:
    root = unfold(args[0], defs)
    if isinstance(root, Ret):
        return root
    if isinstance(root, Vis):
        return Vis(root.event, Cont("__brs_elim_k", ("v", root.cont)))
    kind = STEPPING if root.kind == STEPPING else DELAYED
    return Br(DELAYED, root.width, Cont("__brs_elim_k", (kind, root.cont)))


def br_s_elim(t: CTreeExpr) -> Call:
    return Call("__brs_elim", (t,))


@dataclass(frozen=True)
class Budget:
    """Exploration limits shared by the finite-state analyses."""

    max_states: int = 100_000
    closure_depth: int = 10_000


DEFAULT_BUDGET = Budget()

_EMPTY_DEFS = DefTable()
