"""A CCS front end, two ways.

Processes get an operational semantics (transition rules on syntax) and a
denotational one (trees built from events and branch nodes, with parallel
composition as a corecursive operator over heads). The two routes stay
independent so that agreement between them is a meaningful check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (
    ABr,
    AVis,
    Br,
    Budget,
    Call,
    Cont,
    CTreeExpr,
    DEFAULT_BUDGET,
    DefTable,
    DELAYED,
    Event,
    NAME_RE,
    STEPPING,
    Vis,
    apply_cont,
    bind,
    br_list,
    head,
    register_builtin_def,
    register_template,
    step,
    stuck_d,
    trigger,
)
from .equiv import EQUALITY, Verdict, _check_strong, check_sbisim
from .lts import FiniteLTS, Obs, TAU


# ---------------------------------------------------------------------------
# Actions and the event encoding.


@dataclass(frozen=True, eq=False)
class CcsAction:
    """tau, a channel name, or its co-name."""

    kind: str  # "tau" | "name" | "coname"
    chan: Optional[str] = None
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("tau", "name", "coname"):
            raise ValueError(f"bad action kind: {self.kind!r}")
        if self.kind == "tau":
            if self.chan is not None:
                raise ValueError("tau carries no channel")
        elif self.chan is None or not NAME_RE.match(self.chan):
            raise ValueError(f"bad channel: {self.chan!r}")
        object.__setattr__(self, "key", f"(act {self.kind} {self.chan or '_'})")

    def __eq__(self, other):
        if isinstance(other, CcsAction):
            return self.key == other.key
        return NotImplemented

    def __hash__(self):
        return hash(self.key)

    def complement(self) -> "CcsAction":
        if self.kind == "name":
            return CcsAction("coname", self.chan)
        if self.kind == "coname":
            return CcsAction("name", self.chan)
        return self

    def render(self) -> str:
        if self.kind == "tau":
            return "tau"
        return self.chan if self.kind == "name" else "'" + self.chan


TAU_ACT = CcsAction("tau")


def name_act(c: str) -> CcsAction:
    return CcsAction("name", c)


def coname_act(c: str) -> CcsAction:
    return CcsAction("coname", c)


def _enc(a: CcsAction):
    if a.kind == "name":
        return a.chan
    if a.kind == "coname":
        return ("co", a.chan)
    raise ValueError("tau is not an emittable action")


def _enc_chan(enc) -> str:
    return enc if isinstance(enc, str) else enc[1]


def _enc_complementary(e1, e2) -> bool:
    if isinstance(e1, str):
        return isinstance(e2, tuple) and e2 == ("co", e1)
    return isinstance(e2, str) and e1 == ("co", e2)


ACT = "act"


def act_event(a: CcsAction) -> Event:
    """The communication event for a visible action; answered with unit."""
    return Event(ACT, (_enc(a),))


def label_of_action(a: CcsAction):
    """The LTS label an action shows up as."""
    if a.kind == "tau":
        return TAU
    return Obs(ACT, (_enc(a),), ())


# ---------------------------------------------------------------------------
# Process syntax.


class _PKeyed:
    key: str

    def __eq__(self, other):
        if isinstance(other, _PKeyed):
            return self.key == other.key
        return NotImplemented

    def __hash__(self):
        return hash(self.key)


@dataclass(frozen=True, eq=False)
class Nil(_PKeyed):
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "key", "(nil)")


@dataclass(frozen=True, eq=False)
class Prefix(_PKeyed):
    action: CcsAction
    body: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        if self.action.kind == "tau":
            raise ValueError("prefixes range over visible actions only")
        object.__setattr__(self, "key", f"(pre {self.action.key} {self.body.key})")


@dataclass(frozen=True, eq=False)
class Plus(_PKeyed):
    left: object
    right: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "key", f"(plus {self.left.key} {self.right.key})")


@dataclass(frozen=True, eq=False)
class Par(_PKeyed):
    left: object
    right: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "key", f"(par {self.left.key} {self.right.key})")


@dataclass(frozen=True, eq=False)
class New(_PKeyed):
    chan: str
    body: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        if not NAME_RE.match(self.chan):
            raise ValueError(f"bad channel: {self.chan!r}")
        object.__setattr__(self, "key", f"(new {self.chan} {self.body.key})")


@dataclass(frozen=True, eq=False)
class Bang(_PKeyed):
    body: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "key", f"(bang {self.body.key})")


Process = object

_PREC_PAR = 0
_PREC_PLUS = 1
_PREC_PREFIX = 2


def render_process(p: Process, prec: int = 0) -> str:
    if isinstance(p, Nil):
        return "0"
    if isinstance(p, Prefix):
        text = f"{p.action.render()}.{render_process(p.body, _PREC_PREFIX)}"
        return text
    if isinstance(p, Plus):
        text = f"{render_process(p.left, _PREC_PLUS)} + {render_process(p.right, _PREC_PLUS + 1)}"
        return f"({text})" if prec > _PREC_PLUS else text
    if isinstance(p, Par):
        text = f"{render_process(p.left, _PREC_PAR)} | {render_process(p.right, _PREC_PAR + 1)}"
        return f"({text})" if prec > _PREC_PAR else text
    if isinstance(p, New):
        text = f"new {p.chan} in {render_process(p.body, _PREC_PAR)}"
        return f"({text})" if prec > _PREC_PAR else text
    if isinstance(p, Bang):
        return f"!{render_process(p.body, _PREC_PREFIX)}"
    raise TypeError(f"not a process: {p!r}")


def process_to_json(p: Process) -> dict:
    if isinstance(p, Nil):
        return {"kind": "nil"}
    if isinstance(p, Prefix):
        return {
            "kind": "prefix",
            "action": p.action.render(),
            "body": process_to_json(p.body),
        }
    if isinstance(p, Plus):
        return {"kind": "plus", "left": process_to_json(p.left), "right": process_to_json(p.right)}
    if isinstance(p, Par):
        return {"kind": "par", "left": process_to_json(p.left), "right": process_to_json(p.right)}
    if isinstance(p, New):
        return {"kind": "new", "chan": p.chan, "body": process_to_json(p.body)}
    if isinstance(p, Bang):
        return {"kind": "bang", "body": process_to_json(p.body)}
    raise TypeError(f"not a process: {p!r}")


# ---------------------------------------------------------------------------
# Parsing. Precedence, loosest first: |, +, then prefix/bang/new.


class CcsParseError(Exception):
    def __init__(self, message: str, line: int, col: int, expected: Optional[str] = None):
        detail = f"{message} at {line}:{col}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)
        self.line = line
        self.col = col
        self.expected = expected


_KEYWORDS = {"new", "in"}


def _tokenize(text: str):
    toks = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            col += 1
            i += 1
            continue
        start_col = col
        if c == "'":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i + 1 : j]
            if not NAME_RE.match(word or ""):
                raise CcsParseError("bad co-name", line, start_col, "channel after '")
            toks.append(("CONAME", word, line, start_col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = word.upper() if word in _KEYWORDS else "NAME"
            toks.append((kind, word, line, start_col))
            col += j - i
            i = j
            continue
        single = {"0": "ZERO", ".": "DOT", "+": "PLUS", "|": "BAR", "!": "BANG", "(": "LPAREN", ")": "RPAREN"}
        if c in single:
            toks.append((single[c], c, line, start_col))
            col += 1
            i += 1
            continue
        raise CcsParseError(f"unexpected character {c!r}", line, start_col)
    toks.append(("EOF", "", line, col))
    return toks


class _Parser:
    def __init__(self, toks):
        self.toks = toks
        self.pos = 0

    def peek(self):
        return self.toks[self.pos]

    def take(self, kind: str, expected: str):
        tok = self.toks[self.pos]
        if tok[0] != kind:
            raise CcsParseError(f"unexpected {tok[1]!r}" if tok[1] else "unexpected end of input", tok[2], tok[3], expected)
        self.pos += 1
        return tok

    def parse_par(self):
        p = self.parse_plus()
        while self.peek()[0] == "BAR":
            self.pos += 1
            p = Par(p, self.parse_plus())
        return p

    def parse_plus(self):
        p = self.parse_prefix()
        while self.peek()[0] == "PLUS":
            self.pos += 1
            p = Plus(p, self.parse_prefix())
        return p

    def parse_prefix(self):
        tok = self.peek()
        if tok[0] == "BANG":
            self.pos += 1
            return Bang(self.parse_prefix())
        if tok[0] == "NEW":
            self.pos += 1
            chan = self.take("NAME", "channel name")[1]
            self.take("IN", "'in'")
            return New(chan, self.parse_par())
        if tok[0] in ("NAME", "CONAME"):
            self.pos += 1
            action = name_act(tok[1]) if tok[0] == "NAME" else coname_act(tok[1])
            self.take("DOT", "'.' after action")
            return Prefix(action, self.parse_prefix())
        if tok[0] == "ZERO":
            self.pos += 1
            return Nil()
        if tok[0] == "LPAREN":
            self.pos += 1
            p = self.parse_par()
            self.take("RPAREN", "')'")
            return p
        raise CcsParseError(
            f"unexpected {tok[1]!r}" if tok[1] else "unexpected end of input",
            tok[2],
            tok[3],
            "a process",
        )


def parse_ccs(text: str) -> Process:
    """Parse process syntax: 0, a.P, 'a.P, P+Q, P|Q, !P, new c in P.

    '|' binds loosest, then '+', then prefixing; 'new c in' scopes to the
    rest of its enclosing group.
    """
    parser = _Parser(_tokenize(text))
    p = parser.parse_par()
    parser.take("EOF", "end of input")
    return p


# ---------------------------------------------------------------------------
# Operational semantics.


def norm(p: Process) -> Process:
    """Erase dead parallel components: the nil process has no transitions, so
    this preserves derivations exactly. Used only to key states."""
    if isinstance(p, (Nil, Prefix)):
        return p if isinstance(p, Nil) else Prefix(p.action, norm(p.body))
    if isinstance(p, Plus):
        return Plus(norm(p.left), norm(p.right))
    if isinstance(p, Par):
        l, r = norm(p.left), norm(p.right)
        if isinstance(l, Nil):
            return r
        if isinstance(r, Nil):
            return l
        return Par(l, r)
    if isinstance(p, New):
        b = norm(p.body)
        return Nil() if isinstance(b, Nil) else New(p.chan, b)
    if isinstance(p, Bang):
        b = norm(p.body)
        return Nil() if isinstance(b, Nil) else Bang(b)
    raise TypeError(f"not a process: {p!r}")


def op_transitions(p: Process, bang_fuel: int = 8) -> tuple[tuple, bool]:
    """One-step moves of p under the standard rules, with replication
    expanded through parallel composition up to bang_fuel nested copies.

    Returns (moves, complete): moves are (action, target) pairs; complete is
    False when the fuel cut replication short, in which case the move set is
    an underapproximation.
    """

    def go(p, fuel):
        if isinstance(p, Nil):
            return [], True
        if isinstance(p, Prefix):
            return [(p.action, p.body)], True
        if isinstance(p, Plus):
            ml, cl = go(p.left, fuel)
            mr, cr = go(p.right, fuel)
            return ml + mr, cl and cr
        if isinstance(p, Par):
            ml, cl = go(p.left, fuel)
            mr, cr = go(p.right, fuel)
            moves = [(a, Par(t, p.right)) for a, t in ml]
            moves += [(a, Par(p.left, t)) for a, t in mr]
            for a, t in ml:
                if a.kind == "tau":
                    continue
                comp = a.complement()
                for b, u in mr:
                    if b == comp:
                        moves.append((TAU_ACT, Par(t, u)))
            return moves, cl and cr
        if isinstance(p, New):
            mb, cb = go(p.body, fuel)
            moves = [
                (a, New(p.chan, t))
                for a, t in mb
                if a.kind == "tau" or a.chan != p.chan
            ]
            return moves, cb
        if isinstance(p, Bang):
            if fuel <= 0:
                return [], False
            return go(Par(p.body, p), fuel - 1)
        raise TypeError(f"not a process: {p!r}")

    moves, complete = go(p, bang_fuel)
    seen = {}
    for a, t in moves:
        seen.setdefault((a.key, norm(t).key), (a, norm(t)))
    return tuple(seen.values()), complete


def op_lts(
    p: Process, budget: Budget = DEFAULT_BUDGET, bang_fuel: int = 8
) -> FiniteLTS:
    """Reachable operational transition system, with labels in the common
    label space and states keyed by normalized process terms."""
    root = norm(p)
    states: dict[str, Process] = {root.key: root}
    unexpanded: set[str] = set()
    edges: list = []
    queue = [root]
    qi = 0
    while qi < len(queue):
        cur = queue[qi]
        qi += 1
        moves, complete = op_transitions(cur, bang_fuel)
        if not complete:
            unexpanded.add(cur.key)
            continue
        fresh = {}
        for _, tgt in moves:
            if tgt.key not in states and tgt.key not in fresh:
                fresh[tgt.key] = tgt
        if len(states) + len(fresh) > budget.max_states:
            unexpanded.add(cur.key)
            continue
        for k, tgt in fresh.items():
            states[k] = tgt
            queue.append(tgt)
        for a, tgt in moves:
            edges.append((cur.key, label_of_action(a), tgt.key))
    return FiniteLTS(
        initial=root.key,
        states=tuple(states),
        edges=tuple(edges),
        unexpanded=frozenset(unexpanded),
        partial=bool(unexpanded),
    )


# ---------------------------------------------------------------------------
# Denotational semantics.


def _dead(t: CTreeExpr) -> bool:
    return isinstance(t, Br) and t.width == 0


def _par(p: CTreeExpr, q: CTreeExpr) -> CTreeExpr:
    """Parallel composition, pruning components that are syntactically dead.
    Used in recursive positions so finished components do not pile up."""
    if _dead(p) and _dead(q):
        return stuck_d()
    if _dead(q):
        return p
    if _dead(p):
        return q
    return Call("__ccs_par", (p, q))


def _parabang(p: CTreeExpr, q: CTreeExpr) -> CTreeExpr:
    return Call("__ccs_parabang", (p, q))


def _sync_pair(ha_left, ha_right):
    """The continuations of two complementary communication heads, or None."""
    if not (isinstance(ha_left, AVis) and isinstance(ha_right, AVis)):
        return None
    e1, e2 = ha_left.event, ha_right.event
    if e1.name != ACT or e2.name != ACT:
        return None
    if not _enc_complementary(e1.args[0], e2.args[0]):
        return None
    return ha_left.cont, ha_right.cont


@register_template("__ccs_parl_k")
def _t_ccs_parl_k(captured, arg):
    k, q = captured
    return _par(apply_cont(k, arg), q)


@register_template("__ccs_parl")
def _t_ccs_parl(captured, arg):
    (q,) = captured
    if isinstance(arg, ABr):
        return Br(STEPPING, arg.width, Cont("__ccs_parl_k", (arg.cont, q)))
    if isinstance(arg, AVis):
        return Vis(arg.event, Cont("__ccs_parl_k", (arg.cont, q)))
    return stuck_d()


@register_template("__ccs_parr_k")
def _t_ccs_parr_k(captured, arg):
    p, k = captured
    return _par(p, apply_cont(k, arg))


@register_template("__ccs_parr")
def _t_ccs_parr(captured, arg):
    (p,) = captured
    if isinstance(arg, ABr):
        return Br(STEPPING, arg.width, Cont("__ccs_parr_k", (p, arg.cont)))
    if isinstance(arg, AVis):
        return Vis(arg.event, Cont("__ccs_parr_k", (p, arg.cont)))
    return stuck_d()


@register_template("__ccs_sync2")
def _t_ccs_sync2(captured, arg):
    (ha_p,) = captured
    pair = _sync_pair(ha_p, arg)
    if pair is None:
        return stuck_d()
    kp, kq = pair
    return step(_par(apply_cont(kp, ()), apply_cont(kq, ())))


@register_template("__ccs_sync1")
def _t_ccs_sync1(captured, arg):
    (q,) = captured
    return bind(head(q), Cont("__ccs_sync2", (arg,)))


@register_builtin_def("__ccs_par", 2)
def _d_ccs_par(args, defs):
    p, q = args
    return br_list(
        DELAYED,
        [
            bind(head(p), Cont("__ccs_parl", (q,))),
            bind(head(q), Cont("__ccs_parr", (p,))),
            bind(head(p), Cont("__ccs_sync1", (q,))),
        ],
    )


@register_template("__ccs_pbl_k")
def _t_ccs_pbl_k(captured, arg):
    k, q = captured
    return _parabang(apply_cont(k, arg), q)


@register_template("__ccs_pbl")
def _t_ccs_pbl(captured, arg):
    (q,) = captured
    if isinstance(arg, ABr):
        return Br(STEPPING, arg.width, Cont("__ccs_pbl_k", (arg.cont, q)))
    if isinstance(arg, AVis):
        return Vis(arg.event, Cont("__ccs_pbl_k", (arg.cont, q)))
    return stuck_d()


@register_template("__ccs_pbr_k")
def _t_ccs_pbr_k(captured, arg):
    p, k, q = captured
    return _parabang(_par(p, apply_cont(k, arg)), q)


@register_template("__ccs_pbr")
def _t_ccs_pbr(captured, arg):
    p, q = captured
    if isinstance(arg, ABr):
        return Br(STEPPING, arg.width, Cont("__ccs_pbr_k", (p, arg.cont, q)))
    if isinstance(arg, AVis):
        return Vis(arg.event, Cont("__ccs_pbr_k", (p, arg.cont, q)))
    return stuck_d()


@register_template("__ccs_pblr2")
def _t_ccs_pblr2(captured, arg):
    ha_p, q = captured
    pair = _sync_pair(ha_p, arg)
    if pair is None:
        return stuck_d()
    kp, kq = pair
    return step(_parabang(_par(apply_cont(kp, ()), apply_cont(kq, ())), q))


@register_template("__ccs_pblr1")
def _t_ccs_pblr1(captured, arg):
    (q,) = captured
    return bind(head(q), Cont("__ccs_pblr2", (arg, q)))


@register_template("__ccs_pbrr2")
def _t_ccs_pbrr2(captured, arg):
    ha1, p, q = captured
    pair = _sync_pair(ha1, arg)
    if pair is None:
        return stuck_d()
    k1, k2 = pair
    return step(_parabang(_par(p, _par(apply_cont(k1, ()), apply_cont(k2, ()))), q))


@register_template("__ccs_pbrr1")
def _t_ccs_pbrr1(captured, arg):
    p, q = captured
    return bind(head(q), Cont("__ccs_pbrr2", (arg, p, q)))


@register_builtin_def("__ccs_parabang", 2)
def _d_ccs_parabang(args, defs):
    p, q = args
    return br_list(
        DELAYED,
        [
            bind(head(p), Cont("__ccs_pbl", (q,))),
            bind(head(q), Cont("__ccs_pbr", (p, q))),
            bind(head(p), Cont("__ccs_pblr1", (q,))),
            bind(head(q), Cont("__ccs_pbrr1", (p, q))),
        ],
    )


@register_template("__ccs_new_h")
def _t_ccs_new_h(captured, arg):
    (chan,) = captured
    if isinstance(arg, Event) and arg.name == ACT and _enc_chan(arg.args[0]) == chan:
        return stuck_d()
    return trigger(arg)


def denote_ccs(p: Process) -> CTreeExpr:
    """Compositional tree semantics: choice is a delayed branch, prefixes
    communicate, restriction reinterprets the communication event, parallel
    composition and replication are corecursive operators over heads."""
    from .interp import Handler, interp

    if isinstance(p, Nil):
        return stuck_d()
    if isinstance(p, Prefix):
        return bind(trigger(act_event(p.action)), Cont("__const", (denote_ccs(p.body),)))
    if isinstance(p, Plus):
        return br_list(DELAYED, [denote_ccs(p.left), denote_ccs(p.right)])
    if isinstance(p, Par):
        return Call("__ccs_par", (denote_ccs(p.left), denote_ccs(p.right)))
    if isinstance(p, New):
        return interp(Handler(Cont("__ccs_new_h", (p.chan,))), denote_ccs(p.body))
    if isinstance(p, Bang):
        d = denote_ccs(p.body)
        return Call("__ccs_parabang", (d, d))
    raise TypeError(f"not a process: {p!r}")


_CCS_DEFS = DefTable()


def ccs_defs() -> DefTable:
    """The definition table CCS denotations resolve against."""
    return _CCS_DEFS


def den_lts(p: Process, budget: Budget = DEFAULT_BUDGET) -> FiniteLTS:
    from .lts import extract_lts

    return extract_lts(denote_ccs(p), _CCS_DEFS, budget)


def check_ccs_op_bisim(
    p: Process,
    q: Process,
    budget: Budget = DEFAULT_BUDGET,
    bang_fuel: int = 8,
) -> Verdict:
    """Strong bisimilarity via the operational rules."""
    L = op_lts(p, budget, bang_fuel)
    R = op_lts(q, budget, bang_fuel)
    return _check_strong(L, R, EQUALITY, True, budget)


def check_ccs_den_bisim(
    p: Process, q: Process, budget: Budget = DEFAULT_BUDGET
) -> Verdict:
    """Strong bisimilarity via the tree denotations."""
    return check_sbisim(denote_ccs(p), denote_ccs(q), _CCS_DEFS, budget)
