"""Cooperative multithreading and two small imperative front ends.

The base language has assignments over a finite value domain, sequencing and
while loops. One dialect adds fork/yield and gets its meaning from a
scheduler over a thread pool; the other adds a binary branch statement (in
three observational flavors), a blocking statement, and print.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    Br,
    Call,
    Cont,
    CTreeExpr,
    CtreeError,
    DELAYED,
    DefTable,
    Event,
    Ret,
    STEPPING,
    UnhandledEvent,
    Vis,
    apply_cont,
    bind,
    br_list,
    guard,
    inl,
    inr,
    iter_tree,
    register_template,
    register_builtin_def,
    seq,
    step,
    stuck_d,
    trigger,
    unfold,
    vis_table,
)
from .interp import StateHandler, interp_state


class UndeclaredVariable(CtreeError):
    def __init__(self, var: str):
        super().__init__(f"variable {var!r} is not declared in this program")
        self.var = var


DEFAULT_DOMAIN = 3

YIELD = Event("yield")
SPAWN = Event("spawn", (), (0, 1))
FLIP = Event("flip", (), (0, 1))
PRINT = Event("print")


def rd_event(var: str, domain: int = DEFAULT_DOMAIN) -> Event:
    return Event("rd", (var,), tuple(range(domain)))


def wr_event(var: str, value: int) -> Event:
    return Event("wr", (var, value))


# ---------------------------------------------------------------------------
# Syntax. Both dialects share the sequential core.


class _SKeyed:
    key: str

    def __eq__(self, other):
        if isinstance(other, _SKeyed):
            return self.key == other.key
        return NotImplemented

    def __hash__(self):
        return hash(self.key)


def _k(obj, text):
    object.__setattr__(obj, "key", text)


@dataclass(frozen=True, eq=False)
class Lit(_SKeyed):
    value: int
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, f"(lit {self.value})")


@dataclass(frozen=True, eq=False)
class Var(_SKeyed):
    name: str
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, f"(var {self.name})")


@dataclass(frozen=True, eq=False)
class BinOp(_SKeyed):
    op: str  # "add" | "lt" | "eq"
    left: object
    right: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        if self.op not in ("add", "lt", "eq"):
            raise ValueError(f"bad operator: {self.op!r}")
        _k(self, f"({self.op} {self.left.key} {self.right.key})")


@dataclass(frozen=True, eq=False)
class Skip(_SKeyed):
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, "(skip)")


@dataclass(frozen=True, eq=False)
class Assign(_SKeyed):
    var: str
    expr: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, f"(assign {self.var} {self.expr.key})")


@dataclass(frozen=True, eq=False)
class Seq(_SKeyed):
    first: object
    second: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, f"(seq {self.first.key} {self.second.key})")


@dataclass(frozen=True, eq=False)
class While(_SKeyed):
    cond: object
    body: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, f"(while {self.cond.key} {self.body.key})")


@dataclass(frozen=True, eq=False)
class Fork(_SKeyed):
    child: object  # runs asynchronously
    main: object  # keeps control
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, f"(fork {self.child.key} {self.main.key})")


@dataclass(frozen=True, eq=False)
class Yield(_SKeyed):
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, "(yield)")


@dataclass(frozen=True, eq=False)
class BrStmt(_SKeyed):
    left: object
    right: object
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, f"(br {self.left.key} {self.right.key})")


@dataclass(frozen=True, eq=False)
class Block(_SKeyed):
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, "(block)")


@dataclass(frozen=True, eq=False)
class PrintStmt(_SKeyed):
    key: str = field(init=False, repr=False)

    def __post_init__(self):
        _k(self, "(print)")


Stmt = object


def collect_vars(s: Stmt) -> tuple:
    """All variable names a statement mentions, sorted."""
    out: set[str] = set()

    def walk_expr(e):
        if isinstance(e, Var):
            out.add(e.name)
        elif isinstance(e, BinOp):
            walk_expr(e.left)
            walk_expr(e.right)

    def walk(s):
        if isinstance(s, Assign):
            out.add(s.var)
            walk_expr(s.expr)
        elif isinstance(s, Seq):
            walk(s.first)
            walk(s.second)
        elif isinstance(s, While):
            walk_expr(s.cond)
            walk(s.body)
        elif isinstance(s, Fork):
            walk(s.child)
            walk(s.main)
        elif isinstance(s, BrStmt):
            walk(s.left)
            walk(s.right)

    walk(s)
    return tuple(sorted(out))


# ---------------------------------------------------------------------------
# Expressions: reads are events, arithmetic wraps around the domain.

_BINOPS = {
    "add": lambda a, b, d: (a + b) % d,
    "lt": lambda a, b, d: 1 if a < b else 0,
    "eq": lambda a, b, d: 1 if a == b else 0,
}


@register_template("__expr_bin_r")
def _t_expr_bin_r(captured, arg):
    op, va, domain = captured
    return Ret(_BINOPS[op](va, arg, domain))


@register_template("__expr_bin_l")
def _t_expr_bin_l(captured, arg):
    op, dright, domain = captured
    return bind(dright, Cont("__expr_bin_r", (op, arg, domain)))


def denote_expr(e, domain: int = DEFAULT_DOMAIN) -> CTreeExpr:
    if isinstance(e, Lit):
        return Ret(e.value % domain)
    if isinstance(e, Var):
        return trigger(rd_event(e.name, domain))
    if isinstance(e, BinOp):
        return bind(
            denote_expr(e.left, domain),
            Cont("__expr_bin_l", (e.op, denote_expr(e.right, domain), domain)),
        )
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Statement denotations.


@register_template("__stmt_wr")
def _t_stmt_wr(captured, arg):
    (var,) = captured
    return trigger(wr_event(var, arg))


@register_template("__loop_k")
def _t_loop_k(captured, arg):
    (dbody,) = captured
    if arg != 0:
        return seq(dbody, Ret(inl(())))
    return Ret(inr(()))


def _loop_def_id(markers: str, w: While, domain: int) -> str:
    digest = hashlib.md5(f"{markers}|{domain}|{w.key}".encode()).hexdigest()[:12]
    return f"loop_{digest}"


def _denote_while(w: While, defs: DefTable, domain: int, recurse) -> CTreeExpr:
    def_id = _loop_def_id("w", w, domain)
    if not defs.has(def_id):
        dcond = denote_expr(w.cond, domain)
        dbody = recurse(w.body)
        defs.register(
            def_id,
            1,
            lambda args, table: bind(dcond, Cont("__loop_k", (dbody,))),
        )
    return iter_tree(def_id, ())


def denote_stmt(s: Stmt, defs: DefTable, domain: int = DEFAULT_DOMAIN) -> CTreeExpr:
    """Denotation of a fork/yield-dialect statement: a unit-valued tree over
    yield, spawn, and memory events. Loops register definitions in defs."""

    def go(s):
        if isinstance(s, Skip):
            return Ret(())
        if isinstance(s, Assign):
            return bind(denote_expr(s.expr, domain), Cont("__stmt_wr", (s.var,)))
        if isinstance(s, Seq):
            return seq(go(s.first), go(s.second))
        if isinstance(s, While):
            return _denote_while(s, defs, domain, go)
        if isinstance(s, Fork):
            # The spawn answer picks a side: 1 runs the forked child, 0 stays
            # with the main thread.
            return bind(trigger(SPAWN), Cont("__select", (go(s.main), go(s.child))))
        if isinstance(s, Yield):
            return trigger(YIELD)
        raise TypeError(f"statement not in the fork/yield dialect: {s!r}")

    return go(s)


BR_MODES = ("vis", "brs", "brd")


def denote_impbr(
    s: Stmt, defs: DefTable, mode: str = "brs", domain: int = DEFAULT_DOMAIN
) -> CTreeExpr:
    """Denotation of a branch-dialect statement. mode picks what the branch
    statement means: an observable coin flip, an internal stepping choice, or
    a delayed choice that commits only through its children."""
    if mode not in BR_MODES:
        raise ValueError(f"mode must be one of {BR_MODES}, got {mode!r}")

    def go(s):
        if isinstance(s, Skip):
            return Ret(())
        if isinstance(s, Assign):
            return bind(denote_expr(s.expr, domain), Cont("__stmt_wr", (s.var,)))
        if isinstance(s, Seq):
            return seq(go(s.first), go(s.second))
        if isinstance(s, While):
            return _denote_while(s, defs, domain, go)
        if isinstance(s, BrStmt):
            left, right = go(s.left), go(s.right)
            if mode == "vis":
                # flip answers 0 (right branch) or 1 (left branch)
                return vis_table(FLIP, (right, left))
            kind = STEPPING if mode == "brs" else DELAYED
            return br_list(kind, (right, left))
        if isinstance(s, Block):
            return stuck_d()
        if isinstance(s, PrintStmt):
            return trigger(PRINT)
        raise TypeError(f"statement not in the branch dialect: {s!r}")

    return go(s)


# ---------------------------------------------------------------------------
# The scheduler.


@dataclass(frozen=True)
class ThreadPool:
    threads: tuple
    active: Optional[int] = None

    def __post_init__(self):
        if self.active is not None and not 0 <= self.active < len(self.threads):
            raise ValueError(f"active index {self.active} out of range")


def _replace(pool: tuple, i: int, t: CTreeExpr) -> tuple:
    return pool[:i] + (t,) + pool[i + 1 :]


@register_template("__sched_pick")
def _t_sched_pick(captured, arg):
    (pool,) = captured
    return Call("__sched", (pool, arg))


@register_template("__sched_br")
def _t_sched_br(captured, arg):
    pool, i, k = captured
    return Call("__sched", (_replace(pool, i, apply_cont(k, arg)), i))


@register_template("__sched_vis")
def _t_sched_vis(captured, arg):
    pool, i, k = captured
    return Call("__sched", (_replace(pool, i, apply_cont(k, arg)), i))


@register_builtin_def("__sched", 2)
def _d_sched(args, defs):
    pool, active = args
    n = len(pool)
    if active == -1:
        if n == 0:
            return Ret(())
        return Br(STEPPING, n, Cont("__sched_pick", (pool,)))
    i = active
    if not 0 <= i < n:
        raise ValueError(f"active thread {i} out of range for pool of {n}")
    th = unfold(pool[i], defs)
    if isinstance(th, Ret):
        # Finished threads drop out; the removal itself is invisible.
        return guard(Call("__sched", (pool[:i] + pool[i + 1 :], -1)))
    if isinstance(th, Br):
        return Br(th.kind, th.width, Cont("__sched_br", (pool, i, th.cont)))
    name = th.event.name
    if name == "yield":
        return guard(Call("__sched", (_replace(pool, i, apply_cont(th.cont, ())), -1)))
    if name == "spawn":
        spawned = apply_cont(th.cont, 1)
        main = apply_cont(th.cont, 0)
        pool2 = (spawned,) + _replace(pool, i, main)
        return step(Call("__sched", (pool2, i + 1)))
    return Vis(th.event, Cont("__sched_vis", (pool, i, th.cont)))


def schedule(pool: ThreadPool) -> CTreeExpr:
    """Interpret spawn/yield by interleaving a thread pool; the result only
    performs the threads' residual (memory) events."""
    active = -1 if pool.active is None else pool.active
    return Call("__sched", (tuple(pool.threads), active))


def run_scheduled(s: Stmt, defs: DefTable, domain: int = DEFAULT_DOMAIN) -> CTreeExpr:
    """Scheduled semantics of a single program: one thread, none active."""
    return schedule(ThreadPool((denote_stmt(s, defs, domain),), None))


# ---------------------------------------------------------------------------
# Memory.


@register_template("__mem_h", kind="state")
def _t_mem_h(captured, state, event):
    vars_, domain = captured
    if not isinstance(event, Event):
        raise UnhandledEvent(event)
    if event.name == "rd":
        x = event.args[0]
        if x not in vars_:
            raise UndeclaredVariable(x)
        return state, state[vars_.index(x)]
    if event.name == "wr":
        x, v = event.args
        if x not in vars_:
            raise UndeclaredVariable(x)
        i = vars_.index(x)
        return state[:i] + (v % domain,) + state[i + 1 :], ()
    raise UnhandledEvent(event)


def mem_handler(vars_: tuple, domain: int = DEFAULT_DOMAIN) -> StateHandler:
    return StateHandler(Cont("__mem_h", (tuple(vars_), domain)))


@dataclass(frozen=True)
class ProgramModel:
    """A fully interpreted program: scheduling and memory resolved."""

    tree: CTreeExpr
    vars: tuple
    init_store: tuple


def run_program(s: Stmt, defs: DefTable, domain: int = DEFAULT_DOMAIN) -> ProgramModel:
    """Scheduled semantics with memory interpreted from an all-zero store.
    The tree's final values are (store, ()) pairs."""
    vars_ = collect_vars(s)
    store = (0,) * len(vars_)
    tree = interp_state(mem_handler(vars_, domain), run_scheduled(s, defs, domain), store)
    return ProgramModel(tree, vars_, store)


def impbr_program(
    s: Stmt,
    defs: DefTable,
    mode: str = "brs",
    domain: int = DEFAULT_DOMAIN,
    vars_: Optional[tuple] = None,
) -> ProgramModel:
    """Branch-dialect program with memory interpreted; no scheduling layer."""
    if vars_ is None:
        vars_ = collect_vars(s)
    store = (0,) * len(vars_)
    tree = interp_state(
        mem_handler(vars_, domain), denote_impbr(s, defs, mode, domain), store
    )
    return ProgramModel(tree, tuple(vars_), store)


# ---------------------------------------------------------------------------
# Concrete syntax, shared by both dialects.
#
#   stmt  := atom (';' stmt)?
#   atom  := 'skip' | 'yield' | 'block' | 'print'
#          | ident ':=' expr
#          | 'while' expr '{' stmt '}'
#          | 'fork' '{' stmt '}' '{' stmt '}'
#          | 'br' '{' stmt '}' '{' stmt '}'
#          | '(' stmt ')'
#   expr  := sum (('<' | '==') sum)?
#   sum   := prim ('+' prim)*
#   prim  := number | 'true' | 'false' | ident | '(' expr ')'


class ImpParseError(Exception):
    def __init__(self, message: str, line: int, col: int, expected: Optional[str] = None):
        detail = f"{message} at {line}:{col}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)
        self.line = line
        self.col = col
        self.expected = expected


_IMP_KEYWORDS = {"skip", "yield", "block", "print", "while", "fork", "br", "true", "false"}


def _imp_tokenize(text: str):
    toks = []
    line, col = 1, 1
    i = 0
    n = len(text)
    two_char = {"==": "EQ", ":=": "ASSIGN"}
    single = {
        ";": "SEMI",
        "{": "LBRACE",
        "}": "RBRACE",
        "(": "LPAREN",
        ")": "RPAREN",
        "+": "PLUS",
        "<": "LT",
    }
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
        pair = text[i : i + 2]
        if pair in two_char:
            toks.append((two_char[pair], pair, line, start_col))
            i += 2
            col += 2
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(("NUM", int(text[i:j]), line, start_col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = word.upper() if word in _IMP_KEYWORDS else "IDENT"
            toks.append((kind, word, line, start_col))
            col += j - i
            i = j
            continue
        if c in single:
            toks.append((single[c], c, line, start_col))
            i += 1
            col += 1
            continue
        raise ImpParseError(f"unexpected character {c!r}", line, start_col)
    toks.append(("EOF", "", line, col))
    return toks


class _ImpParser:
    def __init__(self, toks, dialect: str):
        self.toks = toks
        self.pos = 0
        self.dialect = dialect  # "coop" | "impbr"

    def peek(self):
        return self.toks[self.pos]

    def take(self, kind, expected):
        tok = self.toks[self.pos]
        if tok[0] != kind:
            raise ImpParseError(
                f"unexpected {tok[1]!r}" if tok[1] != "" else "unexpected end of input",
                tok[2],
                tok[3],
                expected,
            )
        self.pos += 1
        return tok

    def fail(self, expected):
        tok = self.peek()
        raise ImpParseError(
            f"unexpected {tok[1]!r}" if tok[1] != "" else "unexpected end of input",
            tok[2],
            tok[3],
            expected,
        )

    def parse_stmt(self):
        first = self.parse_atom()
        if self.peek()[0] == "SEMI":
            self.pos += 1
            return Seq(first, self.parse_stmt())
        return first

    def parse_block(self):
        self.take("LBRACE", "'{'")
        s = self.parse_stmt()
        self.take("RBRACE", "'}'")
        return s

    def parse_atom(self):
        tok = self.peek()
        kind = tok[0]
        if kind == "SKIP":
            self.pos += 1
            return Skip()
        if kind == "YIELD":
            if self.dialect != "coop":
                self.fail("a branch-dialect statement")
            self.pos += 1
            return Yield()
        if kind == "FORK":
            if self.dialect != "coop":
                self.fail("a branch-dialect statement")
            self.pos += 1
            return Fork(self.parse_block(), self.parse_block())
        if kind == "BR":
            if self.dialect != "impbr":
                self.fail("a fork/yield-dialect statement")
            self.pos += 1
            return BrStmt(self.parse_block(), self.parse_block())
        if kind == "BLOCK":
            if self.dialect != "impbr":
                self.fail("a fork/yield-dialect statement")
            self.pos += 1
            return Block()
        if kind == "PRINT":
            if self.dialect != "impbr":
                self.fail("a fork/yield-dialect statement")
            self.pos += 1
            return PrintStmt()
        if kind == "WHILE":
            self.pos += 1
            cond = self.parse_expr()
            return While(cond, self.parse_block())
        if kind == "IDENT":
            self.pos += 1
            self.take("ASSIGN", "':='")
            return Assign(tok[1], self.parse_expr())
        if kind == "LPAREN":
            self.pos += 1
            s = self.parse_stmt()
            self.take("RPAREN", "')'")
            return s
        self.fail("a statement")

    def parse_expr(self):
        left = self.parse_sum()
        kind = self.peek()[0]
        if kind in ("LT", "EQ"):
            self.pos += 1
            right = self.parse_sum()
            return BinOp("lt" if kind == "LT" else "eq", left, right)
        return left

    def parse_sum(self):
        e = self.parse_prim()
        while self.peek()[0] == "PLUS":
            self.pos += 1
            e = BinOp("add", e, self.parse_prim())
        return e

    def parse_prim(self):
        tok = self.peek()
        if tok[0] == "NUM":
            self.pos += 1
            return Lit(tok[1])
        if tok[0] == "TRUE":
            self.pos += 1
            return Lit(1)
        if tok[0] == "FALSE":
            self.pos += 1
            return Lit(0)
        if tok[0] == "IDENT":
            self.pos += 1
            return Var(tok[1])
        if tok[0] == "LPAREN":
            self.pos += 1
            e = self.parse_expr()
            self.take("RPAREN", "')'")
            return e
        self.fail("an expression")


def _parse(text: str, dialect: str) -> Stmt:
    parser = _ImpParser(_imp_tokenize(text), dialect)
    s = parser.parse_stmt()
    parser.take("EOF", "end of input")
    return s


def parse_imp(text: str) -> Stmt:
    """Parse the fork/yield dialect."""
    return _parse(text, "coop")


def parse_impbr(text: str) -> Stmt:
    """Parse the branch dialect."""
    return _parse(text, "impbr")
