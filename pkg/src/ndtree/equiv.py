"""Equivalence and refinement checkers over finite LTS slices.

Three-valued verdicts throughout: Holds and Fails are definite, Unknown is
what a budget cut leaves behind. Refutations are always definite; every
Fails carries a witness that replays against the extracted systems.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .core import (
    Br,
    Budget,
    CTreeExpr,
    DEFAULT_BUDGET,
    DefTable,
    Ret,
    Vis,
    apply_cont,
    unfold,
)
from .lts import FiniteLTS, TAU, Val, extract_lts, saturate

HOLDS = "holds"
FAILS = "fails"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class Verdict:
    status: str
    reason: Optional[str] = None
    witness: Optional[dict] = None

    @staticmethod
    def holds() -> "Verdict":
        return Verdict(HOLDS)

    @staticmethod
    def fails(witness: Optional[dict] = None, reason: Optional[str] = None) -> "Verdict":
        return Verdict(FAILS, reason, witness)

    @staticmethod
    def unknown(reason: str) -> "Verdict":
        return Verdict(UNKNOWN, reason)

    @property
    def is_holds(self) -> bool:
        return self.status == HOLDS

    @property
    def is_fails(self) -> bool:
        return self.status == FAILS

    @property
    def is_unknown(self) -> bool:
        return self.status == UNKNOWN

    def to_json(self) -> dict:
        out = {"status": self.status}
        if self.reason is not None:
            out["reason"] = self.reason
        if self.witness is not None:
            out["witness"] = self.witness
        return out


@dataclass(frozen=True)
class LabelRel:
    """A relation on (left label, right label) pairs steering the games."""

    name: str
    holds: Callable[[object, object], bool]


EQUALITY = LabelRel("equality", lambda a, b: a == b)


def _val_projection(a, b) -> bool:
    if a == b:
        return True
    if isinstance(a, Val) and isinstance(b, Val):
        v = a.value
        return isinstance(v, tuple) and len(v) == 2 and v[1] == b.value
    return False


# Relates a stateful run's labels to the original's: a returned (state, value)
# pair on the left matches the bare value on the right.
VAL_PROJECTION = LabelRel("val_projection", _val_projection)


# ---------------------------------------------------------------------------
# Structural equality, coinductively: compare constructors level by level,
# assuming revisited pairs equal.


def check_equ(
    t: CTreeExpr,
    u: CTreeExpr,
    defs: Optional[DefTable] = None,
    budget: Budget = DEFAULT_BUDGET,
) -> Verdict:
    """Constructor-level equality of two trees (the intensional notion that
    validates the monad laws). Finer than bisimilarity."""
    a = unfold(t, defs)
    b = unfold(u, defs)
    start = (a.key, b.key)
    parent: dict[tuple, Optional[tuple]] = {start: None}
    steps: dict[tuple, Optional[dict]] = {start: None}
    queue: deque = deque([(a, b)])
    examined = 0

    def mismatch(pair, why):
        path = []
        cur = pair
        while steps[cur] is not None:
            path.append(steps[cur])
            cur = parent[cur]
        path.reverse()
        return Verdict.fails(
            {
                "kind": "equ",
                "path": path,
                "left": pair[0],
                "right": pair[1],
                "why": why,
            }
        )

    while queue:
        x, y = queue.popleft()
        pair = (x.key, y.key)
        examined += 1
        if examined > budget.max_states:
            return Verdict.unknown("pair budget exhausted")
        if x.key == y.key:
            continue

        def push(cx, cy, step):
            child = (unfold(cx, defs), unfold(cy, defs))
            ckey = (child[0].key, child[1].key)
            if ckey not in parent:
                parent[ckey] = pair
                steps[ckey] = step
                queue.append(child)

        if isinstance(x, Ret) and isinstance(y, Ret):
            if x.value != y.value:
                return mismatch(pair, "distinct return values")
            continue
        if isinstance(x, Vis) and isinstance(y, Vis):
            if x.event != y.event:
                return mismatch(pair, "distinct events")
            for ans in x.event.answers:
                push(apply_cont(x.cont, ans), apply_cont(y.cont, ans), {"answer": ans})
            continue
        if isinstance(x, Br) and isinstance(y, Br):
            if x.kind != y.kind or x.width != y.width:
                return mismatch(pair, "distinct branch shapes")
            for i in range(x.width):
                push(apply_cont(x.cont, i), apply_cont(y.cont, i), {"index": i})
            continue
        return mismatch(pair, "distinct constructors")

    return Verdict.holds()


# ---------------------------------------------------------------------------
# The strong game engine. Pairs whose behavior cannot be trusted (frontier
# states, or anything past the pair budget) are assumed equivalent, which
# keeps refutations sound under truncation.


class _GameOutcome:
    def __init__(self, refuted, witness, exact, reason):
        self.refuted = refuted
        self.witness = witness
        self.exact = exact
        self.reason = reason


def _strong_game(
    L: FiniteLTS,
    R: FiniteLTS,
    rel: LabelRel,
    both_sides: bool,
    budget: Budget,
) -> _GameOutcome:
    pid_of: dict[tuple, int] = {}
    pairs: list[tuple] = []
    moves: list = []
    assumed = False
    budget_hit = False
    queue: deque = deque()

    def intern(lk: str, rk: str):
        nonlocal budget_hit
        p = (lk, rk)
        i = pid_of.get(p)
        if i is None:
            if len(pairs) >= budget.max_states:
                budget_hit = True
                return None
            i = len(pairs)
            pid_of[p] = i
            pairs.append(p)
            moves.append(None)
            queue.append(i)
        return i

    intern(L.initial, R.initial)

    while queue:
        i = queue.popleft()
        lk, rk = pairs[i]
        if lk == rk:
            # Identical trees are equivalent outright; no moves to examine.
            moves[i] = []
            continue
        if lk in L.unexpanded or rk in R.unexpanded:
            assumed = True
            moves[i] = []
            continue
        louts = L.out(lk)
        routs = R.out(rk)
        mvs = []

        def attacker(side, own_outs, other_outs):
            for label, own_dst in own_outs:
                replies = []
                capped = False
                for rlabel, other_dst in other_outs:
                    ok = rel.holds(label, rlabel) if side == "left" else rel.holds(rlabel, label)
                    if not ok:
                        continue
                    pid = (
                        intern(own_dst, other_dst)
                        if side == "left"
                        else intern(other_dst, own_dst)
                    )
                    if pid is None:
                        capped = True
                        break
                    replies.append((pid, rlabel, other_dst))
                if capped:
                    # Some reply fell past the pair budget and is assumed
                    # fine, so this move can never become winning.
                    continue
                mvs.append((side, label, own_dst, tuple(replies)))

        attacker("left", louts, routs)
        if both_sides:
            attacker("right", routs, louts)
        moves[i] = mvs

    n = len(pairs)
    won = [False] * n
    win_move = [None] * n
    order = [0] * n
    counters: list[list[int]] = []
    rev: dict[int, list[tuple[int, int]]] = {}

    seeds = []
    for i in range(n):
        cnts = []
        for m, (_, _, _, replies) in enumerate(moves[i]):
            uniq = sorted({pid for pid, _, _ in replies})
            cnts.append(len(uniq))
            for pid in uniq:
                rev.setdefault(pid, []).append((i, m))
            if not uniq:
                seeds.append((i, m))
        counters.append(cnts)

    stamp = 0
    work: deque = deque()
    for i, m in seeds:
        if not won[i]:
            won[i] = True
            win_move[i] = m
            stamp += 1
            order[i] = stamp
            work.append(i)

    while work:
        j = work.popleft()
        for i, m in rev.get(j, ()):
            if won[i]:
                continue
            counters[i][m] -= 1
            if counters[i][m] == 0:
                won[i] = True
                win_move[i] = m
                stamp += 1
                order[i] = stamp
                work.append(i)

    if not won[0]:
        exact = not assumed and not budget_hit
        reason = None if exact else "state or pair budget exhausted"
        return _GameOutcome(False, None, exact, reason)

    # Attacker wins: walk the winning strategy down the discovery order until
    # a move with no legal replies, producing a linear experiment.
    steps = []
    cur = 0
    while True:
        lk, rk = pairs[cur]
        side, label, own_dst, replies = moves[cur][win_move[cur]]
        if not replies:
            steps.append(
                {
                    "side": side,
                    "label": label.to_json(),
                    "label_key": label.key,
                    "from": [lk, rk],
                    "target": own_dst,
                    "final": True,
                }
            )
            break
        nxt = min(replies, key=lambda r: order[r[0]])
        pid, rlabel, other_dst = nxt
        to = [own_dst, other_dst] if side == "left" else [other_dst, own_dst]
        steps.append(
            {
                "side": side,
                "label": label.to_json(),
                "label_key": label.key,
                "reply_label_key": rlabel.key,
                "from": [lk, rk],
                "to": to,
                "final": False,
            }
        )
        cur = pid

    witness = {
        "kind": "bisim" if both_sides else "sim",
        "relation": rel.name,
        "steps": steps,
    }
    return _GameOutcome(True, witness, True, None)


def replay_witness(L: FiniteLTS, R: FiniteLTS, witness: dict, rel: LabelRel = EQUALITY) -> bool:
    """Check a Fails witness move by move against the two systems."""
    cur = (L.initial, R.initial)
    for entry in witness.get("steps", []):
        if tuple(entry["from"]) != cur:
            return False
        side = entry["side"]
        own = L if side == "left" else R
        other = R if side == "left" else L
        own_state = cur[0] if side == "left" else cur[1]
        other_state = cur[1] if side == "left" else cur[0]

        own_edge = None
        for label, dst in own.out(own_state):
            if label.key == entry["label_key"]:
                target = entry["target"] if entry["final"] else (
                    entry["to"][0] if side == "left" else entry["to"][1]
                )
                if dst == target:
                    own_edge = label
                    break
        if own_edge is None:
            return False

        def compatible(rlabel):
            if side == "left":
                return rel.holds(own_edge, rlabel)
            return rel.holds(rlabel, own_edge)

        if entry["final"]:
            for rlabel, _ in other.out(other_state):
                if compatible(rlabel):
                    return False
            return True

        reply_ok = False
        reply_target = entry["to"][1] if side == "left" else entry["to"][0]
        for rlabel, dst in other.out(other_state):
            if rlabel.key == entry["reply_label_key"] and dst == reply_target and compatible(rlabel):
                reply_ok = True
                break
        if not reply_ok:
            return False
        cur = tuple(entry["to"])
    return False  # a well-formed witness ends on a final step


# ---------------------------------------------------------------------------
# Partition refinement for the complete, label-equality case.


def _partition_refinement(L: FiniteLTS, R: FiniteLTS) -> dict[str, int]:
    outs: dict[str, tuple] = {}
    for lts in (L, R):
        for s in lts.states:
            if s not in outs:
                outs[s] = lts.out(s)
    ordered = sorted(outs)
    block = {s: 0 for s in ordered}
    nblocks = 1
    while True:
        sigs: dict = {}
        assign: dict[str, int] = {}
        for s in ordered:
            sig = (block[s], frozenset((l.key, block[d]) for l, d in outs[s]))
            if sig not in sigs:
                sigs[sig] = len(sigs)
            assign[s] = sigs[sig]
        if len(sigs) == nblocks:
            return assign
        block = assign
        nblocks = len(sigs)


def _game_verdict(L, R, rel, both_sides, budget) -> Verdict:
    out = _strong_game(L, R, rel, both_sides, budget)
    if out.refuted:
        return Verdict.fails(out.witness)
    if out.exact:
        return Verdict.holds()
    return Verdict.unknown(out.reason)


def _check_strong(L, R, rel, both_sides, budget) -> Verdict:
    if rel is EQUALITY and both_sides and not L.partial and not R.partial:
        block = _partition_refinement(L, R)
        if block[L.initial] == block[R.initial]:
            return Verdict.holds()
        return _game_verdict(L, R, rel, both_sides, budget)
    return _game_verdict(L, R, rel, both_sides, budget)


def check_sbisim(
    t: CTreeExpr,
    u: CTreeExpr,
    defs: Optional[DefTable] = None,
    budget: Budget = DEFAULT_BUDGET,
    rel: LabelRel = EQUALITY,
) -> Verdict:
    """Strong bisimilarity of two trees, up to the label relation."""
    L = extract_lts(t, defs, budget)
    R = extract_lts(u, defs, budget)
    return _check_strong(L, R, rel, True, budget)


def check_ssim(
    t: CTreeExpr,
    u: CTreeExpr,
    defs: Optional[DefTable] = None,
    budget: Budget = DEFAULT_BUDGET,
    rel: LabelRel = EQUALITY,
) -> Verdict:
    """Strong similarity: u simulates every move of t (t on the left)."""
    L = extract_lts(t, defs, budget)
    R = extract_lts(u, defs, budget)
    return _check_strong(L, R, rel, False, budget)


def check_wbisim(
    t: CTreeExpr,
    u: CTreeExpr,
    defs: Optional[DefTable] = None,
    budget: Budget = DEFAULT_BUDGET,
    rel: LabelRel = EQUALITY,
) -> Verdict:
    """Weak bisimilarity: silent steps may be absorbed on either side."""
    L = saturate(extract_lts(t, defs, budget))
    R = saturate(extract_lts(u, defs, budget))
    return _check_strong(L, R, rel, True, budget)


def check_wsim(
    t: CTreeExpr,
    u: CTreeExpr,
    defs: Optional[DefTable] = None,
    budget: Budget = DEFAULT_BUDGET,
    rel: LabelRel = EQUALITY,
) -> Verdict:
    """Weak similarity (one-directional)."""
    L = saturate(extract_lts(t, defs, budget))
    R = saturate(extract_lts(u, defs, budget))
    return _check_strong(L, R, rel, False, budget)


# ---------------------------------------------------------------------------
# Finite traces.


@dataclass(frozen=True)
class TraceResult:
    sequences: frozenset
    partial: bool


def traces_to_depth(
    t: CTreeExpr,
    depth: int,
    defs: Optional[DefTable] = None,
    budget: Budget = DEFAULT_BUDGET,
) -> TraceResult:
    """All label sequences of the given length, plus shorter ones that end in
    a state with no transitions. Silent labels are kept in the sequences."""
    lts = extract_lts(t, defs, budget)
    seqs: set = set()
    partial = False
    stack = [(lts.initial, ())]
    while stack:
        s, prefix = stack.pop()
        if len(prefix) == depth:
            seqs.add(prefix)
            continue
        if s in lts.unexpanded:
            partial = True
            continue
        outs = lts.out(s)
        if not outs:
            seqs.add(prefix)
            continue
        for label, dst in outs:
            stack.append((dst, prefix + (label,)))
    return TraceResult(frozenset(seqs), partial)


def check_trace_equiv(
    t: CTreeExpr,
    u: CTreeExpr,
    depth: int,
    defs: Optional[DefTable] = None,
    budget: Budget = DEFAULT_BUDGET,
) -> Verdict:
    """Trace-set equality at bounded depth."""
    a = traces_to_depth(t, depth, defs, budget)
    b = traces_to_depth(u, depth, defs, budget)
    if a.partial or b.partial:
        return Verdict.unknown("trace exploration truncated")
    if a.sequences == b.sequences:
        return Verdict.holds()
    only_left = a.sequences - b.sequences
    if only_left:
        trace = min(only_left, key=lambda sq: tuple(l.key for l in sq))
        where = "left"
    else:
        trace = min(b.sequences - a.sequences, key=lambda sq: tuple(l.key for l in sq))
        where = "right"
    return Verdict.fails(
        {
            "kind": "trace",
            "present_in": where,
            "trace": [l.to_json() for l in trace],
        }
    )
