"""Editing actions, their fixed-length token encodings, and edit tags."""
import enum
import re
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .arith import EQ, LPAREN, OPERATORS, RPAREN, TokenSeq, eval_expr, is_number
from .kernels import edit_table
from .tasks import Task

DONE_TOKEN = "<done>"
KEEP_TAG = "<keep>"
DELETE_TAG = "<delete>"

AEC_OP_TOKENS = {"delete": "<delete>", "sub": "<sub>", "insert": "<insert>"}

ACTION_LENGTH = {Task.AOR: 2, Task.AES: 3, Task.AEC: 3}

_POS_RE = re.compile(r"<pos_(\d+)>\Z")
_TAG_RE = re.compile(r"<(sub|insert)_(.+)>\Z")


class Op(str, enum.Enum):
    INSERT = "insert"
    SUBSTITUTE_SPAN = "substitute_span"
    DELETE = "delete"
    SUBSTITUTE = "sub"
    DONE = "done"


class IllFormedAction(ValueError):
    pass


class UnalignablePair(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    op: Op
    positions: Tuple[int, ...] = ()
    symbol: Optional[str] = None

    @property
    def primary_position(self) -> Optional[int]:
        return self.positions[0] if self.positions else None


DONE = Action(Op.DONE)


def pos_token(k: int) -> str:
    return f"<pos_{k}>"


def parse_pos(tok: str) -> Optional[int]:
    m = _POS_RE.match(tok)
    return int(m.group(1)) if m else None


def _is_edit_symbol(tok: str) -> bool:
    return is_number(tok) or tok in OPERATORS or tok == EQ


def check_action(a: Action, task: Task) -> None:
    """Raise IllFormedAction unless ``a`` belongs to the task's action set."""
    task = Task(task)
    if a.op is Op.DONE:
        if a.positions or a.symbol is not None:
            raise IllFormedAction("DONE carries no positions or symbol")
        return
    if any(p < 0 for p in a.positions):
        raise IllFormedAction(f"negative position in {a}")
    if task is Task.AOR:
        ok = a.op is Op.INSERT and len(a.positions) == 1 and (a.symbol in OPERATORS or a.symbol == EQ)
    elif task is Task.AES:
        ok = (
            a.op is Op.SUBSTITUTE_SPAN
            and len(a.positions) == 2
            and a.positions[0] <= a.positions[1]
            and a.symbol is not None
            and is_number(a.symbol)
        )
    else:
        if a.op is Op.DELETE:
            ok = len(a.positions) == 1 and a.symbol is None
        else:
            ok = (
                a.op in (Op.SUBSTITUTE, Op.INSERT)
                and len(a.positions) == 1
                and a.symbol is not None
                and _is_edit_symbol(a.symbol)
            )
    if not ok:
        raise IllFormedAction(f"{a} is not a {task.value.upper()} action")


def encode_action(a: Action, task: Task) -> TokenSeq:
    task = Task(task)
    check_action(a, task)
    if a.op is Op.DONE:
        return (DONE_TOKEN,) * ACTION_LENGTH[task]
    if task is Task.AOR:
        return (pos_token(a.positions[0]), a.symbol)
    if task is Task.AES:
        return (pos_token(a.positions[0]), pos_token(a.positions[1]), a.symbol)
    op_tok = AEC_OP_TOKENS[a.op.value]
    p = pos_token(a.positions[0])
    return (op_tok, p, p if a.op is Op.DELETE else a.symbol)


def decode_action(tokens: Sequence[str], task: Task) -> Optional[Action]:
    """Parse action tokens; returns None for anything off-template."""
    task = Task(task)
    tokens = tuple(tokens)
    if len(tokens) != ACTION_LENGTH[task]:
        return None
    if all(t == DONE_TOKEN for t in tokens):
        return DONE
    if task is Task.AOR:
        p = parse_pos(tokens[0])
        if p is None or not (tokens[1] in OPERATORS or tokens[1] == EQ):
            return None
        return Action(Op.INSERT, (p,), tokens[1])
    if task is Task.AES:
        p1, p2 = parse_pos(tokens[0]), parse_pos(tokens[1])
        if p1 is None or p2 is None or p1 > p2 or not is_number(tokens[2]):
            return None
        return Action(Op.SUBSTITUTE_SPAN, (p1, p2), tokens[2])
    op_tok, p_tok, sym = tokens
    p = parse_pos(p_tok)
    if p is None:
        return None
    if op_tok == AEC_OP_TOKENS["delete"]:
        return Action(Op.DELETE, (p,)) if sym == p_tok else None
    if op_tok in (AEC_OP_TOKENS["sub"], AEC_OP_TOKENS["insert"]) and _is_edit_symbol(sym):
        op = Op.SUBSTITUTE if op_tok == AEC_OP_TOKENS["sub"] else Op.INSERT
        return Action(op, (p,), sym)
    return None


# ---------------------------------------------------------------------------
# edit scripts
# ---------------------------------------------------------------------------


def find_groups(seq: Sequence[str]):
    """Inclusive ``(start, end)`` spans of the non-nested bracketed groups."""
    spans = []
    start = None
    for i, tok in enumerate(seq):
        if tok == LPAREN:
            start = i
        elif tok == RPAREN and start is not None:
            spans.append((start, i))
            start = None
    return spans


def edit_script(src: Sequence[str], tgt: Sequence[str]):
    """Minimal unit-cost token edit script between ``src`` and ``tgt``.

    Returns a left-to-right list of ``(kind, j, token)`` with kind in
    match/sub/delete/insert, where ``j`` is the index in the evolving
    sequence ``tgt[:j] + src[i:]`` at which the edit applies.  Backtrace
    ties prefer match, then substitute, then delete, then insert.
    """
    vocab = {}
    a = np.array([vocab.setdefault(t, len(vocab)) for t in src], dtype=np.int64)
    b = np.array([vocab.setdefault(t, len(vocab)) for t in tgt], dtype=np.int64)
    table = edit_table(a, b)
    i, j = len(src), len(tgt)
    rev = []
    while i > 0 or j > 0:
        here = table[i, j]
        if i > 0 and j > 0 and src[i - 1] == tgt[j - 1] and table[i - 1, j - 1] == here:
            rev.append(("match", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and table[i - 1, j - 1] + 1 == here:
            rev.append(("sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and table[i - 1, j] + 1 == here:
            rev.append(("delete", i - 1, j))
            i -= 1
        else:
            rev.append(("insert", i, j - 1))
            j -= 1
    script = []
    for kind, _, jj in reversed(rev):
        script.append((kind, jj, tgt[jj] if kind in ("match", "sub", "insert") else None))
    return script


def edit_distance(src: Sequence[str], tgt: Sequence[str]) -> int:
    return sum(1 for kind, _, _ in edit_script(src, tgt) if kind != "match")


# ---------------------------------------------------------------------------
# tags
# ---------------------------------------------------------------------------


def sub_tag(tok: str) -> str:
    return f"<sub_{tok}>"


def insert_tag(tok: str) -> str:
    return f"<insert_{tok}>"


def parse_tag(tag: str):
    """``(kind, token)`` for a tag string, or None when unparseable."""
    if tag == KEEP_TAG:
        return ("keep", None)
    if tag == DELETE_TAG:
        return ("delete", None)
    m = _TAG_RE.match(tag)
    if m:
        return (m.group(1), m.group(2))
    return None


def realize(tags: Sequence[str], src: Sequence[str]) -> TokenSeq:
    """Apply tags over ``src`` left to right.

    Consuming tags beyond the end of the source are ignored, as are
    unparseable tags; source tokens left over at the end are dropped.
    """
    out = []
    cursor = 0
    for tag in tags:
        parsed = parse_tag(tag)
        if parsed is None:
            continue
        kind, tok = parsed
        if kind == "insert":
            out.append(tok)
            continue
        if cursor >= len(src):
            continue
        if kind == "keep":
            out.append(src[cursor])
        elif kind == "sub":
            out.append(tok)
        cursor += 1
    return tuple(out)


def tags_from_pair(src: Sequence[str], tgt: Sequence[str], task: Task) -> TokenSeq:
    task = Task(task)
    src, tgt = tuple(src), tuple(tgt)
    if task is Task.AES:
        tags = []
        i = 0
        for start, end in find_groups(src):
            tags.extend([KEEP_TAG] * (start - i))
            value = eval_expr(src[start + 1:end])
            if value.denominator != 1:
                raise UnalignablePair(f"group at {start} is not integral")
            tags.append(sub_tag(str(value.numerator)))
            tags.extend([DELETE_TAG] * (end - start))
            i = end + 1
        tags.extend([KEEP_TAG] * (len(src) - i))
    else:
        tags = []
        for kind, _, tok in edit_script(src, tgt):
            if kind == "match":
                tags.append(KEEP_TAG)
            elif kind == "sub":
                tags.append(sub_tag(tok))
            elif kind == "delete":
                tags.append(DELETE_TAG)
            else:
                tags.append(insert_tag(tok))
        if task is Task.AOR and any(t == DELETE_TAG or t.startswith("<sub_") for t in tags):
            raise UnalignablePair("AOR target does not contain the source as a subsequence")
    tags = tuple(tags)
    if realize(tags, src) != tgt:
        raise UnalignablePair(f"tags do not realize {src} into {tgt}")
    return tags


def apply_action(state: Sequence[str], a: Action, task: Task) -> Optional[TokenSeq]:
    """Apply a decoded non-DONE action, or return None when its positions are out of range.

    AOR insertion may append (position ``len(state)``); every other edit
    needs its positions inside the sequence.
    """
    task = Task(task)
    state = tuple(state)
    n = len(state)
    if a.op is Op.DONE:
        return state
    if task is Task.AOR:
        if a.op is not Op.INSERT:
            return None
        p = a.positions[0]
        if p > n:
            return None
        return state[:p] + (a.symbol,) + state[p:]
    if task is Task.AES:
        if a.op is not Op.SUBSTITUTE_SPAN:
            return None
        p1, p2 = a.positions
        if p2 >= n:
            return None
        return state[:p1] + (a.symbol,) + state[p2 + 1:]
    p = a.positions[0]
    if p >= n:
        return None
    if a.op is Op.DELETE:
        return state[:p] + state[p + 1:]
    if a.op is Op.SUBSTITUTE:
        return state[:p] + (a.symbol,) + state[p + 1:]
    if a.op is Op.INSERT:
        return state[:p] + (a.symbol,) + state[p:]
    return None
