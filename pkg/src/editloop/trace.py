"""Gold action traces and training-pair construction for every method and mode."""
import enum
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .actions import (
    DONE,
    Action,
    Op,
    UnalignablePair,
    apply_action,
    edit_script,
    encode_action,
    find_groups,
    tags_from_pair,
)
from .arith import TokenSeq, eval_expr
from .tasks import SamplePair, Task, TaskParams, make_source, substream


class Method(str, enum.Enum):
    END2END = "end2end"
    TAGGING = "tagging"
    RECURRENCE = "recurrence"


class Mode(str, enum.Enum):
    OFFLINE = "offline"
    ONLINE = "online"


@dataclass(frozen=True)
class Trace:
    states: List[TokenSeq]
    actions: List[Action]

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True)
class TrainingPair:
    src: TokenSeq
    tgt: TokenSeq
    method: Method


def _script_actions(src, tgt, task, rng=None):
    cells = [c for c in edit_script(src, tgt)]
    edits = [k for k, c in enumerate(cells) if c[0] != "match"]
    if task is Task.AOR and any(cells[k][0] != "insert" for k in edits):
        raise UnalignablePair(f"{src} is not a subsequence of {tgt}")
    if rng is None:
        order = edits
    else:
        order = [edits[k] for k in rng.permutation(len(edits))]
    # current token count contributed by each alignment cell
    width = [0 if kind == "insert" else 1 for kind, _, _ in cells]
    actions = []
    for k in order:
        kind, _, tok = cells[k]
        pos = sum(width[:k])
        if kind == "insert":
            actions.append(Action(Op.INSERT, (pos,), tok))
            width[k] = 1
        elif kind == "delete":
            actions.append(Action(Op.DELETE, (pos,)))
            width[k] = 0
        else:
            actions.append(Action(Op.SUBSTITUTE, (pos,), tok))
    return actions


def _group_actions(src, rng=None):
    state = tuple(src)
    actions = []
    while True:
        groups = find_groups(state)
        if not groups:
            return actions
        start, end = groups[0] if rng is None else groups[rng.integers(len(groups))]
        value = eval_expr(state[start + 1:end])
        if value.denominator != 1 or value <= 0:
            raise UnalignablePair(f"group {state[start:end + 1]} has no integer value")
        a = Action(Op.SUBSTITUTE_SPAN, (start, end), str(value.numerator))
        actions.append(a)
        state = apply_action(state, a, Task.AES)


def derive_trace(src: Sequence[str], tgt: Sequence[str], task: Task, rng: Optional[np.random.Generator] = None) -> Trace:
    """Intermediate states and actions editing ``src`` into ``tgt``.

    Edits run left to right with positions taken on the evolving sequence.
    Passing ``rng`` shuffles the edit order instead (positions are still
    re-indexed so the replay stays sound).
    """
    task = Task(task)
    src, tgt = tuple(src), tuple(tgt)
    if task is Task.AES:
        edits = _group_actions(src, rng)
    else:
        edits = _script_actions(src, tgt, task, rng)
    states = [src]
    for a in edits:
        nxt = apply_action(states[-1], a, task)
        if nxt is None:
            raise UnalignablePair(f"action {a} out of range on {states[-1]}")
        states.append(nxt)
    if states[-1] != tgt:
        raise UnalignablePair(f"{src} does not edit into {tgt}")
    return Trace(states, edits + [DONE])


def _target(state, tgt, task, method, action):
    if method is Method.END2END:
        return tuple(tgt)
    if method is Method.TAGGING:
        return tags_from_pair(state, tgt, task)
    return encode_action(action, task)


def offline_pairs(src, tgt, task: Task, method: Method) -> List[TrainingPair]:
    task, method = Task(task), Method(method)
    src, tgt = tuple(src), tuple(tgt)
    if method is Method.RECURRENCE:
        first = derive_trace(src, tgt, task).actions[0]
        return [TrainingPair(src, encode_action(first, task), method)]
    return [TrainingPair(src, _target(src, tgt, task, method, None), method)]


def online_sample(src, tgt, task: Task, method: Method, rng: np.random.Generator, trace: Optional[Trace] = None) -> TrainingPair:
    """One (state, target) pair drawn uniformly from the trace of ``src``."""
    task, method = Task(task), Method(method)
    if trace is None:
        trace = derive_trace(src, tgt, task)
    i = int(rng.integers(len(trace)))
    state = trace.states[i]
    return TrainingPair(state, _target(state, tgt, task, method, trace.actions[i]), method)


def refreshed_source(pair: SamplePair, params: TaskParams, epoch: int, index: int) -> TokenSeq:
    """Per-epoch regenerated AES/AEC source; AOR sources never change."""
    if params.task is Task.AOR:
        return pair.src
    return make_source(pair.tgt, params, substream(params.seed, "refresh", epoch, index))


def epoch_refresh(
    split: Sequence[SamplePair],
    params: TaskParams,
    epoch: int,
    method: Method,
    mode: Mode = Mode.OFFLINE,
    sample_seed: Optional[int] = None,
) -> List[TrainingPair]:
    """Training pairs for one epoch.

    AES/AEC sources are regenerated from their base targets with a generator
    keyed by (dataset seed, epoch, index).  Online draws use a separate
    stream keyed by (``sample_seed``, epoch, index).
    """
    method, mode = Method(method), Mode(mode)
    sample_seed = params.seed if sample_seed is None else sample_seed
    out = []
    for idx, pair in enumerate(split):
        src = refreshed_source(pair, params, epoch, idx)
        if mode is Mode.OFFLINE:
            out.extend(offline_pairs(src, pair.tgt, params.task, method))
        else:
            rng = substream(sample_seed, "sample", epoch, idx)
            out.append(online_sample(src, pair.tgt, params.task, method, rng))
    return out
