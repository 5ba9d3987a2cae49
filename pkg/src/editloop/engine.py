"""The interpreter and the recurrent programmer/interpreter inference loop."""
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Sequence

from .actions import ACTION_LENGTH, DONE, Op, apply_action, decode_action, encode_action
from .arith import TokenSeq
from .tasks import Task
from .trace import derive_trace


@dataclass(frozen=True)
class StepResult:
    state: TokenSeq
    terminate: bool


class Programmer(Protocol):
    def predict(self, state: TokenSeq) -> TokenSeq: ...


def execute(state: Sequence[str], tokens: Sequence[str], task: Task) -> StepResult:
    """Run one action; invalid or out-of-range actions return the input unchanged."""
    state = tuple(state)
    action = decode_action(tokens, task)
    if action is None:
        return StepResult(state, False)
    if action.op is Op.DONE:
        return StepResult(state, True)
    new = apply_action(state, action, task)
    return StepResult(state if new is None else new, False)


def default_max_iters(x: Sequence[str]) -> int:
    return 2 * len(x) + 4


@dataclass
class InferenceLog:
    """Counters over recurrent-inference runs."""

    counts: Counter = field(default_factory=Counter)

    def record(self, key: str, n: int = 1) -> None:
        self.counts[key] += n


LOG = InferenceLog()

StepCallback = Callable[[int, TokenSeq, StepResult], None]


def recurrent_infer(
    programmer: Programmer,
    x: Sequence[str],
    task: Task,
    max_iters: Optional[int] = None,
    on_step: Optional[StepCallback] = None,
    log: InferenceLog = LOG,
    executor: Optional[Callable[[TokenSeq, TokenSeq], StepResult]] = None,
) -> TokenSeq:
    """Alternate programmer and interpreter until DONE or ``max_iters``.

    ``executor`` replaces the task interpreter, which lets other action sets
    reuse the loop.
    """
    state = tuple(x)
    run = executor if executor is not None else (lambda s, toks: execute(s, toks, task))
    if max_iters is None:
        max_iters = default_max_iters(state)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    for t in range(1, max_iters + 1):
        tokens = tuple(programmer.predict(state))
        result = run(state, tokens)
        if on_step is not None:
            on_step(t, tokens, result)
        state = result.state
        if result.terminate:
            log.record("terminated")
            return state
    log.record("iteration_cap")
    return state


def recurrent_infer_batch(
    predict_batch: Callable[[List[TokenSeq]], List[TokenSeq]],
    xs: Sequence[Sequence[str]],
    task: Task,
    max_iters: Optional[int] = None,
    log: InferenceLog = LOG,
) -> List[TokenSeq]:
    """Recurrent inference over many inputs, batching the programmer calls.

    Each input follows exactly the single-instance loop; only the still
    running ones are sent to the programmer at each iteration.
    """
    states = [tuple(x) for x in xs]
    caps = [default_max_iters(s) if max_iters is None else max_iters for s in states]
    active = list(range(len(states)))
    t = 0
    while active:
        t += 1
        outputs = predict_batch([states[i] for i in active])
        still = []
        for i, tokens in zip(active, outputs):
            result = execute(states[i], tokens, task)
            states[i] = result.state
            if result.terminate:
                log.record("terminated")
            elif t >= caps[i]:
                log.record("iteration_cap")
            else:
                still.append(i)
        active = still
    return states


class OracleProgrammer:
    """Plays the gold trace's next action for whatever state it is shown."""

    def __init__(self, tgt: Sequence[str], task: Task):
        self.tgt = tuple(tgt)
        self.task = Task(task)

    def predict(self, state: TokenSeq) -> TokenSeq:
        if tuple(state) == self.tgt:
            return encode_action(DONE, self.task)
        first = derive_trace(state, self.tgt, self.task).actions[0]
        return encode_action(first, self.task)


def oracle_programmer(tgt: Sequence[str], task: Task) -> OracleProgrammer:
    return OracleProgrammer(tgt, task)


def action_length(task: Task) -> int:
    return ACTION_LENGTH[Task(task)]
