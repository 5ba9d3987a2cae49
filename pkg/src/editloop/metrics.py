"""Token, sequence and equation accuracy, plus batch scoring."""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

from .arith import LPAREN, RPAREN, check_equation, numbers_of, rhs_value, tokenize
from .tasks import SamplePair, Task


class LengthMismatch(ValueError):
    pass


PRIMARY_METRICS = {Task.AOR: ("eq_acc",), Task.AES: ("seq_acc",), Task.AEC: ("seq_acc", "eq_acc")}

DEFAULT_CHECKS = {"aor_numbers": True, "aes_rhs": True, "aec_rhs": True}


def token_accuracy(pred: Sequence[str], tgt: Sequence[str]) -> float:
    hits = sum(1 for p, t in zip(pred, tgt) if p == t)
    return hits / len(tgt)


def sequence_accuracy(pred: Sequence[str], tgt: Sequence[str]) -> int:
    return int(tuple(pred) == tuple(tgt))


def equation_accuracy(pred: Sequence[str], src: Sequence[str], task: Task, checks: Dict[str, bool] = None) -> int:
    """1 when ``pred`` is a true equation consistent with its source.

    AOR predictions must keep the source numbers in order, AES predictions
    must be paren-free with the source's simplified right-hand side, and AEC
    predictions must end on the source's right-hand-side token.
    """
    task = Task(task)
    checks = {**DEFAULT_CHECKS, **(checks or {})}
    pred, src = tuple(pred), tuple(src)
    if not check_equation(pred):
        return 0
    if task is Task.AOR and checks["aor_numbers"]:
        return int(numbers_of(pred) == src)
    if task is Task.AES and checks["aes_rhs"]:
        if LPAREN in pred or RPAREN in pred:
            return 0
        return int(rhs_value(pred) == rhs_value(src))
    if task is Task.AEC and checks["aec_rhs"]:
        return int(bool(src) and pred[-1] == src[-1])
    return 1


@dataclass
class EvalReport:
    task: Task
    token_acc: float
    seq_acc: float
    eq_acc: float
    n: int
    verdicts: List[dict] = field(default_factory=list, repr=False)

    @property
    def primary(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in PRIMARY_METRICS[self.task]}

    @property
    def primary_score(self) -> float:
        values = list(self.primary.values())
        return sum(values) / len(values)

    def summary(self) -> dict:
        return {
            "task": self.task.value,
            "n": self.n,
            "token_acc": self.token_acc,
            "seq_acc": self.seq_acc,
            "eq_acc": self.eq_acc,
            "primary": self.primary,
        }


def score(preds: Sequence[Sequence[str]], pairs: Sequence[SamplePair], task: Task, checks=None) -> EvalReport:
    task = Task(task)
    if len(preds) != len(pairs):
        raise LengthMismatch(f"{len(preds)} predictions for {len(pairs)} pairs")
    verdicts = []
    for pred, pair in zip(preds, pairs):
        pred = tuple(pred)
        verdicts.append(
            {
                "token": token_accuracy(pred, pair.tgt),
                "seq": sequence_accuracy(pred, pair.tgt),
                "eq": equation_accuracy(pred, pair.src, task, checks),
            }
        )
    n = len(verdicts)
    mean = (lambda key: sum(v[key] for v in verdicts) / n) if n else (lambda key: 0.0)
    return EvalReport(task, mean("token"), mean("seq"), mean("eq"), n, verdicts)


def evaluate(pred_file, test_split: Sequence[SamplePair], task: Task, method=None, checks=None) -> EvalReport:
    """Score a prediction file (one space-separated prediction per line) against a split.

    ``method`` is accepted for symmetry with the training side; predictions
    are always final edited sequences.
    """
    with open(pred_file, encoding="utf-8") as fh:
        preds = [tokenize(line) for line in fh.read().splitlines()]
    return score(preds, test_split, task, checks)
