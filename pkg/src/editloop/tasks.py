"""Seeded generation of the AOR, AES and AEC datasets."""
import enum
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Sequence

import numpy as np

from .arith import EQ, LPAREN, OPERATORS, RPAREN, TokenSeq, check_equation, eval_expr, is_number, numbers_of


class Task(str, enum.Enum):
    AOR = "aor"
    AES = "aes"
    AEC = "aec"


class GenerationExhausted(RuntimeError):
    """Rejection sampling ran out of attempts; the parameters are likely infeasible."""


@dataclass(frozen=True)
class TaskParams:
    task: Task
    n: int
    l: int  # noqa: E741 - integers per equation
    d: int
    seed: int = 0
    max_attempts: int = 10_000
    unary_rate: float = 0.5
    aes_replace_rate: float = 0.5
    aes_unary_rate: float = 0.5
    aec_max_errors: int = 3

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.n < 2 or self.l < 3 or self.d < 1:
            raise ValueError(f"need N >= 2, L >= 3, D >= 1 (got N={self.n}, L={self.l}, D={self.d})")

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["task"] = self.task.value
        return out


@dataclass(frozen=True)
class SamplePair:
    src: TokenSeq
    tgt: TokenSeq


@dataclass
class DatasetSplit:
    train: List[SamplePair] = field(default_factory=list)
    valid: List[SamplePair] = field(default_factory=list)
    test: List[SamplePair] = field(default_factory=list)

    def parts(self):
        return {"train": self.train, "valid": self.valid, "test": self.test}


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named stream under a root seed."""
    entropy = [seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())]
    entropy.extend(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def max_seq_len(params: TaskParams) -> int:
    """Upper bound on any sequence length the task can produce."""
    simple = 2 * params.l
    if params.task is Task.AES:
        # every integer may become "( - a op b )"
        return simple + 5 * params.l
    if params.task is Task.AEC:
        return simple + params.aec_max_errors
    return simple


def symbol_inventory(n: int) -> List[str]:
    return [str(v) for v in range(1, n + 1)] + list(OPERATORS) + [EQ]


# ---------------------------------------------------------------------------
# simple equations
# ---------------------------------------------------------------------------


def gen_simple_equation(params: TaskParams, rng: np.random.Generator) -> TokenSeq:
    """Rejection-sample a paren-free valid equation with ``L`` integers.

    The right-hand side is read off the left-hand value, which accepts the
    same equations with the same probabilities as drawing it uniformly and
    rejecting mismatches, at a fraction of the cost.
    """
    n, l = params.n, params.l
    for _ in range(params.max_attempts):
        nums = rng.integers(1, n + 1, size=l - 1)
        ops = rng.integers(0, len(OPERATORS), size=l - 2)
        lhs = ["-"] if rng.random() < params.unary_rate else []
        lhs.append(str(nums[0]))
        for op, num in zip(ops, nums[1:]):
            lhs.append(OPERATORS[op])
            lhs.append(str(num))
        value = eval_expr(lhs)
        if value.denominator == 1 and 1 <= value <= n:
            return tuple(lhs) + (EQ, str(value.numerator))
    raise GenerationExhausted(f"no valid equation within {params.max_attempts} attempts")


def gen_unique_equations(params: TaskParams) -> List[TokenSeq]:
    rng = substream(params.seed, "gen")
    seen = set()
    out = []
    misses = 0
    while len(out) < params.d:
        eq = gen_simple_equation(params, rng)
        if eq in seen:
            misses += 1
            if misses >= params.max_attempts:
                raise GenerationExhausted(
                    f"only {len(out)} unique equations found for D={params.d}"
                )
            continue
        misses = 0
        seen.add(eq)
        out.append(eq)
    return out


def split_sizes(d: int):
    n_train = int(0.7 * d)
    n_valid = int(0.15 * d)
    return n_train, n_valid, d - n_train - n_valid


def _split(pairs: List[SamplePair]) -> DatasetSplit:
    n_train, n_valid, _ = split_sizes(len(pairs))
    return DatasetSplit(
        train=pairs[:n_train],
        valid=pairs[n_train:n_train + n_valid],
        test=pairs[n_train + n_valid:],
    )


def make_source(tgt: TokenSeq, params: TaskParams, rng: np.random.Generator) -> TokenSeq:
    """Derive a task source from a base equation."""
    if params.task is Task.AOR:
        return numbers_of(tgt)
    if params.task is Task.AES:
        return complicate_aes(tgt, rng, params)
    return corrupt_aec(tgt, rng, params.n, params.aec_max_errors)


def source_rng(params: TaskParams, index: int) -> np.random.Generator:
    return substream(params.seed, "src", index)


def generate(params: TaskParams) -> DatasetSplit:
    eqs = gen_unique_equations(params)
    pairs = [SamplePair(make_source(eq, params, source_rng(params, i)), eq) for i, eq in enumerate(eqs)]
    return _split(pairs)


# ---------------------------------------------------------------------------
# AOR
# ---------------------------------------------------------------------------


def gen_aor(params: TaskParams) -> DatasetSplit:
    if params.task is not Task.AOR:
        raise ValueError("gen_aor needs task=AOR")
    return generate(params)


# ---------------------------------------------------------------------------
# AES
# ---------------------------------------------------------------------------

_AES_OPERAND_TRIES = 100


def bracket_for(value: int, rng: np.random.Generator, params: TaskParams):
    """A bracketed group ``( [-] a op b )`` equal to ``value``, or None.

    One operand is drawn from 1..N, the other solved for and accepted when it
    is a positive integer no larger than 2N.
    """
    n = params.n
    v = Fraction(value)
    for _ in range(_AES_OPERAND_TRIES):
        op = OPERATORS[rng.integers(len(OPERATORS))]
        known = Fraction(int(rng.integers(1, n + 1)))
        known_first = rng.random() < 0.5
        sign = -1 if rng.random() < params.aes_unary_rate else 1
        # solve sign*x op y == v for the unknown operand
        if known_first:
            x = sign * known
            if op == "+":
                y = v - x
            elif op == "-":
                y = x - v
            elif op == "*":
                y = v / x
            else:
                y = x / v
            first, second = known, y
        else:
            y = known
            if op == "+":
                x = v - y
            elif op == "-":
                x = v + y
            elif op == "*":
                x = v / y
            else:
                x = v * y
            first, second = sign * x, y
        for operand in (first, second):
            if operand.denominator != 1 or not 1 <= operand <= 2 * n:
                break
        else:
            body = ["-"] if sign < 0 else []
            return (LPAREN, *body, str(first.numerator), op, str(second.numerator), RPAREN)
    return None


def complicate_aes(simple: Sequence[str], rng: np.random.Generator, params: TaskParams) -> TokenSeq:
    """Replace some integers (the RHS included) by equivalent bracketed groups."""
    out = []
    for tok in simple:
        if is_number(tok) and rng.random() < params.aes_replace_rate:
            group = bracket_for(int(tok), rng, params)
            if group is not None:
                out.extend(group)
                continue
        out.append(tok)
    return tuple(out)


def simplify_groups(seq: Sequence[str]) -> TokenSeq:
    """Replace each ``( ... )`` group by its (integer) value."""
    out = []
    i = 0
    seq = tuple(seq)
    while i < len(seq):
        if seq[i] == LPAREN:
            j = seq.index(RPAREN, i)
            value = eval_expr(seq[i + 1:j])
            if value.denominator != 1:
                raise ValueError(f"group {seq[i:j + 1]} is not integral")
            out.append(str(value.numerator))
            i = j + 1
        else:
            out.append(seq[i])
            i += 1
    return tuple(out)


def gen_aes(params: TaskParams) -> DatasetSplit:
    if params.task is not Task.AES:
        raise ValueError("gen_aes needs task=AES")
    return generate(params)


# ---------------------------------------------------------------------------
# AEC
# ---------------------------------------------------------------------------


def apply_edits(equation: Sequence[str], edits) -> TokenSeq:
    """Apply ``(kind, position, token)`` edits in order; kind in delete/sub/insert."""
    seq = list(equation)
    for kind, pos, tok in edits:
        if kind == "delete":
            del seq[pos]
        elif kind == "sub":
            seq[pos] = tok
        elif kind == "insert":
            seq.insert(pos, tok)
        else:
            raise ValueError(f"unknown edit kind {kind!r}")
    return tuple(seq)


def corrupt_aec(equation: Sequence[str], rng: np.random.Generator, n: int, max_errors: int = 3) -> TokenSeq:
    """Introduce up to ``max_errors`` random token edits, keeping the final RHS integer."""
    symbols = symbol_inventory(n)
    k = int(rng.integers(0, max_errors + 1))
    edits = []
    length = len(equation)
    for _ in range(k):
        # editable region is everything before the last token
        kinds = ["delete", "sub", "insert"] if length > 1 else ["insert"]
        kind = kinds[rng.integers(len(kinds))]
        if kind == "insert":
            pos = int(rng.integers(0, length))
            edits.append((kind, pos, symbols[rng.integers(len(symbols))]))
            length += 1
        elif kind == "sub":
            pos = int(rng.integers(0, length - 1))
            edits.append((kind, pos, symbols[rng.integers(len(symbols))]))
        else:
            pos = int(rng.integers(0, length - 1))
            edits.append((kind, pos, None))
            length -= 1
    return apply_edits(equation, edits)


def gen_aec(params: TaskParams) -> DatasetSplit:
    if params.task is not Task.AEC:
        raise ValueError("gen_aec needs task=AEC")
    return generate(params)


GENERATORS = {Task.AOR: gen_aor, Task.AES: gen_aes, Task.AEC: gen_aec}


def is_valid_target(eq: Sequence[str]) -> bool:
    return check_equation(eq) and LPAREN not in eq
