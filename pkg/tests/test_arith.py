import itertools
import operator
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from editloop.arith import (
    DivisionByZero,
    MalformedExpression,
    check_equation,
    detokenize,
    eval_expr,
    token_kind,
    tokenize,
)


def T(text):
    return tokenize(text)


def reference_eval(toks):
    """Split at the rightmost lowest-precedence binary operator and recurse."""
    toks = list(toks)
    if len(toks) == 1:
        return Fraction(int(toks[0]))
    if toks[0] == "(" and _closing(toks, 0) == len(toks) - 1:
        return reference_eval(toks[1:-1])
    for ops in (("+", "-"), ("*", "/")):
        depth = 0
        for i in range(len(toks) - 1, 0, -1):
            tok = toks[i]
            if tok == ")":
                depth += 1
            elif tok == "(":
                depth -= 1
            elif depth == 0 and tok in ops and toks[i - 1] not in ("(", "+", "-", "*", "/"):
                fn = {"+": operator.add, "-": operator.sub, "*": operator.mul, "/": operator.truediv}[tok]
                return fn(reference_eval(toks[:i]), reference_eval(toks[i + 1:]))
    if toks[0] == "-":
        return -reference_eval(toks[1:])
    raise ValueError(toks)


def _closing(toks, start):
    depth = 0
    for i in range(start, len(toks)):
        depth += toks[i] == "("
        depth -= toks[i] == ")"
        if depth == 0:
            return i
    return -1


def test_tokenize_examples():
    assert T("2 / 7 * 7 == 2") == ("2", "/", "7", "*", "7", "==", "2")
    assert T("") == ()
    assert T("<pos_0> -") == ("<pos_0>", "-")
    assert token_kind("<pos_0>") == "special"
    assert token_kind("10") == "number"
    assert [token_kind(t) for t in T("+ - * / == ( )")] == [
        "plus", "minus", "times", "divide", "eq", "lparen", "rparen",
    ]


@given(st.lists(st.sampled_from(["1", "23", "+", "-", "==", "(", ")", "<done>"]), max_size=12))
def test_detokenize_round_trip(toks):
    assert tokenize(detokenize(toks)) == tuple(toks)


def test_tokenize_normalizes_whitespace():
    assert detokenize(tokenize("  7  *\t8 ")) == "7 * 8"


@pytest.mark.parametrize(
    "text, value",
    [
        ("- 6 / 10 + 9 / 5 * 2", 3),
        ("5", 5),
        ("( - 2 + 4 ) / 7 * 7", 2),
        ("2 / 7 * ( 11 - 4 )", 2),
        ("- 3 + 10 / 2", 2),
        ("8 - 4 - 2", 2),
        ("8 / 4 / 2", 1),
    ],
)
def test_eval_examples(text, value):
    assert eval_expr(T(text)) == value


def test_eval_is_exact():
    assert eval_expr(T("1 / 3 + 1 / 3 + 1 / 3")) == 1
    assert eval_expr(T("2 / 7")) == Fraction(2, 7)


@pytest.mark.parametrize("text", ["+ 3", "3 +", "( 3", "3 )", "3 <pos_1>", "", "3 3", "* 2"])
def test_eval_malformed(text):
    with pytest.raises(MalformedExpression):
        eval_expr(T(text))


def test_eval_division_by_zero():
    with pytest.raises(DivisionByZero):
        eval_expr(T("3 / ( 2 - 2 )"))


def _agree(toks):
    try:
        expected = reference_eval(toks)
    except ZeroDivisionError:
        with pytest.raises(DivisionByZero):
            eval_expr(toks)
        return
    assert eval_expr(toks) == expected, toks


def test_exhaustive_against_reference():
    ops = ["+", "-", "*", "/"]
    count = 0
    for a, b, c in itertools.product(range(1, 6), repeat=3):
        for o1, o2 in itertools.product(ops, repeat=2):
            for lead in ([], ["-"]):
                toks = lead + [str(a), o1, str(b), o2, str(c)]
                _agree(toks)
                _agree([str(a), o1, "(", str(b), o2, str(c), ")"])
                count += 1
    assert count == 125 * 16 * 2


@pytest.mark.parametrize(
    "text, ok",
    [
        ("7 * 8 / 4 - 8 == 6", True),
        ("2 == 3", False),
        ("+ + 3 == 3", False),
        ("- 6 / 10 + 9 / 5 * 2 == 3", True),
        ("2 / 7 * ( 11 - 4 ) == ( 4 - 2 )", True),
        ("2 == 2 == 2", False),
        ("2 + 2", False),
        ("2 == 1 + 1", False),
        ("4 / ( 2 - 2 ) == 1", False),
        ("<done> <done>", False),
        ("", False),
    ],
)
def test_check_equation(text, ok):
    assert check_equation(T(text)) is ok


@given(st.lists(st.sampled_from(["1", "2", "9", "+", "-", "*", "/", "==", "(", ")", "<pos_3>"]), max_size=15))
def test_check_equation_is_total(toks):
    assert check_equation(toks) in (True, False)
