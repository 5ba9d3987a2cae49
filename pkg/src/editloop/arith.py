"""Tokens and exact evaluation of the arithmetic equation language.

Tokens are plain strings: decimal integers, the operators ``+ - * /``,
``==``, parentheses, and angle-bracket specials such as ``<pos_3>`` or
``<done>``.  A token sequence is a tuple of such strings.
"""
from fractions import Fraction
from typing import Optional, Sequence, Tuple

TokenSeq = Tuple[str, ...]

OPERATORS = ("+", "-", "*", "/")
EQ = "=="
LPAREN = "("
RPAREN = ")"


class MalformedExpression(ValueError):
    pass


class DivisionByZero(ZeroDivisionError):
    pass


def is_number(tok: str) -> bool:
    return tok.isascii() and tok.isdigit()


def token_kind(tok: str) -> str:
    """Classify a token: number, plus, minus, times, divide, eq, lparen, rparen or special."""
    if is_number(tok):
        return "number"
    return {
        "+": "plus",
        "-": "minus",
        "*": "times",
        "/": "divide",
        EQ: "eq",
        LPAREN: "lparen",
        RPAREN: "rparen",
    }.get(tok, "special")


def tokenize(text: str) -> TokenSeq:
    return tuple(text.split())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def numbers_of(tokens: Sequence[str]) -> TokenSeq:
    return tuple(t for t in tokens if is_number(t))


class _Parser:
    # expr   := ['-'] term (('+' | '-') term)*
    # term   := primary (('*' | '/') primary)*
    # primary:= NUMBER | '(' expr ')'
    def __init__(self, tokens: Sequence[str]):
        self.toks = tokens
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise MalformedExpression("unexpected end of expression")
        self.pos += 1
        return tok

    def expr(self) -> Fraction:
        negate = False
        if self.peek() == "-":
            self.pos += 1
            negate = True
        value = self.term()
        if negate:
            value = -value
        while self.peek() in ("+", "-"):
            op = self.take()
            rhs = self.term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def term(self) -> Fraction:
        value = self.primary()
        while self.peek() in ("*", "/"):
            op = self.take()
            rhs = self.primary()
            if op == "*":
                value = value * rhs
            else:
                if rhs == 0:
                    raise DivisionByZero("division by zero")
                value = value / rhs
        return value

    def primary(self) -> Fraction:
        tok = self.take()
        if is_number(tok):
            return Fraction(int(tok))
        if tok == LPAREN:
            value = self.expr()
            if self.take() != RPAREN:
                raise MalformedExpression("expected ')'")
            return value
        raise MalformedExpression(f"unexpected token {tok!r}")


def eval_expr(expr: Sequence[str]) -> Fraction:
    """Evaluate an expression exactly.

    ``*`` and ``/`` bind tighter than ``+`` and ``-``, equal precedence is
    left-associative, and a unary minus may open the expression or follow
    ``(``.  Division is true (rational) division.
    """
    parser = _Parser(expr)
    value = parser.expr()
    if parser.pos != len(expr):
        raise MalformedExpression(f"trailing tokens from position {parser.pos}")
    return value


def _eval_rhs(rhs: Sequence[str]) -> Fraction:
    # a single number, or one bracketed group standing in for one
    if len(rhs) == 1 and is_number(rhs[0]):
        return Fraction(int(rhs[0]))
    if len(rhs) >= 3 and rhs[0] == LPAREN and rhs[-1] == RPAREN:
        parser = _Parser(rhs)
        value = parser.primary()
        if parser.pos == len(rhs):
            return value
    raise MalformedExpression("right-hand side must be a number")


def split_equation(eq: Sequence[str]) -> Tuple[TokenSeq, TokenSeq]:
    """Split at the single ``==``; raises MalformedExpression otherwise."""
    eq = tuple(eq)
    if eq.count(EQ) != 1:
        raise MalformedExpression("equation needs exactly one '=='")
    k = eq.index(EQ)
    return eq[:k], eq[k + 1:]


def check_equation(eq: Sequence[str]) -> bool:
    """True iff ``eq`` is ``LHS == RHS`` with a parseable LHS equal to the RHS.

    Never raises: arbitrary token sequences simply score False.
    """
    try:
        lhs, rhs = split_equation(eq)
        return eval_expr(lhs) == _eval_rhs(rhs)
    except (MalformedExpression, DivisionByZero):
        return False


def rhs_value(eq: Sequence[str]) -> Optional[Fraction]:
    """Value of the right-hand side, or None when it is not well formed."""
    try:
        return _eval_rhs(split_equation(eq)[1])
    except (MalformedExpression, DivisionByZero):
        return None
