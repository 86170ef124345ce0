"""Tokenizer and call-expression reader shared by the DSL and spec strings.

Kernel specs such as ``sum(gaussian(ls=1.0), linear(bias=1.0))`` and known
function specs such as ``affine(a=2, b=0)`` are both call expressions, so
they share one small reader.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import ParseError

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<arrow>->)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"[^"\n]*")
  | (?P<punct>[{}()\[\]=:,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # name, number, string, arrow, punct, eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError("unexpected character", line, col, text[pos])
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


@dataclass
class Call:
    """``name(arg, ..., key=value, ...)``; bare names are calls without parens."""

    name: str
    args: list = field(default_factory=list)
    kwargs: dict = field(default_factory=dict)
    token: Token | None = None

    def error(self, message: str) -> ParseError:
        tok = self.token
        if tok is None:
            return ParseError(message, 0, 0, self.name)
        return ParseError(message, tok.line, tok.col, tok.text)


class Cursor:
    """Token stream with the small set of helpers a recursive-descent reader needs."""

    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col, tok.text)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("punct", "arrow", "name") and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}")
        return self.next()

    def name(self, what: str = "identifier") -> Token:
        if self.tok.kind != "name":
            raise self.error(f"expected {what}")
        return self.next()

    def number(self) -> float:
        tok = self.tok
        if tok.kind == "number":
            self.next()
            return float(tok.text)
        if tok.kind == "name" and tok.text == "inf":
            self.next()
            return math.inf
        raise self.error("expected number")

    def integer(self) -> int:
        tok = self.tok
        if tok.kind != "number" or not re.fullmatch(r"[+]?\d+", tok.text):
            raise self.error("expected integer")
        self.next()
        return int(tok.text)

    def value(self):
        """A number, or a call expression (which covers bare identifiers)."""
        if self.tok.kind == "number" or (self.tok.kind == "name" and self.tok.text == "inf"):
            return self.number()
        if self.tok.kind == "name":
            return self.call()
        raise self.error("expected value")

    def call(self) -> Call:
        head = self.name()
        node = Call(head.text, token=head)
        if not self.at("("):
            return node
        self.next()
        while not self.at(")"):
            if self.tok.kind == "name" and self.peek().text == "=" and self.peek().kind == "punct":
                key = self.next()
                self.next()
                if key.text in node.kwargs:
                    raise self.error(f"duplicate argument {key.text!r}", key)
                node.kwargs[key.text] = self.value()
            else:
                if node.kwargs:
                    raise self.error("positional argument after keyword argument")
                node.args.append(self.value())
            if not self.at(")"):
                self.expect(",")
        self.next()
        return node


def fmt_number(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def parse_call_text(text: str) -> Call | float:
    cur = Cursor(tokenize(text))
    value = cur.value()
    if cur.tok.kind != "eof":
        raise cur.error("trailing input")
    return value
