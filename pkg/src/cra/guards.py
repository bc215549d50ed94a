"""Propositional guard formulas attached to machine transitions.

Grammar (``&`` binds tighter than ``|``)::

    expr := "TRUE" | disj
    disj := conj {"|" conj}
    conj := lit {"&" lit}
    lit  := ["!"] (atom | "(" disj ")")

Atoms are proposition names. A guard is evaluated against a label set
(the set of propositions currently true); ``TRUE`` denotes the tautology,
which is satisfied by every label set including the empty one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class GuardSyntaxError(Exception):
    """Malformed guard expression; carries the byte offset of the error."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Tautology:
    def evaluate(self, active):
        return True

    def atoms(self):
        return frozenset()


@dataclass(frozen=True)
class Atom:
    name: str

    def evaluate(self, active):
        return self.name in active

    def atoms(self):
        return frozenset((self.name,))


@dataclass(frozen=True)
class Not:
    child: object

    def evaluate(self, active):
        return not self.child.evaluate(active)

    def atoms(self):
        return self.child.atoms()


@dataclass(frozen=True)
class And:
    children: tuple

    def evaluate(self, active):
        return all(c.evaluate(active) for c in self.children)

    def atoms(self):
        out = frozenset()
        for c in self.children:
            out |= c.atoms()
        return out


@dataclass(frozen=True)
class Or:
    children: tuple

    def evaluate(self, active):
        return any(c.evaluate(active) for c in self.children)

    def atoms(self):
        out = frozenset()
        for c in self.children:
            out |= c.atoms()
        return out


TRUE = Tautology()

_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|([!&|()]))")


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise GuardSyntaxError(
                f"unexpected character {stripped[0]!r}", len(text) - len(stripped)
            )
        name, punct = m.groups()
        tokens.append((name or punct, m.start(1 if name else 2)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def offset(self):
        return self.tokens[self.i][1] if self.i < len(self.tokens) else len(self.text)

    def disj(self):
        parts = [self.conj()]
        while self.peek() == "|":
            self.next()
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conj(self):
        parts = [self.lit()]
        while self.peek() == "&":
            self.next()
            parts.append(self.lit())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def lit(self):
        tok = self.peek()
        if tok == "!":
            self.next()
            return Not(self.lit_base())
        return self.lit_base()

    def lit_base(self):
        tok = self.peek()
        if tok is None:
            raise GuardSyntaxError("unexpected end of expression", self.offset())
        if tok == "(":
            self.next()
            inner = self.disj()
            if self.peek() != ")":
                raise GuardSyntaxError("expected ')'", self.offset())
            self.next()
            return inner
        if tok == "TRUE":
            raise GuardSyntaxError(
                "TRUE is only valid as a whole guard expression", self.offset()
            )
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            self.next()
            return Atom(tok)
        raise GuardSyntaxError(f"unexpected token {tok!r}", self.offset())


def parse_guard(text):
    """Parse a guard expression into its formula tree."""
    if text.strip() == "TRUE":
        return TRUE
    parser = _Parser(text)
    if not parser.tokens:
        raise GuardSyntaxError("empty guard expression", 0)
    tree = parser.disj()
    if parser.i < len(parser.tokens):
        raise GuardSyntaxError(
            f"trailing input {parser.peek()!r}", parser.offset()
        )
    return tree


def serialize_guard(g):
    """Render a formula so that parse_guard(serialize_guard(g)) == g."""
    if isinstance(g, Tautology):
        return "TRUE"
    if isinstance(g, Atom):
        return g.name
    if isinstance(g, Not):
        inner = serialize_guard(g.child)
        if isinstance(g.child, Atom):
            return "!" + inner
        return "!(" + inner + ")"
    if isinstance(g, And):
        parts = []
        for c in g.children:
            s = serialize_guard(c)
            if isinstance(c, (Or, And)):
                s = "(" + s + ")"
            parts.append(s)
        return " & ".join(parts)
    if isinstance(g, Or):
        parts = []
        for c in g.children:
            s = serialize_guard(c)
            if isinstance(c, Or):
                s = "(" + s + ")"
            parts.append(s)
        return " | ".join(parts)
    raise TypeError(f"not a guard formula: {g!r}")


def eval_guard(g, active):
    """Standard propositional semantics: Atom(p) is true iff p is in the label set."""
    return g.evaluate(active)


def is_tautology_literal(g):
    """True only for the explicit TRUE guard (the machine's tau edges)."""
    return isinstance(g, Tautology)
