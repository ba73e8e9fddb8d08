"""Context-free grammars in a small BNF dialect.

One rule per logical line::

    <expr> ::= <func> | <term>     # comment
    <func> ::= <expr> + <expr> \\
             | <expr> * <expr>

The left-hand side of the first rule is the start symbol. Symbols inside an
alternative are whitespace separated; ``<name>`` is a non-terminal reference,
anything else is a terminal token. Empty alternatives are rejected.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "Grammar",
    "GrammarError",
    "NonTerminal",
    "Production",
    "Symbol",
    "compute_depths",
    "format_grammar",
    "load_grammar",
    "parse_grammar",
    "bundled_grammar_path",
]

_NT_RE = re.compile(r"^<([A-Za-z_][A-Za-z0-9_\-]*)>$")
_BUNDLED = Path(__file__).parent / "grammars"


class GrammarError(ValueError):
    """Raised for malformed or invalid grammars; carries a source location."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


@dataclass(frozen=True)
class Symbol:
    text: str
    nonterminal: bool = False

    @property
    def kind(self) -> str:
        return "nonterminal" if self.nonterminal else "terminal"

    def __str__(self) -> str:
        return f"<{self.text}>" if self.nonterminal else self.text


@dataclass(frozen=True)
class Production:
    symbols: tuple[Symbol, ...]
    min_depth: float = math.inf

    def references(self) -> list[str]:
        return [s.text for s in self.symbols if s.nonterminal]

    def __str__(self) -> str:
        return " ".join(str(s) for s in self.symbols)


@dataclass(frozen=True)
class NonTerminal:
    name: str
    productions: tuple[Production, ...]
    min_depth: float = math.inf
    recursive: bool = False


@dataclass(frozen=True)
class Grammar:
    nonterminals: tuple[NonTerminal, ...]
    start: str
    by_name: dict[str, NonTerminal] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "by_name", {nt.name: nt for nt in self.nonterminals})

    def __getitem__(self, name: str) -> NonTerminal:
        return self.by_name[name]

    @property
    def names(self) -> list[str]:
        return [nt.name for nt in self.nonterminals]

    def terminals(self) -> list[str]:
        """Distinct terminal tokens in order of first appearance."""
        seen: dict[str, None] = {}
        for nt in self.nonterminals:
            for p in nt.productions:
                for s in p.symbols:
                    if not s.nonterminal:
                        seen.setdefault(s.text, None)
        return list(seen)

    def __str__(self) -> str:
        return format_grammar(self)


def _strip_comment(line: str) -> str:
    i = line.find("#")
    return line if i < 0 else line[:i]


def _logical_lines(source: str):
    """Yield (line_no, text, column_offsets) for each logical rule line.

    ``column_offsets`` maps character positions in ``text`` back to
    (physical line, column) so errors point at the original source.
    """
    buf: list[str] = []
    origin: list[tuple[int, int]] = []
    start_line = None
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        cont = line.endswith("\\")
        if cont:
            line = line[:-1]
        if start_line is None:
            start_line = lineno
        if buf:
            buf.append(" ")
            origin.append((lineno, 1))
        buf.append(line)
        origin.extend((lineno, c + 1) for c in range(len(line)))
        if not cont:
            text = "".join(buf)
            if text.strip():
                yield start_line, text, origin
            buf, origin, start_line = [], [], None
    if buf and "".join(buf).strip():
        yield start_line, "".join(buf), origin


def _loc(origin, pos):
    if 0 <= pos < len(origin):
        return origin[pos]
    return (origin[-1][0], origin[-1][1] + 1) if origin else (None, None)


def _tokens(text: str, offset: int):
    for m in re.finditer(r"\S+", text):
        yield m.group(0), offset + m.start()


def parse_grammar(source: str) -> Grammar:
    """Parse grammar text and return a validated :class:`Grammar`.

    Raises :class:`GrammarError` on syntax errors, duplicate or undefined
    non-terminals, empty alternatives and unproductive non-terminals.
    """
    rules: list[tuple[str, list[list[Symbol]]]] = []
    defined: dict[str, int] = {}
    refs: list[tuple[str, int, int]] = []
    for lineno, text, origin in _logical_lines(source):
        head, sep, body = text.partition("::=")
        if not sep:
            first = len(text) - len(text.lstrip())
            raise GrammarError("expected '<name> ::= ...'", *_loc(origin, first))
        lhs = head.strip()
        m = _NT_RE.match(lhs)
        if not m:
            col = len(head) - len(head.lstrip())
            raise GrammarError(f"invalid left-hand side {lhs!r}", *_loc(origin, col))
        name = m.group(1)
        if name in defined:
            raise GrammarError(
                f"duplicate definition of <{name}> (first defined on line {defined[name]})",
                lineno,
                _loc(origin, len(head) - len(head.lstrip()))[1],
            )
        defined[name] = lineno
        alts: list[list[Symbol]] = []
        pos = len(head) + 3
        for chunk in body.split("|"):
            syms = []
            for tok, p in _tokens(chunk, pos):
                nt = _NT_RE.match(tok)
                if nt:
                    syms.append(Symbol(nt.group(1), True))
                    refs.append((nt.group(1), *_loc(origin, p)))
                else:
                    syms.append(Symbol(tok, False))
            if not syms:
                raise GrammarError(f"empty alternative in <{name}>", *_loc(origin, pos))
            alts.append(syms)
            pos += len(chunk) + 1
        rules.append((name, alts))

    if not rules:
        raise GrammarError("grammar has no rules")
    for name, line, col in refs:
        if name not in defined:
            raise GrammarError(f"undefined non-terminal <{name}>", line, col)

    nts = tuple(
        NonTerminal(name, tuple(Production(tuple(a)) for a in alts)) for name, alts in rules
    )
    return compute_depths(Grammar(nts, rules[0][0]))


def compute_depths(grammar: Grammar) -> Grammar:
    """Return a copy of ``grammar`` with minimum depths and recursion flags filled in.

    A terminal-only production has depth 1; otherwise a production's depth is
    one more than the deepest of its referenced non-terminals. The fixed point
    is found by relaxation.
    """
    names = grammar.names
    if grammar.start not in grammar.by_name:
        raise GrammarError(f"start symbol <{grammar.start}> is not defined")
    for nt in grammar.nonterminals:
        if not nt.productions:
            raise GrammarError(f"<{nt.name}> has no productions")
        for p in nt.productions:
            for r in p.references():
                if r not in grammar.by_name:
                    raise GrammarError(f"undefined non-terminal <{r}> in <{nt.name}>")

    depth = {n: math.inf for n in names}
    changed = True
    while changed:
        changed = False
        for nt in grammar.nonterminals:
            for p in nt.productions:
                d = 1 + max((depth[r] for r in p.references()), default=0)
                if d < depth[nt.name]:
                    depth[nt.name] = d
                    changed = True
    bad = [n for n in names if depth[n] == math.inf]
    if bad:
        raise GrammarError("unproductive non-terminal(s): " + ", ".join(f"<{n}>" for n in bad))

    graph = {nt.name: {r for p in nt.productions for r in p.references()} for nt in grammar.nonterminals}

    def reaches_self(n: str) -> bool:
        stack, seen = list(graph[n]), set()
        while stack:
            x = stack.pop()
            if x == n:
                return True
            if x not in seen:
                seen.add(x)
                stack.extend(graph[x])
        return False

    out = []
    for nt in grammar.nonterminals:
        prods = tuple(
            Production(p.symbols, 1 + max((depth[r] for r in p.references()), default=0))
            for p in nt.productions
        )
        out.append(NonTerminal(nt.name, prods, depth[nt.name], reaches_self(nt.name)))
    return Grammar(tuple(out), grammar.start)


def format_grammar(grammar: Grammar) -> str:
    lines = []
    for nt in grammar.nonterminals:
        lines.append(f"<{nt.name}> ::= " + " | ".join(str(p) for p in nt.productions))
    return "\n".join(lines) + "\n"


def bundled_grammar_path(name: str) -> Path:
    """Path of a bundled grammar: ``"fm"`` or ``"original"``."""
    path = _BUNDLED / f"{name}.bnf"
    if not path.exists():
        raise FileNotFoundError(f"no bundled grammar named {name!r}")
    return path


def load_grammar(name_or_path: str | Path) -> Grammar:
    """Load a bundled grammar by name or any grammar file by path."""
    p = Path(name_or_path)
    if not p.exists() and (_BUNDLED / f"{name_or_path}.bnf").exists():
        p = _BUNDLED / f"{name_or_path}.bnf"
    return parse_grammar(p.read_text(encoding="utf-8"))
