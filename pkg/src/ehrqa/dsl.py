"""
Program language: 14 operations over 7 value types.

Programs are written one step per line in register form::

    r0 = gen_entset_equal("/short_title", "sepsis")
    r1 = gen_entset_up("/diagnosis", r0)
    r2 = count_entset(r1)

Every step assigns the next register ``rN`` (N = its position), arguments are
earlier registers or double-quoted strings, and the program's answer is the
last register. Steps may also be separated by ``;`` and ``#`` starts a comment.
Whether a string argument is a relation or a literal is fixed by the
operation's signature.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from typing import Iterable, Union

__all__ = [
    "ValueType",
    "OpKind",
    "SIGNATURES",
    "Register",
    "RelArg",
    "LitArg",
    "Step",
    "Program",
    "ParseError",
    "TypeCheckError",
    "parse_program",
    "render",
    "render_inline",
    "type_check",
    "tokenize_program",
    "detokenize",
]


class ValueType(enum.Enum):
    ENTSET = "EntSet"
    REL = "Rel"
    LIT = "Lit"
    LITSET = "LitSet"
    LITSETS = "LitSets"
    INT = "Int"
    FLOAT = "Float"

    def __str__(self):
        return self.value


class OpKind(str, enum.Enum):
    GEN_ENTSET_DOWN = "gen_entset_down"
    GEN_ENTSET_UP = "gen_entset_up"
    GEN_LITSET = "gen_litset"
    GEN_ENTSET_EQUAL = "gen_entset_equal"
    GEN_ENTSET_ATLEAST = "gen_entset_atleast"
    GEN_ENTSET_ATMOST = "gen_entset_atmost"
    GEN_ENTSET_LESS = "gen_entset_less"
    GEN_ENTSET_MORE = "gen_entset_more"
    COUNT_ENTSET = "count_entset"
    INTERSECT_ENTSETS = "intersect_entsets"
    MAXIMUM_LITSET = "maximum_litset"
    MINIMUM_LITSET = "minimum_litset"
    AVERAGE_LITSET = "average_litset"
    CONCAT_LITSETS = "concat_litsets"

    def __str__(self):
        return self.value

    @property
    def params(self) -> tuple[ValueType, ...]:
        return SIGNATURES[self][0]

    @property
    def returns(self) -> ValueType:
        return SIGNATURES[self][1]


_E, _R, _L, _LS = ValueType.ENTSET, ValueType.REL, ValueType.LIT, ValueType.LITSET

SIGNATURES: dict[OpKind, tuple[tuple[ValueType, ...], ValueType]] = {
    OpKind.GEN_ENTSET_DOWN: ((_E, _R), _E),
    OpKind.GEN_ENTSET_UP: ((_R, _E), _E),
    OpKind.GEN_LITSET: ((_E, _R), _LS),
    OpKind.GEN_ENTSET_EQUAL: ((_R, _L), _E),
    OpKind.GEN_ENTSET_ATLEAST: ((_R, _L), _E),
    OpKind.GEN_ENTSET_ATMOST: ((_R, _L), _E),
    OpKind.GEN_ENTSET_LESS: ((_R, _L), _E),
    OpKind.GEN_ENTSET_MORE: ((_R, _L), _E),
    OpKind.COUNT_ENTSET: ((_E,), ValueType.INT),
    OpKind.INTERSECT_ENTSETS: ((_E, _E), _E),
    OpKind.MAXIMUM_LITSET: ((_LS,), ValueType.FLOAT),
    OpKind.MINIMUM_LITSET: ((_LS,), ValueType.FLOAT),
    OpKind.AVERAGE_LITSET: ((_LS,), ValueType.FLOAT),
    OpKind.CONCAT_LITSETS: ((_LS, _LS), ValueType.LITSETS),
}

FILTER_OPS = frozenset(
    {
        OpKind.GEN_ENTSET_EQUAL,
        OpKind.GEN_ENTSET_ATLEAST,
        OpKind.GEN_ENTSET_ATMOST,
        OpKind.GEN_ENTSET_LESS,
        OpKind.GEN_ENTSET_MORE,
    }
)
NUMERIC_FILTER_OPS = FILTER_OPS - {OpKind.GEN_ENTSET_EQUAL}


@dataclass(frozen=True)
class Register:
    index: int

    def __str__(self):
        return f"r{self.index}"


@dataclass(frozen=True)
class RelArg:
    path: str

    def __str__(self):
        return _quote(self.path)


@dataclass(frozen=True)
class LitArg:
    text: str

    def __str__(self):
        return _quote(self.text)


Arg = Union[Register, RelArg, LitArg]


@dataclass(frozen=True)
class Step:
    register: int
    op: OpKind
    args: tuple[Arg, ...]

    def __str__(self):
        return f"r{self.register} = {self.op.value}({', '.join(str(a) for a in self.args)})"


@dataclass(frozen=True)
class Program:
    steps: tuple[Step, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("a program needs at least one step")
        for i, step in enumerate(self.steps):
            if step.register != i:
                raise ValueError(f"step {i} assigns r{step.register}")
            for a in step.args:
                if isinstance(a, Register) and not 0 <= a.index < i:
                    raise ValueError(f"step {i} reads undefined register r{a.index}")

    @classmethod
    def of(cls, steps: Iterable[tuple[str | OpKind, Iterable[Arg]]]) -> "Program":
        """Build a program from (op, args) pairs, numbering registers in order."""
        return cls(tuple(Step(i, OpKind(op), tuple(args)) for i, (op, args) in enumerate(steps)))

    def __str__(self):
        return render(self)

    def __len__(self):
        return len(self.steps)


def _quote(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def render(p: Program) -> str:
    """Canonical text: one step per line, no comments, no trailing whitespace."""
    return "\n".join(str(s) for s in p.steps)


def render_inline(p: Program) -> str:
    """Single-line form with steps joined by ``" ; "`` (used in corpus files)."""
    return " ; ".join(str(s) for s in p.steps)


# -- parsing -----------------------------------------------------------------


class ParseError(ValueError):
    """Syntax or scoping error located at a 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class TypeCheckError(TypeError):
    def __init__(self, step: int, position: int, expected: ValueType, found: ValueType):
        super().__init__(
            f"step {step} (r{step}), argument {position}: expected {expected}, found {found}"
        )
        self.step = step
        self.position = position
        self.expected = expected
        self.found = found


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<comment>\#[^\n]*)
  | (?P<sep>[\n;])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[=(),])
  | (?P<quote>")
    """,
    re.VERBOSE,
)
_REGISTER = re.compile(r"r(0|[1-9][0-9]*)")
_DECODER = json.JSONDecoder(strict=False)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int
    value: str | None = None


def _lex(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        col = pos - line_start + 1
        if text[pos] == '"':
            end = pos + 1
            while end < n and text[end] not in '"\n':
                if text[end] == "\\":
                    if end + 1 < n and text[end + 1] == "\n":
                        break
                    end += 2
                else:
                    end += 1
            if end >= n or text[end] != '"':
                raise ParseError("unterminated string", line, col)
            raw = text[pos : end + 1]
            try:
                value, consumed = _DECODER.raw_decode(raw)
            except ValueError:
                raise ParseError("invalid escape in string", line, col) from None
            if consumed != len(raw) or not isinstance(value, str):  # pragma: no cover
                raise ParseError("invalid string", line, col)
            toks.append(_Tok("string", raw, line, col, value))
            pos = end + 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, col))
        if kind == "sep" and m.group() == "\n":
            line += 1
            line_start = m.end()
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self, kind: str, text: str | None = None, what: str | None = None) -> _Tok:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            expected = what or (repr(text) if text else kind)
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise ParseError(f"expected {expected}, found {found}", tok.line, tok.col)
        self.i += 1
        return tok

    def program(self) -> Program:
        steps = []
        while True:
            while self.peek().kind == "sep":
                self.i += 1
            if self.peek().kind == "eof":
                break
            steps.append(self.step(len(steps)))
            tok = self.peek()
            if tok.kind not in ("sep", "eof"):
                raise ParseError(f"expected end of step, found {tok.text!r}", tok.line, tok.col)
        if not steps:
            tok = self.peek()
            raise ParseError("empty program", tok.line, tok.col)
        return Program(tuple(steps))

    def step(self, index: int) -> Step:
        reg = self.take("ident", what="register")
        if reg.text != f"r{index}":
            raise ParseError(f"step {index} must assign r{index}, found {reg.text!r}", reg.line, reg.col)
        self.take("punct", "=")
        name = self.take("ident", what="operation name")
        try:
            op = OpKind(name.text)
        except ValueError:
            raise ParseError(f"unknown operation {name.text!r}", name.line, name.col) from None
        open_paren = self.take("punct", "(")
        raw_args: list[_Tok] = []
        if not (self.peek().kind == "punct" and self.peek().text == ")"):
            raw_args.append(self.arg())
            while self.peek().kind == "punct" and self.peek().text == ",":
                self.i += 1
                raw_args.append(self.arg())
        self.take("punct", ")")
        params = op.params
        if len(raw_args) != len(params):
            raise ParseError(
                f"{op.value} takes {len(params)} argument(s), got {len(raw_args)}",
                open_paren.line,
                open_paren.col,
            )
        args: list[Arg] = []
        for tok, param in zip(raw_args, params):
            if tok.kind == "ident":
                k = int(tok.text[1:])
                if k >= index:
                    raise ParseError(f"register {tok.text} is not defined before step {index}", tok.line, tok.col)
                args.append(Register(k))
            elif param is ValueType.REL:
                if not tok.value.startswith("/"):
                    raise ParseError(f"relation {tok.value!r} must start with '/'", tok.line, tok.col)
                args.append(RelArg(tok.value))
            else:
                args.append(LitArg(tok.value))
        return Step(index, op, tuple(args))

    def arg(self) -> _Tok:
        tok = self.peek()
        if tok.kind == "string":
            self.i += 1
            return tok
        if tok.kind == "ident" and _REGISTER.fullmatch(tok.text):
            self.i += 1
            return tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ParseError(f"expected register or string, found {found}", tok.line, tok.col)


def parse_program(text: str | bytes) -> Program:
    """Parse program text; raises :class:`ParseError` on any malformed input."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as e:
            before = bytes(text[: e.start]).decode("utf-8", "replace")
            line = before.count("\n") + 1
            col = len(before) - (before.rfind("\n") + 1) + 1
            raise ParseError("invalid UTF-8", line, col) from None
    return _Parser(_lex(text)).program()


# -- typing --------------------------------------------------------------------


def arg_type(arg: Arg, typing: list[ValueType]) -> ValueType:
    if isinstance(arg, Register):
        return typing[arg.index]
    if isinstance(arg, RelArg):
        return ValueType.REL
    return ValueType.LIT


def type_check(p: Program) -> list[ValueType]:
    """Assign every register its operation's return type; raise on any mismatch."""
    typing: list[ValueType] = []
    for step in p.steps:
        for pos, (arg, expected) in enumerate(zip(step.args, step.op.params)):
            found = arg_type(arg, typing)
            if found is not expected:
                raise TypeCheckError(step.register, pos, expected, found)
        typing.append(step.op.returns)
    return typing


# -- tokens ------------------------------------------------------------------

_PIECES = re.compile(r"\s+|/|[^\s/]+")
STEP_BREAK = "\n"


def _string_tokens(s: str) -> list[str]:
    body = _quote(s)[1:-1]
    return ['"', *_PIECES.findall(body), '"']


def tokenize_program(p: Program) -> list[str]:
    """Flat token sequence of a program.

    Operation names, registers and punctuation are one token each; quoted
    strings become a quote token, their sub-word pieces (split at whitespace
    runs and ``/``, delimiters kept) and a closing quote token. Steps are
    separated by a newline token.
    """
    out: list[str] = []
    for step in p.steps:
        if out:
            out.append(STEP_BREAK)
        out += [f"r{step.register}", "=", step.op.value, "("]
        for k, arg in enumerate(step.args):
            if k:
                out.append(",")
            if isinstance(arg, Register):
                out.append(str(arg))
            else:
                out += _string_tokens(arg.path if isinstance(arg, RelArg) else arg.text)
        out.append(")")
    return out


def detokenize(tokens: Iterable[str]) -> Program:
    """Inverse of :func:`tokenize_program`."""
    parts: list[str] = []
    in_string = False
    for tok in tokens:
        if tok == '"':
            in_string = not in_string
            parts.append(tok)
        elif in_string:
            parts.append(tok)
        elif tok == "=":
            parts.append(" = ")
        elif tok == ",":
            parts.append(", ")
        else:
            parts.append(tok)
    return parse_program("".join(parts))
