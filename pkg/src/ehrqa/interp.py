"""
Evaluator for programs over a :class:`~ehrqa.kg.KnowledgeGraph`.

Values are small frozen dataclasses tagged with their :class:`ValueType`.
``LitSet`` is a bag (duplicates kept) stored in canonical sorted order, so two
bags with the same members compare equal regardless of traversal order.

Filters use existential semantics: a subject qualifies if *some* value it has
for the relation satisfies the predicate. Equality compares trimmed,
case-folded text; the numeric comparisons skip non-numeric values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from typing import ClassVar, Iterable, Union

from .dsl import (
    FILTER_OPS,
    LitArg,
    OpKind,
    Program,
    Register,
    RelArg,
    ValueType,
    type_check,
)
from .kg import KnowledgeGraph, Literal, normalize_text

__all__ = [
    "EntSet",
    "LitSet",
    "LitSets",
    "Int",
    "Float",
    "Rel",
    "Lit",
    "Value",
    "ExecutionError",
    "ExecutionTrace",
    "exec_program",
    "eval_traversal",
    "eval_filter",
    "eval_aggregate",
    "serialize_value",
    "answers_equal",
]


@dataclass(frozen=True)
class EntSet:
    items: frozenset[str]
    type: ClassVar[ValueType] = ValueType.ENTSET

    @classmethod
    def of(cls, items: Iterable[str]) -> "EntSet":
        return cls(frozenset(items))

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class LitSet:
    items: tuple[Literal, ...]
    type: ClassVar[ValueType] = ValueType.LITSET

    @classmethod
    def of(cls, items: Iterable[Literal | str]) -> "LitSet":
        lits = (x if isinstance(x, Literal) else Literal(x) for x in items)
        return cls(tuple(sorted(lits)))

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class LitSets:
    first: LitSet
    second: LitSet
    type: ClassVar[ValueType] = ValueType.LITSETS


@dataclass(frozen=True)
class Int:
    value: int
    type: ClassVar[ValueType] = ValueType.INT


@dataclass(frozen=True)
class Float:
    value: float
    type: ClassVar[ValueType] = ValueType.FLOAT


@dataclass(frozen=True)
class Rel:
    path: str
    type: ClassVar[ValueType] = ValueType.REL


@dataclass(frozen=True)
class Lit:
    literal: Literal
    type: ClassVar[ValueType] = ValueType.LIT


Value = Union[EntSet, LitSet, LitSets, Int, Float, Rel, Lit]


class ExecutionError(RuntimeError):
    """Runtime failure of a well-typed program (non-numeric threshold, empty aggregate)."""


@dataclass(frozen=True)
class ExecutionTrace:
    registers: tuple[Value, ...]
    status: str = "ok"
    error: str | None = None
    failed_step: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def answer(self) -> Value | None:
        return self.registers[-1] if self.ok else None

    @property
    def is_null(self) -> bool:
        """True for failed runs and empty answers (the engine's NULL result)."""
        ans = self.answer
        if ans is None:
            return True
        if isinstance(ans, (EntSet, LitSet)):
            return len(ans) == 0
        if isinstance(ans, LitSets):
            return len(ans.first) == 0 and len(ans.second) == 0
        return False


# -- operation semantics -----------------------------------------------------


def eval_traversal(kind: OpKind, args: tuple[Value, ...], kg: KnowledgeGraph) -> Value:
    if kind is OpKind.GEN_ENTSET_DOWN:
        ents, rel = args
        out = set()
        for s in ents.items:
            out.update(o for o in kg.objects(s, rel.path) if isinstance(o, str))
        return EntSet(frozenset(out))
    if kind is OpKind.GEN_ENTSET_UP:
        rel, ents = args
        out = set()
        for o in ents.items:
            out.update(kg.subjects(rel.path, o))
        return EntSet(frozenset(out))
    if kind is OpKind.GEN_LITSET:
        ents, rel = args
        return LitSet.of(
            o for s in ents.items for o in kg.objects(s, rel.path) if isinstance(o, Literal)
        )
    raise ValueError(f"{kind} is not a traversal")


def _compare(kind: OpKind, value: Decimal, threshold: Decimal) -> bool:
    if kind is OpKind.GEN_ENTSET_ATLEAST:
        return value >= threshold
    if kind is OpKind.GEN_ENTSET_ATMOST:
        return value <= threshold
    if kind is OpKind.GEN_ENTSET_LESS:
        return value < threshold
    if kind is OpKind.GEN_ENTSET_MORE:
        return value > threshold
    raise ValueError(f"{kind} is not a numeric filter")


def eval_filter(kind: OpKind, rel: str, lit: Literal, kg: KnowledgeGraph) -> EntSet:
    if kind is OpKind.GEN_ENTSET_EQUAL:
        texts = kg.normalized_inventory.get(rel, {}).get(normalize_text(lit.text), ())
        out = set()
        for text in texts:
            out.update(kg.subjects(rel, Literal(text)))
        return EntSet(frozenset(out))
    threshold = lit.numeric_value
    if threshold is None:
        raise ExecutionError(f"non-numeric threshold {lit.text!r}")
    return EntSet(
        frozenset(
            t.subject
            for t in kg.with_relation(rel)
            if t.is_literal
            and t.object.numeric_value is not None
            and _compare(kind, t.object.numeric_value, threshold)
        )
    )


def eval_aggregate(kind: OpKind, args: tuple[Value, ...]) -> Value:
    if kind is OpKind.COUNT_ENTSET:
        return Int(len(args[0].items))
    if kind is OpKind.INTERSECT_ENTSETS:
        return EntSet(args[0].items & args[1].items)
    if kind is OpKind.CONCAT_LITSETS:
        return LitSets(args[0], args[1])
    if kind in (OpKind.MAXIMUM_LITSET, OpKind.MINIMUM_LITSET, OpKind.AVERAGE_LITSET):
        nums = [x.numeric_value for x in args[0].items if x.numeric_value is not None]
        if not nums:
            raise ExecutionError("empty numeric aggregate")
        if kind is OpKind.MAXIMUM_LITSET:
            return Float(float(max(nums)))
        if kind is OpKind.MINIMUM_LITSET:
            return Float(float(min(nums)))
        return Float(float(sum(nums) / len(nums)))
    raise ValueError(f"{kind} is not an aggregate")


def _arg_value(arg, registers: list[Value]) -> Value:
    if isinstance(arg, Register):
        return registers[arg.index]
    if isinstance(arg, RelArg):
        return Rel(arg.path)
    if isinstance(arg, LitArg):
        return Lit(Literal(arg.text))
    raise TypeError(f"unknown argument {arg!r}")


def exec_program(p: Program, kg: KnowledgeGraph) -> ExecutionTrace:
    """Run ``p`` step by step; runtime failures end the trace with status ``error``."""
    type_check(p)
    registers: list[Value] = []
    for step in p.steps:
        args = tuple(_arg_value(a, registers) for a in step.args)
        try:
            if step.op in FILTER_OPS:
                value = eval_filter(step.op, args[0].path, args[1].literal, kg)
            elif step.op in (OpKind.GEN_ENTSET_DOWN, OpKind.GEN_ENTSET_UP, OpKind.GEN_LITSET):
                value = eval_traversal(step.op, args, kg)
            else:
                value = eval_aggregate(step.op, args)
        except ExecutionError as e:
            return ExecutionTrace(tuple(registers), "error", str(e), step.register)
        registers.append(value)
    return ExecutionTrace(tuple(registers))


# -- answers -------------------------------------------------------------------


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        return str(x)
    return repr(float(f"{x:.6g}"))


def serialize_value(v: Value) -> str:
    """Canonical text of a value: sorted lines for sets/bags, 6 significant digits for floats."""
    if isinstance(v, EntSet):
        return "\n".join(sorted(v.items))
    if isinstance(v, LitSet):
        return "\n".join(sorted(x.text for x in v.items))
    if isinstance(v, LitSets):
        return serialize_value(v.first) + "\n\n" + serialize_value(v.second)
    if isinstance(v, Int):
        return str(v.value)
    if isinstance(v, Float):
        return _format_float(v.value)
    if isinstance(v, Rel):
        return v.path
    if isinstance(v, Lit):
        return v.literal.text
    raise TypeError(f"not a value: {v!r}")


def _canonical_text(s: str) -> str:
    """Sort the lines of each blank-line-separated block, as serialize_value does."""
    return "\n\n".join("\n".join(sorted(block.split("\n"))) for block in s.split("\n\n"))


def answers_equal(a: Value | str | None, b: Value | str | None, rel_tol: float = 1e-6) -> bool:
    """Canonical answer comparison.

    Either side may be a value or its serialized text. Sets compare as sets,
    bags as sorted multisets and single numbers within ``rel_tol`` relative
    tolerance. ``None`` (a failed run) never matches.
    """
    if a is None or b is None:
        return False
    if not isinstance(a, str) and not isinstance(b, str) and a.type is not b.type:
        return False
    sa = _canonical_text(a) if isinstance(a, str) else serialize_value(a)
    sb = _canonical_text(b) if isinstance(b, str) else serialize_value(b)
    if sa == sb:
        return True
    try:
        fa, fb = float(sa), float(sb)
    except ValueError:
        return False
    if not (math.isfinite(fa) and math.isfinite(fb)):
        return False
    return math.isclose(fa, fb, rel_tol=rel_tol, abs_tol=0.0)
