"""
Condition-value recovery.

A generated program often names a condition value that is close to, but not
exactly, a value stored in the graph ("physical restrain status" for
"physical restraints status"). Recovery swaps every such equality literal for
the stored value of the same relation with the highest word-level ROUGE-L F1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dsl import LitArg, OpKind, Program, RelArg, Step, type_check
from .kg import KnowledgeGraph, normalize_text

__all__ = ["lcs_length", "rouge_l", "Replacement", "RecoveryReport", "recover_program"]


def lcs_length(a: list[str], b: list[str]) -> int:
    """Length of the longest common subsequence of two token lists."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """Word-level ROUGE-L F1 (beta = 1) between two whitespace-tokenized strings.

    Two empty strings score 1; an empty string against a non-empty one scores 0.
    """
    c, r = candidate.split(), reference.split()
    if not c and not r:
        return 1.0
    if not c or not r:
        return 0.0
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    precision = lcs / len(c)
    recall = lcs / len(r)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class Replacement:
    step: int
    arg: int
    original: str
    recovered: str
    score: float


@dataclass
class RecoveryReport:
    program_out: Program
    replacements: list[Replacement] = field(default_factory=list)
    # (step, arg, original) for literals that had nothing to be replaced with
    unrecovered: list[tuple[int, int, str]] = field(default_factory=list)

    def rows(self) -> list[tuple[int, int, str, str, str]]:
        return [(r.step, r.arg, r.original, r.recovered, f"{r.score:.6f}") for r in self.replacements]


def best_match(text: str, inventory) -> tuple[str, float] | None:
    """Inventory value with the highest ROUGE-L against ``text``; ties go to the
    lexicographically smallest value. None if nothing shares a word."""
    query = normalize_text(text)
    best = None
    for value in sorted(inventory):
        score = rouge_l(query, normalize_text(value))
        if score > 0 and (best is None or score > best[1]):
            best = (value, score)
    return best


def recover_program(p: Program, kg: KnowledgeGraph) -> RecoveryReport:
    """Replace out-of-inventory equality literals by their closest stored value.

    Literals already present (after trim + case-fold) are left alone, as are
    the thresholds of numeric comparisons.
    """
    type_check(p)
    steps = list(p.steps)
    report = RecoveryReport(p)
    for i, step in enumerate(steps):
        if step.op is not OpKind.GEN_ENTSET_EQUAL:
            continue
        rel, lit = step.args
        if not isinstance(rel, RelArg) or not isinstance(lit, LitArg):  # pragma: no cover
            continue
        present = kg.normalized_inventory.get(rel.path, {})
        if normalize_text(lit.text) in present:
            continue
        match = best_match(lit.text, kg.value_inventory(rel.path))
        if match is None:
            report.unrecovered.append((i, 1, lit.text))
            continue
        value, score = match
        steps[i] = Step(step.register, step.op, (rel, LitArg(value)))
        report.replacements.append(Replacement(i, 1, lit.text, value, score))
    report.program_out = Program(tuple(steps))
    return report
