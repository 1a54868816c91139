"""
Synthetic question-program pairs from the eight templates.

Bindings are sampled by exploring the graph: pick a node, read one of its
literals, hop along entity edges to reach the other nodes a template needs.
Because every value is read off an actual node, the program is satisfiable by
construction; the rare sample that still executes to NULL (say a strict
comparison against the largest value) is redrawn.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .dsl import OpKind, Program, parse_program, render_inline
from .interp import EntSet, eval_filter, exec_program
from .kg import KnowledgeGraph, Literal, node_type
from .templates import (
    AGGREGATES,
    TEMPLATES,
    Attribute,
    Bindings,
    BuildError,
    Condition,
    Lexicon,
    build_program,
    render_question,
)

__all__ = ["SynthPair", "GenerationError", "sample_pair", "sample_bindings", "generate_corpus",
           "write_corpus", "read_corpus"]

log = logging.getLogger(__name__)

MAX_RETRIES = 200
MAX_HOPS = 2


@dataclass(frozen=True)
class SynthPair:
    question: str
    program: Program
    template_id: int
    bindings: Bindings


class GenerationError(RuntimeError):
    def __init__(self, template_id: int, reason: str = "retry budget exhausted"):
        super().__init__(f"template {template_id}: {reason}")
        self.template_id = template_id


class _Explorer:
    """Random exploration helpers bound to one graph and one generator."""

    def __init__(self, kg: KnowledgeGraph, rng: np.random.Generator):
        self.kg = kg
        self.rng = rng
        self.nodes = kg.literal_holders

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def node(self) -> str:
        return self.pick(self.nodes)

    def walk(self, node: str) -> str:
        """Random walk of 0..MAX_HOPS hops that never re-enters a visited type."""
        seen = {node_type(node)}
        for _ in range(int(self.rng.integers(MAX_HOPS + 1))):
            hops = [h for h in self.kg.neighbors_of(node) if node_type(h[2]) not in seen]
            if not hops:
                break
            node = self.pick(hops)[2]
            seen.add(node_type(node))
        return node

    def literal(self, node: str, numeric: bool = False, exclude=()) -> tuple[str, Literal] | None:
        lits = [
            (r, lit)
            for r, lit in self.kg.literals_of(node)
            if r not in exclude and (not numeric or lit.numeric_value is not None)
        ]
        return self.pick(lits) if lits else None

    def condition(self, node: str, exclude=()) -> Condition | None:
        pair = self.literal(node, exclude=exclude)
        if pair is None:
            return None
        rel, lit = pair
        holder = node_type(node)
        if lit.numeric_value is None:
            return Condition(rel, "=", lit.text, holder)
        # threshold from the relation's own values; keep only conditions this node meets
        thresholds = sorted(
            (t.object for t in self.kg.with_relation(rel)
             if t.is_literal and t.object.numeric_value is not None),
            key=lambda x: (x.numeric_value, x.text),
        )
        th = self.pick(thresholds)
        v, t = lit.numeric_value, th.numeric_value
        ok = [op for op, holds in (("=", v == t), (">", v > t), ("<", v < t),
                                   ("<=", v <= t), (">=", v >= t)) if holds]
        op = self.pick(ok)
        return Condition(rel, op, lit.text if op == "=" else th.text, holder)

    def identifying(self, node: str) -> Condition | None:
        """An equality condition that selects exactly ``node``."""
        pairs = [
            (r, lit) for r, lit in self.kg.literals_of(node)
            if eval_filter(OpKind.GEN_ENTSET_EQUAL, r, lit, self.kg) == EntSet(frozenset({node}))
        ]
        if not pairs:
            return None
        r, lit = self.pick(pairs)
        return Condition(r, "=", lit.text, node_type(node))


def sample_bindings(template_id: int, kg: KnowledgeGraph, rng: np.random.Generator) -> Bindings | None:
    """One random draw of bindings for a template, or None if this draw got stuck."""
    t = TEMPLATES[template_id]
    ex = _Explorer(kg, rng)
    if not t.has_entity_type:
        # templates 1-4: one equality condition on a start node, attributes read nearby
        start = ex.node()
        if t.entity_is_instance:
            cond = ex.identifying(start)
        else:
            pair = ex.literal(start)
            cond = pair and Condition(pair[0], "=", pair[1].text, node_type(start))
        if cond is None:
            return None
        attrs = []
        for _ in range(t.n_attributes):
            target = ex.walk(start)
            skip = {cond.relation} if target == start else set()
            skip |= {a.relation for a in attrs}
            pair = ex.literal(target, exclude=skip)
            if pair is None:
                return None
            attrs.append(Attribute(pair[0], node_type(target)))
        entity = node_type(start) if t.entity_is_instance else None
        return Bindings(template_id, tuple(attrs), (cond,), entity)

    anchor = ex.node()
    conds = []
    for _ in range(t.n_conditions):
        source = ex.walk(anchor)
        cond = ex.condition(source, exclude={c.relation for c in conds})
        if cond is None:
            return None
        conds.append(cond)
    attrs = []
    if t.has_aggregate:
        target = ex.walk(anchor)
        pair = ex.literal(target, numeric=True)
        if pair is None:
            return None
        attrs.append(Attribute(pair[0], node_type(target)))
    aggr = ex.pick(sorted(AGGREGATES)) if t.has_aggregate else None
    return Bindings(template_id, tuple(attrs), tuple(conds), node_type(anchor), aggr)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _draw(template_id: int, kg: KnowledgeGraph, rng: np.random.Generator, lexicon: Lexicon) -> SynthPair:
    for _ in range(MAX_RETRIES):
        b = sample_bindings(template_id, kg, rng)
        if b is None:
            continue
        try:
            program = build_program(b, kg)
        except BuildError:
            continue
        if exec_program(program, kg).is_null:
            continue
        return SynthPair(render_question(b, lexicon), program, template_id, b)
    raise GenerationError(template_id)


def sample_pair(template_id: int, kg: KnowledgeGraph, rng_seed, lexicon: Lexicon | None = None) -> SynthPair:
    """Sample one (question, program) pair whose program executes to a non-NULL answer."""
    if template_id not in TEMPLATES:
        raise ValueError(f"template_id must be in 1..8, got {template_id}")
    if len(kg) == 0:
        raise GenerationError(template_id, "empty graph")
    return _draw(template_id, kg, _as_rng(rng_seed), lexicon or Lexicon.from_kg(kg))


def generate_corpus(
    kg: KnowledgeGraph,
    per_type: int,
    seed: int,
    exclude: Iterable[str] = (),
    workers: int = 1,
    templates: Iterable[int] = tuple(TEMPLATES),
) -> list[SynthPair]:
    """``per_type`` draws per template, minus duplicate and excluded questions.

    Each template samples from its own stream seeded by (seed, template_id), so
    the corpus does not depend on ``workers``.
    """
    if per_type < 1:
        raise ValueError("per_type must be >= 1")
    lexicon = Lexicon.from_kg(kg)
    lexicon.patterns()
    templates = list(templates)

    def run(tid: int) -> list[SynthPair]:
        rng = np.random.default_rng([seed, tid])
        return [_draw(tid, kg, rng, lexicon) for _ in range(per_type)]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(run, templates))
    else:
        batches = [run(tid) for tid in templates]

    seen = set(exclude)
    out = []
    for batch in batches:
        for pair in batch:
            if pair.question in seen:
                continue
            seen.add(pair.question)
            out.append(pair)
    counts = Counter(p.template_id for p in out)
    for tid in templates:
        log.info("template %d: kept %d of %d", tid, counts[tid], per_type)
    return out


def write_corpus(pairs: Iterable[SynthPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(f"{p.template_id}\t{p.question}\t{render_inline(p.program)}\n")


def read_corpus(path: str | Path) -> list[tuple[int, str, Program]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            tid, question, program = line.rstrip("\n").split("\t")
            rows.append((int(tid), question, parse_program(program)))
    return rows
