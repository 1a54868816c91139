"""
The eight question templates, their program skeletons, and the surface lexicon.

A question is described by :class:`Bindings` (which relations, conditions,
entity type and aggregate fill the template) and turned into a program by
:func:`build_program`. Walks between entity types follow the graph's type
schema, so the same bindings give the same program on any graph with the same
schema.

The :class:`Lexicon` maps surface words to relations and entity types. A
relation's own word is its path without the slash and with underscores as
spaces (``/short_title`` -> "short title"); group words such as "title" name
several relations at once and are how questions leave a relation unstated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

from .dsl import LitArg, OpKind, Program, Register, RelArg
from .kg import KnowledgeGraph

__all__ = [
    "CONDITIONS",
    "AGGREGATES",
    "QuestionTemplate",
    "TEMPLATES",
    "Condition",
    "Attribute",
    "Bindings",
    "BuildError",
    "build_program",
    "Lexicon",
    "TemplateMatch",
    "parse_question",
    "render_question",
]

# condition symbol -> (surface phrase, filter op)
CONDITIONS: dict[str, tuple[str, OpKind]] = {
    "=": ("equal to", OpKind.GEN_ENTSET_EQUAL),
    ">": ("greater than", OpKind.GEN_ENTSET_MORE),
    "<": ("less than", OpKind.GEN_ENTSET_LESS),
    "<=": ("less than or equal to", OpKind.GEN_ENTSET_ATMOST),
    ">=": ("greater than or equal to", OpKind.GEN_ENTSET_ATLEAST),
}
_PHRASE_TO_COND = {phrase: sym for sym, (phrase, _) in CONDITIONS.items()}

AGGREGATES: dict[str, OpKind] = {
    "minimum": OpKind.MINIMUM_LITSET,
    "maximum": OpKind.MAXIMUM_LITSET,
    "average": OpKind.AVERAGE_LITSET,
}


@dataclass(frozen=True)
class QuestionTemplate:
    template_id: int
    pattern: str
    skeleton: tuple[str, ...]
    n_attributes: int
    n_conditions: int
    entity_is_instance: bool = False
    has_entity_type: bool = False
    has_aggregate: bool = False

    @property
    def placeholders(self) -> list[str]:
        return re.findall(r"\{(\w+)\}", self.pattern)


TEMPLATES: dict[int, QuestionTemplate] = {
    t.template_id: t
    for t in [
        QuestionTemplate(
            1,
            "what is {RELATION} of {ENTITY}?",
            ("gen_entset_equal(ENTITY)", "walk", "gen_litset(RELATION)"),
            1, 1, entity_is_instance=True,
        ),
        QuestionTemplate(
            2,
            "what is {RELATION1} and {RELATION2} of {ENTITY}?",
            ("gen_entset_equal(ENTITY)", "walk", "gen_litset(RELATION1)", "walk",
             "gen_litset(RELATION2)", "concat_litsets"),
            2, 1, entity_is_instance=True,
        ),
        QuestionTemplate(
            3,
            "what is {RELATION1} of {RELATION2} {VALUE}?",
            ("gen_entset_equal(RELATION2, VALUE)", "walk", "gen_litset(RELATION1)"),
            1, 1,
        ),
        QuestionTemplate(
            4,
            "what is {RELATION1} and {RELATION2} of {RELATION3} {VALUE}?",
            ("gen_entset_equal(RELATION3, VALUE)", "walk", "gen_litset(RELATION1)", "walk",
             "gen_litset(RELATION2)", "concat_litsets"),
            2, 1,
        ),
        QuestionTemplate(
            5,
            "what is the number of {ENTITY} whose {RELATION} {CONDITION} {LITERAL}?",
            ("filter(RELATION, CONDITION, LITERAL)", "walk(ENTITY)", "count_entset"),
            0, 1, has_entity_type=True,
        ),
        QuestionTemplate(
            6,
            "what is the number of {ENTITY} whose {RELATION1} {CONDITION1} {LITERAL1} "
            "and {RELATION2} {CONDITION2} {LITERAL2}?",
            ("filter(RELATION1, CONDITION1, LITERAL1)", "walk(ENTITY)",
             "filter(RELATION2, CONDITION2, LITERAL2)", "walk(ENTITY)",
             "intersect_entsets", "count_entset"),
            0, 2, has_entity_type=True,
        ),
        QuestionTemplate(
            7,
            "what is {AGGR} {RELATION1} of {ENTITY} whose {RELATION2} {CONDITION} {LITERAL}?",
            ("filter(RELATION2, CONDITION, LITERAL)", "walk(ENTITY)", "walk",
             "gen_litset(RELATION1)", "AGGR"),
            1, 1, has_entity_type=True, has_aggregate=True,
        ),
        QuestionTemplate(
            8,
            "what is {AGGR} {RELATION1} of {ENTITY} whose {RELATION2} {CONDITION1} {LITERAL1} "
            "and {RELATION3} {CONDITION2} {LITERAL2}?",
            ("filter(RELATION2, CONDITION1, LITERAL1)", "walk(ENTITY)",
             "filter(RELATION3, CONDITION2, LITERAL2)", "walk(ENTITY)",
             "intersect_entsets", "walk", "gen_litset(RELATION1)", "AGGR"),
            1, 2, has_entity_type=True, has_aggregate=True,
        ),
    ]
}


@dataclass(frozen=True)
class Condition:
    relation: str
    op: str
    value: str
    holder: str  # entity type whose nodes carry the relation


@dataclass(frozen=True)
class Attribute:
    relation: str
    holder: str


@dataclass(frozen=True)
class Bindings:
    template_id: int
    attributes: tuple[Attribute, ...] = ()
    conditions: tuple[Condition, ...] = ()
    entity: str | None = None
    aggregate: str | None = None

    def __post_init__(self):
        t = TEMPLATES[self.template_id]
        if len(self.attributes) != t.n_attributes or len(self.conditions) != t.n_conditions:
            raise ValueError(f"template {self.template_id} needs {t.n_attributes} attribute(s) "
                             f"and {t.n_conditions} condition(s)")
        if (t.entity_is_instance or t.has_entity_type) and self.entity is None:
            raise ValueError(f"template {self.template_id} needs an entity type")
        if t.has_aggregate and self.aggregate not in AGGREGATES:
            raise ValueError(f"template {self.template_id} needs an aggregate")
        if t.entity_is_instance and self.conditions[0].op != "=":
            raise ValueError("an entity instance is identified by an equality condition")


class BuildError(ValueError):
    pass


class _Builder:
    def __init__(self, kg: KnowledgeGraph):
        self.kg = kg
        self.steps: list[tuple[OpKind, tuple]] = []

    def add(self, op: OpKind, *args) -> int:
        self.steps.append((op, args))
        return len(self.steps) - 1

    def walk(self, reg: int, start: str, goal: str) -> int:
        path = self.kg.type_path(start, goal)
        if path is None:
            raise BuildError(f"no walk from {start!r} to {goal!r}")
        for rel, direction in path:
            if direction == "down":
                reg = self.add(OpKind.GEN_ENTSET_DOWN, Register(reg), RelArg(rel))
            else:
                reg = self.add(OpKind.GEN_ENTSET_UP, RelArg(rel), Register(reg))
        return reg


def build_program(b: Bindings, kg: KnowledgeGraph) -> Program:
    """Canonical program for a filled template."""
    t = TEMPLATES[b.template_id]
    bld = _Builder(kg)
    anchor_type = b.entity if b.entity is not None else b.conditions[0].holder
    anchor = None
    for c in b.conditions:
        reg = bld.add(CONDITIONS[c.op][1], RelArg(c.relation), LitArg(c.value))
        reg = bld.walk(reg, c.holder, anchor_type)
        anchor = reg if anchor is None else bld.add(
            OpKind.INTERSECT_ENTSETS, Register(anchor), Register(reg)
        )
    if t.has_entity_type and not t.has_aggregate:
        bld.add(OpKind.COUNT_ENTSET, Register(anchor))
    else:
        lits = []
        for a in b.attributes:
            reg = bld.walk(anchor, anchor_type, a.holder)
            lits.append(bld.add(OpKind.GEN_LITSET, Register(reg), RelArg(a.relation)))
        if len(lits) == 2:
            bld.add(OpKind.CONCAT_LITSETS, Register(lits[0]), Register(lits[1]))
        if t.has_aggregate:
            bld.add(AGGREGATES[b.aggregate], Register(lits[0]))
    return Program.of(bld.steps)


# -- surface -------------------------------------------------------------------

DEFAULT_GROUPS: dict[str, tuple[str, ...]] = {
    "title": ("/short_title", "/long_title"),
    "admission category": ("/admission_type", "/admission_location"),
    "medication": ("/drug", "/formulary_drug_cd"),
}

DEFAULT_TYPE_NAMES: dict[str, tuple[str, str]] = {
    "patient": ("patient", "patients"),
    "adm": ("admission", "admissions"),
    "diag": ("diagnosis", "diagnoses"),
    "proc": ("procedure", "procedures"),
    "presc": ("prescription", "prescriptions"),
    "lab": ("lab test", "lab tests"),
}


def relation_word(relation: str) -> str:
    return relation.strip("/").replace("_", " ")


@dataclass
class Lexicon:
    """Surface vocabulary of a graph: relation words, group words and type nouns."""

    relation_words: dict[str, tuple[str, ...]]
    singular: dict[str, str]
    plural: dict[str, str]
    groups: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def from_kg(
        cls,
        kg: KnowledgeGraph,
        groups: Mapping[str, tuple[str, ...]] = DEFAULT_GROUPS,
        type_names: Mapping[str, tuple[str, str]] = DEFAULT_TYPE_NAMES,
    ) -> "Lexicon":
        words: dict[str, set[str]] = {}
        for rel in kg.literal_relations:
            words.setdefault(relation_word(rel), set()).add(rel)
        present_groups = {}
        for word, rels in groups.items():
            rels = tuple(r for r in rels if r in kg.holder_types)
            if len(rels) >= 2:
                words.setdefault(word, set()).update(rels)
                present_groups[word] = rels
        singular, plural = {}, {}
        for t in kg.nodes_by_type:
            s, p = type_names.get(t, (t, t + "s"))
            singular[s] = t
            plural[p] = t
        clash = (set(singular) | set(plural)) & set(words)
        if clash:
            raise ValueError(f"words used both for types and relations: {sorted(clash)}")
        return cls({w: tuple(sorted(r)) for w, r in words.items()}, singular, plural, present_groups)

    def word_for(self, relation: str) -> str:
        return relation_word(relation)

    def singular_of(self, type_: str) -> str:
        return next(w for w, t in self.singular.items() if t == type_)

    def plural_of(self, type_: str) -> str:
        return next(w for w, t in self.plural.items() if t == type_)

    def relations_for(self, word: str) -> tuple[str, ...]:
        return self.relation_words.get(word, ())

    def is_explicit(self, word: str) -> bool:
        return len(self.relations_for(word)) == 1

    def _alternation(self, words) -> str:
        return "|".join(re.escape(w) for w in sorted(words, key=lambda w: (-len(w), w)))

    def patterns(self) -> list[tuple[int, re.Pattern]]:
        cached = getattr(self, "_patterns", None)
        if cached is not None:
            return cached
        rel = self._alternation(self.relation_words)
        ts = self._alternation(self.singular)
        tp = self._alternation(self.plural)
        cond = self._alternation(_PHRASE_TO_COND)
        aggr = self._alternation(AGGREGATES)

        def c(i):
            return rf"(?P<c{i}rel>{rel}) (?P<c{i}op>{cond}) (?P<c{i}val>.+?)"

        raw = {
            8: rf"what is (?P<aggr>{aggr}) (?P<a1>{rel}) of (?P<etype>{tp}) whose {c(1)} and {c(2)}\?",
            7: rf"what is (?P<aggr>{aggr}) (?P<a1>{rel}) of (?P<etype>{tp}) whose {c(1)}\?",
            6: rf"what is the number of (?P<etype>{tp}) whose {c(1)} and {c(2)}\?",
            5: rf"what is the number of (?P<etype>{tp}) whose {c(1)}\?",
            2: rf"what is (?P<a1>{rel}) and (?P<a2>{rel}) of (?P<etype>{ts}) (?P<c1rel>{rel}) (?P<c1val>.+?)\?",
            4: rf"what is (?P<a1>{rel}) and (?P<a2>{rel}) of (?P<c1rel>{rel}) (?P<c1val>.+?)\?",
            1: rf"what is (?P<a1>{rel}) of (?P<etype>{ts}) (?P<c1rel>{rel}) (?P<c1val>.+?)\?",
            3: rf"what is (?P<a1>{rel}) of (?P<c1rel>{rel}) (?P<c1val>.+?)\?",
        }
        self._patterns = [(k, re.compile(v)) for k, v in raw.items()]
        return self._patterns


@dataclass(frozen=True)
class SlotCondition:
    word: str
    op: str
    value: str


@dataclass(frozen=True)
class TemplateMatch:
    """A question split into its template slots (surface words, not yet linked)."""

    template_id: int
    attribute_words: tuple[str, ...]
    conditions: tuple[SlotCondition, ...]
    entity: str | None
    aggregate: str | None


def parse_question(question: str, lexicon: Lexicon) -> TemplateMatch | None:
    q = " ".join(question.strip().split())
    for tid, pat in lexicon.patterns():
        m = pat.fullmatch(q)
        if m is None:
            continue
        g = m.groupdict()
        attrs = tuple(g[k] for k in ("a1", "a2") if g.get(k))
        conds = []
        for i in (1, 2):
            if g.get(f"c{i}rel"):
                op = _PHRASE_TO_COND[g[f"c{i}op"]] if g.get(f"c{i}op") else "="
                conds.append(SlotCondition(g[f"c{i}rel"], op, g[f"c{i}val"]))
        entity = None
        if g.get("etype"):
            entity = lexicon.singular.get(g["etype"]) or lexicon.plural.get(g["etype"])
        return TemplateMatch(tid, attrs, tuple(conds), entity, g.get("aggr"))
    return None


def render_question(
    b: Bindings,
    lexicon: Lexicon,
    attribute_words: tuple[str, ...] | None = None,
    condition_words: tuple[str, ...] | None = None,
    condition_values: tuple[str, ...] | None = None,
) -> str:
    """Surface question for filled bindings.

    By default every relation is named by its own word and values are copied
    verbatim; the optional overrides substitute group words or altered values.
    """
    t = TEMPLATES[b.template_id]
    aw = attribute_words or tuple(lexicon.word_for(a.relation) for a in b.attributes)
    cw = condition_words or tuple(lexicon.word_for(c.relation) for c in b.conditions)
    cv = condition_values or tuple(c.value for c in b.conditions)
    slots: dict[str, str] = {}
    if b.aggregate:
        slots["AGGR"] = b.aggregate
    if t.entity_is_instance:
        slots["ENTITY"] = f"{lexicon.singular_of(b.entity)} {cw[0]} {cv[0]}"
        slots.update({"RELATION": aw[0], "RELATION1": aw[0]})
        if len(aw) > 1:
            slots["RELATION2"] = aw[1]
    elif t.has_entity_type:
        slots["ENTITY"] = lexicon.plural_of(b.entity)
        offset = len(aw)
        if aw:
            slots["RELATION1"] = aw[0]
        for i, c in enumerate(b.conditions):
            k = i + 1
            slots[f"RELATION{offset + k}"] = cw[i]
            slots[f"CONDITION{k}"] = CONDITIONS[c.op][0]
            slots[f"LITERAL{k}"] = cv[i]
        if len(b.conditions) == 1:
            slots["RELATION"] = cw[0]
            slots["CONDITION"] = slots["CONDITION1"]
            slots["LITERAL"] = slots["LITERAL1"]
    else:
        for i, w in enumerate(aw):
            slots[f"RELATION{i + 1}"] = w
        slots[f"RELATION{len(aw) + 1}"] = cw[0]
        slots["VALUE"] = cv[0]
    return t.pattern.format(**slots)
