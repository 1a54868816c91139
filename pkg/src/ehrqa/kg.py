"""
Immutable triple store for EHR knowledge graphs.

Triples are (subject, relation, object) where the object is either an entity
(a slash-prefixed node id, stored as ``str``) or a :class:`Literal`. The graph
keeps lookup indexes by (subject, relation), (relation, object) and relation,
plus a per-relation inventory of literal texts used by value recovery.

The module also ships the small fixture graph used throughout the tests and a
seeded generator for a toy EHR graph (patient -> admission -> diagnosis /
procedure / prescription / lab) that stands in for the access-restricted
MIMIC-derived graph.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Union

import numpy as np

__all__ = [
    "Literal",
    "Triple",
    "KnowledgeGraph",
    "KGParseError",
    "load_kg",
    "read_kg",
    "dumps_kg",
    "write_kg",
    "fixture_kg",
    "node_type",
    "DEFAULT_SCHEMA",
    "generate_toy_ehr_kg",
]

_NUMERIC = re.compile(r"[+-]?([0-9]+(\.[0-9]*)?|\.[0-9]+)([eE][+-]?[0-9]+)?")


def parse_number(text: str) -> Decimal | None:
    """Return the decimal value of ``text`` or None if it is not a plain finite number."""
    s = text.strip()
    if not _NUMERIC.fullmatch(s):
        return None
    try:
        return Decimal(s)
    except InvalidOperation:  # pragma: no cover - regex already guards this
        return None


@dataclass(frozen=True, order=True)
class Literal:
    """A literal value; ``numeric_value`` is set iff the text is a finite decimal."""

    text: str
    numeric_value: Decimal | None = field(default=None, init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "numeric_value", parse_number(self.text))

    def __str__(self):
        return self.text


Object = Union[str, Literal]


def _check_path(path: str, what: str) -> None:
    if not path or not path.startswith("/") or any(c.isspace() for c in path):
        raise ValueError(f"invalid {what} {path!r}: must start with '/' and contain no whitespace")


class Triple(NamedTuple):
    subject: str
    relation: str
    object: Object

    @property
    def is_literal(self) -> bool:
        return isinstance(self.object, Literal)

    def sort_key(self):
        kind = "lit" if self.is_literal else "ent"
        return (self.subject, self.relation, str(self.object), kind)

    def to_line(self) -> str:
        kind = "lit" if self.is_literal else "ent"
        return f"{self.subject}\t{self.relation}\t{self.object}\t{kind}"


def node_type(node: str) -> str:
    """Entity type of a node id: its first path segment (``/patient/1`` -> ``patient``)."""
    parts = node.split("/")
    return parts[1] if len(parts) > 2 else ""


class KnowledgeGraph:
    """Immutable, indexed set of triples.

    Exact-duplicate triples collapse to one. All indexes are derived from
    ``triples`` at construction and never mutated afterwards, so a graph can be
    shared freely between threads.
    """

    def __init__(self, triples: Iterable[Triple] = ()):
        unique = {}
        for t in triples:
            t = Triple(*t)
            _check_path(t.subject, "subject")
            _check_path(t.relation, "relation")
            if not isinstance(t.object, Literal):
                _check_path(t.object, "entity object")
            unique[t] = None
        self._triples = tuple(sorted(unique, key=Triple.sort_key))

        by_sr = defaultdict(list)
        by_ro = defaultdict(list)
        by_r = defaultdict(list)
        inventory = defaultdict(set)
        for t in self._triples:
            by_sr[t.subject, t.relation].append(t.object)
            by_ro[t.relation, t.object].append(t.subject)
            by_r[t.relation].append(t)
            if t.is_literal:
                inventory[t.relation].add(t.object.text)
        self._by_sr = {k: tuple(v) for k, v in by_sr.items()}
        self._by_ro = {k: tuple(v) for k, v in by_ro.items()}
        self._by_r = {k: tuple(v) for k, v in by_r.items()}
        self._inventory = {k: frozenset(v) for k, v in inventory.items()}

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    def __len__(self):
        return len(self._triples)

    def __iter__(self):
        return iter(self._triples)

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._triples == other._triples

    def __hash__(self):
        return hash(self._triples)

    def __repr__(self):
        return f"KnowledgeGraph({len(self._triples)} triples)"

    def objects(self, subject: str, relation: str) -> tuple[Object, ...]:
        return self._by_sr.get((subject, relation), ())

    def subjects(self, relation: str, obj: Object) -> tuple[str, ...]:
        return self._by_ro.get((relation, obj), ())

    def with_relation(self, relation: str) -> tuple[Triple, ...]:
        return self._by_r.get(relation, ())

    def value_inventory(self, relation: str) -> frozenset[str]:
        """Distinct literal texts appearing as objects of ``relation``."""
        return self._inventory.get(relation, frozenset())

    @cached_property
    def relations(self) -> tuple[str, ...]:
        return tuple(sorted(self._by_r))

    @cached_property
    def literal_relations(self) -> tuple[str, ...]:
        return tuple(sorted(self._inventory))

    @cached_property
    def entities(self) -> tuple[str, ...]:
        nodes = {t.subject for t in self._triples}
        nodes.update(t.object for t in self._triples if not t.is_literal)
        return tuple(sorted(nodes))

    @cached_property
    def normalized_inventory(self) -> dict[str, dict[str, tuple[str, ...]]]:
        """relation -> normalized text -> original texts (see ``normalize_text``)."""
        out: dict[str, dict[str, list[str]]] = {}
        for rel, values in self._inventory.items():
            m = defaultdict(list)
            for v in sorted(values):
                m[normalize_text(v)].append(v)
            out[rel] = {k: tuple(v) for k, v in m.items()}
        return out

    # -- schema view ---------------------------------------------------------

    @cached_property
    def type_edges(self) -> frozenset[tuple[str, str, str]]:
        """(subject type, relation, object type) for every entity-valued triple."""
        return frozenset(
            (node_type(t.subject), t.relation, node_type(t.object))
            for t in self._triples
            if not t.is_literal
        )

    @cached_property
    def holder_types(self) -> dict[str, tuple[str, ...]]:
        """literal relation -> entity types whose nodes carry it."""
        out = defaultdict(set)
        for t in self._triples:
            if t.is_literal:
                out[t.relation].add(node_type(t.subject))
        return {k: tuple(sorted(v)) for k, v in out.items()}

    @cached_property
    def nodes_by_type(self) -> dict[str, tuple[str, ...]]:
        out = defaultdict(list)
        for n in self.entities:
            out[node_type(n)].append(n)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def _neighbors(self) -> dict[str, list[tuple[str, str, str]]]:
        adj = defaultdict(list)
        for st, rel, ot in sorted(self.type_edges):
            adj[st].append((rel, "down", ot))
            adj[ot].append((rel, "up", st))
        return adj

    def type_path(self, start: str, goal: str) -> tuple[tuple[str, str], ...] | None:
        """Shortest walk between entity types as (relation, 'down'|'up') hops.

        Ties between equally short walks resolve by sorted edge order, so the
        result is deterministic. Returns None if the types are disconnected.
        """
        if start == goal:
            return ()
        prev = {start: None}
        frontier = [start]
        while frontier:
            nxt = []
            for node in frontier:
                for rel, direction, other in self._neighbors.get(node, ()):
                    if other in prev:
                        continue
                    prev[other] = (node, rel, direction)
                    if other == goal:
                        hops = []
                        cur = goal
                        while prev[cur] is not None:
                            p, r, d = prev[cur]
                            hops.append((r, d))
                            cur = p
                        return tuple(reversed(hops))
                    nxt.append(other)
            frontier = nxt
        return None

    @cached_property
    def _literals(self) -> dict[str, tuple[tuple[str, Literal], ...]]:
        out = defaultdict(list)
        for t in self._triples:
            if t.is_literal:
                out[t.subject].append((t.relation, t.object))
        return {k: tuple(sorted(v)) for k, v in out.items()}

    @property
    def literal_holders(self) -> list[str]:
        """Entities carrying at least one literal, sorted."""
        return sorted(self._literals)

    def literals_of(self, node: str) -> tuple[tuple[str, Literal], ...]:
        """(relation, literal) pairs attached to ``node``, in canonical order."""
        return self._literals.get(node, ())

    def neighbors_of(self, node: str) -> list[tuple[str, str, str]]:
        """(relation, direction, node) hops from ``node`` along entity edges."""
        out = []
        for st, rel, ot in sorted(self.type_edges):
            if st == node_type(node):
                out.extend((rel, "down", o) for o in self.objects(node, rel) if isinstance(o, str))
            if ot == node_type(node):
                out.extend((rel, "up", s) for s in self.subjects(rel, node))
        return out


def normalize_text(text: str) -> str:
    """Normalization used by equality filters: trim surrounding whitespace, case-fold."""
    return text.strip().casefold()


class KGParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def load_kg(source: str) -> KnowledgeGraph:
    """Parse triple-file content (4 tab-separated columns, ``#`` comments)."""
    triples = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        cols = raw.split("\t")
        if len(cols) != 4:
            raise KGParseError(lineno, f"expected 4 tab-separated columns, found {len(cols)}")
        s, r, o, kind = (c.strip() for c in cols)
        if kind == "lit":
            obj = Literal(o)
        elif kind == "ent":
            obj = o
        else:
            raise KGParseError(lineno, f"object kind must be 'ent' or 'lit', found {kind!r}")
        try:
            _check_path(s, "subject")
            _check_path(r, "relation")
            if kind == "ent":
                _check_path(o, "entity object")
        except ValueError as e:
            raise KGParseError(lineno, str(e)) from None
        triples.append(Triple(s, r, obj))
    return KnowledgeGraph(triples)


def read_kg(path: str | Path) -> KnowledgeGraph:
    return load_kg(Path(path).read_text(encoding="utf-8"))


def dumps_kg(kg: KnowledgeGraph) -> str:
    """Canonical serialization: one triple per line, lines sorted lexicographically."""
    lines = sorted(t.to_line() for t in kg.triples)
    return "".join(line + "\n" for line in lines)


def write_kg(kg: KnowledgeGraph, path: str | Path) -> None:
    Path(path).write_text(dumps_kg(kg), encoding="utf-8")


def fixture_kg() -> KnowledgeGraph:
    """The 10-triple fixture graph (two patients, two admissions, two diagnoses)."""
    text = resources.files("ehrqa").joinpath("data/fixture.tsv").read_text(encoding="utf-8")
    return load_kg(text)


# -- toy EHR generator -------------------------------------------------------

DEFAULT_SCHEMA = {
    "subject_id": "/subject_id",
    "gender": "/gender",
    "age": "/age",
    "language": "/language",
    "hadm": "/hadm",
    "hadm_id": "/hadm_id",
    "admission_type": "/admission_type",
    "admission_location": "/admission_location",
    "days_stay": "/days_stay",
    "diagnosis": "/diagnosis",
    "procedure": "/procedure",
    "prescription": "/prescription",
    "lab": "/lab",
    "icd9_code": "/icd9_code",
    "short_title": "/short_title",
    "long_title": "/long_title",
    "drug": "/drug",
    "route": "/route",
    "formulary_drug_cd": "/formulary_drug_cd",
    "label": "/label",
    "value": "/value",
    "flag": "/flag",
}

# (icd9, short title, long title). Several long titles reuse another code's
# short title so that a value can sit under both title relations.
DIAGNOSES = [
    ("486", "pneumonia", "pneumonia organism unspecified"),
    ("4829", "bacterial pneumonia nos", "pneumonia"),
    ("0389", "septicemia nos", "unspecified septicemia"),
    ("99591", "sepsis", "sepsis syndrome"),
    ("78552", "septic shock", "sepsis"),
    ("4019", "hypertension nos", "unspecified essential hypertension"),
    ("42731", "atrial fibrillation", "atrial fibrillation"),
    ("4280", "chf nos", "congestive heart failure unspecified"),
    ("42832", "chr diastolic hrt fail", "chronic diastolic heart failure"),
    ("5849", "acute kidney failure nos", "acute kidney failure unspecified"),
    ("5845", "ac kidny fail tubr necr", "acute kidney failure"),
    ("58581", "acute kidney failure", "chronic kidney disease stage one"),
    ("5859", "chronic kidney dis nos", "chronic kidney disease unspecified"),
    ("25000", "dmii wo cmp nt st uncntr", "diabetes mellitus without complication"),
    ("2851", "ac posthemorrhag anemia", "acute posthemorrhagic anemia"),
    ("2859", "anemia nos", "anemia unspecified"),
    ("51881", "acute respiratry failure", "acute respiratory failure"),
    ("5070", "food vomit pneumonitis", "pneumonitis due to inhalation of food"),
    ("431", "intracerebral hemorrhage", "brain mass intracranial hemorrhage"),
    ("4321", "subdural hemorrhage", "intracerebral hemorrhage"),
    ("V5861", "long term use anticoagul", "long term current use of anticoagulants"),
    ("V1582", "history of tobacco use", "personal history of tobacco use"),
    ("2724", "hyperlipidemia nec nos", "other unspecified hyperlipidemia"),
    ("41401", "crnry athrscl natve vssl", "coronary atherosclerosis of native coronary artery"),
    ("V3000", "single lb in hosp w cs", "single liveborn born in hospital"),
    ("V053", "need prphyl vc vrl hepat", "need for prophylactic vaccination against viral hepatitis"),
    ("7742", "neonatal jaund preterm", "neonatal jaundice associated with preterm delivery"),
    ("V5867", "long term use of insulin", "long term current use of insulin"),
    ("2762", "acidosis", "metabolic acidosis"),
    ("2768", "hypopotassemia", "acidosis"),
    ("99662", "react to vasc prosthesis", "infection due to vascular device"),
    ("V4986", "physical restraints status", "physical restraints status"),
]

PROCEDURES = [
    ("3893", "venous cath nec", "venous catheterization not elsewhere classified"),
    ("9604", "insert endotracheal tube", "insertion of endotracheal tube"),
    ("9671", "cont inv mec ven lt 96 hrs", "continuous invasive mechanical ventilation"),
    ("3995", "hemodialysis", "hemodialysis treatment"),
    ("9915", "parent infus nutrit sub", "parenteral infusion of concentrated nutritional substances"),
    ("9904", "packed cell transfusion", "transfusion of packed cells"),
    ("3961", "extracorporeal circulat", "extracorporeal circulation auxiliary to open heart surgery"),
    ("8856", "coronar arteriogr 2 cath", "coronary arteriography using two catheters"),
    ("9229", "radiotherapeutic proc nec", "other radiotherapeutic procedure"),
    ("4513", "sm bowel endoscopy nec", "other endoscopy of small intestine"),
    ("0066", "ptca", "percutaneous transluminal coronary angioplasty"),
    ("3722", "left heart cardiac cath", "left heart cardiac catheterization"),
]

DRUGS = [
    ("heparin", "sc", "hepa5i"),
    ("insulin", "sc", "insulin"),
    ("furosemide", "iv", "furo40i"),
    ("metoprolol", "po", "meto25"),
    ("potassium chloride", "po", "kcl20p"),
    ("acetaminophen", "po", "acet325"),
    ("vancomycin", "iv", "vanc1f"),
    ("sodium chloride 0.9% flush", "iv", "nacl0.9"),
    ("docusate sodium", "po", "docu100"),
    ("pantoprazole", "iv", "pant40i"),
    ("albuterol", "ih", "albu3h"),
    ("magnesium sulfate", "iv", "mag2pm"),
]

LABS = [
    # label, mean, sd, normal range
    ("glucose", 120.0, 35.0, (70.0, 110.0)),
    ("creatinine", 1.4, 0.8, (0.5, 1.2)),
    ("hemoglobin", 11.0, 2.0, (12.0, 17.0)),
    ("potassium", 4.2, 0.6, (3.5, 5.1)),
    ("sodium", 138.0, 4.0, (135.0, 145.0)),
    ("platelet count", 220.0, 80.0, (150.0, 400.0)),
]

ADMISSION_TYPES = ["emergency", "elective", "urgent", "newborn"]
ADMISSION_LOCATIONS = [
    "emergency room admit",
    "phys referral normal deli",
    "transfer from hosp extram",
    "clinic referral premature",
]
LANGUAGES = ["engl", "span", "russ", "ptun", "cant"]


def generate_toy_ehr_kg(
    seed: int,
    patients: int = 50,
    admissions_per_patient: int = 2,
    schema: dict[str, str] | None = None,
) -> KnowledgeGraph:
    """Seeded toy EHR graph with the layered patient/admission/event schema.

    Every patient gets exactly ``admissions_per_patient`` admissions. Relation
    names come from ``DEFAULT_SCHEMA``; pass ``schema`` to rename any of them
    (e.g. ``{"short_title": "/diagnoses_short_title"}``).
    """
    if patients < 1 or admissions_per_patient < 1:
        raise ValueError("scale counts must be >= 1")
    rel = dict(DEFAULT_SCHEMA)
    if schema:
        rel.update(schema)
    rng = np.random.default_rng(seed)
    triples: list[Triple] = []

    def lit(s, r, text):
        triples.append(Triple(s, rel[r], Literal(str(text))))

    def ent(s, r, o):
        triples.append(Triple(s, rel[r], o))

    counters = {"adm": 0, "diag": 0, "proc": 0, "presc": 0, "lab": 0}

    def new_node(kind):
        counters[kind] += 1
        return f"/{kind}/{counters[kind]}"

    for i in range(1, patients + 1):
        p = f"/patient/{i}"
        lit(p, "subject_id", 10000 + i)
        lit(p, "gender", rng.choice(["f", "m"]))
        lit(p, "age", int(rng.integers(18, 91)))
        lit(p, "language", LANGUAGES[int(rng.choice(len(LANGUAGES), p=[0.6, 0.15, 0.1, 0.1, 0.05]))])
        for _ in range(admissions_per_patient):
            a = new_node("adm")
            ent(p, "hadm", a)
            lit(a, "hadm_id", 100000 + counters["adm"])
            k = int(rng.choice(len(ADMISSION_TYPES), p=[0.55, 0.25, 0.12, 0.08]))
            lit(a, "admission_type", ADMISSION_TYPES[k])
            lit(a, "admission_location", ADMISSION_LOCATIONS[int(rng.integers(len(ADMISSION_LOCATIONS)))])
            lit(a, "days_stay", int(rng.integers(1, 31)))
            for j in rng.choice(len(DIAGNOSES), size=int(rng.integers(1, 5)), replace=False):
                code, short, long = DIAGNOSES[int(j)]
                d = new_node("diag")
                ent(a, "diagnosis", d)
                lit(d, "icd9_code", code)
                lit(d, "short_title", short)
                lit(d, "long_title", long)
            for j in rng.choice(len(PROCEDURES), size=int(rng.integers(0, 3)), replace=False):
                code, short, long = PROCEDURES[int(j)]
                pr = new_node("proc")
                ent(a, "procedure", pr)
                lit(pr, "icd9_code", code)
                lit(pr, "short_title", short)
                lit(pr, "long_title", long)
            for j in rng.choice(len(DRUGS), size=int(rng.integers(1, 4)), replace=False):
                drug, route, code = DRUGS[int(j)]
                rx = new_node("presc")
                ent(a, "prescription", rx)
                lit(rx, "drug", drug)
                lit(rx, "route", route)
                lit(rx, "formulary_drug_cd", code)
            for j in rng.choice(len(LABS), size=int(rng.integers(1, 4)), replace=False):
                label, mean, sd, (lo, hi) = LABS[int(j)]
                lb = new_node("lab")
                ent(a, "lab", lb)
                value = round(max(0.1, float(rng.normal(mean, sd))), 1)
                lit(lb, "label", label)
                lit(lb, "value", f"{value:.1f}")
                lit(lb, "flag", "normal" if lo <= value <= hi else "abnormal")
    return KnowledgeGraph(triples)
