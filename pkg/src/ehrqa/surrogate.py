"""
A deterministic stand-in for a neural decoder ensemble.

Each question is split into template slots, every slot is linked to the
relations and stored values it could mean, and each linking combination
becomes one candidate program. An ensemble member is nothing more than a set
of relation preferences: for a word that names several relations ("title")
the member holds a Dirichlet draw over those relations. A member's
probability of a candidate is the normalized product of its preferences and
the linking weights of the candidate's values.

Because candidates are whole programs, the member's next-token distribution
after a prefix is the mixture over candidates consistent with that prefix,
and the probability of a full token sequence is the candidate probability
itself. Questions with a single linking give one-hot distributions; words
naming two relations give a split right at the relation token.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import zlib
from difflib import SequenceMatcher
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dsl import Program, parse_program, render_inline, tokenize_program
from .kg import KnowledgeGraph, Literal, node_type, normalize_text
from .recovery import rouge_l
from .templates import (
    Attribute,
    Bindings,
    BuildError,
    Condition,
    Lexicon,
    TemplateMatch,
    build_program,
    parse_question,
)

__all__ = [
    "EOS",
    "REST",
    "DecoderMember",
    "make_ensemble",
    "Candidate",
    "BeamHypothesis",
    "TokenRecord",
    "DecodeResult",
    "DecodeError",
    "link_candidates",
    "decode",
    "write_token_log",
    "read_token_log",
    "write_beams",
    "read_beams",
]

EOS = "<eos>"
REST = "<rest>"
TOP_K = 32

# linking weights of a condition value that is not stored verbatim
FUZZY_MIN = 0.5       # minimum ROUGE-L for a fuzzy link
FUZZY_SCALE = 0.3     # weight = FUZZY_SCALE * similarity**FUZZY_SHARPNESS
FUZZY_SHARPNESS = 8   # similarity is difflib's character-level ratio
COPY_WEIGHT = 0.02    # value copied through unchanged
MAX_OPTIONS = 8       # per slot, strongest first


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderMember:
    """One ensemble member: relation preferences drawn from a seeded Dirichlet.

    ``concentration=None`` gives flat preferences (an even split between the
    relations a word can name).
    """

    member_id: int
    seed: int = 0
    concentration: float | None = 10.0

    def preferences(self, relations: Sequence[str]) -> dict[str, float]:
        rels = sorted(relations)
        if len(rels) == 1:
            return {rels[0]: 1.0}
        if self.concentration is None:
            return {r: 1.0 / len(rels) for r in rels}
        key = zlib.crc32("\x1f".join(rels).encode("utf-8"))
        rng = np.random.default_rng([self.seed, self.member_id, key])
        draw = rng.dirichlet(np.full(len(rels), float(self.concentration)))
        return dict(zip(rels, draw.tolist()))

    def preference_order(self, relations: Sequence[str]) -> list[str]:
        """Relations from most to least preferred (ties by name)."""
        prefs = self.preferences(relations)
        return sorted(prefs, key=lambda r: (-prefs[r], r))


def make_ensemble(m: int, seed: int = 0, concentration: float | None = 10.0,
                  identical: bool = False) -> list[DecoderMember]:
    """``m`` members; ``identical=True`` repeats member 0 (a degenerate ensemble)."""
    if m < 1:
        raise ValueError("ensemble needs at least one member")
    return [DecoderMember(0 if identical else i, seed, concentration) for i in range(m)]


# -- linking -------------------------------------------------------------------


@dataclass(frozen=True)
class _Option:
    relation: str
    holder: str
    value: str | None  # None for attributes
    weight: float


@dataclass(frozen=True)
class Candidate:
    """One linking of the question: a program plus the relations it chose."""

    program: Program
    relations: tuple[tuple[str, ...], ...]  # per slot, the relation word's alternatives
    chosen: tuple[str, ...]                 # per slot, the relation picked
    weight: float                           # product of value-linking weights

    @property
    def text(self) -> str:
        return render_inline(self.program)


def _value_options(rel: str, op: str, value: str, kg: KnowledgeGraph) -> list[_Option]:
    """Ways to read a condition value under one relation, across its holder types."""
    holders = kg.holder_types.get(rel, ())
    if op != "=":
        return [_Option(rel, h, value, 1.0) for h in holders]
    stored = kg.normalized_inventory.get(rel, {})
    exact = stored.get(normalize_text(value))
    if exact:
        return [_Option(rel, h, exact[0], 1.0) for h in holders if _holds(kg, rel, exact[0], h)]
    query = normalize_text(value)
    fuzzy = []
    for norm, texts in stored.items():
        if rouge_l(query, norm) < FUZZY_MIN:
            continue
        weight = FUZZY_SCALE * SequenceMatcher(None, query, norm).ratio() ** FUZZY_SHARPNESS
        fuzzy.extend(_Option(rel, h, texts[0], weight) for h in holders if _holds(kg, rel, texts[0], h))
    # the verbatim copy goes with the holder of the best fuzzy link (or the first holder)
    fuzzy = _cap(fuzzy)
    copy_holder = fuzzy[0].holder if fuzzy else (holders[0] if holders else None)
    copy = [_Option(rel, copy_holder, value, COPY_WEIGHT)] if copy_holder else []
    return copy + fuzzy


def _holds(kg: KnowledgeGraph, rel: str, text: str, holder: str) -> bool:
    return any(node_type(s) == holder for s in kg.subjects(rel, Literal(text)))


def _nearest(kg: KnowledgeGraph, anchor: str, rel: str, holder: str) -> bool:
    """Is ``holder`` the closest type to ``anchor`` among those carrying ``rel``?"""
    def dist(t):
        path = kg.type_path(anchor, t)
        return math.inf if path is None else len(path)
    return dist(holder) <= min(dist(t) for t in kg.holder_types.get(rel, (holder,)))


def _cap(options: list[_Option]) -> list[_Option]:
    options.sort(key=lambda o: (-o.weight, o.relation, o.holder, o.value or ""))
    return options[:MAX_OPTIONS]


def link_candidates(match: TemplateMatch, kg: KnowledgeGraph, lexicon: Lexicon) -> list[Candidate]:
    """Every consistent linking of a parsed question, merged by program text."""
    slots: list[list[_Option]] = []
    words: list[tuple[str, ...]] = []
    for w in match.attribute_words:
        rels = lexicon.relations_for(w)
        slots.append(_cap([_Option(r, h, None, 1.0) for r in rels for h in kg.holder_types.get(r, ())]))
        words.append(rels)
    for c in match.conditions:
        rels = lexicon.relations_for(c.word)
        opts = []
        for r in rels:
            opts.extend(_value_options(r, c.op, c.value, kg))
        if c.op == "=" and not any(o.weight > COPY_WEIGHT for o in opts):
            raise DecodeError(f"unlinkable value {c.value!r}")
        slots.append(_cap(opts))
        words.append(rels)

    n_attr = len(match.attribute_words)
    merged: dict[str, Candidate] = {}
    for combo in itertools.product(*slots):
        attrs = tuple(Attribute(o.relation, o.holder) for o in combo[:n_attr])
        conds = tuple(
            Condition(o.relation, c.op, o.value, o.holder)
            for o, c in zip(combo[n_attr:], match.conditions)
        )
        entity = match.entity
        anchor = entity or conds[0].holder
        # a relation carried by several types is read off the one nearest the anchor;
        # with an entity type given, so are numeric conditions
        if not all(_nearest(kg, anchor, a.relation, a.holder) for a in attrs):
            continue
        if entity and not all(c.op == "=" or _nearest(kg, anchor, c.relation, c.holder) for c in conds):
            continue
        try:
            b = Bindings(match.template_id, attrs, conds, entity, match.aggregate)
            program = build_program(b, kg)
        except (BuildError, ValueError):
            continue
        weight = math.prod(o.weight for o in combo)
        cand = Candidate(program, tuple(words), tuple(o.relation for o in combo), weight)
        prev = merged.get(cand.text)
        # two linkings printing the same program: keep the stronger one
        if prev is None or prev.weight < weight:
            merged[cand.text] = cand
    if not merged:
        raise DecodeError("no program fits the question")
    return [merged[k] for k in sorted(merged)]


def _member_probs(cands: list[Candidate], member: DecoderMember) -> np.ndarray:
    w = np.empty(len(cands))
    for i, c in enumerate(cands):
        p = c.weight
        for rels, rel in zip(c.relations, c.chosen):
            p *= member.preferences(rels)[rel]
        w[i] = p
    return w / w.sum()


# -- decoding ----------------------------------------------------------------


@dataclass(frozen=True)
class BeamHypothesis:
    program: Program
    logprob: float                  # mean over members of log P_m(program)
    rank: int
    member_logprobs: tuple[float, ...] = ()
    length: int = 1                 # tokens, including the end marker

    @property
    def text(self) -> str:
        return render_inline(self.program)


@dataclass(frozen=True)
class TokenRecord:
    position: int
    token: str
    dists: tuple[tuple[tuple[str, float], ...], ...]  # per member, (token, prob) over a shared vocabulary
    context_hash: str = ""

    def matrix(self) -> np.ndarray:
        """Members x vocabulary probability matrix."""
        return np.array([[p for _, p in d] for d in self.dists], dtype=float)

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.dists[0])


@dataclass
class DecodeResult:
    beams: list[BeamHypothesis]
    tokens: list[TokenRecord]
    candidates: list[Candidate] = field(default_factory=list)

    @property
    def top(self) -> BeamHypothesis:
        return self.beams[0]


def context_hash(prefix: Sequence[str]) -> str:
    return hashlib.sha1("\x1f".join(prefix).encode("utf-8")).hexdigest()[:16]


def _greedy_records(seqs: list[list[str]], q: np.ndarray, top_k: int) -> list[TokenRecord]:
    """Walk the argmax of the member-averaged mixture and log each step.

    ``q`` is members x candidates. At each position the member distribution is
    the mass of the consistent candidates, grouped by their next token.
    """
    alive = np.arange(len(seqs))
    prefix: list[str] = []
    records = []
    while True:
        i = len(prefix)
        nxt = [seqs[c][i] for c in alive]
        vocab = sorted(set(nxt))
        index = {t: j for j, t in enumerate(vocab)}
        cols = np.array([index[t] for t in nxt])
        mass = np.zeros((q.shape[0], len(vocab)))
        for j in range(len(vocab)):
            mass[:, j] = q[:, alive[cols == j]].sum(axis=1)
        dist = mass / mass.sum(axis=1, keepdims=True)
        avg = dist.mean(axis=0)
        order = sorted(range(len(vocab)), key=lambda j: (-avg[j], vocab[j]))
        token = vocab[order[0]]
        keep, rest = order[:top_k], order[top_k:]
        dists = tuple(
            tuple((vocab[j], float(row[j])) for j in keep) + ((REST, float(row[rest].sum()) if rest else 0.0),)
            for row in dist
        )
        records.append(TokenRecord(i, token, dists, context_hash(prefix)))
        if token == EOS:
            return records
        prefix.append(token)
        alive = alive[cols == index[token]]


def decode(
    question: str,
    kg: KnowledgeGraph,
    ensemble: Sequence[DecoderMember],
    beam_width: int = 5,
    lexicon: Lexicon | None = None,
    top_k: int = TOP_K,
) -> DecodeResult:
    """Beams and the token log of the greedy program for one question."""
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    if not ensemble:
        raise ValueError("empty ensemble")
    lexicon = lexicon or Lexicon.from_kg(kg)
    match = parse_question(question, lexicon)
    if match is None:
        raise DecodeError("unparseable question")
    cands = link_candidates(match, kg, lexicon)
    q = np.vstack([_member_probs(cands, m) for m in ensemble])
    seqs = [tokenize_program(c.program) + [EOS] for c in cands]

    with np.errstate(divide="ignore"):
        logq = np.log(q)
    mean_log = logq.mean(axis=0)
    order = sorted(range(len(cands)), key=lambda i: (-mean_log[i], cands[i].text))[:beam_width]
    beams = [
        BeamHypothesis(cands[i].program, float(mean_log[i]), r + 1,
                       tuple(float(x) for x in logq[:, i]), len(seqs[i]))
        for r, i in enumerate(order)
    ]
    return DecodeResult(beams, _greedy_records(seqs, q, top_k), cands)


# -- log files -----------------------------------------------------------------


def write_token_log(records_by_question: Iterable[tuple[str, Sequence[TokenRecord]]], path: str | Path) -> None:
    """JSON lines, one per token: question_id, position, token, context_hash, dists."""
    with open(path, "w", encoding="utf-8") as f:
        for qid, records in records_by_question:
            for r in records:
                f.write(json.dumps({
                    "question_id": qid,
                    "position": r.position,
                    "token": r.token,
                    "context_hash": r.context_hash,
                    "dists": [[[t, p] for t, p in d] for d in r.dists],
                }, ensure_ascii=False) + "\n")


def read_token_log(path: str | Path) -> dict[str, list[TokenRecord]]:
    out: dict[str, list[TokenRecord]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rec = TokenRecord(
                    int(d["position"]), d["token"],
                    tuple(tuple((t, float(p)) for t, p in dist) for dist in d["dists"]),
                    d.get("context_hash", ""),
                )
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad token record ({e})") from None
            out.setdefault(str(d.get("question_id", "")), []).append(rec)
    return out


def write_beams(beams_by_question: Iterable[tuple[str, Sequence[BeamHypothesis]]], path: str | Path) -> None:
    """JSON lines, one per beam: question_id, rank, logprob, program, member_logprobs, length."""
    with open(path, "w", encoding="utf-8") as f:
        for qid, beams in beams_by_question:
            for b in beams:
                f.write(json.dumps({
                    "question_id": qid,
                    "rank": b.rank,
                    "logprob": b.logprob,
                    "program": b.text,
                    "member_logprobs": list(b.member_logprobs),
                    "length": b.length,
                }, ensure_ascii=False) + "\n")


def read_beams(path: str | Path) -> dict[str, list[BeamHypothesis]]:
    out: dict[str, list[BeamHypothesis]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                program = parse_program(d["program"])
                beam = BeamHypothesis(
                    program, float(d["logprob"]), int(d["rank"]),
                    tuple(float(x) for x in d.get("member_logprobs", ())),
                    int(d.get("length") or len(tokenize_program(program)) + 1),
                )
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad beam record ({e})") from None
            out.setdefault(str(d.get("question_id", "")), []).append(beam)
    for beams in out.values():
        beams.sort(key=lambda b: b.rank)
    return out
