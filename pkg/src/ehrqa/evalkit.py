"""
Evaluation harness: execution accuracy, an ambiguity benchmark built from
the synthetic generator, the oracle top-k recommendation curve and an
end-to-end runner that decodes, scores and evaluates every case.

Benchmark strata
----------------
none
    Generated questions whose every slot links to exactly one relation/value.
mild
    (a) A condition relation replaced by a group word ("title") whose value
    is stored under only one of the group's relations, or (b) a one-character
    typo in a multi-word condition value whose closest stored value is the
    intended one.
high
    (a) A group-word condition whose value is stored under two of the group's
    relations with different answers, or (b) a group word used for the asked
    attribute. The gold relation is picked at random, so either reading may
    be the intended one.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .dsl import Program, parse_program, render_inline
from .interp import answers_equal, exec_program, serialize_value
from .kg import KnowledgeGraph, Literal, node_type, normalize_text
from .recovery import best_match, recover_program, rouge_l
from .surrogate import (
    BeamHypothesis,
    DecodeError,
    DecoderMember,
    decode,
    link_candidates,
    make_ensemble,
)
from .synthgen import GenerationError, SynthPair, sample_pair
from .templates import TEMPLATES, Bindings, BuildError, Lexicon, build_program, parse_question, render_question
from .uncertainty import (
    SCORE_KINDS,
    AmbiguityLabel,
    MetricError,
    ProgramUncertainty,
    binary_labels,
    detection_metrics,
    program_uncertainty,
    score_row,
)

__all__ = [
    "EvalCase",
    "BenchmarkError",
    "RecommendationCurve",
    "execution_accuracy",
    "is_correct",
    "build_ambiguity_benchmark",
    "oracle_topk_curve",
    "BenchmarkResult",
    "run_benchmark",
    "write_benchmark",
    "read_benchmark",
    "write_curve",
]

log = logging.getLogger(__name__)

DEFAULT_STRATA = {"none": 400, "mild": 150, "high": 50}
ATTEMPTS_PER_CASE = 200


@dataclass(frozen=True)
class EvalCase:
    question_id: str
    question: str
    gold: Program
    gold_answer: str
    label: AmbiguityLabel
    kind: str = ""  # how the case was made: plain, group-value, typo, dual-value, group-attribute


class BenchmarkError(RuntimeError):
    def __init__(self, stratum: str, reason: str = "not enough feasible questions"):
        super().__init__(f"stratum {stratum!r}: {reason}")
        self.stratum = stratum


# -- accuracy ------------------------------------------------------------------


def is_correct(program: Program | None, case: EvalCase, kg: KnowledgeGraph) -> bool:
    """Does ``program`` execute (non-NULL) to the gold answer?"""
    if program is None:
        return False
    trace = exec_program(program, kg)
    if trace.is_null:
        return False
    return answers_equal(trace.answer, case.gold_answer)


def execution_accuracy(predictions: Sequence[Program | None], cases: Sequence[EvalCase],
                       kg: KnowledgeGraph) -> float:
    if len(predictions) != len(cases):
        raise ValueError("predictions and cases differ in length")
    if not cases:
        return 0.0
    return sum(is_correct(p, c, kg) for p, c in zip(predictions, cases)) / len(cases)


# -- benchmark construction --------------------------------------------------------


def _split(n: int, strata: dict[str, float]) -> dict[str, int]:
    """Integer stratum sizes summing to ``n`` (largest remainder)."""
    total = sum(strata.values())
    raw = {k: n * v / total for k, v in strata.items()}
    out = {k: int(math.floor(x)) for k, x in raw.items()}
    for k in sorted(raw, key=lambda k: (-(raw[k] - out[k]), k))[: n - sum(out.values())]:
        out[k] += 1
    return out


class _Maker:
    def __init__(self, kg: KnowledgeGraph, lexicon: Lexicon, rng: np.random.Generator):
        self.kg = kg
        self.lex = lexicon
        self.rng = rng
        self.group_of = {r: w for w, rels in lexicon.groups.items() for r in rels}
        # normalized values stored under two or more relations of the same group
        self.shared: dict[str, list[str]] = {}
        for w, rels in lexicon.groups.items():
            seen: dict[str, set] = {}
            for r in rels:
                for norm in kg.normalized_inventory.get(r, {}):
                    seen.setdefault(norm, set()).add(r)
            self.shared[w] = sorted(v for v, rs in seen.items() if len(rs) >= 2)

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def pair(self, templates=tuple(TEMPLATES)) -> SynthPair | None:
        tid = int(self.pick(list(templates)))
        try:
            return sample_pair(tid, self.kg, self.rng, self.lex)
        except GenerationError:
            return None

    def candidates(self, question: str) -> list[str]:
        m = parse_question(question, self.lex)
        if m is None:
            return []
        try:
            return [c.text for c in link_candidates(m, self.kg, self.lex)]
        except DecodeError:
            return []

    def unique(self, b: Bindings, program: Program) -> bool:
        """Does the fully explicit question for ``b`` link to ``program`` alone?"""
        return self.candidates(render_question(b, self.lex)) == [render_inline(program)]

    def answer(self, program: Program):
        t = exec_program(program, self.kg)
        return None if t.is_null else t.answer

    # each maker returns (question, gold program, kind) or None

    def plain(self):
        p = self.pair()
        if p is None:
            return None
        if self.candidates(p.question) != [render_inline(p.program)]:
            return None
        return p.question, p.program, "plain"

    def group_value(self):
        p = self.pair(templates=(1, 2, 3, 4, 5, 6, 7, 8))
        if p is None:
            return None
        b = p.bindings
        if not self.unique(b, p.program):
            return None
        idx = [i for i, c in enumerate(b.conditions) if c.op == "=" and c.relation in self.group_of]
        if not idx:
            return None
        i = self.pick(idx)
        c = b.conditions[i]
        word = self.group_of[c.relation]
        holders = [r for r in self.lex.groups[word]
                   if normalize_text(c.value) in self.kg.normalized_inventory.get(r, {})]
        if holders != [c.relation]:
            return None
        words = [self.lex.word_for(x.relation) for x in b.conditions]
        words[i] = word
        q = render_question(b, self.lex, condition_words=tuple(words))
        if render_inline(p.program) not in self.candidates(q):
            return None
        return q, p.program, "group-value"

    def typo(self):
        p = self.pair()
        if p is None:
            return None
        b = p.bindings
        if not self.unique(b, p.program):
            return None
        idx = [i for i, c in enumerate(b.conditions)
               if c.op == "=" and len(c.value.split()) >= 3]
        if not idx:
            return None
        i = self.pick(idx)
        c = b.conditions[i]
        words = c.value.split()
        spots = [k for k, w in enumerate(words) if len(w) >= 4 and w.isalpha()]
        if not spots:
            return None
        k = self.pick(spots)
        w = words[k]
        pos = int(self.rng.integers(len(w)))
        if self.rng.random() < 0.5:
            new = w[:pos] + w[pos + 1:]
        else:
            letter = self.pick([ch for ch in "abcdefghijklmnopqrstuvwxyz" if ch != w[pos].lower()])
            new = w[:pos] + letter + w[pos + 1:]
        typo = " ".join(words[:k] + [new] + words[k + 1:])
        inventory = self.kg.value_inventory(c.relation)
        if normalize_text(typo) in self.kg.normalized_inventory.get(c.relation, {}):
            return None
        match = best_match(typo, inventory)
        if match is None or normalize_text(match[0]) != normalize_text(c.value):
            return None
        runner_up = [v for v in inventory if normalize_text(v) != normalize_text(c.value)
                     and rouge_l(normalize_text(typo), normalize_text(v)) >= match[1]]
        if runner_up:
            return None
        values = [x.value for x in b.conditions]
        values[i] = typo
        q = render_question(b, self.lex, condition_values=tuple(values))
        if render_inline(p.program) not in self.candidates(q):
            return None
        return q, p.program, "typo"

    def _rebuild(self, b: Bindings) -> Program | None:
        try:
            return build_program(b, self.kg)
        except BuildError:
            return None

    def dual_value(self):
        p = self.pair(templates=(3, 4, 5, 6, 7, 8))
        if p is None:
            return None
        b = p.bindings
        idx = [i for i, c in enumerate(b.conditions)
               if c.op == "=" and self.shared.get(self.group_of.get(c.relation, ""))]
        if not idx:
            return None
        i = self.pick(idx)
        c = b.conditions[i]
        word = self.group_of[c.relation]
        value = self.pick(self.shared[word])
        readings = []
        for r in self.lex.groups[word]:
            texts = self.kg.normalized_inventory.get(r, {}).get(value)
            if not texts:
                continue
            holders = sorted({node_type(s) for s in self.kg.subjects(r, Literal(texts[0]))})
            holder = c.holder if c.holder in holders else holders[0]
            conds = list(b.conditions)
            conds[i] = replace(c, relation=r, value=texts[0], holder=holder)
            nb = replace(b, conditions=tuple(conds))
            prog = self._rebuild(nb)
            if prog is None:
                return None
            readings.append((nb, prog, self.answer(prog)))
        if len(readings) < 2:
            return None
        gb, gold, ans = self.pick(readings)
        if ans is None or any(answers_equal(ans, a) for _, pr, a in readings if pr != gold and a is not None):
            return None
        if not self.unique(gb, gold):
            return None
        words = [self.lex.word_for(x.relation) for x in gb.conditions]
        words[i] = word
        q = render_question(gb, self.lex, condition_words=tuple(words),
                            condition_values=tuple(x.value for x in gb.conditions))
        if render_inline(gold) not in self.candidates(q):
            return None
        return q, gold, "dual-value"

    def group_attribute(self):
        p = self.pair(templates=(1, 2, 3, 4))
        if p is None:
            return None
        b = p.bindings
        idx = [i for i, a in enumerate(b.attributes) if a.relation in self.group_of]
        if not idx:
            return None
        i = self.pick(idx)
        a = b.attributes[i]
        word = self.group_of[a.relation]
        readings = []
        for r in self.lex.groups[word]:
            if a.holder not in self.kg.holder_types.get(r, ()):
                continue
            attrs = list(b.attributes)
            attrs[i] = replace(a, relation=r)
            if len({x.relation for x in attrs}) < len(attrs):
                continue
            nb = replace(b, attributes=tuple(attrs))
            prog = self._rebuild(nb)
            if prog is None:
                continue
            readings.append((nb, prog, self.answer(prog)))
        if len(readings) < 2:
            return None
        gb, gold, ans = self.pick(readings)
        if ans is None or any(answers_equal(ans, x) for _, pr, x in readings if pr != gold and x is not None):
            return None
        if not self.unique(gb, gold):
            return None
        words = [self.lex.word_for(x.relation) for x in gb.attributes]
        words[i] = word
        q = render_question(gb, self.lex, attribute_words=tuple(words))
        if render_inline(gold) not in self.candidates(q):
            return None
        return q, gold, "group-attribute"


def build_ambiguity_benchmark(
    kg: KnowledgeGraph,
    n: int = 600,
    seed: int = 0,
    strata: dict[str, float] | None = None,
    mild_typo_share: float = 0.5,
    high_attribute_share: float = 0.5,
    lexicon: Lexicon | None = None,
) -> list[EvalCase]:
    """``n`` labelled cases split over the none/mild/high strata.

    ``strata`` gives relative stratum sizes (default 400:150:50). Within mild,
    ``mild_typo_share`` of the cases are typos; within high,
    ``high_attribute_share`` use a group word for the attribute.
    """
    lexicon = lexicon or Lexicon.from_kg(kg)
    if not lexicon.groups:
        raise BenchmarkError("mild", "graph has no relation groups")
    sizes = _split(n, strata or DEFAULT_STRATA)
    rng = np.random.default_rng(seed)
    maker = _Maker(kg, lexicon, rng)

    plan: list[tuple[str, Callable, int]] = []
    n_typo = int(round(sizes.get("mild", 0) * mild_typo_share))
    n_attr = int(round(sizes.get("high", 0) * high_attribute_share))
    plan.append(("none", maker.plain, sizes.get("none", 0)))
    plan.append(("mild", maker.group_value, sizes.get("mild", 0) - n_typo))
    plan.append(("mild", maker.typo, n_typo))
    plan.append(("high", maker.dual_value, sizes.get("high", 0) - n_attr))
    plan.append(("high", maker.group_attribute, n_attr))

    seen: set[str] = set()
    made: list[tuple[str, str, Program, str]] = []
    for label, make, count in plan:
        got = 0
        for _ in range(count * ATTEMPTS_PER_CASE):
            if got == count:
                break
            out = make()
            if out is None or out[0] in seen:
                continue
            q, prog, kind = out
            trace = exec_program(prog, kg)
            if trace.is_null:
                continue
            seen.add(q)
            made.append((label, q, prog, kind))
            got += 1
        if got < count:
            raise BenchmarkError(label, f"only {got} of {count} {make.__name__} cases found")

    order = rng.permutation(len(made))
    cases = []
    for k, j in enumerate(order):
        label, q, prog, kind = made[j]
        answer = serialize_value(exec_program(prog, kg).answer)
        cases.append(EvalCase(f"q{k:04d}", q, prog, answer, AmbiguityLabel(label), kind))
    return cases


def write_benchmark(cases: Iterable[EvalCase], path: str | Path) -> None:
    """JSON lines: question_id, label, question, program, answer (and the case kind)."""
    with open(path, "w", encoding="utf-8") as f:
        for c in cases:
            f.write(json.dumps({
                "question_id": c.question_id,
                "label": c.label.value,
                "question": c.question,
                "program": render_inline(c.gold),
                "answer": c.gold_answer,
                "kind": c.kind,
            }, ensure_ascii=False) + "\n")


def read_benchmark(path: str | Path) -> list[EvalCase]:
    cases = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                cases.append(EvalCase(d["question_id"], d["question"], parse_program(d["program"]),
                                      d["answer"], AmbiguityLabel(d["label"]), d.get("kind", "")))
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad case ({e})") from None
    return cases


# -- recommendation curve ----------------------------------------------------------


@dataclass(frozen=True)
class RecommendationCurve:
    accuracy: dict[int, float]

    def __getitem__(self, k: int) -> float:
        return self.accuracy[k]

    def is_monotone(self) -> bool:
        ks = sorted(self.accuracy)
        return all(self.accuracy[a] <= self.accuracy[b] for a, b in zip(ks, ks[1:]))

    def lines(self) -> list[str]:
        return [f"{k},{self.accuracy[k]:.6f}" for k in sorted(self.accuracy)]


def _maybe_recover(program: Program, kg: KnowledgeGraph, recover: bool) -> Program:
    return recover_program(program, kg).program_out if recover else program


def oracle_topk_curve(
    beam_lists: Sequence[Sequence[BeamHypothesis | Program]],
    cases: Sequence[EvalCase],
    kg: KnowledgeGraph,
    B: int = 5,
    recover: bool = True,
) -> RecommendationCurve:
    """Accuracy when an oracle user picks the right program among the top k beams."""
    if len(beam_lists) != len(cases):
        raise ValueError("beam lists and cases differ in length")
    first_hit = []
    for beams, case in zip(beam_lists, cases):
        hit = math.inf
        for j, b in enumerate(list(beams)[:B]):
            prog = b.program if isinstance(b, BeamHypothesis) else b
            if is_correct(_maybe_recover(prog, kg, recover), case, kg):
                hit = j + 1
                break
        first_hit.append(hit)
    n = max(len(cases), 1)
    return RecommendationCurve({k: sum(h <= k for h in first_hit) / n for k in range(1, B + 1)})


def write_curve(curve: RecommendationCurve, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("k,accuracy\n")
        for line in curve.lines():
            f.write(line + "\n")


# -- end to end ----------------------------------------------------------------------


@dataclass
class CaseResult:
    case: EvalCase
    beams: list[BeamHypothesis]
    uncertainty: ProgramUncertainty | None
    error: str | None = None

    @property
    def scores(self) -> dict:
        if self.uncertainty is None:
            return {k: math.nan for k in ("max_u_data", "max_u_model", "max_H", "max_H_single",
                                          "U_total", "U_model", "U_data")}
        return score_row(self.case.question_id, self.uncertainty)


@dataclass
class BenchmarkResult:
    results: list[CaseResult]
    accuracy: float
    curve: RecommendationCurve
    metrics: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)
    tau_sweep: list[tuple[float, int]] = field(default_factory=list)
    top1_correct: list[bool] = field(default_factory=list)

    def score(self, kind: str) -> list[float]:
        key = kind[len("program_"):] if kind.startswith("program_") else kind
        return [r.scores[key] for r in self.results]

    def labels(self) -> list[AmbiguityLabel]:
        return [r.case.label for r in self.results]

    def rows(self) -> list[dict]:
        out = []
        for r, top in zip(self.results, self.top1_correct):
            row = {"question_id": r.case.question_id, "label": r.case.label.value,
                   "kind": r.case.kind, "top1_correct": int(top)}
            row.update({k: v for k, v in r.scores.items() if k != "question_id"})
            out.append(row)
        return out

    def metrics_json(self) -> dict:
        return {
            "n": len(self.results),
            "execution_accuracy": self.accuracy,
            "curve": {str(k): v for k, v in self.curve.accuracy.items()},
            "detection": {kind: {red: {"auroc": a, "aupr": p} for red, (a, p) in m.items()}
                          for kind, m in self.metrics.items()},
            "tau_sweep": [[t, c] for t, c in self.tau_sweep],
        }


def _detect_metrics(scores: list[float], labels, positive: str) -> tuple[float, float]:
    y = binary_labels(labels, positive)
    keep = [i for i, s in enumerate(scores) if math.isfinite(s)]
    try:
        return detection_metrics([scores[i] for i in keep], [y[i] for i in keep])
    except MetricError:
        return math.nan, math.nan


def run_benchmark(
    kg: KnowledgeGraph,
    cases: Sequence[EvalCase],
    members: int | Sequence[DecoderMember] = 5,
    beam: int = 5,
    seed: int = 0,
    recover: bool = True,
    tau_points: int = 20,
    workers: int = 1,
    lexicon: Lexicon | None = None,
) -> BenchmarkResult:
    """Decode every case, score it, and evaluate accuracy, curve and detection."""
    ensemble = make_ensemble(members, seed) if isinstance(members, int) else list(members)
    lexicon = lexicon or Lexicon.from_kg(kg)
    lexicon.patterns()

    def one(case: EvalCase) -> CaseResult:
        try:
            res = decode(case.question, kg, ensemble, beam, lexicon)
        except DecodeError as e:
            return CaseResult(case, [], None, str(e))
        return CaseResult(case, res.beams, program_uncertainty(res.tokens, res.beams))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, cases))
    else:
        results = [one(c) for c in cases]

    top1 = [_maybe_recover(r.beams[0].program, kg, recover) if r.beams else None for r in results]
    top1_correct = [is_correct(p, r.case, kg) for p, r in zip(top1, results)]
    accuracy = sum(top1_correct) / max(len(results), 1)
    curve = oracle_topk_curve([r.beams for r in results], list(cases), kg, beam, recover)
    out = BenchmarkResult(results, accuracy, curve, top1_correct=top1_correct)
    labels = out.labels()
    for kind in SCORE_KINDS:
        s = out.score(kind)
        out.metrics[kind] = {
            "high": _detect_metrics(s, labels, "high"),
            "mild&high": _detect_metrics(s, labels, "mild&high"),
        }
    u = [x for x in out.score("max_u_data") if math.isfinite(x)]
    if u:
        for tau in np.linspace(min(u), max(u), tau_points):
            out.tau_sweep.append((float(tau), int(sum(x > tau for x in u))))
    return out
