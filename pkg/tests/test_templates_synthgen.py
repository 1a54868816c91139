import re

import numpy as np
import pytest

from ehrqa.dsl import OpKind, parse_program, type_check
from ehrqa.interp import Float, LitSet, exec_program
from ehrqa.kg import KnowledgeGraph, Literal, Triple
from ehrqa.synthgen import (
    GenerationError,
    generate_corpus,
    read_corpus,
    sample_pair,
    write_corpus,
)
from ehrqa.templates import (
    AGGREGATES,
    CONDITIONS,
    TEMPLATES,
    Attribute,
    Bindings,
    Condition,
    Lexicon,
    build_program,
    parse_question,
    render_question,
)


@pytest.fixture(scope="module")
def small_corpus(toy_graph):
    return generate_corpus(toy_graph, 20, seed=3)


def test_eight_templates_and_surface_words():
    assert sorted(TEMPLATES) == list(range(1, 9))
    assert [CONDITIONS[s][0] for s in ("=", ">", "<", "<=", ">=")] == [
        "equal to", "greater than", "less than", "less than or equal to", "greater than or equal to"]
    assert set(AGGREGATES) == {"minimum", "maximum", "average"}
    assert TEMPLATES[1].pattern == "what is {RELATION} of {ENTITY}?"
    for t in TEMPLATES.values():
        slots = " ".join(t.skeleton)
        for ph in t.placeholders:
            assert ph in slots or ph == "ENTITY" and t.entity_is_instance


def test_template1_on_fixture(fixture_graph):
    lex = Lexicon.from_kg(fixture_graph)
    b = Bindings(1, (Attribute("/gender", "patient"),), (Condition("/age", "=", "52", "patient"),), entity="patient")
    p = build_program(b, fixture_graph)
    assert exec_program(p, fixture_graph).answer == LitSet.of(["f"])
    q = render_question(b, lex)
    assert q == "what is gender of patient age 52?"
    m = parse_question(q, lex)
    assert m.template_id == 1 and m.attribute_words == ("gender",) and m.entity == "patient"


def test_template7_average_age_on_fixture(fixture_graph):
    b = Bindings(7, (Attribute("/age", "patient"),), (Condition("/short_title", "=", "sepsis", "diag"),),
                 entity="patient", aggregate="average")
    p = build_program(b, fixture_graph)
    type_check(p)
    assert p.steps[-1].op is OpKind.AVERAGE_LITSET
    assert exec_program(p, fixture_graph).answer == Float(70.0)
    b2 = Bindings(7, (Attribute("/age", "patient"),), (Condition("/age", ">=", "0", "patient"),),
                  entity="patient", aggregate="average")
    assert exec_program(build_program(b2, fixture_graph), fixture_graph).answer == Float(61.0)


def test_template5_count_on_fixture(fixture_graph):
    pair = sample_pair(5, fixture_graph, 0)
    assert pair.program.steps[-1].op is OpKind.COUNT_ENTSET
    assert exec_program(pair.program, fixture_graph).answer.value >= 1


def test_bindings_validation():
    with pytest.raises(ValueError):
        Bindings(1, (), (), entity="patient")
    with pytest.raises(ValueError):
        Bindings(7, (Attribute("/age", "patient"),), (Condition("/age", ">", "1", "patient"),), entity="patient")


def test_sample_pair_errors(fixture_graph):
    with pytest.raises(ValueError):
        sample_pair(9, fixture_graph, 0)
    with pytest.raises(GenerationError):
        sample_pair(1, KnowledgeGraph([]), 0)
    lonely = KnowledgeGraph([Triple("/patient/1", "/gender", Literal("f"))])
    with pytest.raises(GenerationError) as err:
        sample_pair(7, lonely, 0)
    assert "template 7" in str(err.value)


@pytest.mark.parametrize("tid", range(1, 9))
def test_every_template_samples_on_toy_graph(toy_graph, tid):
    pair = sample_pair(tid, toy_graph, 11)
    assert pair.template_id == tid
    trace = exec_program(pair.program, toy_graph)
    assert trace.ok and not trace.is_null
    assert pair.program == build_program(pair.bindings, toy_graph)


def test_questions_parse_back_to_their_slots(toy_graph, small_corpus):
    lex = Lexicon.from_kg(toy_graph)
    for pair in small_corpus:
        m = parse_question(pair.question, lex)
        assert m is not None, pair.question
        assert m.template_id == pair.template_id
        b = pair.bindings
        assert m.attribute_words == tuple(lex.word_for(a.relation) for a in b.attributes)
        assert [c.value for c in m.conditions] == [c.value for c in b.conditions]
        assert [c.op for c in m.conditions] == [c.op for c in b.conditions]
        assert m.aggregate == b.aggregate


def test_corpus_properties(toy_graph, small_corpus):
    questions = [p.question for p in small_corpus]
    assert len(questions) == len(set(questions))
    assert {p.template_id for p in small_corpus} == set(range(1, 9))
    for p in small_corpus:
        type_check(p.program)
        assert not exec_program(p.program, toy_graph).is_null
        assert "  " not in p.question and re.fullmatch(r"what is .+\?", p.question)


def test_corpus_determinism_and_workers(toy_graph, small_corpus):
    again = generate_corpus(toy_graph, 20, seed=3, workers=4)
    assert [(p.question, p.program) for p in again] == [(p.question, p.program) for p in small_corpus]
    other = generate_corpus(toy_graph, 20, seed=4)
    assert [p.question for p in other] != [p.question for p in small_corpus]


def test_exclusion_and_upper_bound(toy_graph, small_corpus):
    banned = {small_corpus[0].question, small_corpus[-1].question}
    again = generate_corpus(toy_graph, 20, seed=3, exclude=banned)
    assert not banned & {p.question for p in again}
    assert len(generate_corpus(toy_graph, 1, seed=0)) <= 8
    with pytest.raises(ValueError):
        generate_corpus(toy_graph, 0, seed=0)


def test_corpus_file_round_trip(tmp_path, small_corpus):
    path = tmp_path / "corpus.tsv"
    write_corpus(small_corpus, path)
    rows = read_corpus(path)
    assert [(t, q, p) for t, q, p in rows] == [(p.template_id, p.question, p.program) for p in small_corpus]


def test_group_words_in_lexicon(toy_graph):
    lex = Lexicon.from_kg(toy_graph)
    assert lex.is_explicit("short title")
    assert len(lex.relations_for("title")) >= 2
    assert lex.relations_for("no such word") == ()


def test_program_text_for_template3(toy_graph):
    b = Bindings(3, (Attribute("/gender", "patient"),), (Condition("/short_title", "=", "pneumonia", "diag"),))
    text = str(build_program(b, toy_graph))
    assert text.splitlines()[0] == 'r0 = gen_entset_equal("/short_title", "pneumonia")'
    assert text.splitlines()[-1].endswith('"/gender")')
    assert parse_program(text) == build_program(b, toy_graph)
