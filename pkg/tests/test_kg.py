from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrqa.kg import (
    KGParseError,
    KnowledgeGraph,
    Literal,
    Triple,
    dumps_kg,
    generate_toy_ehr_kg,
    load_kg,
    node_type,
    parse_number,
    read_kg,
    write_kg,
)

from oracles import random_kg


def test_empty_file_gives_empty_graph():
    assert len(load_kg("")) == 0
    assert len(load_kg("# only a comment\n\n")) == 0


def test_single_line():
    kg = load_kg("/patient/1\t/gender\tf\tlit\n")
    assert len(kg) == 1
    assert kg.value_inventory("/gender") == {"f"}


def test_fixture_inventory(fixture_graph):
    assert len(fixture_graph) == 10
    assert fixture_graph.value_inventory("/short_title") == {"pneumonia", "sepsis"}
    assert fixture_graph.value_inventory("/nothing") == frozenset()


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("/a/1\t/r\tx", "4 tab-separated columns"),
        ("/a/1\t/r\tx\tlit\textra", "4 tab-separated columns"),
        ("/a/1\t/r\tx\tnode", "'ent' or 'lit'"),
        ("a/1\t/r\tx\tlit", "must start with '/'"),
        ("/a/1\t/r\tnot a node\tent", "must start with '/'"),
    ],
)
def test_malformed_lines_name_their_line(line, fragment):
    with pytest.raises(KGParseError) as err:
        load_kg("# header\n/ok/1\t/r\tv\tlit\n" + line + "\n")
    assert err.value.line == 3
    assert fragment in str(err.value)


def test_duplicates_collapse():
    text = "/a/1\t/r\tv\tlit\n/a/1\t/r\tv\tlit\n/a/1\t/r\tw\tlit\n"
    kg = load_kg(text)
    assert len(kg) == 2
    assert kg.objects("/a/1", "/r") == (Literal("v"), Literal("w"))


def test_literal_and_entity_objects_are_distinct():
    kg = load_kg("/a/1\t/r\t/b/1\tent\n/a/1\t/r\t/b/1\tlit\n")
    assert len(kg) == 2
    assert kg.subjects("/r", "/b/1") == ("/a/1",)
    assert kg.subjects("/r", Literal("/b/1")) == ("/a/1",)


@pytest.mark.parametrize(
    "text, value",
    [("52", "52"), ("-1.5", "-1.5"), ("+3", "3"), (".5", "0.5"), ("1e3", "1000"), ("2.", "2"), (" 7 ", "7")],
)
def test_numbers(text, value):
    from decimal import Decimal

    assert parse_number(text) == Decimal(value)


@pytest.mark.parametrize("text", ["", "abc", "1,000", "inf", "nan", "1e", "--1", "1 2", "0x10", "١٢"])
def test_non_numbers(text):
    assert parse_number(text) is None
    assert Literal(text).numeric_value is None


@given(st.decimals(allow_nan=False, allow_infinity=False))
def test_numeric_value_round_trips(d):
    lit = Literal(str(d))
    assert lit.numeric_value is not None
    assert parse_number(str(lit.numeric_value)) == lit.numeric_value


def test_node_type():
    assert node_type("/patient/1") == "patient"
    assert node_type("/x") == ""


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_indexes_match_brute_force(seed):
    kg = random_kg(np.random.default_rng(seed), 60)
    triples = list(kg)
    subjects = {t.subject for t in triples} | {"/none/0"}
    relations = {t.relation for t in triples} | {"/none"}
    for s in subjects:
        for r in relations:
            assert Counter(kg.objects(s, r)) == Counter(t.object for t in triples if t.subject == s and t.relation == r)
    for t in triples:
        assert Counter(kg.subjects(t.relation, t.object)) == Counter(
            x.subject for x in triples if x.relation == t.relation and x.object == t.object
        )
    for r in relations:
        assert set(kg.with_relation(r)) == {t for t in triples if t.relation == r}
        assert kg.value_inventory(r) == {t.object.text for t in triples if t.relation == r and t.is_literal}


def test_round_trip_through_file(tmp_path, toy_graph):
    path = tmp_path / "kg.tsv"
    write_kg(toy_graph, path)
    again = read_kg(path)
    assert again == toy_graph
    assert dumps_kg(again) == path.read_text()
    lines = path.read_text().splitlines()
    assert lines == sorted(lines)


def test_generator_is_deterministic():
    assert dumps_kg(generate_toy_ehr_kg(3, 5, 2)) == dumps_kg(generate_toy_ehr_kg(3, 5, 2))
    assert dumps_kg(generate_toy_ehr_kg(3, 5, 2)) != dumps_kg(generate_toy_ehr_kg(4, 5, 2))


def test_generator_admission_count():
    kg = generate_toy_ehr_kg(1, 2, 1)
    for p in kg.nodes_by_type["patient"]:
        assert len(kg.objects(p, "/hadm")) == 1


@pytest.mark.parametrize("seed", [0, 1, 2, 17])
def test_every_diagnosis_has_both_titles(seed):
    kg = generate_toy_ehr_kg(seed, 10, 2)
    for d in kg.nodes_by_type["diag"]:
        assert len(kg.objects(d, "/short_title")) == 1
        assert len(kg.objects(d, "/long_title")) == 1


def test_generator_schema_and_values(toy_graph):
    kg = toy_graph
    assert set(kg.nodes_by_type) == {"patient", "adm", "diag", "proc", "presc", "lab"}
    assert all(Literal(v).numeric_value is not None for v in kg.value_inventory("/value"))
    assert kg.value_inventory("/short_title") & kg.value_inventory("/long_title")
    renamed = generate_toy_ehr_kg(1, 3, 1, schema={"short_title": "/diagnoses_short_title"})
    assert "/diagnoses_short_title" in renamed.relations
    assert "/short_title" not in renamed.relations


def test_generator_rejects_bad_scale():
    with pytest.raises(ValueError):
        generate_toy_ehr_kg(1, 0, 1)


def test_type_path(toy_graph):
    assert toy_graph.type_path("patient", "patient") == ()
    assert toy_graph.type_path("patient", "diag") == (("/hadm", "down"), ("/diagnosis", "down"))
    assert toy_graph.type_path("lab", "patient") == (("/lab", "up"), ("/hadm", "up"))
    assert KnowledgeGraph([Triple("/a/1", "/r", Literal("x"))]).type_path("a", "b") is None


def test_invalid_triples_rejected():
    with pytest.raises(ValueError):
        KnowledgeGraph([Triple("/a/1", "rel", Literal("x"))])
