"""
Generating question/program pairs
=================================

The toy EHR graph stands in for a real clinical database. Eight question
templates are filled by exploring the graph, so every program is satisfiable
and returns a non-empty answer.
"""

from collections import Counter
import time

from ehrqa.interp import exec_program, serialize_value
from ehrqa.kg import generate_toy_ehr_kg
from ehrqa.synthgen import generate_corpus
from ehrqa.templates import TEMPLATES

kg = generate_toy_ehr_kg(seed=1, patients=50, admissions_per_patient=2)
print(kg, "types:", {t: len(n) for t, n in kg.nodes_by_type.items()})

###############################################################################
# The templates, in surface form.

for t in TEMPLATES.values():
    print(t.template_id, t.pattern)

###############################################################################
# Draw 100 pairs per template. Duplicate questions are dropped, so a template
# with few distinct fillers keeps fewer.

start = time.perf_counter()
corpus = generate_corpus(kg, per_type=100, seed=1)
print(f"{len(corpus)} pairs in {time.perf_counter() - start:.2f} s")
print(sorted(Counter(p.template_id for p in corpus).items()))

###############################################################################
# One example per template, with its program and answer.

shown = set()
for pair in corpus:
    if pair.template_id in shown:
        continue
    shown.add(pair.template_id)
    answer = serialize_value(exec_program(pair.program, kg).answer).replace("\n", ", ")
    print(f"\n[{pair.template_id}] {pair.question}")
    print("    " + str(pair.program).replace("\n", "\n    "))
    print(f"    = {answer[:80]}")
