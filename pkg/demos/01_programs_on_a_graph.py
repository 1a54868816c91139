"""
Programs over a small patient graph
===================================

A walk through the building blocks: a knowledge graph of triples, the
register-based program language, the evaluator, and condition-value recovery.
"""

from ehrqa.dsl import parse_program, tokenize_program, type_check
from ehrqa.interp import exec_program, serialize_value
from ehrqa.kg import dumps_kg, fixture_kg
from ehrqa.recovery import recover_program

###############################################################################
# The fixture graph has two patients, each with one admission and one
# diagnosis. Literal objects are marked ``lit``; entity objects ``ent``.

kg = fixture_kg()
print(dumps_kg(kg))
print("short titles:", sorted(kg.value_inventory("/short_title")))

###############################################################################
# A program is a sequence of steps, each writing one register. This one finds
# every patient with an age, collects the ages and averages them.

program = parse_program(
    """
    r0 = gen_entset_atleast("/age", "0")
    r1 = gen_litset(r0, "/age")
    r2 = average_litset(r1)
    """
)
print([str(t) for t in type_check(program)])
trace = exec_program(program, kg)
for step, value in zip(program.steps, trace.registers):
    print(f"{step}\n    -> {serialize_value(value)!r}")

###############################################################################
# Filters are existential and equality ignores case and surrounding spaces.
# Walking up from a diagnosis reaches its admission and then the patient.

program = parse_program(
    """
    r0 = gen_entset_equal("/short_title", " Sepsis ")
    r1 = gen_entset_up("/diagnosis", r0)
    r2 = gen_entset_up("/hadm", r1)
    r3 = gen_litset(r2, "/gender")
    """
)
print(serialize_value(exec_program(program, kg).answer))

###############################################################################
# The decoder sees programs as token sequences; strings are split into
# sub-word pieces at spaces and slashes.

print(tokenize_program(program)[:12])

###############################################################################
# A runtime failure (here an aggregate over nothing numeric) yields NULL.

empty = parse_program('r0 = gen_entset_equal("/gender", "x")\nr1 = gen_litset(r0, "/age")\nr2 = maximum_litset(r1)')
trace = exec_program(empty, kg)
print(trace.status, "at step", trace.failed_step, "-", trace.error)

###############################################################################
# A generated program may name a value that is close to, but not exactly, a
# stored one. Recovery swaps it for the stored value with the best word-level
# ROUGE-L.

typo = parse_program('r0 = gen_entset_equal("/short_title", "sepsis shock")\nr1 = count_entset(r0)')
report = recover_program(typo, kg)
for r in report.replacements:
    print(f"{r.original!r} -> {r.recovered!r} (ROUGE-L {r.score:.3f})")
print(serialize_value(exec_program(report.program_out, kg).answer))
