"""
Where is the ambiguity?
=======================

An ensemble of surrogate decoders turns a question into programs. Each member
links words to graph relations with its own preferences. Where the members
agree that several continuations are plausible, the expected entropy
(``u_data``) of the next token is high. That is the signature of an
ambiguous question rather than an uncertain model.
"""

from pathlib import Path

from ehrqa.heat import heat_svg, heat_text
from ehrqa.kg import generate_toy_ehr_kg
from ehrqa.recovery import recover_program
from ehrqa.surrogate import decode, make_ensemble
from ehrqa.templates import Lexicon
from ehrqa.uncertainty import DetectorConfig, detect_ambiguous, program_uncertainty

kg = generate_toy_ehr_kg(1)
lexicon = Lexicon.from_kg(kg)
ensemble = make_ensemble(5, seed=0)

###############################################################################
# "title" is a group word: it can mean the short or the long title of a
# diagnosis. Some values (here "pneumonia") are stored under both.

print(lexicon.relations_for("title"))
print("pneumonia" in kg.value_inventory("/short_title"), "pneumonia" in kg.value_inventory("/long_title"))

questions = {
    "explicit": "what is gender of short title pneumonia?",
    "group word": "what is gender of title pneumonia?",
    "typo": "what is gender of short title acute kidney failur?",
}

###############################################################################
# For each question: the greedy program annotated with u_data where it is
# noticeable, the largest token score, the detector decision at tau = 0.5 and
# the sequence-level scores over the beams.

detector = DetectorConfig(tau=0.5)
for name, q in questions.items():
    res = decode(q, kg, ensemble, beam_width=5, lexicon=lexicon)
    pu = program_uncertainty(res.tokens, res.beams)
    at = res.tokens[pu.argmax_position()]
    print(f"\n== {name}: {q}")
    print(heat_text(res.tokens, pu))
    print(f"max u_data {pu.max_u_data:.3f} at token {at.token!r} (position {at.position}); "
          f"max u_model {pu.max_u_model:.3f}; flagged: {detect_ambiguous(pu, detector)}")
    print(f"sequence level: U_total {pu.U_total:.4f}  U_model {pu.U_model:.4f}  U_data {pu.U_data:.4f}")
    for b in res.beams:
        print(f"  [{b.rank}] {b.text}")
    Path(f"heat_{name.replace(' ', '_')}.svg").write_text(heat_svg(res.tokens, pu))

###############################################################################
# The typo question's top beam names a stored value already; where it does
# not, recovery maps the literal back into the graph's inventory.

res = decode(questions["typo"], kg, ensemble, lexicon=lexicon)
for b in res.beams:
    fixed = recover_program(b.program, kg).program_out
    print(b.program.steps[0].args[1].text, "->", fixed.steps[0].args[1].text)

###############################################################################
# A degenerate ensemble (five copies of one member) still shows ambiguity
# through u_data but has no disagreement between members: u_model is 0.

res = decode(questions["group word"], kg, make_ensemble(5, identical=True), lexicon=lexicon)
pu = program_uncertainty(res.tokens, res.beams)
print(f"\nidentical members: max u_data {pu.max_u_data:.3f}, max u_model {pu.max_u_model:.3f}")
