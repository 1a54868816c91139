"""
ehrqa — program-based question answering over electronic-health-record
knowledge graphs, with ensemble-uncertainty detection of ambiguous questions.

Modules
-------
kg           triple store, file format, toy EHR graph generator
dsl          the 14-operation program language: parser, types, tokens
interp       program evaluator and answer serialization
recovery     ROUGE-L based repair of condition values
templates    the eight question templates and their surface lexicon
synthgen     synthetic question/program corpora
surrogate    deterministic decoder ensemble (beams + token distributions)
uncertainty  entropy decomposition, detector, detection metrics
evalkit      execution accuracy, ambiguity benchmark, top-k curve
cli          command-line front end
"""

__version__ = "0.1.0"

from .dsl import Program, parse_program, render, render_inline, tokenize_program, type_check
from .interp import answers_equal, exec_program, serialize_value
from .kg import KnowledgeGraph, fixture_kg, generate_toy_ehr_kg, load_kg, read_kg
from .recovery import recover_program, rouge_l

__all__ = [
    "__version__",
    "KnowledgeGraph",
    "load_kg",
    "read_kg",
    "fixture_kg",
    "generate_toy_ehr_kg",
    "Program",
    "parse_program",
    "render",
    "render_inline",
    "tokenize_program",
    "type_check",
    "exec_program",
    "serialize_value",
    "answers_equal",
    "recover_program",
    "rouge_l",
]
