"""
Command-line front end.

    ehrqa gen-kg    --seed S [--patients N] [--admissions K] [--fixture] --out KG
    ehrqa exec      --kg KG PROGRAM_FILE
    ehrqa recover   --kg KG PROGRAM_FILE
    ehrqa gen-synth --kg KG --per-type N --seed S [--exclude FILE] --out CORPUS
    ehrqa decode    --kg KG QUESTIONS --out-beams F --out-tokens F [--members M --beam B --seed S]
    ehrqa score     --tokens F [--beams F] --out SCORES
    ehrqa bench     --kg KG [--n 600] [--seed S] [--members M] [--beam B] --out DIR
    ehrqa select    --kg KG --question Q [--tau T] [--members M] [--beam B] [--svg F]

Exit status is 0 on success, 1 on a usage error and 2 on bad input data.
Program files hold one or more programs separated by blank lines; question
files hold one question per line, optionally as ``question_id<TAB>question``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .dsl import ParseError, TypeCheckError, parse_program, render
from .evalkit import BenchmarkError, build_ambiguity_benchmark, run_benchmark, write_benchmark, write_curve
from .heat import heat_svg, heat_text
from .interp import exec_program, serialize_value
from .kg import KGParseError, fixture_kg, generate_toy_ehr_kg, read_kg, write_kg
from .recovery import recover_program
from .surrogate import DecodeError, decode, make_ensemble, read_beams, read_token_log, write_beams, write_token_log
from .synthgen import GenerationError, generate_corpus, write_corpus
from .templates import Lexicon
from .uncertainty import (
    DetectorConfig,
    ProgramUncertainty,
    detect_ambiguous,
    program_uncertainty,
    score_row,
    write_scores,
)

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _finite(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError("must be finite")
    return v


def _strata(text: str) -> dict[str, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated sizes none,mild,high")
    try:
        vals = [float(x) for x in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not numbers: {text!r}") from None
    if any(v < 0 for v in vals) or sum(vals) <= 0:
        raise argparse.ArgumentTypeError("sizes must be non-negative with a positive sum")
    return dict(zip(("none", "mild", "high"), vals))


# -- helpers ---------------------------------------------------------------------


def _program_blocks(path: str) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    blocks, cur = [], []
    for line in text.splitlines():
        if line.strip():
            cur.append(line)
        elif cur:
            blocks.append("\n".join(cur))
            cur = []
    if cur:
        blocks.append("\n".join(cur))
    return blocks


def _questions(path: str) -> list[tuple[str, str]]:
    out = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        if "\t" in line:
            qid, q = line.split("\t", 1)
        else:
            qid, q = f"q{i:04d}", line
        out.append((qid.strip(), q.strip()))
    return out


def _ensemble(args):
    conc = None if args.concentration <= 0 else args.concentration
    return make_ensemble(args.members, args.seed, conc)


# -- subcommands -------------------------------------------------------------------


def cmd_gen_kg(args) -> int:
    if args.fixture:
        kg = fixture_kg()
    else:
        kg = generate_toy_ehr_kg(args.seed, args.patients, args.admissions)
    write_kg(kg, args.out)
    print(f"wrote {len(kg)} triples to {args.out}", file=sys.stderr)
    return 0


def cmd_exec(args) -> int:
    kg = read_kg(args.kg)
    blocks = _program_blocks(args.program)
    for i, block in enumerate(blocks):
        if len(blocks) > 1:
            print(f"# program {i + 1}")
        trace = exec_program(parse_program(block), kg)
        if trace.ok:
            print(serialize_value(trace.answer))
        else:
            print("NULL")
            print(f"step r{trace.failed_step}: {trace.error}", file=sys.stderr)
    return 0


def cmd_recover(args) -> int:
    kg = read_kg(args.kg)
    blocks = _program_blocks(args.program)
    # recovered programs go to stdout (ready for `exec`), the report to stderr
    report_out = csv.writer(sys.stderr, lineterminator="\n")
    report_out.writerow(["step", "arg", "original", "recovered", "score"])
    for i, block in enumerate(blocks):
        if i:
            print()
        report = recover_program(parse_program(block), kg)
        print(render(report.program_out))
        report_out.writerows(report.rows())
        for step, arg, text in report.unrecovered:
            report_out.writerow([step, arg, text, "", ""])
    return 0


def cmd_gen_synth(args) -> int:
    kg = read_kg(args.kg)
    exclude = set()
    if args.exclude:
        exclude = {q for _, q in _questions(args.exclude)}
    pairs = generate_corpus(kg, args.per_type, args.seed, exclude=exclude, workers=args.workers)
    write_corpus(pairs, args.out)
    print(f"wrote {len(pairs)} pairs to {args.out}", file=sys.stderr)
    return 0


def cmd_decode(args) -> int:
    kg = read_kg(args.kg)
    lexicon = Lexicon.from_kg(kg)
    ens = _ensemble(args)
    beams, tokens, failed = [], [], 0
    for qid, q in _questions(args.questions):
        try:
            res = decode(q, kg, ens, args.beam, lexicon)
        except DecodeError as e:
            print(f"{qid}: {e}", file=sys.stderr)
            failed += 1
            continue
        beams.append((qid, res.beams))
        tokens.append((qid, res.tokens))
    write_beams(beams, args.out_beams)
    write_token_log(tokens, args.out_tokens)
    print(f"decoded {len(beams)} question(s), {failed} failed", file=sys.stderr)
    return DATA_ERROR if failed and not beams else 0


def cmd_score(args) -> int:
    logs = read_token_log(args.tokens)
    beams = read_beams(args.beams) if args.beams else {}
    rows = [score_row(qid, program_uncertainty(recs, beams.get(qid))) for qid, recs in logs.items()]
    write_scores(rows, args.out)
    print(f"scored {len(rows)} program(s)", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    kg = read_kg(args.kg) if args.kg else generate_toy_ehr_kg(args.kg_seed, args.patients, 2)
    cases = build_ambiguity_benchmark(kg, args.n, args.seed, strata=args.strata)
    res = run_benchmark(kg, cases, args.members, args.beam, args.seed, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_benchmark(cases, out / "benchmark.jsonl")
    write_curve(res.curve, out / "curve.csv")
    rows = res.rows()
    with open(out / "results.csv", "w", encoding="utf-8") as f:
        cols = list(rows[0]) if rows else []
        f.write(",".join(cols) + "\n")
        for r in rows:
            f.write(",".join(v if isinstance(v, str) else f"{v:.12g}" for v in r.values()) + "\n")
    (out / "metrics.json").write_text(json.dumps(res.metrics_json(), indent=2, sort_keys=True) + "\n")
    m = res.metrics["max_u_data"]
    print(f"execution accuracy (top-1): {res.accuracy:.4f}")
    print(f"max_u_data AUROC/AUPR high: {m['high'][0]:.4f}/{m['high'][1]:.4f}  "
          f"mild&high: {m['mild&high'][0]:.4f}/{m['mild&high'][1]:.4f}")
    print("top-k: " + " ".join(f"{k}:{v:.4f}" for k, v in sorted(res.curve.accuracy.items())))
    return 0


def cmd_select(args) -> int:
    kg = read_kg(args.kg)
    res = decode(args.question, kg, _ensemble(args), args.beam)
    pu: ProgramUncertainty = program_uncertainty(res.tokens, res.beams)
    if args.svg:
        Path(args.svg).write_text(heat_svg(res.tokens, pu), encoding="utf-8")
    flagged = detect_ambiguous(pu, DetectorConfig(args.tau))
    print(f"max u_data = {pu.max_u_data:.4f} (tau {args.tau})")
    print(heat_text(res.tokens, pu))
    if not flagged:
        chosen = res.beams[0]
    else:
        print("the question looks ambiguous; candidate programs:")
        for b in res.beams:
            print(f"  [{b.rank}] p={math.exp(b.logprob):.3f}  {b.text}")
        print(f"choose 1..{len(res.beams)}: ", end="", flush=True)
        line = sys.stdin.readline()
        try:
            k = int(line.strip())
        except ValueError:
            raise UsageError(f"expected a number 1..{len(res.beams)}, got {line.strip()!r}") from None
        if not 1 <= k <= len(res.beams):
            raise UsageError(f"choice {k} out of range 1..{len(res.beams)}")
        print()
        chosen = res.beams[k - 1]
    program = recover_program(chosen.program, kg).program_out
    trace = exec_program(program, kg)
    print(f"program: {chosen.text}")
    print(serialize_value(trace.answer) if trace.ok else "NULL")
    return 0


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ehrqa", description="Program-based EHR question answering toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def ensemble_flags(sp):
        sp.add_argument("--members", type=_positive, default=5)
        sp.add_argument("--beam", type=_positive, default=5)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--concentration", type=float, default=10.0,
                        help="Dirichlet concentration of member preferences (<= 0: even split)")

    sp = sub.add_parser("gen-kg", help="write a toy EHR graph")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--patients", type=_positive, default=50)
    sp.add_argument("--admissions", type=_positive, default=2)
    sp.add_argument("--fixture", action="store_true", help="write the 10-triple fixture instead")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_kg)

    sp = sub.add_parser("exec", help="execute programs and print their answers")
    sp.add_argument("--kg", required=True)
    sp.add_argument("program")
    sp.set_defaults(func=cmd_exec)

    sp = sub.add_parser("recover", help="replace out-of-inventory condition values")
    sp.add_argument("--kg", required=True)
    sp.add_argument("program")
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("gen-synth", help="generate a synthetic question/program corpus")
    sp.add_argument("--kg", required=True)
    sp.add_argument("--per-type", type=_positive, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--exclude", help="file of questions to leave out")
    sp.add_argument("--workers", type=_positive, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_synth)

    sp = sub.add_parser("decode", help="decode questions into beams and token logs")
    sp.add_argument("--kg", required=True)
    sp.add_argument("questions")
    ensemble_flags(sp)
    sp.add_argument("--out-beams", required=True)
    sp.add_argument("--out-tokens", required=True)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("score", help="uncertainty scores from token logs (and beams)")
    sp.add_argument("--tokens", required=True)
    sp.add_argument("--beams")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("bench", help="build and evaluate the ambiguity benchmark")
    sp.add_argument("--kg", help="graph file (default: a generated toy graph)")
    sp.add_argument("--kg-seed", type=int, default=1)
    sp.add_argument("--patients", type=_positive, default=50)
    sp.add_argument("--n", type=_positive, default=600)
    sp.add_argument("--strata", type=_strata, default=None, help="relative sizes none,mild,high")
    sp.add_argument("--workers", type=_positive, default=1)
    ensemble_flags(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("select", help="decode one question and let the user pick a program")
    sp.add_argument("--kg", required=True)
    sp.add_argument("--question", required=True)
    sp.add_argument("--tau", type=_finite, default=0.5)
    sp.add_argument("--svg", help="also write a token heat map here")
    ensemble_flags(sp)
    sp.set_defaults(func=cmd_select)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"ehrqa {args.command}: error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (OSError, KGParseError, ParseError, TypeCheckError, DecodeError, GenerationError,
            BenchmarkError, ValueError) as e:
        print(f"ehrqa {args.command}: error: {e}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
