import csv
import io
import json
import subprocess
import sys

import pytest

from ehrqa.cli import main

AVG_AGE = ('r0 = gen_entset_atleast("/age", "0")\n'
           'r1 = gen_litset(r0, "/age")\n'
           'r2 = average_litset(r1)\n')


@pytest.fixture()
def fixture_file(tmp_path):
    path = tmp_path / "fixture.tsv"
    assert main(["gen-kg", "--fixture", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def toy_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("kg") / "toy.tsv"
    assert main(["gen-kg", "--seed", "1", "--patients", "50", "--out", str(path)]) == 0
    return path


def test_exec_prints_average_age(tmp_path, fixture_file, capsys):
    prog = tmp_path / "avg.prog"
    prog.write_text(AVG_AGE)
    assert main(["exec", "--kg", str(fixture_file), str(prog)]) == 0
    assert capsys.readouterr().out == "61.0\n"


def test_exec_several_programs_and_null(tmp_path, fixture_file, capsys):
    prog = tmp_path / "two.prog"
    prog.write_text(AVG_AGE + '\nr0 = gen_entset_less("/age", "old")\n')
    assert main(["exec", "--kg", str(fixture_file), str(prog)]) == 0
    out = capsys.readouterr()
    assert out.out == "# program 1\n61.0\n# program 2\nNULL\n"
    assert "non-numeric threshold" in out.err


def test_exit_codes(tmp_path, fixture_file, capsys):
    bad = tmp_path / "bad.prog"
    bad.write_text("r0 = frobnicate()\n")
    assert main(["exec", "--kg", str(fixture_file), str(bad)]) == 2
    assert "unknown operation" in capsys.readouterr().err
    assert main(["exec", "--kg", str(tmp_path / "missing.tsv"), str(bad)]) == 2
    broken_kg = tmp_path / "broken.tsv"
    broken_kg.write_text("/a/1\t/r\n")
    assert main(["exec", "--kg", str(broken_kg), str(bad)]) == 2
    with pytest.raises(SystemExit) as err:
        main(["exec"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["decode", "--members", "0", "--kg", "x", "q", "--out-beams", "b", "--out-tokens", "t"])
    assert err.value.code == 1


def test_recover(tmp_path, fixture_file, capsys):
    prog = tmp_path / "typo.prog"
    prog.write_text('r0 = gen_entset_equal("/short_title", "sepsis shock")\n')
    assert main(["recover", "--kg", str(fixture_file), str(prog)]) == 0
    out = capsys.readouterr()
    assert out.out == 'r0 = gen_entset_equal("/short_title", "sepsis")\n'
    assert out.err.splitlines() == ["step,arg,original,recovered,score", "0,1,sepsis shock,sepsis,0.666667"]


def test_recover_reports_unrecovered_values(tmp_path, fixture_file, capsys):
    prog = tmp_path / "typo.prog"
    prog.write_text('r0 = gen_entset_equal("/short_title", "sepsi")\n\nr0 = gen_entset_equal("/gender", "F")\n')
    assert main(["recover", "--kg", str(fixture_file), str(prog)]) == 0
    out = capsys.readouterr()
    assert out.out.split("\n\n")[0] == 'r0 = gen_entset_equal("/short_title", "sepsi")'
    assert out.err.splitlines()[1:] == ["0,1,sepsi,,"]


def test_gen_synth(tmp_path, toy_file):
    out = tmp_path / "corpus.tsv"
    assert main(["gen-synth", "--kg", str(toy_file), "--per-type", "3", "--seed", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert 0 < len(lines) <= 24
    assert all(len(line.split("\t")) == 3 for line in lines)


def test_decode_and_score_single_member(tmp_path, toy_file):
    questions = tmp_path / "q.txt"
    questions.write_text("a\twhat is gender of title pneumonia?\nb\twhat is gender of short title pneumonia?\n"
                         "c\tnot a question\n")
    beams, tokens, scores = tmp_path / "beams.jsonl", tmp_path / "tokens.jsonl", tmp_path / "scores.csv"
    assert main(["decode", "--kg", str(toy_file), str(questions), "--members", "1",
                 "--out-beams", str(beams), "--out-tokens", str(tokens)]) == 0
    assert main(["score", "--tokens", str(tokens), "--beams", str(beams), "--out", str(scores)]) == 0
    rows = list(csv.DictReader(scores.open()))
    assert [r["question_id"] for r in rows] == ["a", "b"]
    assert all(float(r["max_u_model"]) == 0.0 and float(r["U_model"]) == 0.0 for r in rows)
    assert float(rows[0]["max_u_data"]) > 0.0 and float(rows[1]["max_u_data"]) == 0.0


def test_decode_all_failed_is_data_error(tmp_path, toy_file):
    questions = tmp_path / "q.txt"
    questions.write_text("nonsense\n")
    assert main(["decode", "--kg", str(toy_file), str(questions), "--out-beams", str(tmp_path / "b"),
                 "--out-tokens", str(tmp_path / "t")]) == 2


def test_bench_is_deterministic(tmp_path, toy_file, capsys):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["bench", "--kg", str(toy_file), "--n", "30", "--members", "3", "--beam", "3",
                     "--seed", "4", "--out", str(d)]) == 0
        outs.append({f: (d / f).read_text() for f in ("benchmark.jsonl", "curve.csv", "results.csv", "metrics.json")})
    assert outs[0] == outs[1]
    metrics = json.loads(outs[0]["metrics.json"])
    assert metrics["n"] == 30 and "max_u_data" in metrics["detection"]
    assert outs[0]["curve.csv"].splitlines()[0] == "k,accuracy"
    assert "top-k:" in capsys.readouterr().out


def test_bench_infeasible_is_data_error(tmp_path, fixture_file):
    assert main(["bench", "--kg", str(fixture_file), "--n", "10", "--out", str(tmp_path / "x")]) == 2


def test_select_reads_choice_from_stdin(tmp_path, toy_file, monkeypatch, capsys):
    svg = tmp_path / "heat.svg"
    monkeypatch.setattr(sys, "stdin", io.StringIO("2\n"))
    assert main(["select", "--kg", str(toy_file), "--question", "what is gender of title pneumonia?",
                 "--concentration", "0", "--svg", str(svg)]) == 0
    out = capsys.readouterr().out
    assert "candidate programs" in out and "[2]" in out
    assert "/short_title" in out.split("program:")[1]
    assert svg.read_text().startswith("<svg")


def test_select_bad_choice_is_usage_error(toy_file, monkeypatch):
    monkeypatch.setattr(sys, "stdin", io.StringIO("seven\n"))
    assert main(["select", "--kg", str(toy_file), "--question", "what is gender of title pneumonia?",
                 "--concentration", "0"]) == 1


def test_select_unambiguous_skips_prompt(toy_file, capsys):
    assert main(["select", "--kg", str(toy_file), "--question", "what is gender of short title pneumonia?"]) == 0
    out = capsys.readouterr().out
    assert "choose" not in out and "program:" in out


def test_module_entry_point(tmp_path, fixture_file):
    prog = tmp_path / "avg.prog"
    prog.write_text(AVG_AGE)
    done = subprocess.run([sys.executable, "-m", "ehrqa", "exec", "--kg", str(fixture_file), str(prog)],
                          capture_output=True, text=True, check=False)
    assert done.returncode == 0 and done.stdout == "61.0\n"
