import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrqa.surrogate import BeamHypothesis, TokenRecord
from ehrqa.uncertainty import (
    SCORE_KINDS,
    AmbiguityLabel,
    DetectorConfig,
    MetricError,
    ProgramUncertainty,
    TokenUncertainty,
    aupr,
    auroc,
    binary_labels,
    decompose,
    detect_ambiguous,
    detection_metrics,
    program_level_uncertainty,
    program_uncertainty,
    read_scores,
    score_row,
    token_entropies,
    write_scores,
)

from oracles import allpairs_auroc, reference_program_uncertainty, threshold_aupr

LN2 = math.log(2)


def record(rows, position=0):
    vocab = [f"t{j}" for j in range(len(rows[0]))]
    return TokenRecord(position, vocab[0], tuple(tuple(zip(vocab, map(float, r))) for r in rows))


def series(u_values):
    return ProgramUncertainty([TokenUncertainty(i, (u,), u, u, 0.0) for i, u in enumerate(u_values)])


# -- token decomposition ----------------------------------------------------------


def test_analytic_one_hot_split():
    h_m, h, u_data, u_model = decompose([[1, 0], [0, 1]])
    assert h_m.tolist() == [0.0, 0.0] and u_data == 0.0
    assert abs(h - LN2) <= 1e-12 and abs(u_model - LN2) <= 1e-12


def test_analytic_both_uniform():
    _, h, u_data, u_model = decompose([[0.5, 0.5], [0.5, 0.5]])
    assert abs(u_data - LN2) <= 1e-12 and abs(h - LN2) <= 1e-12 and abs(u_model) <= 1e-12


def test_single_member_is_exact():
    _, h, u_data, u_model = decompose([[0.2, 0.3, 0.5]])
    assert u_model == 0.0 and h == u_data


@pytest.mark.parametrize(
    "probs",
    [[[0.5, 0.6]], [[-0.1, 1.1]], [[np.nan, 1.0]], [[]], [[[0.5, 0.5]]], [[0.5, 0.4999]]],
)
def test_invalid_distributions(probs):
    with pytest.raises(ValueError):
        decompose(probs)


def test_tolerance_accepts_small_drift():
    decompose([[0.5, 0.5 + 5e-7]])


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_decomposition_properties(seed):
    rng = np.random.default_rng(seed)
    v, m = int(rng.integers(2, 65)), int(rng.integers(1, 9))
    p = rng.dirichlet(np.full(v, float(rng.choice([0.05, 0.5, 5.0]))), size=m)
    h_m, h, u_data, u_model = decompose(p)
    assert u_model >= -1e-9
    assert abs(u_data + u_model - h) <= 1e-9
    assert np.all(h_m >= 0) and np.all(h_m <= math.log(v) + 1e-12)
    if m == 1:
        assert u_model == 0.0


def test_token_entropies_from_record():
    tu = token_entropies(record([[1.0, 0.0], [0.0, 1.0]], position=3))
    assert tu.position == 3 and tu.H_m == (0.0, 0.0)
    assert tu.u_model == pytest.approx(LN2, abs=1e-12)


def test_program_uncertainty_series():
    recs = [record([[1.0, 0.0], [1.0, 0.0]], 0), record([[0.5, 0.5], [0.9, 0.1]], 1), record([[1.0, 0.0]] * 2, 2)]
    pu = program_uncertainty(recs)
    assert len(pu.U) == 3 and pu.argmax_position() == 1
    assert pu.max_u_data == pu.U[1]
    assert pu.max_H_single == pytest.approx(LN2)
    assert math.isnan(pu.U_total)
    with pytest.raises(ValueError):
        program_uncertainty([])
    with pytest.raises(ValueError):
        pu.score("program_nothing")


# -- detector ----------------------------------------------------------------------


def test_detector_examples():
    assert detect_ambiguous(series([0.1, 0.9]), DetectorConfig(0.5)) == 1
    assert detect_ambiguous(series([0.1]), DetectorConfig(0.1)) == 0
    assert detect_ambiguous(series([0.0, 0.0]), DetectorConfig(0.0)) == 0
    with pytest.raises(ValueError):
        DetectorConfig(float("nan"))
    with pytest.raises(ValueError):
        DetectorConfig(0.1, kind="nope")


def test_detector_monotone_in_tau():
    rng = np.random.default_rng(0)
    pus = [series(rng.random(int(rng.integers(1, 6))).tolist()) for _ in range(50)]
    taus = np.linspace(0, 1, 21)
    flagged = [{i for i, pu in enumerate(pus) if detect_ambiguous(pu, DetectorConfig(float(t)))} for t in taus]
    for a, b in zip(flagged, flagged[1:]):
        assert b <= a


# -- program level -------------------------------------------------------------


def beam(member_probs, length):
    lp = tuple(math.log(p) for p in member_probs)
    return BeamHypothesis(None, float(np.mean(lp)), 1, lp, length)


def test_program_level_degenerate_cases():
    total, model, data = program_level_uncertainty([beam([0.25], 4)])
    assert (model, total, data) == (0.0, pytest.approx(-math.log(0.25) / 4), total)
    total, model, data = program_level_uncertainty([beam([0.3, 0.3], 5)])
    assert model == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        program_level_uncertainty([])
    with pytest.raises(ValueError):
        program_level_uncertainty([beam([0.3, 0.3], 5), beam([0.3], 5)])


def test_program_level_two_beam_hand_case():
    probs, lengths = [[0.6, 0.2], [0.3, 0.7]], [7, 9]
    got = program_level_uncertainty([beam(p, L) for p, L in zip(probs, lengths)])
    want = reference_program_uncertainty(probs, lengths)
    assert np.allclose(got, want, rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_program_level_matches_reference(seed):
    rng = np.random.default_rng(seed)
    b, m = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    probs = rng.uniform(1e-6, 1.0, size=(b, m)).tolist()
    lengths = rng.integers(1, 40, size=b).tolist()
    got = program_level_uncertainty([beam(p, L) for p, L in zip(probs, lengths)])
    want = reference_program_uncertainty(probs, lengths)
    assert np.allclose(got, want, rtol=1e-10, atol=1e-12)
    assert got[1] + got[2] == pytest.approx(got[0], abs=1e-12)


# -- metrics --------------------------------------------------------------------------


def test_metric_examples():
    assert detection_metrics([0.9, 0.1], [1, 0]) == (1.0, 1.0)
    assert auroc([0.5, 0.5], [1, 0]) == 0.5
    scores, labels = [0.1, 0.4, 0.35, 0.8, 0.4, 0.2], [0, 0, 1, 1, 1, 0]
    assert auroc(scores, labels) == pytest.approx(allpairs_auroc(scores, labels), abs=1e-12)
    assert aupr(scores, labels) == pytest.approx(threshold_aupr(scores, labels), abs=1e-12)


@pytest.mark.parametrize("scores, labels", [([0.1, 0.2], [1, 1]), ([0.1], [1]), ([0.1, 0.2], [1, 2]), ([0.1, 0.2], [1])])
def test_metric_errors(scores, labels):
    with pytest.raises(MetricError):
        auroc(scores, labels)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metrics_match_oracles(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    labels = [0, 1] + rng.integers(0, 2, size=n - 2).tolist()
    scores = rng.integers(0, 6, size=n) / 5.0 if rng.random() < 0.5 else rng.random(n)
    assert abs(auroc(scores, labels) - allpairs_auroc(scores, labels)) <= 1e-9
    assert abs(aupr(scores, labels) - threshold_aupr(scores, labels)) <= 1e-9
    assert auroc(np.exp(3 * scores), labels) == pytest.approx(auroc(scores, labels), abs=1e-12)
    perm = rng.permutation(n)
    assert aupr(scores[perm], np.asarray(labels)[perm]) == pytest.approx(aupr(scores, labels), abs=1e-12)


def test_binary_labels():
    labels = ["none", "mild", "high", AmbiguityLabel.HIGH]
    assert binary_labels(labels) == [0, 0, 1, 1]
    assert binary_labels(labels, positive="mild&high") == [0, 1, 1, 1]
    with pytest.raises(ValueError):
        binary_labels(labels, positive="low")
    with pytest.raises(ValueError):
        binary_labels(["bogus"])


def test_score_file_round_trip(tmp_path):
    recs = [record([[0.5, 0.5], [0.9, 0.1]])]
    pu = program_uncertainty(recs, [beam([0.6, 0.2], 3), beam([0.3, 0.7], 4)])
    rows = [score_row("q0", pu), score_row("q1", program_uncertainty(recs))]
    path = tmp_path / "scores.csv"
    write_scores(rows, path)
    back = read_scores(path)
    assert path.read_text().splitlines()[0] == "question_id,max_u_data,max_u_model,max_H,max_H_single,U_total,U_model,U_data"
    assert back[0]["question_id"] == "q0"
    assert back[0]["max_u_data"] == pytest.approx(pu.max_u_data, rel=1e-11)
    assert math.isnan(back[1]["U_total"])
    assert {k for k in SCORE_KINDS} >= {"max_u_data", "program_U_data"}
