"""
Ensemble uncertainty: per-token entropy decomposition, the max-token
ambiguity detector, a sequence-level (beam) baseline, and detection metrics.

For a token with member distributions p_1..p_M over a shared vocabulary:

    H_m     = -sum_v p_m(v) log p_m(v)           (natural log, 0 log 0 = 0)
    H       = entropy of the member mean
    u_data  = mean_m H_m                         (expected entropy)
    u_model = H - u_data                         (mutual information, >= 0)

A question is flagged when the largest per-token score exceeds a threshold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import entr, logsumexp
from scipy.stats import rankdata

from .surrogate import BeamHypothesis, TokenRecord

__all__ = [
    "SCORE_KINDS",
    "TokenUncertainty",
    "ProgramUncertainty",
    "DetectorConfig",
    "AmbiguityLabel",
    "MetricError",
    "decompose",
    "token_entropies",
    "program_uncertainty",
    "program_level_uncertainty",
    "detect_ambiguous",
    "auroc",
    "aupr",
    "detection_metrics",
    "binary_labels",
    "score_row",
    "write_scores",
    "read_scores",
]

SCORE_KINDS = ("max_u_data", "max_u_model", "max_H", "max_H_single",
               "program_U_total", "program_U_model", "program_U_data")

SUM_TOL = 1e-6


@dataclass(frozen=True)
class TokenUncertainty:
    position: int
    H_m: tuple[float, ...]
    H: float
    u_data: float
    u_model: float


def decompose(probs) -> tuple[np.ndarray, float, float, float]:
    """(H_m, H, u_data, u_model) for an M x V matrix of member distributions."""
    p = np.asarray(probs, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise ValueError(f"expected an M x V matrix, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and non-negative")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > SUM_TOL):
        raise ValueError(f"distribution sums {sums.tolist()} differ from 1 by more than {SUM_TOL}")
    h_m = entr(p).sum(axis=1)
    u_data = float(h_m.mean())
    if p.shape[0] == 1:
        # a single member has no disagreement; skip the round-off of mean-of-one
        return h_m, float(h_m[0]), u_data, 0.0
    h = float(entr(p.mean(axis=0)).sum())
    return h_m, h, u_data, h - u_data


def token_entropies(record: TokenRecord) -> TokenUncertainty:
    h_m, h, u_data, u_model = decompose(record.matrix())
    return TokenUncertainty(record.position, tuple(h_m.tolist()), h, u_data, u_model)


def program_level_uncertainty(beams: Sequence[BeamHypothesis]) -> tuple[float, float, float]:
    """Importance-weighted sequence uncertainty over beam hypotheses.

    Each beam b carries member log-probabilities log P_m(y_b) and a length L_b.
    Weights are w_b proportional to exp(mean_m log P_m(y_b)); with
    log Pbar = log mean_m P_m,

        U_total = -sum_b w_b log Pbar(y_b) / L_b
        U_model = (1/M) sum_m sum_b w_b (log Pbar(y_b) - log P_m(y_b)) / L_b
        U_data  = U_total - U_model
    """
    if not beams:
        raise ValueError("need at least one beam")
    rows = [b.member_logprobs or (b.logprob,) for b in beams]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("beams disagree on ensemble size")
    lp = np.array(rows, dtype=float)  # beams x members
    lengths = np.array([max(b.length, 1) for b in beams], dtype=float)
    m = lp.shape[1]
    score = lp.mean(axis=1)
    w = np.exp(score - logsumexp(score))
    log_pbar = logsumexp(lp, axis=1) - math.log(m)
    u_total = float(-(w * log_pbar / lengths).sum()) + 0.0  # no negative zero
    if m == 1:
        return u_total, 0.0, u_total
    u_model = float((w[:, None] * (log_pbar[:, None] - lp) / lengths[:, None]).sum() / m)
    return u_total, u_model, u_total - u_model


@dataclass
class ProgramUncertainty:
    tokens: list[TokenUncertainty]
    U_total: float = float("nan")
    U_model: float = float("nan")
    U_data: float = float("nan")
    max_H_single: float = 0.0

    @property
    def U(self) -> list[float]:
        return [t.u_data for t in self.tokens]

    @property
    def max_u_data(self) -> float:
        return max(self.U)

    @property
    def max_u_model(self) -> float:
        return max(t.u_model for t in self.tokens)

    @property
    def max_H(self) -> float:
        return max(t.H for t in self.tokens)

    def score(self, kind: str) -> float:
        if kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {kind!r}")
        if kind.startswith("program_"):
            return getattr(self, kind[len("program_"):])
        return getattr(self, kind)

    def argmax_position(self) -> int:
        return self.tokens[int(np.argmax(self.U))].position


def program_uncertainty(records: Sequence[TokenRecord],
                        beams: Sequence[BeamHypothesis] | None = None) -> ProgramUncertainty:
    """Token series plus (when beams are given) the sequence-level scores.

    ``max_H_single`` is the largest token entropy of the first member alone,
    the score a single model would give.
    """
    if not records:
        raise ValueError("empty token series")
    toks = [token_entropies(r) for r in records]
    pu = ProgramUncertainty(toks, max_H_single=max(t.H_m[0] for t in toks))
    if beams:
        pu.U_total, pu.U_model, pu.U_data = program_level_uncertainty(beams)
    return pu


@dataclass(frozen=True)
class DetectorConfig:
    tau: float
    kind: str = "max_u_data"

    def __post_init__(self):
        if not math.isfinite(self.tau):
            raise ValueError("threshold must be finite")
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")


def detect_ambiguous(pu: ProgramUncertainty, cfg: DetectorConfig) -> int:
    """1 if the configured score is strictly above the threshold, else 0."""
    return int(pu.score(cfg.kind) > cfg.tau)


# -- labels and metrics ----------------------------------------------------------


class AmbiguityLabel(str, Enum):
    NONE = "none"
    MILD = "mild"
    HIGH = "high"


def binary_labels(labels: Iterable[AmbiguityLabel | str], positive: str = "high") -> list[int]:
    """Reduce three-way labels to 0/1.

    ``positive="high"``: high -> 1, none/mild -> 0.
    ``positive="mild&high"``: mild/high -> 1, none -> 0.
    """
    if positive == "high":
        pos = {AmbiguityLabel.HIGH}
    elif positive in ("mild&high", "mild_high"):
        pos = {AmbiguityLabel.MILD, AmbiguityLabel.HIGH}
    else:
        raise ValueError(f"unknown reduction {positive!r}")
    return [int(AmbiguityLabel(x) in pos) for x in labels]


class MetricError(ValueError):
    pass


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape or len(s) < 2:
        raise MetricError("scores and labels must be equal-length lists of at least 2")
    if not set(np.unique(y).tolist()) <= {0, 1}:
        raise MetricError("labels must be 0/1")
    if y.min() == y.max():
        raise MetricError("both classes must be present")
    return s, y.astype(bool)


def auroc(scores, labels) -> float:
    """Mann-Whitney rank statistic; tied scores count one half."""
    s, y = _check(scores, labels)
    ranks = rankdata(s)  # average ranks for ties
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Average precision: sum over distinct thresholds of (recall gain) x precision.

    Tied scores enter together, so the result does not depend on input order.
    """
    s, y = _check(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]  # end of each tie group
    tp = np.cumsum(y)[last]
    precision = tp / (last + 1)
    recall = tp / y.sum()
    gain = np.diff(np.r_[0.0, recall])
    return float((gain * precision).sum())


def detection_metrics(scores, labels) -> tuple[float, float]:
    return auroc(scores, labels), aupr(scores, labels)


# -- score rows ------------------------------------------------------------------

SCORE_COLUMNS = ("question_id", "max_u_data", "max_u_model", "max_H", "max_H_single",
                 "U_total", "U_model", "U_data")


def score_row(question_id: str, pu: ProgramUncertainty) -> dict:
    return {
        "question_id": question_id,
        "max_u_data": pu.max_u_data,
        "max_u_model": pu.max_u_model,
        "max_H": pu.max_H,
        "max_H_single": pu.max_H_single,
        "U_total": pu.U_total,
        "U_model": pu.U_model,
        "U_data": pu.U_data,
    }


def write_scores(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=SCORE_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if k == "question_id" else f"{r[k]:.12g}") for k in SCORE_COLUMNS})


def read_scores(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return [
            {k: (v if k == "question_id" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(f)
        ]
