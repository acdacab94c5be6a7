"""Expected calibration error, reliability bins, accuracy and NLL."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ShapeError
from .learner import PROB_FLOOR

DEFAULT_BINS = 15

Method = Literal["uncalibrated", "unweighted", "weighted", "using_target"]
METHODS: tuple = ("uncalibrated", "unweighted", "weighted", "using_target")

__all__ = [
    "DEFAULT_BINS",
    "METHODS",
    "ReliabilityBins",
    "EvaluationReport",
    "confidence_and_prediction",
    "reliability_bins",
    "ece",
    "accuracy",
    "nll",
    "reliability_csv",
    "evaluate",
]


def _check(probs, labels):
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or y.shape != (P.shape[0],):
        raise ShapeError(f"probs {P.shape} and labels {y.shape} do not match")
    return P, y


def confidence_and_prediction(probs):
    """Row max and row argmax; ``np.argmax`` already breaks ties toward the lower index."""
    P = np.asarray(probs, dtype=np.float64)
    pred = P.argmax(axis=1)
    return P[np.arange(P.shape[0]), pred], pred


@dataclass(frozen=True, eq=False)
class ReliabilityBins:
    """Per-bin counts, accuracies and mean confidences over ``((m-1)/M, m/M]``.

    Empty bins carry ``accuracy = confidence = 0`` and ``empty = True``.
    """

    counts: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray

    @property
    def m_bins(self) -> int:
        return self.counts.size

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.m_bins + 1) / self.m_bins

    def to_dict(self) -> dict:
        return {
            "m_bins": self.m_bins,
            "counts": self.counts.tolist(),
            "accuracy": self.accuracy.tolist(),
            "confidence": self.confidence.tolist(),
        }


def reliability_bins(probs, labels, m_bins: int = DEFAULT_BINS) -> ReliabilityBins:
    """Group samples by top-label confidence into ``m_bins`` equal-width bins.

    Sample ``i`` lands in bin ``m`` iff its confidence lies in ``((m-1)/M, m/M]``;
    a confidence of exactly 0 goes to the first bin.
    """
    if m_bins < 1:
        raise ValueError("m_bins must be >= 1")
    P, y = _check(probs, labels)
    counts = np.zeros(m_bins, dtype=np.int64)
    acc = np.zeros(m_bins)
    conf = np.zeros(m_bins)
    if P.shape[0] == 0:
        return ReliabilityBins(counts, acc, conf)
    c, pred = confidence_and_prediction(P)
    upper = np.arange(1, m_bins + 1) / m_bins
    idx = np.minimum(np.searchsorted(upper, c, side="left"), m_bins - 1)
    correct = (pred == y).astype(np.float64)
    counts = np.bincount(idx, minlength=m_bins)
    sums_acc = np.bincount(idx, weights=correct, minlength=m_bins)
    sums_conf = np.bincount(idx, weights=c, minlength=m_bins)
    nz = counts > 0
    acc[nz] = sums_acc[nz] / counts[nz]
    conf[nz] = sums_conf[nz] / counts[nz]
    return ReliabilityBins(counts, acc, conf)


def ece(bins: ReliabilityBins) -> float:
    """Bin-mass-weighted mean of ``|acc - conf|``; 0 when there are no samples."""
    n = bins.n
    if n == 0:
        return 0.0
    nz = ~bins.empty
    return float(np.sum(bins.counts[nz] / n * np.abs(bins.accuracy[nz] - bins.confidence[nz])))


def accuracy(probs, labels) -> float:
    P, y = _check(probs, labels)
    return float(np.mean(P.argmax(axis=1) == y))


def nll(probs, labels) -> float:
    P, y = _check(probs, labels)
    picked = np.maximum(P[np.arange(P.shape[0]), y], PROB_FLOOR)
    return float(-np.mean(np.log(picked)))


def reliability_csv(bins: ReliabilityBins) -> list:
    """Rows ``[bin_low, bin_high, count, acc, conf, gap]`` preceded by a header row.

    Empty bins report empty strings for acc, conf and gap.
    """
    rows = [["bin_low", "bin_high", "count", "acc", "conf", "gap"]]
    e = bins.edges
    for m in range(bins.m_bins):
        if bins.counts[m]:
            a, c = float(bins.accuracy[m]), float(bins.confidence[m])
            rows.append([float(e[m]), float(e[m + 1]), int(bins.counts[m]), a, c, a - c])
        else:
            rows.append([float(e[m]), float(e[m + 1]), 0, "", "", ""])
    return rows


@dataclass(frozen=True)
class EvaluationReport:
    """Metrics for one (method, calibrator) cell on one evaluation set."""

    ece: float
    accuracy: float
    nll: float
    bins: ReliabilityBins
    method: str = "uncalibrated"
    diagnostics: dict | None = field(default=None)

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "ece": self.ece,
            "accuracy": self.accuracy,
            "nll": self.nll,
            "bins": self.bins.to_dict(),
        }
        if self.diagnostics is not None:
            d["diagnostics"] = self.diagnostics
        return d


def evaluate(probs, labels, m_bins: int = DEFAULT_BINS, method: str = "uncalibrated",
             diagnostics: dict | None = None) -> EvaluationReport:
    bins = reliability_bins(probs, labels, m_bins)
    return EvaluationReport(ece(bins), accuracy(probs, labels), nll(probs, labels), bins,
                            method, diagnostics)
