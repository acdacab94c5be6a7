"""Post-hoc calibrators fit with an (optionally importance-weighted) loss.

Every ``fit_*`` function takes a per-sample weight vector.  Passing all ones
gives the usual source-validation calibrator; passing density ratios
``p_target(x) / p_source(x)`` evaluated on source samples makes the fitted
loss an estimate of the loss on the target domain.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from . import learner
from .errors import DegenerateWeightsError, ShapeError, ShiftCalError
from .learner import LOG_PROB_FLOOR, LearnerConfig, log_softmax, softmax

TEMPERATURE_BOUNDS = (1e-2, 1e2)
TEMPERATURE_TOL = 1e-6

PLATT_CONFIG = LearnerConfig(architecture="linear", learning_rate=1.0, max_epochs=5000,
                             tolerance=1e-12)

__all__ = [
    "Calibrator",
    "PlattCalibrator",
    "TemperatureCalibrator",
    "IsotonicCalibrator",
    "FitRecord",
    "fit_platt",
    "fit_temperature",
    "fit_isotonic",
    "fit_isotonic_logits",
    "isotonic_targets",
    "pava",
    "apply",
    "fit_calibrator",
    "load_calibrator",
]


@dataclass(frozen=True)
class FitRecord:
    weights_used: str = "uniform"
    n_fit: int = 0
    final_loss: float = float("nan")


def _weights_kind(weights, n):
    if weights is None:
        return "uniform"
    w = np.asarray(weights, dtype=np.float64)
    return "uniform" if w.size and np.all(w == w[0]) else "importance"


def _check_logits(logits, k=None):
    Z = np.asarray(logits, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ShapeError(f"expected an (n, K) logit matrix with K >= 2, got shape {Z.shape}")
    if k is not None and Z.shape[1] != k:
        raise ShapeError(f"calibrator expects {k} classes, got {Z.shape[1]}")
    return Z


class Calibrator:
    """Common interface: ``apply`` maps logits to calibrated probabilities."""

    kind: ClassVar[str] = ""
    _registry: ClassVar[dict] = {}

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.kind:
            Calibrator._registry[cls.kind] = cls

    def apply(self, logits) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def _params(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError

    def to_dict(self) -> dict:
        rec = self.fit_record
        return {
            "kind": self.kind,
            "params": self._params(),
            "fit_record": {"weights_used": rec.weights_used, "n_fit": rec.n_fit,
                           "final_loss": rec.final_loss},
        }

    @staticmethod
    def from_dict(d: dict) -> "Calibrator":
        try:
            cls = Calibrator._registry[d["kind"]]
        except KeyError:
            raise ShiftCalError(f"unknown calibrator kind {d.get('kind')!r}") from None
        return cls._from_params(d["params"], FitRecord(**d.get("fit_record", {})))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)


def load_calibrator(path) -> Calibrator:
    with open(path) as f:
        return Calibrator.from_dict(json.load(f))


@dataclass(frozen=True, eq=False)
class PlattCalibrator(Calibrator):
    """``softmax(z @ weight_matrix + bias)``; may change the predicted class."""

    kind: ClassVar[str] = "platt"
    weight_matrix: np.ndarray
    bias: np.ndarray
    fit_record: FitRecord = field(default_factory=FitRecord)

    @classmethod
    def identity(cls, k: int) -> "PlattCalibrator":
        return cls(np.eye(k), np.zeros(k))

    def apply(self, logits) -> np.ndarray:
        Z = _check_logits(logits, self.bias.size)
        return softmax(Z @ self.weight_matrix + self.bias)

    def _params(self):
        return {"weight_matrix": np.asarray(self.weight_matrix).tolist(),
                "bias": np.asarray(self.bias).tolist()}

    @classmethod
    def _from_params(cls, p, rec):
        return cls(np.array(p["weight_matrix"], dtype=np.float64),
                   np.array(p["bias"], dtype=np.float64), rec)


@dataclass(frozen=True)
class TemperatureCalibrator(Calibrator):
    """``softmax(z / temperature)``; never changes the predicted class."""

    kind: ClassVar[str] = "temperature"
    temperature: float = 1.0
    fit_record: FitRecord = field(default_factory=FitRecord)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")

    def apply(self, logits) -> np.ndarray:
        return softmax(_check_logits(logits) / self.temperature)

    def _params(self):
        return {"temperature": self.temperature}

    @classmethod
    def _from_params(cls, p, rec):
        return cls(float(p["temperature"]), rec)


@dataclass(frozen=True, eq=False)
class IsotonicCalibrator(Calibrator):
    """Non-decreasing step function from a confidence score to a probability.

    ``mode="binary"`` maps ``P(Y=1)`` of a two-class model.  ``mode="top_label"``
    maps the top-label confidence and rescales the remaining classes so each
    row still sums to one.  ``values[j]`` applies to scores in
    ``[breakpoints[j], breakpoints[j+1])``; scores below the first breakpoint
    take ``values[0]``.
    """

    kind: ClassVar[str] = "isotonic"
    breakpoints: np.ndarray
    values: np.ndarray
    mode: str = "binary"
    fit_record: FitRecord = field(default_factory=FitRecord)

    def __post_init__(self):
        if self.mode not in ("binary", "top_label"):
            raise ValueError(f"unknown isotonic mode {self.mode!r}")

    def map_scores(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        j = np.searchsorted(self.breakpoints, s, side="right") - 1
        return self.values[np.clip(j, 0, self.values.size - 1)]

    def apply(self, logits_or_scores) -> np.ndarray:
        """Calibrated probabilities.

        A 1-d input is read as ``P(Y=1)`` scores (binary mode only); a 2-d
        input is read as logits.
        """
        x = np.asarray(logits_or_scores, dtype=np.float64)
        if x.ndim == 1:
            if self.mode != "binary":
                raise ShapeError("1-d scores are only accepted by a binary isotonic calibrator")
            g = self.map_scores(x)
            return np.column_stack([1.0 - g, g])
        Z = _check_logits(x)
        P = softmax(Z)
        if self.mode == "binary":
            if Z.shape[1] != 2:
                raise ShapeError("binary isotonic calibrator needs two-class logits")
            g = self.map_scores(P[:, 1])
            return np.column_stack([1.0 - g, g])
        n, k = P.shape
        top = P.argmax(axis=1)
        conf = P[np.arange(n), top]
        g = self.map_scores(conf)
        rest = 1.0 - conf
        out = np.empty_like(P)
        safe = rest > 0
        scale = np.where(safe, (1.0 - g) / np.where(safe, rest, 1.0), 0.0)
        out[:] = P * scale[:, None]
        out[~safe] = ((1.0 - g[~safe]) / (k - 1))[:, None]
        out[np.arange(n), top] = g
        return out

    def _params(self):
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist(),
                "mode": self.mode}

    @classmethod
    def _from_params(cls, p, rec):
        return cls(np.array(p["breakpoints"], dtype=np.float64),
                   np.array(p["values"], dtype=np.float64), p.get("mode", "binary"), rec)


def apply(cal: Calibrator, logits_or_scores) -> np.ndarray:
    return cal.apply(logits_or_scores)


def fit_platt(logits, labels, weights=None, config: LearnerConfig = PLATT_CONFIG) -> PlattCalibrator:
    """Multinomial logistic regression on the logits, started from the identity map."""
    Z = _check_logits(logits)
    y = np.asarray(labels, dtype=np.int64)
    k = Z.shape[1]
    w = learner.check_weights(weights, Z.shape[0])
    start = learner.ProbabilisticModel((np.eye(k),), (np.zeros(k),))
    model = learner.fit(config, Z, y, w, n_classes=k, init=start)
    rec = FitRecord(_weights_kind(weights, Z.shape[0]), Z.shape[0], model.training_loss_trace[-1])
    return PlattCalibrator(model.weights[0].copy(), model.biases[0].copy(), rec)


def _temperature_loss(Z, y, w, log_t):
    logp = log_softmax(Z / math.exp(log_t))
    picked = np.maximum(logp[np.arange(Z.shape[0]), y], LOG_PROB_FLOOR)
    return -float(np.dot(w, picked))


def golden_section(f, a, b, tol):
    """Minimize a unimodal ``f`` on ``[a, b]`` until the bracket is narrower than ``tol``."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_temperature(logits, labels, weights=None, bounds=TEMPERATURE_BOUNDS,
                    tol=TEMPERATURE_TOL) -> TemperatureCalibrator:
    """Golden-section search for the temperature on a log scale.

    A warning is issued when the optimum lands on either end of ``bounds``.
    """
    Z = _check_logits(logits)
    y = np.asarray(labels, dtype=np.int64)
    w = learner.check_weights(weights, Z.shape[0])
    w = w / w.sum()
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    log_t = golden_section(lambda t: _temperature_loss(Z, y, w, t), lo, hi, tol)
    if log_t - lo < 10 * tol or hi - log_t < 10 * tol:
        warnings.warn(f"temperature {math.exp(log_t):.4g} is at the search boundary {bounds}",
                      RuntimeWarning, stacklevel=2)
    t = math.exp(log_t)
    rec = FitRecord(_weights_kind(weights, Z.shape[0]), Z.shape[0],
                    _temperature_loss(Z, y, w, log_t))
    return TemperatureCalibrator(t, rec)


def pava(values, weights):
    """Weighted pool-adjacent-violators on an already sorted sequence.

    Returns the non-decreasing fit minimizing ``sum w_i (g_i - v_i)^2``.
    All weights must be positive.
    """
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    means, wsum, sizes = [], [], []
    for vi, wi in zip(v.tolist(), w.tolist()):
        m, s, c = vi, wi, 1
        while means and means[-1] > m:
            pm, ps, pc = means.pop(), wsum.pop(), sizes.pop()
            m = (pm * ps + m * s) / (ps + s)
            s += ps
            c += pc
        means.append(m)
        wsum.append(s)
        sizes.append(c)
    return np.repeat(means, sizes)


def fit_isotonic(confidence_scores, correctness, weights=None, mode="binary") -> IsotonicCalibrator:
    """Weighted isotonic regression of correctness on confidence.

    Equal scores are first pooled into one point carrying their weighted
    mean and total weight, which makes the minimizer unique.  Zero-weight
    samples do not enter the fit.
    """
    s = np.asarray(confidence_scores, dtype=np.float64)
    c = np.asarray(correctness, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ShapeError("isotonic calibration needs a non-empty score vector")
    if c.shape != s.shape:
        raise ShapeError(f"correctness {c.shape} does not match scores {s.shape}")
    if np.any((s < 0) | (s > 1)) or not np.all(np.isfinite(s)):
        raise ValueError("scores must lie in [0, 1]")
    w = learner.check_weights(weights, s.size)
    keep = w > 0
    s_k, c_k, w_k = s[keep], c[keep], w[keep]
    uniq, inv = np.unique(s_k, return_inverse=True)
    tw = np.bincount(inv, weights=w_k)
    tv = np.bincount(inv, weights=w_k * c_k) / tw
    fitted = np.clip(pava(tv, tw), 0.0, 1.0)
    wn = w / w.sum()
    g = fitted[np.clip(np.searchsorted(uniq, s, side="right") - 1, 0, uniq.size - 1)]
    loss = float(np.dot(wn, (g - c) ** 2))
    return IsotonicCalibrator(uniq, fitted, mode, FitRecord(_weights_kind(weights, s.size), s.size, loss))


def isotonic_targets(logits, labels):
    """Scores, 0/1 targets and mode used to fit an isotonic map on a classifier.

    Two classes: ``P(Y=1)`` against ``y == 1``.  More classes: top-label
    confidence against top-label correctness.
    """
    Z = _check_logits(logits)
    y = np.asarray(labels, dtype=np.int64)
    P = softmax(Z)
    if Z.shape[1] == 2:
        return P[:, 1], (y == 1).astype(np.float64), "binary"
    pred = P.argmax(axis=1)
    return P[np.arange(P.shape[0]), pred], (pred == y).astype(np.float64), "top_label"


def fit_isotonic_logits(logits, labels, weights=None) -> IsotonicCalibrator:
    s, c, mode = isotonic_targets(logits, labels)
    return fit_isotonic(s, c, weights, mode)


_FITTERS = {
    "platt": fit_platt,
    "temperature": fit_temperature,
    "isotonic": fit_isotonic_logits,
}


def fit_calibrator(kind: str, logits, labels, weights=None) -> Calibrator:
    """Dispatch on ``kind`` in ``{"platt", "temperature", "isotonic"}``."""
    try:
        fitter = _FITTERS[kind]
    except KeyError:
        raise ShiftCalError(f"unknown calibrator {kind!r}") from None
    if weights is not None and not np.asarray(weights, dtype=np.float64).sum() > 0:
        raise DegenerateWeightsError("weights sum to zero")
    return fitter(logits, labels, weights)
