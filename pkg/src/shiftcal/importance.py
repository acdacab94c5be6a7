"""Density-ratio weights: discriminator estimation, corrections, diagnostics.

A discriminator trained to tell source (d=1) from target (d=0) samples gives

    p_target(x) / p_source(x) = (n_source / n_target) * P(d=0 | x) / P(d=1 | x)

where the prior odds are estimated by the two training-set sizes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import learner
from .errors import DegenerateWeightsError, ParseError, ShapeError
from .learner import LearnerConfig, ProbabilisticModel

log = logging.getLogger(__name__)

DISCRIMINATOR_CLAMP = 1e-6

# A little shrinkage keeps the held-out ratio from being inflated by overfitting.
DEFAULT_DISCRIMINATOR = LearnerConfig(architecture="mlp", hidden_units=(16,), activation="tanh",
                                      l2_penalty=1e-3, optimizer="lbfgs", max_epochs=200,
                                      tolerance=1e-10)

__all__ = [
    "ImportanceWeights",
    "RatioDiagnostics",
    "DEFAULT_DISCRIMINATOR",
    "estimate_weights_discriminator",
    "weights_from_discriminator",
    "self_normalize",
    "flatten",
    "clip",
    "add_weight_noise",
    "apply_corrections",
    "renyi_divergence_estimate",
    "renyi_divergence_discrete",
    "weighted_loss_variance_diagnostic",
    "effective_sample_size",
    "read_weights_csv",
    "write_weights_csv",
]


@dataclass(frozen=True, eq=False)
class ImportanceWeights:
    """Nonnegative per-sample weights plus where they came from.

    ``provenance`` is ``"ground-truth"``, ``"discriminator"`` or ``"noisy"``
    (with ``sigma`` set).  ``corrections`` lists ``(name, params)`` pairs in
    the order they were applied.
    """

    values: np.ndarray
    provenance: str = "ground-truth"
    sigma: float | None = None
    corrections: tuple = field(default=())

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ShapeError(f"weights must be a vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DegenerateWeightsError("importance weights must be finite and nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "corrections",
                           tuple((name, dict(params)) for name, params in self.corrections))

    def __len__(self):
        return self.values.size

    def _with(self, values, name, **params):
        return replace(self, values=values, corrections=self.corrections + ((name, params),))

    def subset(self, idx) -> "ImportanceWeights":
        return replace(self, values=self.values[idx])


@dataclass(frozen=True)
class RatioDiagnostics:
    """Variance diagnostics for an importance-weighted loss.

    ``bound`` plugs the weighted mean loss in as the target-domain loss;
    ``bound_weighted_reading`` plugs in the target mean of the already
    weighted loss instead (estimated by ``mean(w**2 * loss)``).  Both bounds
    assume losses in ``[0, 1]``.
    """

    renyi_alpha: float
    renyi_divergence_estimate: float
    weight_variance: float
    effective_sample_size: float
    weighted_loss_variance: float = float("nan")
    target_loss_estimate: float = float("nan")
    bound: float = float("nan")
    bound_weighted_reading: float = float("nan")
    respects_bound: bool = True
    respects_bound_weighted_reading: bool = True

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def weights_from_discriminator(model: ProbabilisticModel, X, n_source: int, n_target: int) -> np.ndarray:
    """Ratio estimate at ``X`` from a two-class discriminator whose class 1 is source."""
    p_src = model.predict_proba(X)[:, 1]
    p_src = np.clip(p_src, DISCRIMINATOR_CLAMP, 1.0 - DISCRIMINATOR_CLAMP)
    return (n_source / n_target) * (1.0 - p_src) / p_src


def estimate_weights_discriminator(source_features, target_features,
                                   config: LearnerConfig = DEFAULT_DISCRIMINATOR,
                                   evaluate_on=None, return_model=False):
    """Estimate ``p_target / p_source`` with a source-vs-target classifier.

    The discriminator is trained on ``source_features`` (label 1) and
    ``target_features`` (label 0).  Weights are returned for
    ``evaluate_on`` when given, else for the source training samples.
    """
    Xs = np.asarray(source_features, dtype=np.float64)
    Xt = np.asarray(target_features, dtype=np.float64)
    if Xs.ndim != 2 or Xt.ndim != 2 or Xs.shape[1] != Xt.shape[1]:
        raise ShapeError(f"source {Xs.shape} and target {Xt.shape} feature shapes do not match")
    if Xs.shape[0] == 0 or Xt.shape[0] == 0:
        raise ShapeError("source and target sets must be non-empty")
    X = np.vstack([Xs, Xt])
    d = np.concatenate([np.ones(Xs.shape[0], dtype=np.int64), np.zeros(Xt.shape[0], dtype=np.int64)])
    model = learner.fit(config, X, d, n_classes=2)
    at = Xs if evaluate_on is None else np.asarray(evaluate_on, dtype=np.float64)
    w = ImportanceWeights(weights_from_discriminator(model, at, Xs.shape[0], Xt.shape[0]),
                          provenance="discriminator")
    return (w, model) if return_model else w


def self_normalize(w: ImportanceWeights) -> ImportanceWeights:
    """Rescale so the weights average to one."""
    total = w.values.sum()
    if not total > 0:
        raise DegenerateWeightsError("cannot normalize weights that sum to zero")
    return w._with(w.values * (w.values.size / total), "self_normalize")


def flatten(w: ImportanceWeights, alpha: float) -> ImportanceWeights:
    """Raise every weight to the power ``alpha`` in ``[0, 1]``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"flatten alpha must lie in [0, 1], got {alpha}")
    return w._with(np.power(w.values, alpha), "flatten", alpha=alpha)


def clip(w: ImportanceWeights, c: float) -> ImportanceWeights:
    """Cap every weight at ``c``."""
    if not c > 0:
        raise ValueError(f"clip threshold must be > 0, got {c}")
    return w._with(np.minimum(w.values, c), "clip", c=c)


def add_weight_noise(w: ImportanceWeights, sigma: float, seed: int) -> ImportanceWeights:
    """Add N(0, sigma^2) noise to each weight and truncate at zero."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return replace(w, provenance="noisy", sigma=0.0)
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=w.values.size)
    return replace(w, values=np.maximum(0.0, w.values + noise), provenance="noisy",
                   sigma=float(sigma))


_CORRECTIONS = {
    "self_normalize": lambda w, p: self_normalize(w),
    "flatten": lambda w, p: flatten(w, p["alpha"]),
    "clip": lambda w, p: clip(w, p["c"]),
}


def apply_corrections(w: ImportanceWeights, corrections) -> ImportanceWeights:
    """Apply ``[{"name": "clip", "c": 10}, {"name": "self_normalize"}, ...]`` in order."""
    for spec in corrections:
        spec = dict(spec)
        name = spec.pop("name")
        if name not in _CORRECTIONS:
            raise ValueError(f"unknown weight correction {name!r}")
        w = _CORRECTIONS[name](w, spec)
    return w


def effective_sample_size(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    sq = float(np.dot(v, v))
    return float(v.sum() ** 2 / sq) if sq > 0 else 0.0


def _normalized_values(w):
    v = w.values if isinstance(w, ImportanceWeights) else np.asarray(w, dtype=np.float64)
    mean = v.mean()
    if not mean > 0:
        raise DegenerateWeightsError("weights sum to zero")
    if abs(mean - 1.0) > 1e-12:
        log.debug("renormalizing weights with mean %.6g before divergence estimate", mean)
        v = v / mean
    return v


def renyi_divergence_estimate(w, alpha: float) -> float:
    """Plug-in exponentiated Renyi divergence of order ``alpha + 1``.

    Computes ``mean(w ** (alpha + 1)) ** (1 / alpha)`` over source samples after
    rescaling the weights to mean one.  Equals 1 for identical distributions.
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    v = _normalized_values(w)
    return float(np.mean(v ** (alpha + 1.0)) ** (1.0 / alpha))


def renyi_divergence_discrete(p_target, p_source, alpha: float) -> float:
    """Closed form ``(sum_k p_target[k]**(alpha+1) / p_source[k]**alpha) ** (1/alpha)``."""
    pt = np.asarray(p_target, dtype=np.float64)
    ps = np.asarray(p_source, dtype=np.float64)
    pt, ps = pt / pt.sum(), ps / ps.sum()
    return float(np.sum(pt ** (alpha + 1.0) / ps ** alpha) ** (1.0 / alpha))


def weighted_loss_variance_diagnostic(losses, w, alpha: float = 1.0) -> RatioDiagnostics:
    """Compare the empirical variance of ``w * loss`` with its divergence bound.

    The bound is ``d * E^(1 - 1/alpha) - E^2`` where ``d`` is the plug-in
    divergence of order ``alpha + 1`` and ``E`` the target-domain mean loss.
    Weights are rescaled to mean one first.
    """
    loss = np.asarray(losses, dtype=np.float64)
    v = _normalized_values(w)
    if loss.shape != v.shape:
        raise ShapeError(f"losses {loss.shape} and weights {v.shape} differ in length")
    d = renyi_divergence_estimate(v, alpha)
    wl = v * loss
    var = float(np.var(wl))
    e_plain = float(wl.mean())
    e_weighted = float(np.mean(v * wl))
    expo = 1.0 - 1.0 / alpha

    def bound(e):
        return d * (max(e, 0.0) ** expo if expo else 1.0) - e * e

    b1, b2 = bound(e_plain), bound(e_weighted)
    slack = 1e-12 * max(1.0, abs(b1), abs(b2))
    return RatioDiagnostics(
        renyi_alpha=float(alpha),
        renyi_divergence_estimate=d,
        weight_variance=float(np.var(v)),
        effective_sample_size=effective_sample_size(v),
        weighted_loss_variance=var,
        target_loss_estimate=e_plain,
        bound=b1,
        bound_weighted_reading=b2,
        respects_bound=bool(var <= b1 + slack),
        respects_bound_weighted_reading=bool(var <= b2 + slack),
    )


def write_weights_csv(w: ImportanceWeights, path) -> None:
    """One value per line after a ``# {json}`` header with provenance and corrections."""
    header = {"provenance": w.provenance, "sigma": w.sigma,
              "corrections": [[name, params] for name, params in w.corrections]}
    with open(path, "w") as f:
        f.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for v in w.values.tolist():
            f.write(repr(v) + "\n")


def read_weights_csv(path) -> ImportanceWeights:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ParseError("missing '# {...}' header", line=1)
    try:
        header = json.loads(lines[0][1:])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc}", line=1) from None
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            v = float(line)
        except ValueError:
            raise ParseError(f"not a number: {line!r}", line=lineno) from None
        if not math.isfinite(v) or v < 0:
            raise ParseError(f"weight must be finite and >= 0, got {line!r}", line=lineno)
        values.append(v)
    return ImportanceWeights(np.array(values), header.get("provenance", "ground-truth"),
                             header.get("sigma"),
                             tuple((n, p) for n, p in header.get("corrections", [])))
