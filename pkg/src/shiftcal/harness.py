"""End-to-end experiments: the four-baseline protocol, sweeps, and the 2-d demo.

One replication of :func:`run_experiment` does the following:

1. draw (or load) source and target data;
2. split the source 70/30 into train / validation and the target 70/30 into
   test / validation;
3. train the classifier on source-train;
4. compute importance weights for the source-validation samples;
5. for each calibrator, fit it on source-validation with uniform weights
   (``unweighted``), with importance weights (``weighted``) and on labeled
   target-validation (``using_target``);
6. evaluate those three and the raw classifier (``uncalibrated``) on target-test.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import dataset as ds
from . import importance as imp
from .calibration import Calibrator, fit_calibrator, fit_isotonic_logits
from .errors import ConfigError, ShiftCalError
from .learner import LearnerConfig, ProbabilisticModel, fit, softmax
from .metrics import DEFAULT_BINS, METHODS, EvaluationReport, evaluate, reliability_csv

log = logging.getLogger(__name__)

CALIBRATORS = ("platt", "temperature", "isotonic")
WEIGHT_MODES = ("ground_truth", "discriminator", "noisy_ground_truth")

# L2 shrinkage leaves the linear classifier underconfident on the source
# domain, which gives the calibrators something to correct.
DEFAULT_CLASSIFIER = LearnerConfig(architecture="linear", l2_penalty=0.05)

__all__ = [
    "FileSource",
    "WeightsSpec",
    "ExperimentConfig",
    "SweepSpec",
    "ExperimentResult",
    "SweepResult",
    "TwoGaussianBundle",
    "ReplicationSeeds",
    "replication_seeds",
    "prepare_splits",
    "compute_weights",
    "run_replication",
    "run_experiment",
    "run_sweep",
    "replicate_figure2",
    "pooled_std",
    "config_digest",
]


@dataclass(frozen=True)
class FileSource:
    """Datasets read from CSV files instead of being generated.

    ``weights`` optionally names a weights CSV with one ground-truth weight
    per source sample, in file order.
    """

    source: str
    target: str
    weights: str | None = None


@dataclass(frozen=True)
class WeightsSpec:
    """How the importance weights for source-validation samples are obtained.

    ``features="penultimate"`` feeds the discriminator the classifier's last
    hidden layer instead of the raw covariates.
    """

    mode: str = "ground_truth"
    sigma: float = 0.0
    discriminator: LearnerConfig = imp.DEFAULT_DISCRIMINATOR
    features: str = "covariates"

    def __post_init__(self):
        if self.mode not in WEIGHT_MODES:
            raise ConfigError(f"weights.mode must be one of {WEIGHT_MODES}, got {self.mode!r}")
        if self.sigma < 0:
            raise ConfigError("weights.sigma must be >= 0")
        if self.features not in ("covariates", "penultimate"):
            raise ConfigError("weights.features must be 'covariates' or 'penultimate'")


@dataclass(frozen=True)
class ExperimentConfig:
    generator: ds.MixtureShiftConfig | ds.GaussianShiftConfig | FileSource
    classifier: LearnerConfig = DEFAULT_CLASSIFIER
    calibrators: tuple = ("platt", "temperature")
    weights: WeightsSpec = field(default_factory=WeightsSpec)
    corrections: tuple = ({"name": "self_normalize"},)
    split_fraction: float = 0.7
    m_bins: int = DEFAULT_BINS
    n_replications: int = 10
    seed: int = 0
    validation_size: int | None = None
    renyi_alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "calibrators", tuple(self.calibrators))
        object.__setattr__(self, "corrections", tuple(dict(c) for c in self.corrections))
        bad = [c for c in self.calibrators if c not in CALIBRATORS]
        if bad or not self.calibrators:
            raise ConfigError(f"calibrators must be a non-empty subset of {CALIBRATORS}, got {bad}")
        if self.n_replications < 1:
            raise ConfigError("n_replications must be >= 1")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.m_bins < 1:
            raise ConfigError("m_bins must be >= 1")
        if self.validation_size is not None and self.validation_size < 1:
            raise ConfigError("validation_size must be >= 1")
        if not self.renyi_alpha > 0:
            raise ConfigError("renyi_alpha must be > 0")

    def to_dict(self) -> dict:
        return _config_to_dict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _config_from_dict(d)


def _learner_to_dict(c: LearnerConfig) -> dict:
    d = asdict(c)
    d["hidden_units"] = list(c.hidden_units)
    return d


def _generator_to_dict(g) -> dict:
    if isinstance(g, ds.MixtureShiftConfig):
        d = {"type": "mixture", "class_means": [list(m) for m in g.class_means],
             "source_ratio": list(g.source_ratio), "target_ratio": list(g.target_ratio),
             "n_source": g.n_source, "n_target": g.n_target}
        if g.class_covs is not None:
            d["class_covs"] = [[list(r) for r in c] for c in g.class_covs]
        return d
    if isinstance(g, ds.GaussianShiftConfig):
        return {"type": "gaussian", "source_mean": list(g.source_mean),
                "target_mean": list(g.target_mean),
                "source_cov": [list(r) for r in g.source_cov],
                "target_cov": [list(r) for r in g.target_cov],
                "label_fn": g.label_fn, "label_a": g.label_a, "label_b": g.label_b,
                "n_source": g.n_source, "n_target": g.n_target}
    return {"type": "files", "source": g.source, "target": g.target, "weights": g.weights}


def generator_from_dict(d: dict):
    """Build a generator config; mixtures may give ``dim``/``separation``/``means_seed``
    instead of explicit ``class_means``."""
    d = dict(d)
    kind = d.pop("type")
    if kind == "mixture":
        if "class_means" in d:
            return ds.MixtureShiftConfig(**d)
        return ds.MixtureShiftConfig.isotropic(
            d["source_ratio"], d["target_ratio"], dim=d.get("dim", 8),
            separation=d.get("separation", 3.0), n_source=d.get("n_source", 1000),
            n_target=d.get("n_target", 1000), means_seed=d.get("means_seed", 0))
    if kind == "gaussian":
        return ds.GaussianShiftConfig(**d)
    if kind == "files":
        return FileSource(d["source"], d["target"], d.get("weights"))
    raise ConfigError(f"unknown generator type {kind!r}")


def learner_from_dict(d: dict | None, default: LearnerConfig) -> LearnerConfig:
    if d is None:
        return default
    return replace(default, **d)


def _config_to_dict(c: ExperimentConfig) -> dict:
    return {
        "generator": _generator_to_dict(c.generator),
        "classifier": _learner_to_dict(c.classifier),
        "calibrators": list(c.calibrators),
        "weights": {"mode": c.weights.mode, "sigma": c.weights.sigma,
                    "discriminator": _learner_to_dict(c.weights.discriminator),
                    "features": c.weights.features},
        "corrections": [dict(x) for x in c.corrections],
        "split_fraction": c.split_fraction,
        "m_bins": c.m_bins,
        "n_replications": c.n_replications,
        "seed": c.seed,
        "validation_size": c.validation_size,
        "renyi_alpha": c.renyi_alpha,
    }


def _config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    w = dict(d.pop("weights", {}) or {})
    disc = learner_from_dict(w.pop("discriminator", None), imp.DEFAULT_DISCRIMINATOR)
    return ExperimentConfig(
        generator=generator_from_dict(d.pop("generator")),
        classifier=learner_from_dict(d.pop("classifier", None), DEFAULT_CLASSIFIER),
        weights=WeightsSpec(discriminator=disc, **w),
        **d,
    )


def config_digest(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def pooled_std(a, b) -> float:
    """``sqrt((var_a + var_b) / 2)`` with sample variances (ddof=1)."""
    return math.sqrt((_std(a) ** 2 + _std(b) ** 2) / 2.0)


def _std(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


class ReplicationSeeds(NamedTuple):
    data: int
    source_split: int
    target_split: int
    classifier: int
    weights: int
    subsample: int


def replication_seeds(seed: int) -> ReplicationSeeds:
    """Independent sub-seeds for one replication, derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(len(ReplicationSeeds._fields))
    return ReplicationSeeds(*(int(c.generate_state(1)[0]) for c in children))


def load_data(generator, data_seed: int):
    """Return ``(source, target, gt)`` where ``gt(idx)`` gives ground-truth weights of
    the source samples ``idx`` (or ``None`` when they are unknown)."""
    if isinstance(generator, ds.MixtureShiftConfig):
        source, target, gt = ds.generate_mixture_shift(generator, data_seed)
        return source, target, lambda idx: gt.values[idx]
    if isinstance(generator, ds.GaussianShiftConfig):
        source, target = ds.generate_gaussian_shift(generator, data_seed)
        return source, target, lambda idx: ds.gaussian_density_ratio(generator, source.features[idx])
    source, target = ds.read_csv(generator.source), ds.read_csv(generator.target)
    if source.dim != target.dim or source.n_classes != target.n_classes:
        raise ConfigError("source and target files disagree on d or k")
    gt = None
    if generator.weights is not None:
        gtw = imp.read_weights_csv(generator.weights)
        if len(gtw) != source.n:
            raise ConfigError(f"weights file has {len(gtw)} values for {source.n} source samples")
        gt = lambda idx: gtw.values[idx]  # noqa: E731
    return source, target, gt


class Splits(NamedTuple):
    source_train: np.ndarray
    source_val: np.ndarray
    target_test: np.ndarray
    target_val: np.ndarray


def prepare_splits(n_source, n_target, fraction, seeds: ReplicationSeeds,
                   validation_size=None) -> Splits:
    """Index splits for one replication; validation sets are optionally subsampled."""
    s_train, s_val = ds.split_indices(n_source, fraction, seeds.source_split)
    t_test, t_val = ds.split_indices(n_target, fraction, seeds.target_split)
    if validation_size is not None:
        rng = np.random.default_rng(seeds.subsample)
        if validation_size < s_val.size:
            s_val = np.sort(rng.choice(s_val, validation_size, replace=False))
        if validation_size < t_val.size:
            t_val = np.sort(rng.choice(t_val, validation_size, replace=False))
    assert np.intersect1d(t_test, t_val).size == 0
    assert np.intersect1d(s_train, s_val).size == 0
    return Splits(s_train, s_val, t_test, t_val)


def train_classifier(config: LearnerConfig, source: ds.LabeledDataset, splits: Splits,
                     seeds: ReplicationSeeds) -> ProbabilisticModel:
    cfg = replace(config, seed=seeds.classifier)
    return fit(cfg, source.features[splits.source_train], source.labels[splits.source_train],
               n_classes=source.n_classes)


def compute_weights(spec: WeightsSpec, corrections, source, target, splits: Splits,
                    seeds: ReplicationSeeds, gt=None, classifier=None) -> imp.ImportanceWeights:
    """Importance weights for the source-validation samples.

    The discriminator sees source-train features against every target
    feature (labels unused) and is evaluated on source-validation.
    """
    if spec.mode in ("ground_truth", "noisy_ground_truth"):
        if gt is None:
            raise ConfigError("ground-truth weights are not available for this data source")
        w = imp.ImportanceWeights(gt(splits.source_val), provenance="ground-truth")
        if spec.mode == "noisy_ground_truth":
            w = imp.add_weight_noise(w, spec.sigma, seeds.weights)
    else:
        feats = (lambda X: X) if spec.features == "covariates" else classifier.hidden
        disc = replace(spec.discriminator, seed=seeds.weights)
        w = imp.estimate_weights_discriminator(
            feats(source.features[splits.source_train]), feats(target.features),
            disc, evaluate_on=feats(source.features[splits.source_val]))
    return imp.apply_corrections(w, corrections)


def evaluate_calibrators(config: ExperimentConfig, model: ProbabilisticModel, source, target,
                         splits: Splits, weights: imp.ImportanceWeights):
    """Fit every calibrator three ways and evaluate all four methods on target-test.

    Returns ``(reports, calibrators, argmax_kept)``: ``reports[method][calibrator]``
    is an :class:`EvaluationReport`, ``calibrators[method][calibrator]`` the
    fitted :class:`Calibrator` (absent for ``uncalibrated``) and
    ``argmax_kept`` whether every temperature fit left every target-test
    prediction unchanged.
    """
    Zv = model.logits(source.features[splits.source_val])
    yv = source.labels[splits.source_val]
    Ztv = model.logits(target.features[splits.target_val])
    ytv = target.labels[splits.target_val]
    Zt = model.logits(target.features[splits.target_test])
    yt = target.labels[splits.target_test]

    raw = evaluate(softmax(Zt), yt, config.m_bins, "uncalibrated")
    reports = {m: {} for m in METHODS}
    fitted = {m: {} for m in METHODS if m != "uncalibrated"}
    argmax_kept = True
    for kind in config.calibrators:
        reports["uncalibrated"][kind] = raw
        fits = {
            "unweighted": fit_calibrator(kind, Zv, yv),
            "weighted": fit_calibrator(kind, Zv, yv, weights.values),
            "using_target": fit_calibrator(kind, Ztv, ytv),
        }
        for method, cal in fits.items():
            P = cal.apply(Zt)
            if kind == "temperature":
                argmax_kept &= bool(np.array_equal(P.argmax(axis=1), Zt.argmax(axis=1)))
            reports[method][kind] = evaluate(P, yt, config.m_bins, method)
            fitted[method][kind] = cal
    return reports, fitted, argmax_kept


@dataclass
class ReplicationResult:
    index: int
    seed: int
    reports: dict
    diagnostics: imp.RatioDiagnostics
    class_weight_means: dict
    temperature_argmax_preserved: bool = True


def run_replication(config: ExperimentConfig, index: int) -> ReplicationResult:
    seed = config.seed + index
    seeds = replication_seeds(seed)
    source, target, gt = load_data(config.generator, seeds.data)
    splits = prepare_splits(source.n, target.n, config.split_fraction, seeds,
                            config.validation_size)
    model = train_classifier(config.classifier, source, splits, seeds)
    weights = compute_weights(config.weights, config.corrections, source, target, splits,
                              seeds, gt, model)
    reports, _, argmax_kept = evaluate_calibrators(config, model, source, target, splits,
                                                   weights)
    Zv = model.logits(source.features[splits.source_val])
    yv = source.labels[splits.source_val]
    zero_one = (Zv.argmax(axis=1) != yv).astype(np.float64)
    diag = imp.weighted_loss_variance_diagnostic(zero_one, weights, config.renyi_alpha)
    cw = {int(k): float(weights.values[yv == k].mean())
          for k in range(source.n_classes) if np.any(yv == k)}
    return ReplicationResult(index, seed, reports, diag, cw, argmax_kept)


def _summarize(values) -> tuple:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), _std(v)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    replications: list
    failures: list = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def values(self, method: str, calibrator: str, metric: str = "ece") -> np.ndarray:
        return np.array([getattr(r.reports[method][calibrator], metric) for r in self.replications])

    def mean(self, method, calibrator, metric="ece") -> float:
        return float(self.values(method, calibrator, metric).mean())

    def std(self, method, calibrator, metric="ece") -> float:
        return _std(self.values(method, calibrator, metric))

    def summary(self) -> dict:
        per_method = {}
        for method in METHODS:
            per_method[method] = {}
            for kind in self.config.calibrators:
                ece_m, ece_s = _summarize(self.values(method, kind, "ece"))
                acc_m, acc_s = _summarize(self.values(method, kind, "accuracy"))
                nll_m, nll_s = _summarize(self.values(method, kind, "nll"))
                per_method[method][kind] = {
                    "ece_mean": ece_m, "ece_std": ece_s, "acc_mean": acc_m, "acc_std": acc_s,
                    "nll_mean": nll_m, "nll_std": nll_s,
                    "ece_values": self.values(method, kind, "ece").tolist(),
                }
        diags = [r.diagnostics for r in self.replications]
        diagnostics = {
            "renyi_alpha": self.config.renyi_alpha,
            "renyi_divergence_mean": float(np.mean([d.renyi_divergence_estimate for d in diags])),
            "effective_sample_size_mean": float(np.mean([d.effective_sample_size for d in diags])),
            "weight_variance_mean": float(np.mean([d.weight_variance for d in diags])),
            "weighted_loss_variance_mean": float(np.mean([d.weighted_loss_variance for d in diags])),
            "bound_respected_fraction": float(np.mean([d.respects_bound for d in diags])),
            "bound_weighted_reading_respected_fraction":
                float(np.mean([d.respects_bound_weighted_reading for d in diags])),
            "class_weight_means": {
                str(k): float(np.mean([r.class_weight_means[k] for r in self.replications
                                       if k in r.class_weight_means]))
                for k in sorted({k for r in self.replications for k in r.class_weight_means})},
            "temperature_argmax_preserved":
                all(r.temperature_argmax_preserved for r in self.replications),
        }
        return {
            "config_digest": config_digest(self.config),
            "n_replications": len(self.replications),
            "partial": self.partial,
            "failures": list(self.failures),
            "per_method": per_method,
            "diagnostics": diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json() + "\n")
        with open(out / "config.json", "w") as f:
            json.dump(self.config.to_dict(), f, sort_keys=True, indent=2)


def _run_one(args):
    config, index = args
    try:
        return run_replication(config, index), None
    except ShiftCalError as exc:
        log.warning("replication %d failed: %s", index, exc)
        return None, {"replication": index, "seed": config.seed + index, "error": str(exc)}


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run ``config.n_replications`` replications with seeds ``seed + index``.

    A replication that raises is recorded in ``failures`` and left out of
    the aggregates; if every replication fails the last error is raised.
    """
    tasks = [(config, i) for i in range(config.n_replications)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(_run_one, tasks))
    else:
        outcomes = [_run_one(t) for t in tasks]
    reps = sorted((r for r, _ in outcomes if r is not None), key=lambda r: r.index)
    failures = [f for _, f in outcomes if f is not None]
    if not reps:
        raise ShiftCalError(f"all replications failed; last error: {failures[-1]['error']}")
    return ExperimentResult(config, reps, failures)


SWEEP_AXES = ("divergence", "validation_size", "weight_noise")


@dataclass(frozen=True)
class SweepSpec:
    """Vary one aspect of ``base`` over ``values``.

    ``divergence`` values are target class ratios (the base generator must be
    a mixture); ``validation_size`` values are sample counts;
    ``weight_noise`` values are noise standard deviations added to the
    ground-truth weights.
    """

    axis: str
    values: tuple
    base: ExperimentConfig

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        vals = tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ConfigError("sweep grid is empty")
        key = np.array([self._order_key(v) for v in vals], dtype=np.float64)
        d = np.diff(key)
        if d.size and not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigError(f"sweep grid along {self.axis} must be strictly monotone")

    def _order_key(self, v) -> float:
        if self.axis == "divergence":
            g = self.base.generator
            if not isinstance(g, ds.MixtureShiftConfig):
                raise ConfigError("a divergence sweep needs a mixture generator")
            if len(v) != g.n_classes:
                raise ConfigError(f"target ratio {v} does not have {g.n_classes} entries")
            return imp.renyi_divergence_discrete(v, g.source_ratio, 1.0)
        return float(v)

    def config_at(self, value) -> ExperimentConfig:
        if self.axis == "divergence":
            return replace(self.base, generator=replace(self.base.generator, target_ratio=tuple(value)))
        if self.axis == "validation_size":
            return replace(self.base, validation_size=int(value))
        return replace(self.base, weights=replace(self.base.weights, mode="noisy_ground_truth",
                                                  sigma=float(value)))


def format_axis_value(value) -> str:
    if isinstance(value, tuple):
        return ":".join(f"{v:g}" for v in value)
    return f"{value:g}"


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list

    def rows(self) -> list:
        rows = [["axis_value", "method", "calibrator", "ece_mean", "ece_std"]]
        for value, res in self.points:
            for method in METHODS:
                for kind in self.spec.base.calibrators:
                    rows.append([format_axis_value(value), method, kind,
                                 res.mean(method, kind), res.std(method, kind)])
        return rows

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as f:
            csv.writer(f).writerows(self.rows())
        summary = {"axis": self.spec.axis,
                   "points": [{"axis_value": format_axis_value(v), "report": r.summary()}
                              for v, r in self.points]}
        (out / "sweep.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def run_sweep(spec: SweepSpec, jobs: int = 1) -> SweepResult:
    return SweepResult(spec, [(v, run_experiment(spec.config_at(v), jobs)) for v in spec.values])


# The covariates are strongly correlated in the source and anti-correlated in
# the target, while the label depends on x1 alone.
TWO_GAUSSIAN_CONFIG = ds.GaussianShiftConfig(
    source_mean=(-0.5, 0.0), target_mean=(0.5, 0.0),
    source_cov=((1.0, 0.8), (0.8, 1.0)), target_cov=((1.0, -0.8), (-0.8, 1.0)),
    label_fn="sigmoid", label_a=2.0, label_b=0.0, n_source=5000, n_target=5000,
)

# Two hidden units under heavy shrinkage spread weight onto the correlated x2,
# so the score tracks x1 + x2 rather than x1.  That shortcut only holds on the
# source, which makes the calibration map domain dependent.
TWO_GAUSSIAN_CLASSIFIER = LearnerConfig(architecture="mlp", hidden_units=(2,), activation="tanh",
                                   l2_penalty=0.2, max_epochs=300)


@dataclass
class TwoGaussianBundle:
    """Everything needed to redraw the 2-d covariate-shift demo.

    ``surfaces[name]`` holds ``P(Y=1 | x)`` on the ``mesh_x1 x mesh_x2`` grid
    for ``true``, ``uncalibrated``, ``source_calibrated``,
    ``target_calibrated`` and ``weighted``.  ``reports[name]`` evaluates the
    same four predictors on target-test.
    """

    source: ds.LabeledDataset
    target: ds.LabeledDataset
    mesh_x1: np.ndarray
    mesh_x2: np.ndarray
    surfaces: dict
    reports: dict
    calibrators: dict

    def surface_deviation(self, name: str, reference: str = "target_calibrated") -> float:
        """Mean absolute difference between two probability surfaces over the mesh."""
        return float(np.mean(np.abs(self.surfaces[name] - self.surfaces[reference])))

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "scatter.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x1", "x2", "label", "domain"])
            for d in (self.source, self.target):
                for (x1, x2), y in zip(d.features.tolist(), d.labels.tolist()):
                    w.writerow([x1, x2, y, d.domain])
        names = list(self.surfaces)
        with open(out / "surfaces.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x1", "x2"] + names)
            X1, X2 = np.meshgrid(self.mesh_x1, self.mesh_x2, indexing="ij")
            cols = [X1.ravel(), X2.ravel()] + [self.surfaces[k].ravel() for k in names]
            w.writerows(zip(*(c.tolist() for c in cols)))
        for name, rep in self.reports.items():
            with open(out / f"reliability_{name}.csv", "w", newline="") as f:
                csv.writer(f).writerows(reliability_csv(rep.bins))


def replicate_figure2(config: ds.GaussianShiftConfig = TWO_GAUSSIAN_CONFIG,
                      classifier: LearnerConfig = TWO_GAUSSIAN_CLASSIFIER, seed: int = 0,
                      mesh_size: int = 60, m_bins: int = DEFAULT_BINS,
                      split_fraction: float = 0.7) -> TwoGaussianBundle:
    """Isotonic calibration of a mis-specified MLP under a 2-d covariate shift.

    Calibrators are fit on source-validation (uniform weights), on
    target-validation, and on source-validation weighted by the exact
    Gaussian density ratio.
    """
    if config.dim != 2:
        raise ConfigError("the two-Gaussian demo needs 2-d covariates")
    seeds = replication_seeds(seed)
    source, target = ds.generate_gaussian_shift(config, seeds.data)
    splits = prepare_splits(source.n, target.n, split_fraction, seeds)
    model = train_classifier(classifier, source, splits, seeds)
    sv = source.subset(splits.source_val)
    tv = target.subset(splits.target_val)
    tt = target.subset(splits.target_test)
    w = ds.gaussian_density_ratio(config, sv.features)

    cals: dict[str, Calibrator] = {
        "source_calibrated": fit_isotonic_logits(model.logits(sv.features), sv.labels),
        "target_calibrated": fit_isotonic_logits(model.logits(tv.features), tv.labels),
        "weighted": fit_isotonic_logits(model.logits(sv.features), sv.labels, w),
    }
    allX = np.vstack([source.features, target.features])
    lo, hi = allX.min(axis=0), allX.max(axis=0)
    g1 = np.linspace(lo[0], hi[0], mesh_size)
    g2 = np.linspace(lo[1], hi[1], mesh_size)
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    mesh = np.column_stack([X1.ravel(), X2.ravel()])
    Zm = model.logits(mesh)
    surfaces = {"true": ds.label_probability(config, mesh).reshape(X1.shape),
                "uncalibrated": softmax(Zm)[:, 1].reshape(X1.shape)}
    for name, cal in cals.items():
        surfaces[name] = cal.apply(Zm)[:, 1].reshape(X1.shape)

    Zt = model.logits(tt.features)
    reports: dict[str, EvaluationReport] = {
        "uncalibrated": evaluate(softmax(Zt), tt.labels, m_bins, "uncalibrated")}
    method_of = {"source_calibrated": "unweighted", "target_calibrated": "using_target",
                 "weighted": "weighted"}
    for name, cal in cals.items():
        reports[name] = evaluate(cal.apply(Zt), tt.labels, m_bins, method_of[name])
    return TwoGaussianBundle(source, target, g1, g2, surfaces, reports, cals)
