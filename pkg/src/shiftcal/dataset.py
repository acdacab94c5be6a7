"""Labeled datasets, synthetic shift generators and CSV IO.

Two generators are provided:

* :func:`generate_gaussian_shift` draws source and target covariates from two
  multivariate Gaussians and labels both with one shared conditional rule, so
  only the covariate marginal changes.
* :func:`generate_mixture_shift` draws each class from a fixed Gaussian and
  changes the class mixing proportions between domains.  The exact importance
  weight of a source sample is then ``target_ratio[y] / source_ratio[y]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import ConfigError, ParseError, SplitError

Domain = Literal["source", "target"]
LabelRule = Literal["sigmoid", "ramp", "constant"]

__all__ = [
    "LabeledDataset",
    "GaussianShiftConfig",
    "MixtureShiftConfig",
    "label_probability",
    "generate_gaussian_shift",
    "generate_mixture_shift",
    "mixture_weights",
    "gaussian_density_ratio",
    "split",
    "split_indices",
    "read_csv",
    "write_csv",
]


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with integer labels tagged with its domain."""

    features: np.ndarray
    labels: np.ndarray
    domain: Domain = "source"
    n_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ConfigError(f"features must be a non-empty 2-d array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ConfigError(f"labels shape {y.shape} does not match {X.shape[0]} samples")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ConfigError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(X)):
            raise ConfigError("features contain non-finite values")
        if self.domain not in ("source", "target"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.domain,
                              self.n_classes, self.seed)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.domain == other.domain and self.n_classes == other.n_classes
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


def _cholesky(cov, name):
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ConfigError(f"{name} must be a square matrix, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise ConfigError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} is not positive definite") from None


@dataclass(frozen=True)
class GaussianShiftConfig:
    """Two Gaussian covariate distributions sharing one labeling rule.

    The label rule maps the first coordinate ``x1`` to ``P(Y=1 | x)``:
    ``sigmoid`` gives ``1 / (1 + exp(-(a*x1 + b)))``, ``ramp`` gives
    ``clip(a*x1 + b, 0, 1)`` and ``constant`` gives ``b``.
    """

    source_mean: tuple
    target_mean: tuple
    source_cov: tuple
    target_cov: tuple
    label_fn: LabelRule = "sigmoid"
    label_a: float = 1.0
    label_b: float = 0.0
    n_source: int = 1000
    n_target: int = 1000

    def __post_init__(self):
        for name in ("source_mean", "target_mean"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        for name in ("source_cov", "target_cov"):
            rows = tuple(tuple(float(v) for v in row) for row in getattr(self, name))
            object.__setattr__(self, name, rows)
        d = len(self.source_mean)
        if d < 1 or len(self.target_mean) != d:
            raise ConfigError("source_mean and target_mean must be non-empty and of equal length")
        for name in ("source_cov", "target_cov"):
            cov = np.array(getattr(self, name))
            if cov.shape != (d, d):
                raise ConfigError(f"{name} must be {d}x{d}, got {cov.shape}")
            _cholesky(cov, name)
        if self.label_fn not in ("sigmoid", "ramp", "constant"):
            raise ConfigError(f"unknown label_fn {self.label_fn!r}")
        if self.label_fn == "constant" and not 0.0 <= self.label_b <= 1.0:
            raise ConfigError("constant label_fn needs label_b in [0, 1]")
        if self.n_source < 1 or self.n_target < 1:
            raise ConfigError("n_source and n_target must be >= 1")

    @property
    def dim(self) -> int:
        return len(self.source_mean)


def label_probability(config: GaussianShiftConfig, X) -> np.ndarray:
    """Return ``P(Y=1 | x)`` for each row of ``X`` under the configured rule.

    The same function labels both domains, which is what makes the shift a
    pure covariate shift.
    """
    X = np.asarray(X, dtype=np.float64)
    t = config.label_a * X[:, 0] + config.label_b
    if config.label_fn == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * t))
    if config.label_fn == "ramp":
        return np.clip(t, 0.0, 1.0)
    return np.full(X.shape[0], config.label_b)


def _child_rngs(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def generate_gaussian_shift(config: GaussianShiftConfig, seed: int):
    """Draw a (source, target) pair of binary datasets under covariate shift."""
    rngs = _child_rngs(seed, 4)
    out = []
    for domain, mean, cov, n, rx, ry in (
        ("source", config.source_mean, config.source_cov, config.n_source, rngs[0], rngs[1]),
        ("target", config.target_mean, config.target_cov, config.n_target, rngs[2], rngs[3]),
    ):
        L = _cholesky(cov, f"{domain}_cov")
        X = np.asarray(mean) + rx.standard_normal((n, config.dim)) @ L.T
        p = label_probability(config, X)
        y = (ry.random(n) < p).astype(np.int64)
        out.append(LabeledDataset(X, y, domain, 2, seed))
    return out[0], out[1]


def _mvn_logpdf(X, mean, cov):
    L = np.linalg.cholesky(np.asarray(cov))
    z = np.linalg.solve(L, (X - np.asarray(mean)).T)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return -0.5 * (np.sum(z * z, axis=0) + logdet + X.shape[1] * math.log(2 * math.pi))


def gaussian_density_ratio(config: GaussianShiftConfig, X) -> np.ndarray:
    """Exact covariate density ratio ``p_target(x) / p_source(x)``."""
    X = np.asarray(X, dtype=np.float64)
    log_r = (_mvn_logpdf(X, config.target_mean, config.target_cov)
             - _mvn_logpdf(X, config.source_mean, config.source_cov))
    return np.exp(log_r)


def _normalized_ratio(ratio, name):
    r = np.asarray(ratio, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ConfigError(f"{name} must list at least two class proportions")
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise ConfigError(f"{name} entries must be strictly positive, got {list(ratio)}")
    return r / r.sum()


@dataclass(frozen=True)
class MixtureShiftConfig:
    """Per-class Gaussians shared by both domains, mixed in different proportions.

    ``class_covs`` defaults to identity for every class.
    """

    class_means: tuple
    source_ratio: tuple
    target_ratio: tuple
    n_source: int = 1000
    n_target: int = 1000
    class_covs: tuple | None = None

    def __post_init__(self):
        means = tuple(tuple(float(v) for v in m) for m in self.class_means)
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "source_ratio", tuple(float(v) for v in self.source_ratio))
        object.__setattr__(self, "target_ratio", tuple(float(v) for v in self.target_ratio))
        k = len(means)
        if k < 2 or len({len(m) for m in means}) != 1 or len(means[0]) < 1:
            raise ConfigError("class_means must hold >= 2 vectors of one common length")
        for name in ("source_ratio", "target_ratio"):
            r = _normalized_ratio(getattr(self, name), name)
            if r.size != k:
                raise ConfigError(f"{name} has {r.size} entries for {k} classes")
        if self.class_covs is not None:
            covs = tuple(tuple(tuple(float(v) for v in row) for row in c) for c in self.class_covs)
            if len(covs) != k:
                raise ConfigError(f"class_covs has {len(covs)} matrices for {k} classes")
            for i, c in enumerate(covs):
                if np.array(c).shape != (self.dim, self.dim):
                    raise ConfigError(f"class_covs[{i}] must be {self.dim}x{self.dim}")
                _cholesky(c, f"class_covs[{i}]")
            object.__setattr__(self, "class_covs", covs)
        if self.n_source < 1 or self.n_target < 1:
            raise ConfigError("n_source and n_target must be >= 1")

    @property
    def n_classes(self) -> int:
        return len(self.class_means)

    @property
    def dim(self) -> int:
        return len(self.class_means[0])

    @property
    def source_proportions(self) -> np.ndarray:
        return _normalized_ratio(self.source_ratio, "source_ratio")

    @property
    def target_proportions(self) -> np.ndarray:
        return _normalized_ratio(self.target_ratio, "target_ratio")

    @classmethod
    def isotropic(cls, source_ratio, target_ratio, *, dim=8, separation=3.0,
                  n_source=1000, n_target=1000, means_seed=0):
        """Unit-covariance classes whose means sit at equal pairwise distance.

        The means are the scaled corners of a random orthonormal frame drawn
        from ``means_seed``, centred at the origin.
        """
        k = len(source_ratio)
        if dim < k:
            raise ConfigError(f"dim={dim} cannot hold {k} equidistant class means")
        if separation <= 0:
            raise ConfigError("separation must be positive")
        rng = np.random.default_rng(means_seed)
        Q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
        means = (separation / math.sqrt(2.0)) * Q.T
        means -= means.mean(axis=0)
        return cls(tuple(map(tuple, means)), tuple(source_ratio), tuple(target_ratio),
                   n_source, n_target)


def mixture_weights(config: MixtureShiftConfig, labels) -> np.ndarray:
    """Ground-truth weight of source samples with the given labels."""
    w = config.target_proportions / config.source_proportions
    return w[np.asarray(labels, dtype=np.int64)]


def generate_mixture_shift(config: MixtureShiftConfig, seed: int):
    """Draw (source, target, ground-truth source weights) for a mixture shift.

    Returns the two datasets and an :class:`~shiftcal.importance.ImportanceWeights`
    holding ``target_ratio[y] / source_ratio[y]`` for every source sample.
    """
    from .importance import ImportanceWeights

    rngs = _child_rngs(seed, 4)
    chol = [np.eye(config.dim) if config.class_covs is None else _cholesky(c, f"class_covs[{i}]")
            for i, c in enumerate(config.class_covs or [None] * config.n_classes)]
    means = np.asarray(config.class_means)
    out = []
    for domain, props, n, ry, rx in (
        ("source", config.source_proportions, config.n_source, rngs[0], rngs[1]),
        ("target", config.target_proportions, config.n_target, rngs[2], rngs[3]),
    ):
        y = ry.choice(config.n_classes, size=n, p=props).astype(np.int64)
        Z = rx.standard_normal((n, config.dim))
        X = np.empty_like(Z)
        for k in range(config.n_classes):
            m = y == k
            X[m] = means[k] + Z[m] @ chol[k].T
        out.append(LabeledDataset(X, y, domain, config.n_classes, seed))
    source, target = out
    gt = ImportanceWeights(mixture_weights(config, source.labels), provenance="ground-truth")
    return source, target, gt


def split_indices(n: int, fraction: float, seed: int):
    """Random disjoint ``(a, b)`` index arrays with ``len(a) == floor(fraction * n)``."""
    if not 0.0 < fraction < 1.0:
        raise SplitError(f"fraction must lie in (0, 1), got {fraction}")
    n_a = int(math.floor(fraction * n))
    n_b = n - n_a
    if n_a < 1 or n_b < 1:
        raise SplitError(f"split of n={n} at fraction={fraction} gives sizes ({n_a}, {n_b})")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_a]), np.sort(perm[n_a:])


def split(ds: LabeledDataset, fraction: float, seed: int):
    """Partition ``ds`` into two random disjoint datasets."""
    a, b = split_indices(ds.n, fraction, seed)
    return ds.subset(a), ds.subset(b)


def write_csv(ds: LabeledDataset, path) -> None:
    """Write ``ds`` with a ``d=,k=,domain=`` header; floats use shortest round-trip repr."""
    with open(path, "w", newline="") as f:
        f.write(f"d={ds.dim},k={ds.n_classes},domain={ds.domain}\n")
        for row, label in zip(ds.features.tolist(), ds.labels.tolist()):
            f.write(",".join(repr(v) for v in row) + f",{label}\n")


def _parse_header(line):
    fields = {}
    for part in line.strip().split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise ParseError(f"bad header field {part!r}", line=1)
        fields[key.strip()] = value.strip()
    if set(fields) != {"d", "k", "domain"}:
        raise ParseError("header must declare exactly d, k and domain", line=1)
    try:
        d, k = int(fields["d"]), int(fields["k"])
    except ValueError:
        raise ParseError("d and k must be integers", line=1) from None
    if d < 1 or k < 2:
        raise ParseError(f"need d >= 1 and k >= 2, got d={d}, k={k}", line=1)
    if fields["domain"] not in ("source", "target"):
        raise ParseError(f"unknown domain {fields['domain']!r}", line=1)
    return d, k, fields["domain"]


def read_csv(path) -> LabeledDataset:
    """Read a dataset written by :func:`write_csv`, validating every row."""
    path = Path(path)
    with open(path, newline="") as f:
        header = f.readline()
        if not header:
            raise ParseError("empty file", line=1)
        d, k, domain = _parse_header(header)
        X, y = [], []
        for lineno, row in enumerate(csv.reader(f), start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ParseError(f"expected {d + 1} columns, found {len(row)}", line=lineno)
            try:
                feats = [float(v) for v in row[:d]]
                label = int(row[d])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not all(math.isfinite(v) for v in feats):
                raise ParseError("non-finite feature value", line=lineno)
            if not 0 <= label < k:
                raise ParseError(f"label {label} outside [0, {k})", line=lineno)
            X.append(feats)
            y.append(label)
    if not X:
        raise ParseError("no data rows", line=2)
    return LabeledDataset(np.array(X), np.array(y), domain, k, 0)
