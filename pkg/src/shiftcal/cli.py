"""Command-line interface.

Every command except ``evaluate`` takes a JSON config whose top-level
``"command"`` names the command it was written for.  A config written for
``experiment`` also drives the individual pipeline stages (``generate``,
``train``, ``estimate-weights``, ``calibrate``), so the stages can be chained
by hand and compared against a full run.

Exit codes: 0 success, 1 invalid config or input, 2 failure while running.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import dataset as ds
from . import harness as hz
from . import importance as imp
from .calibration import fit_calibrator, load_calibrator
from .errors import ConfigError, ParseError, ShiftCalError
from .learner import ProbabilisticModel, softmax
from .metrics import DEFAULT_BINS, evaluate, reliability_csv

log = logging.getLogger("shiftcal")

COMMANDS = ("generate", "train", "estimate-weights", "calibrate", "evaluate", "experiment", "sweep")
PIPELINE_STAGES = ("generate", "train", "estimate-weights", "calibrate")

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_COUNT = {"type": "integer", "minimum": 1}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_MATRIX = {"type": "array", "items": _VECTOR, "minItems": 1}
_RATIO = {"type": "array", "items": _POS, "minItems": 2}

LEARNER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "architecture": {"enum": ["linear", "mlp"]},
        "hidden_units": {"type": "array", "items": _COUNT, "minItems": 1},
        "activation": {"enum": ["tanh", "relu"]},
        "l2_penalty": _NONNEG,
        "learning_rate": _POS,
        "max_epochs": _COUNT,
        "batch_size": {"oneOf": [_COUNT, {"type": "null"}]},
        "tolerance": _POS,
        "seed": {"type": "integer"},
        "optimizer": {"enum": ["gd", "lbfgs"]},
    },
}

GENERATOR_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "source_ratio", "target_ratio"],
            "properties": {
                "type": {"const": "mixture"},
                "source_ratio": _RATIO,
                "target_ratio": _RATIO,
                "n_source": _COUNT,
                "n_target": _COUNT,
                "class_means": _MATRIX,
                "class_covs": {"type": "array", "items": _MATRIX},
                "dim": _COUNT,
                "separation": _POS,
                "means_seed": {"type": "integer"},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "source_mean", "target_mean", "source_cov", "target_cov"],
            "properties": {
                "type": {"const": "gaussian"},
                "source_mean": _VECTOR,
                "target_mean": _VECTOR,
                "source_cov": _MATRIX,
                "target_cov": _MATRIX,
                "label_fn": {"enum": ["sigmoid", "ramp", "constant"]},
                "label_a": {"type": "number"},
                "label_b": {"type": "number"},
                "n_source": _COUNT,
                "n_target": _COUNT,
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "source", "target"],
            "properties": {
                "type": {"const": "files"},
                "source": {"type": "string"},
                "target": {"type": "string"},
                "weights": {"type": ["string", "null"]},
            },
        },
    ]
}

CORRECTION_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["name"],
         "properties": {"name": {"const": "self_normalize"}}},
        {"type": "object", "additionalProperties": False, "required": ["name", "alpha"],
         "properties": {"name": {"const": "flatten"},
                        "alpha": {"type": "number", "minimum": 0, "maximum": 1}}},
        {"type": "object", "additionalProperties": False, "required": ["name", "c"],
         "properties": {"name": {"const": "clip"}, "c": _POS}},
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "workdir": {"type": "string"},
        "generator": GENERATOR_SCHEMA,
        "classifier": LEARNER_SCHEMA,
        "calibrators": {"type": "array", "minItems": 1, "uniqueItems": True,
                        "items": {"enum": list(hz.CALIBRATORS)}},
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": list(hz.WEIGHT_MODES)},
                "sigma": _NONNEG,
                "discriminator": LEARNER_SCHEMA,
                "features": {"enum": ["covariates", "penultimate"]},
            },
        },
        "corrections": {"type": "array", "items": CORRECTION_SCHEMA},
        "split_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "m_bins": _COUNT,
        "n_replications": _COUNT,
        "seed": {"type": "integer", "minimum": 0},
        "validation_size": {"oneOf": [_COUNT, {"type": "null"}]},
        "renyi_alpha": _POS,
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(hz.CALIBRATORS)},
                "mode": {"enum": ["unweighted", "weighted", "using_target"]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis", "values"],
            "properties": {
                "axis": {"enum": list(hz.SWEEP_AXES)},
                "values": {"type": "array", "minItems": 1},
            },
        },
    },
}


class CliError(Exception):
    """Carries an exit code up to :func:`main`."""

    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


# -- config loading ---------------------------------------------------------

def bundled_configs() -> list:
    return sorted(p.name[:-5] for p in resources.files("shiftcal.configs").iterdir()
                  if p.name.endswith(".json"))


def _read_config_source(ref: str):
    path = Path(ref)
    if path.is_file():
        return json.loads(path.read_text()), path.resolve().parent
    name = ref[:-5] if ref.endswith(".json") else ref
    if name in bundled_configs():
        text = resources.files("shiftcal.configs").joinpath(name + ".json").read_text()
        return json.loads(text), Path.cwd()
    raise CliError(f"config {ref!r} is neither a file nor a bundled config "
                   f"({', '.join(bundled_configs())})")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` assignments; values are parsed as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            if isinstance(node, list):
                node = node[int(p)]
            else:
                node = node.setdefault(p, {})
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = _parse_value(value)
        else:
            node[last] = _parse_value(value)
    return doc


def validate_config(doc: dict) -> None:
    """Schema check; the error message leads with the dotted path of the bad field."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is None:
        return
    # oneOf errors hide the specific failure; descend to the deepest one.
    while error.context:
        error = jsonschema.exceptions.best_match(error.context)
    where = ".".join(str(p) for p in error.absolute_path) or "<root>"
    raise CliError(f"invalid config at {where}: {error.message}")


def load_config(ref: str, overrides=(), command=None):
    """Return ``(doc, workdir)`` after overrides and schema validation."""
    try:
        doc, base = _read_config_source(ref)
    except json.JSONDecodeError as exc:
        raise CliError(f"config {ref} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError("config must be a JSON object")
    doc = apply_overrides(doc, overrides)
    validate_config(doc)
    if command is not None and doc["command"] != command:
        if not (doc["command"] == "experiment" and command in PIPELINE_STAGES):
            raise CliError(f"config was written for {doc['command']!r}, not {command!r}")
    workdir = Path(doc.get("workdir", "."))
    if not workdir.is_absolute():
        workdir = base / workdir
    return doc, workdir


def experiment_config(doc: dict, workdir: Path) -> hz.ExperimentConfig:
    body = {k: v for k, v in doc.items()
            if k not in ("command", "workdir", "sweep", "calibration")}
    if "generator" not in body:
        raise CliError("config needs a 'generator' section")
    gen = dict(body["generator"])
    if gen["type"] == "files":
        for key in ("source", "target", "weights"):
            if gen.get(key):
                gen[key] = str(workdir / gen[key])
        body["generator"] = gen
    try:
        return hz.ExperimentConfig.from_dict(body)
    except (ValueError, TypeError) as exc:
        raise CliError(str(exc)) from None


# -- data directory layout --------------------------------------------------

SOURCE_CSV = "source.csv"
TARGET_CSV = "target.csv"
GT_WEIGHTS_CSV = "gt_weights.csv"
SPLITS_JSON = "splits.json"


def _write_splits(splits: hz.Splits, path: Path) -> None:
    path.write_text(json.dumps({k: v.tolist() for k, v in splits._asdict().items()}) + "\n")


def _read_splits(path: Path) -> hz.Splits:
    d = json.loads(path.read_text())
    return hz.Splits(*(np.asarray(d[k], dtype=np.int64) for k in hz.Splits._fields))


def _load_data_dir(data: Path, config: hz.ExperimentConfig | None = None):
    """Read source/target CSVs, splits and (optional) ground-truth weights."""
    for name in (SOURCE_CSV, TARGET_CSV):
        if not (data / name).is_file():
            raise CliError(f"{data / name} not found")
    source, target = ds.read_csv(data / SOURCE_CSV), ds.read_csv(data / TARGET_CSV)
    if (data / SPLITS_JSON).is_file():
        splits = _read_splits(data / SPLITS_JSON)
    elif config is not None:
        splits = hz.prepare_splits(source.n, target.n, config.split_fraction,
                                   hz.replication_seeds(config.seed), config.validation_size)
    else:
        splits = None
    gt = None
    if (data / GT_WEIGHTS_CSV).is_file():
        gtw = imp.read_weights_csv(data / GT_WEIGHTS_CSV)
        gt = lambda idx: gtw.values[idx]  # noqa: E731
    return source, target, splits, gt


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _out_file(path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    doc, workdir = load_config(args.config, args.set, "generate")
    config = experiment_config(doc, workdir)
    if isinstance(config.generator, hz.FileSource):
        raise CliError("generate needs a mixture or gaussian generator")
    seeds = hz.replication_seeds(config.seed)
    source, target, gt = hz.load_data(config.generator, seeds.data)
    splits = hz.prepare_splits(source.n, target.n, config.split_fraction, seeds,
                               config.validation_size)
    out = _out_dir(args.out)
    ds.write_csv(source, out / SOURCE_CSV)
    ds.write_csv(target, out / TARGET_CSV)
    _write_splits(splits, out / SPLITS_JSON)
    imp.write_weights_csv(imp.ImportanceWeights(gt(np.arange(source.n))), out / GT_WEIGHTS_CSV)
    print(f"wrote {source.n} source and {target.n} target samples (d={source.dim}, "
          f"k={source.n_classes}) to {out}")
    return 0


def cmd_train(args) -> int:
    doc, workdir = load_config(args.config, args.set, "train")
    config = experiment_config(doc, workdir)
    source, target, splits, _ = _load_data_dir(Path(args.data), config)
    model = hz.train_classifier(config.classifier, source, splits,
                                hz.replication_seeds(config.seed))
    model.save(_out_file(args.out))
    for name, idx in (("train", splits.source_train), ("validation", splits.source_val)):
        acc = float(np.mean(model.logits(source.features[idx]).argmax(axis=1) == source.labels[idx]))
        print(f"source {name} accuracy: {acc:.4f} (n={idx.size})")
    return 0


def cmd_estimate_weights(args) -> int:
    doc, workdir = load_config(args.config, args.set, "estimate-weights")
    config = experiment_config(doc, workdir)
    source, target, splits, gt = _load_data_dir(Path(args.data), config)
    model = ProbabilisticModel.load(args.model) if args.model else None
    if config.weights.features == "penultimate" and model is None:
        raise CliError("penultimate-feature weights need --model")
    w = hz.compute_weights(config.weights, config.corrections, source, target, splits,
                           hz.replication_seeds(config.seed), gt, model)
    imp.write_weights_csv(w, _out_file(args.out))
    d = imp.weighted_loss_variance_diagnostic(np.zeros(len(w)), w, config.renyi_alpha)
    yv = source.labels[splits.source_val]
    print(f"weights: {len(w)} source-validation samples ({w.provenance})")
    print(f"effective sample size: {d.effective_sample_size:.1f}")
    print(f"renyi divergence estimate (order {config.renyi_alpha + 1:g}): "
          f"{d.renyi_divergence_estimate:.4f}")
    for k in range(source.n_classes):
        if np.any(yv == k):
            print(f"class {k} mean weight: {w.values[yv == k].mean():.4f}")
    return 0


def cmd_calibrate(args) -> int:
    doc, workdir = load_config(args.config, args.set, "calibrate")
    config = experiment_config(doc, workdir)
    section = doc.get("calibration", {})
    kind = section.get("kind", config.calibrators[0])
    mode = section.get("mode", "weighted" if args.weights else "unweighted")
    source, target, splits, _ = _load_data_dir(Path(args.data), config)
    model = ProbabilisticModel.load(args.model)
    weights = None
    if mode == "using_target":
        X, y = target.features[splits.target_val], target.labels[splits.target_val]
    else:
        X, y = source.features[splits.source_val], source.labels[splits.source_val]
        if mode == "weighted":
            if not args.weights:
                raise CliError("weighted calibration needs --weights")
            weights = imp.read_weights_csv(args.weights).values
            if weights.size != y.size:
                raise CliError(f"{weights.size} weights for {y.size} source-validation samples")
    cal = fit_calibrator(kind, model.logits(X), y, weights)
    body = cal.to_dict()
    body["method"] = mode
    _out_file(args.out).write_text(json.dumps(body) + "\n")
    print(f"fitted {kind} calibrator ({mode}) on {y.size} samples")
    return 0


def cmd_evaluate(args) -> int:
    data = Path(args.data)
    source, target, splits, _ = _load_data_dir(data)
    idx = splits.target_test if splits is not None else np.arange(target.n)
    model = ProbabilisticModel.load(args.model)
    Z = model.logits(target.features[idx])
    method = "uncalibrated"
    if args.calibrator:
        cal = load_calibrator(args.calibrator)
        method = json.loads(Path(args.calibrator).read_text()).get("method", "calibrated")
        P = cal.apply(Z)
    else:
        P = softmax(Z)
    report = evaluate(P, target.labels[idx], args.bins, method)
    out = _out_dir(args.out)
    (out / "report.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    with open(out / "reliability.csv", "w", newline="") as f:
        csv.writer(f).writerows(reliability_csv(report.bins))
    print(f"{method}: ece={report.ece:.4f} accuracy={report.accuracy:.4f} nll={report.nll:.4f} "
          f"(n={idx.size})")
    return 0


def _print_table(result: hz.ExperimentResult) -> None:
    print(f"{'method':<14}" + "".join(f"{k:>22}" for k in result.config.calibrators))
    for method in hz.METHODS:
        cells = "".join(f"{result.mean(method, k):>13.4f} +- {result.std(method, k):.4f}"
                        for k in result.config.calibrators)
        print(f"{method:<14}{cells}")


def cmd_experiment(args) -> int:
    doc, workdir = load_config(args.config, args.set, "experiment")
    config = experiment_config(doc, workdir)
    result = hz.run_experiment(config, jobs=args.jobs)
    result.write(_out_dir(args.out))
    _print_table(result)
    if result.partial:
        print(f"warning: {len(result.failures)} replication(s) failed", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    doc, workdir = load_config(args.config, args.set, "sweep")
    if "sweep" not in doc:
        raise CliError("sweep config needs a 'sweep' section")
    config = experiment_config(doc, workdir)
    try:
        spec = hz.SweepSpec(doc["sweep"]["axis"], doc["sweep"]["values"], config)
    except (ValueError, TypeError) as exc:
        raise CliError(str(exc)) from None
    result = hz.run_sweep(spec, jobs=args.jobs)
    result.write(_out_dir(args.out))
    for row in result.rows()[1:]:
        print(f"{row[0]:>10} {row[1]:<14} {row[2]:<12} {row[3]:.4f} +- {row[4]:.4f}")
    return 0


# -- entry point ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors, so they exit with 1 rather than 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="shiftcal", description="Calibration under covariate shift with importance weights.")
    parser.add_argument("--version", action="version", version=f"shiftcal {__version__}")
    parser.add_argument("--json-errors", action="store_true",
                        help="print errors to stderr as a JSON object")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help, config=True):
        p = sub.add_parser(name, help=help, description=help)
        if config:
            p.add_argument("config", help="config file or bundled config name")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="override a config leaf by dotted path")
        p.set_defaults(func=fn)
        return p

    p = add("generate", cmd_generate, "write source/target CSVs, splits and ground-truth weights")
    p.add_argument("--out", required=True)
    p = add("train", cmd_train, "fit the classifier on source-train")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    p = add("estimate-weights", cmd_estimate_weights,
            "importance weights for source-validation samples")
    p.add_argument("--data", required=True)
    p.add_argument("--model", help="classifier JSON (needed for penultimate features)")
    p.add_argument("--out", required=True, help="weights CSV path")
    p = add("calibrate", cmd_calibrate, "fit one calibrator in one mode")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", required=True, help="calibrator JSON path")
    p = add("evaluate", cmd_evaluate, "ECE, accuracy and NLL on target-test", config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--calibrator")
    p.add_argument("--data", required=True)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--out", required=True, help="directory for report.json and reliability.csv")
    for name, fn, help in (("experiment", cmd_experiment, "run all replications of one config"),
                           ("sweep", cmd_sweep, "run an experiment at each point of a grid")):
        p = add(name, fn, help)
        p.add_argument("--out", required=True)
        p.add_argument("--jobs", type=int, default=1)
    return parser


def _report_error(args, exc, code) -> int:
    if getattr(args, "json_errors", False):
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
              file=sys.stderr)
    else:
        print(f"shiftcal: error: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "bins", 1) < 1:
        return _report_error(args, CliError("--bins must be >= 1"), 1)
    try:
        return args.func(args)
    except CliError as exc:
        return _report_error(args, exc, exc.code)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        return _report_error(args, exc, 1)
    except (ShiftCalError, ArithmeticError, OSError, ValueError) as exc:
        log.debug("runtime failure", exc_info=True)
        return _report_error(args, exc, 2)


if __name__ == "__main__":
    sys.exit(main())
