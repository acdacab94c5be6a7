import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from shiftcal import dataset as ds
from shiftcal import harness as hz
from shiftcal import importance as imp
from shiftcal.errors import ConfigError, ShiftCalError
from shiftcal.learner import LearnerConfig, softmax
from shiftcal.metrics import METHODS, evaluate


def small_mixture(source=(1, 4), target=(4, 1), n=800, **kw):
    return ds.MixtureShiftConfig.isotropic(source, target, dim=4, separation=3.0,
                                           n_source=n, n_target=n, **kw)


def small_config(**kw):
    base = dict(generator=small_mixture(), calibrators=("platt", "temperature", "isotonic"),
                n_replications=2, seed=3)
    base.update(kw)
    return hz.ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_result():
    return hz.run_experiment(small_config())


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("kw", [
    dict(calibrators=()), dict(calibrators=("beta",)), dict(n_replications=0),
    dict(split_fraction=1.0), dict(split_fraction=0.0), dict(m_bins=0),
    dict(validation_size=0), dict(renyi_alpha=0.0),
])
def test_experiment_config_validation(kw):
    with pytest.raises(ConfigError):
        small_config(**kw)


@pytest.mark.parametrize("kw", [dict(mode="oracle"), dict(sigma=-1.0), dict(features="pixels")])
def test_weights_spec_validation(kw):
    with pytest.raises(ConfigError):
        hz.WeightsSpec(**kw)


def test_config_defaults_follow_protocol():
    c = hz.ExperimentConfig(generator=small_mixture())
    assert c.split_fraction == 0.7 and c.n_replications == 10 and c.m_bins == 15
    assert c.corrections == ({"name": "self_normalize"},)
    assert c.weights.mode == "ground_truth"


@pytest.mark.parametrize("generator", [
    small_mixture(),
    ds.MixtureShiftConfig(((0.0, 0.0), (2.0, 1.0)), (1, 2), (2, 1), 50, 60,
                          (((1.0, 0.0), (0.0, 1.0)), ((2.0, 0.3), (0.3, 1.0)))),
    hz.TWO_GAUSSIAN_CONFIG,
    hz.FileSource("a.csv", "b.csv", "w.csv"),
])
def test_config_dict_round_trip(generator):
    c = small_config(generator=generator, weights=hz.WeightsSpec("discriminator"),
                     corrections=({"name": "clip", "c": 5.0}, {"name": "self_normalize"}),
                     validation_size=40)
    d = c.to_dict()
    back = hz.ExperimentConfig.from_dict(json.loads(json.dumps(d)))
    assert back.to_dict() == d
    assert hz.config_digest(back) == hz.config_digest(c)


def test_config_digest_changes_with_seed():
    assert hz.config_digest(small_config(seed=1)) != hz.config_digest(small_config(seed=2))


def test_pooled_std():
    assert hz.pooled_std([1.0, 3.0], [2.0, 2.0]) == pytest.approx(1.0)
    assert hz.pooled_std([1.0, 3.0], [0.0, 4.0]) == pytest.approx(np.sqrt((2 + 8) / 2))


# ---------------------------------------------------------------- seeds and splits

def test_replication_seeds_are_distinct_and_stable():
    a, b = hz.replication_seeds(5), hz.replication_seeds(5)
    assert a == b
    assert len(set(a)) == len(a)
    assert hz.replication_seeds(6) != a


def test_splits_are_disjoint_and_cover():
    seeds = hz.replication_seeds(0)
    sp = hz.prepare_splits(100, 80, 0.7, seeds)
    assert np.intersect1d(sp.source_train, sp.source_val).size == 0
    assert np.intersect1d(sp.target_test, sp.target_val).size == 0
    assert sp.source_train.size == 70 and sp.source_val.size == 30
    assert sp.target_test.size == 56 and sp.target_val.size == 24
    np.testing.assert_array_equal(np.sort(np.concatenate([sp.source_train, sp.source_val])),
                                  np.arange(100))


def test_validation_subsampling():
    seeds = hz.replication_seeds(0)
    full = hz.prepare_splits(1000, 1000, 0.7, seeds)
    sub = hz.prepare_splits(1000, 1000, 0.7, seeds, validation_size=25)
    assert sub.source_val.size == 25 and sub.target_val.size == 25
    assert np.isin(sub.source_val, full.source_val).all()
    np.testing.assert_array_equal(sub.target_test, full.target_test)


# ---------------------------------------------------------------- replication

def test_uncalibrated_report_is_raw_probabilities_bit_exact():
    config = small_config(n_replications=1)
    seeds = hz.replication_seeds(config.seed)
    source, target, gt = hz.load_data(config.generator, seeds.data)
    splits = hz.prepare_splits(source.n, target.n, 0.7, seeds)
    model = hz.train_classifier(config.classifier, source, splits, seeds)
    w = hz.compute_weights(config.weights, config.corrections, source, target, splits, seeds, gt)
    reports, fitted, kept = hz.evaluate_calibrators(config, model, source, target, splits, w)
    Xt, yt = target.features[splits.target_test], target.labels[splits.target_test]
    raw = evaluate(softmax(model.logits(Xt)), yt, 15)
    for kind in config.calibrators:
        rep = reports["uncalibrated"][kind]
        assert rep.ece == raw.ece and rep.nll == raw.nll and rep.accuracy == raw.accuracy
        np.testing.assert_array_equal(rep.bins.counts, raw.bins.counts)
    assert kept
    assert set(fitted) == {"unweighted", "weighted", "using_target"}
    assert fitted["weighted"]["temperature"].fit_record.weights_used == "importance"
    assert fitted["unweighted"]["temperature"].fit_record.weights_used == "uniform"
    assert fitted["using_target"]["platt"].fit_record.n_fit == splits.target_val.size


def test_ground_truth_weights_follow_labels():
    config = small_config(corrections=())
    seeds = hz.replication_seeds(0)
    source, target, gt = hz.load_data(config.generator, seeds.data)
    splits = hz.prepare_splits(source.n, target.n, 0.7, seeds)
    w = hz.compute_weights(config.weights, (), source, target, splits, seeds, gt)
    yv = source.labels[splits.source_val]
    np.testing.assert_allclose(w.values, np.where(yv == 0, 4.0, 0.25))


def test_noisy_weights_use_weight_seed():
    config = small_config()
    seeds = hz.replication_seeds(0)
    source, target, gt = hz.load_data(config.generator, seeds.data)
    splits = hz.prepare_splits(source.n, target.n, 0.7, seeds)
    spec = hz.WeightsSpec("noisy_ground_truth", sigma=1.0)
    a = hz.compute_weights(spec, (), source, target, splits, seeds, gt)
    b = hz.compute_weights(spec, (), source, target, splits, seeds, gt)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.provenance == "noisy" and a.sigma == 1.0


def test_ground_truth_mode_needs_ground_truth():
    with pytest.raises(ConfigError):
        hz.compute_weights(hz.WeightsSpec(), (), None, None, None, None, gt=None)


def test_penultimate_discriminator_features():
    config = small_config(classifier=LearnerConfig(architecture="mlp", hidden_units=(6,),
                                                   max_epochs=50),
                          weights=hz.WeightsSpec("discriminator", features="penultimate",
                                                 discriminator=LearnerConfig(max_epochs=50)),
                          n_replications=1, calibrators=("temperature",))
    result = hz.run_experiment(config)
    assert not result.partial
    assert result.summary()["diagnostics"]["effective_sample_size_mean"] > 0


# ---------------------------------------------------------------- experiment

def test_result_shape_and_summary(small_result):
    s = small_result.summary()
    assert s["n_replications"] == 2 and not s["partial"] and s["failures"] == []
    assert set(s["per_method"]) == set(METHODS)
    for method in METHODS:
        for kind in ("platt", "temperature", "isotonic"):
            cell = s["per_method"][method][kind]
            assert {"ece_mean", "ece_std", "acc_mean", "acc_std", "nll_mean"} <= set(cell)
            assert len(cell["ece_values"]) == 2
            assert 0 <= cell["ece_mean"] <= 1
    d = s["diagnostics"]
    assert d["temperature_argmax_preserved"] is True
    assert d["bound_respected_fraction"] == 1.0
    assert set(d["class_weight_means"]) == {"0", "1"}


def test_temperature_accuracy_identical_across_methods(small_result):
    accs = [small_result.values(m, "temperature", "accuracy") for m in METHODS]
    for a in accs[1:]:
        np.testing.assert_array_equal(a, accs[0])


def test_experiment_is_deterministic(small_result):
    again = hz.run_experiment(small_config())
    assert again.to_json() == small_result.to_json()


def test_parallel_matches_serial(small_result):
    assert hz.run_experiment(small_config(), jobs=2).to_json() == small_result.to_json()


def test_replications_use_seed_plus_index(small_result):
    assert [r.seed for r in small_result.replications] == [3, 4]
    single = hz.run_experiment(small_config(seed=4, n_replications=1))
    np.testing.assert_array_equal(single.values("weighted", "platt"),
                                  small_result.values("weighted", "platt")[1:])


def test_write_outputs(small_result, tmp_path):
    small_result.write(tmp_path)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report == json.loads(small_result.to_json())
    config = json.loads((tmp_path / "config.json").read_text())
    assert hz.ExperimentConfig.from_dict(config).to_dict() == small_result.config.to_dict()


def test_null_shift_methods_agree():
    # An unpenalized logistic model is already calibrated on its own domain.
    config = small_config(generator=small_mixture((1, 1), (1, 1), n=2000), n_replications=4,
                          classifier=LearnerConfig(l2_penalty=0.0))
    result = hz.run_experiment(config)
    for kind in config.calibrators:
        means = {m: result.mean(m, kind) for m in METHODS}
        for a in METHODS:
            for b in METHODS:
                spread = hz.pooled_std(result.values(a, kind), result.values(b, kind))
                assert abs(means[a] - means[b]) <= 2 * spread + 0.01


def test_partial_failures_are_flagged(monkeypatch):
    original = hz.run_replication

    def flaky(config, index):
        if index == 1:
            raise ShiftCalError("boom")
        return original(config, index)

    monkeypatch.setattr(hz, "run_replication", flaky)
    result = hz.run_experiment(small_config(n_replications=3, calibrators=("temperature",)))
    assert result.partial and len(result.replications) == 2
    assert result.failures == [{"replication": 1, "seed": 4, "error": "boom"}]
    assert result.summary()["partial"] is True


def test_all_failures_raise(monkeypatch):
    def broken(config, index):
        raise ShiftCalError("nope")

    monkeypatch.setattr(hz, "run_replication", broken)
    with pytest.raises(ShiftCalError, match="all replications failed"):
        hz.run_experiment(small_config())


def test_file_source_matches_generated(tmp_path):
    gen = small_mixture()
    seeds = hz.replication_seeds(3)
    source, target, gt = ds.generate_mixture_shift(gen, seeds.data)
    ds.write_csv(source, tmp_path / "s.csv")
    ds.write_csv(target, tmp_path / "t.csv")
    imp.write_weights_csv(gt, tmp_path / "w.csv")
    files = hz.FileSource(str(tmp_path / "s.csv"), str(tmp_path / "t.csv"), str(tmp_path / "w.csv"))
    a = hz.run_experiment(small_config(generator=files, n_replications=1))
    b = hz.run_experiment(small_config(n_replications=1))
    for m in METHODS:
        np.testing.assert_array_equal(a.values(m, "platt"), b.values(m, "platt"))


def test_file_source_without_weights_needs_discriminator(tmp_path):
    source, target, _ = ds.generate_mixture_shift(small_mixture(n=100), 0)
    ds.write_csv(source, tmp_path / "s.csv")
    ds.write_csv(target, tmp_path / "t.csv")
    files = hz.FileSource(str(tmp_path / "s.csv"), str(tmp_path / "t.csv"))
    with pytest.raises(ShiftCalError):
        hz.run_experiment(small_config(generator=files, n_replications=1))
    res = hz.run_experiment(small_config(
        generator=files, n_replications=1, calibrators=("temperature",),
        weights=hz.WeightsSpec("discriminator", discriminator=LearnerConfig(max_epochs=30))))
    assert not res.partial


# ---------------------------------------------------------------- sweeps

def test_sweep_spec_validation():
    base = small_config()
    with pytest.raises(ConfigError):
        hz.SweepSpec("divergence", (), base)
    with pytest.raises(ConfigError):
        hz.SweepSpec("weight_noise", (0, 2, 1), base)
    with pytest.raises(ConfigError):
        hz.SweepSpec("validation_size", (10, 10), base)
    with pytest.raises(ConfigError):
        hz.SweepSpec("temperature", (1, 2), base)
    with pytest.raises(ConfigError):
        hz.SweepSpec("divergence", ((1, 1, 1),), base)
    with pytest.raises(ConfigError):
        hz.SweepSpec("divergence", ((1, 1),), replace(base, generator=hz.TWO_GAUSSIAN_CONFIG))


def test_divergence_grid_ordered_by_closed_form():
    base = small_config(generator=small_mixture((8, 1), (1, 1)))
    hz.SweepSpec("divergence", [[4, 1], [2, 1], [1, 1], [1, 2], [1, 4]], base)
    with pytest.raises(ConfigError):
        hz.SweepSpec("divergence", [[1, 1], [4, 1], [1, 4]], base)


def test_sweep_config_at_varies_one_axis():
    base = small_config()
    d = hz.SweepSpec("divergence", [[1, 1], [1, 2]], base).config_at((1, 2))
    assert d.generator.target_ratio == (1.0, 2.0) and d.seed == base.seed
    v = hz.SweepSpec("validation_size", [10, 20], base).config_at(20)
    assert v.validation_size == 20 and v.generator == base.generator
    n = hz.SweepSpec("weight_noise", [0, 1], base).config_at(1)
    assert n.weights.mode == "noisy_ground_truth" and n.weights.sigma == 1.0


def test_sweep_writes_long_format_csv(tmp_path):
    base = small_config(calibrators=("temperature",), n_replications=1)
    result = hz.run_sweep(hz.SweepSpec("weight_noise", [0.0, 4.0], base))
    result.write(tmp_path)
    with open(tmp_path / "sweep.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["axis_value", "method", "calibrator", "ece_mean", "ece_std"]
    assert len(rows) == 1 + 2 * len(METHODS)
    assert {r[0] for r in rows[1:]} == {"0", "4"}
    summary = json.loads((tmp_path / "sweep.json").read_text())
    assert summary["axis"] == "weight_noise" and len(summary["points"]) == 2


def test_format_axis_value():
    assert hz.format_axis_value((4.0, 1.0)) == "4:1"
    assert hz.format_axis_value(0.5) == "0.5"
    assert hz.format_axis_value(1500) == "1500"


# ---------------------------------------------------------------- two-gaussian demo

@pytest.fixture(scope="module")
def two_gaussian():
    return hz.replicate_figure2(seed=0, mesh_size=30)


def test_two_gaussian_mesh_covers_data(two_gaussian):
    b = two_gaussian
    allX = np.vstack([b.source.features, b.target.features])
    assert b.mesh_x1[0] <= allX[:, 0].min() and b.mesh_x1[-1] >= allX[:, 0].max()
    assert b.mesh_x2[0] <= allX[:, 1].min() and b.mesh_x2[-1] >= allX[:, 1].max()


def test_two_gaussian_surfaces_are_probabilities(two_gaussian):
    assert set(two_gaussian.surfaces) == {"true", "uncalibrated", "source_calibrated",
                                     "target_calibrated", "weighted"}
    for s in two_gaussian.surfaces.values():
        assert s.shape == (30, 30)
        assert np.all((s >= 0) & (s <= 1))


def test_two_gaussian_weighted_surface_closer_to_target(two_gaussian):
    b = two_gaussian
    assert b.surface_deviation("weighted") < b.surface_deviation("source_calibrated")


def test_two_gaussian_write(two_gaussian, tmp_path):
    two_gaussian.write(tmp_path)
    with open(tmp_path / "surfaces.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0][:2] == ["x1", "x2"] and len(rows) == 1 + 30 * 30
    with open(tmp_path / "scatter.csv") as f:
        assert sum(1 for _ in f) == 1 + two_gaussian.source.n + two_gaussian.target.n
    for name in ("uncalibrated", "source_calibrated", "target_calibrated", "weighted"):
        assert (tmp_path / f"reliability_{name}.csv").is_file()


def test_two_gaussian_needs_two_dimensions():
    cfg = ds.GaussianShiftConfig(source_mean=(0.0,), target_mean=(1.0,), source_cov=((1.0,),),
                                 target_cov=((1.0,),))
    with pytest.raises(ConfigError):
        hz.replicate_figure2(cfg)
