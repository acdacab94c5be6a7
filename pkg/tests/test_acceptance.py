"""One test per acceptance criterion; each prints a PASS/FAIL line with its numbers."""

import json
import time

import numpy as np
import pytest

from oracles import brute_force_ece, brute_force_isotonic, numerical_gradient, relative_error
from shiftcal import cli
from shiftcal import harness as hz
from shiftcal.calibration import fit_isotonic, fit_temperature
from shiftcal.dataset import MixtureShiftConfig, generate_mixture_shift
from shiftcal.importance import estimate_weights_discriminator
from shiftcal.learner import LearnerConfig, fit, loss_and_grad, softmax
from shiftcal.metrics import ece, reliability_bins

pytestmark = pytest.mark.slow

TEMPERATURE = "temperature"


def bundled(name):
    doc, workdir = cli.load_config(name)
    return doc, cli.experiment_config(doc, workdir)


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def gap_stats(result, a, b, calibrator=TEMPERATURE):
    va, vb = result.values(a, calibrator), result.values(b, calibrator)
    return float(va.mean() - vb.mean()), hz.pooled_std(va, vb)


@pytest.fixture(scope="module")
def s1t1():
    _, config = bundled("mixture_s1t1")
    return timed(hz.run_experiment, config)


@pytest.fixture(scope="module")
def s2t2():
    _, config = bundled("mixture_s2t2")
    return hz.run_experiment(config)


def _sweep(name):
    doc, config = bundled(name)
    return hz.run_sweep(hz.SweepSpec(doc["sweep"]["axis"], doc["sweep"]["values"], config))


@pytest.fixture(scope="module")
def divergence_sweep():
    return _sweep("sweep_divergence")


@pytest.fixture(scope="module")
def noise_sweep():
    return _sweep("sweep_weight_noise")


def test_c1_mixture_shift_ordering(s1t1, acceptance_report):
    result, seconds = s1t1
    u, w, t = (result.mean(m, TEMPERATURE) for m in ("unweighted", "weighted", "using_target"))
    gap_uw, sd_uw = gap_stats(result, "unweighted", "weighted")
    gap_wt, sd_wt = gap_stats(result, "weighted", "using_target")
    ok = w < u and gap_uw > 2 * sd_uw and abs(gap_wt) <= 2 * sd_wt and seconds < 120
    acceptance_report(
        "C1 mixture-shift ordering", ok,
        f"ECE unweighted {u:.4f}, weighted {w:.4f}, using-target {t:.4f}; "
        f"U-W gap {gap_uw:.4f} vs 2sd {2 * sd_uw:.4f}; |W-T| {abs(gap_wt):.4f} vs 2sd "
        f"{2 * sd_wt:.4f}; {seconds:.1f}s")
    assert ok


def test_c2_mild_shift_null_result(s2t2, acceptance_report):
    gap, sd = gap_stats(s2t2, "unweighted", "weighted")
    ok = abs(gap) <= 2 * sd
    acceptance_report("C2 mild-shift null result", ok,
                      f"|U-W| {abs(gap):.4f} vs 2sd {2 * sd:.4f}")
    assert ok


def test_c3_divergence_trend(divergence_sweep, acceptance_report):
    gaps, tracks = [], []
    for _, res in divergence_sweep.points:
        gaps.append(gap_stats(res, "unweighted", "using_target")[0])
        d, sd = gap_stats(res, "weighted", "using_target")
        tracks.append(abs(d) <= 2 * sd)
    inversions = int(np.sum(np.diff(gaps) < 0))
    ok = inversions <= 1 and all(tracks)
    acceptance_report("C3 divergence trend", ok,
                      f"U-T gaps {np.round(gaps, 4).tolist()}, {inversions} inversion(s); "
                      f"weighted within 2sd of target at {sum(tracks)}/{len(tracks)} points")
    assert ok


def test_c4_weight_noise_trend(noise_sweep, acceptance_report):
    weighted = [res.mean("weighted", TEMPERATURE) for _, res in noise_sweep.points]
    _, last = noise_sweep.points[-1]
    uncal = last.mean("uncalibrated", TEMPERATURE)
    ok = weighted[-1] > uncal
    acceptance_report("C4 weight-noise trend", ok,
                      f"weighted ECE over sigma {np.round(weighted, 4).tolist()}; "
                      f"largest sigma {weighted[-1]:.4f} vs uncalibrated {uncal:.4f}")
    assert ok


def test_c5_discriminator_weight_recovery(acceptance_report):
    _, config = bundled("mixture_s1t1_discriminator")
    gen = config.generator
    assert (gen.n_source, gen.n_target) == (5000, 5000)
    hits, means = 0, []
    t0 = time.perf_counter()
    for seed in range(10):
        s, t, _ = generate_mixture_shift(gen, seed)
        w = estimate_weights_discriminator(s.features, t.features,
                                           config.weights.discriminator).values
        m0, m1 = w[s.labels == 0].mean(), w[s.labels == 1].mean()
        means.append((round(float(m0), 3), round(float(m1), 3)))
        hits += (3.0 <= m0 <= 5.0) and (0.18 <= m1 <= 0.33)
    seconds = time.perf_counter() - t0
    ok = hits >= 9 and seconds < 60
    acceptance_report("C5 discriminator weight recovery", ok,
                      f"{hits}/10 seeds in range, class means {means}; {seconds:.1f}s")
    assert ok


def test_c6_ece_oracle(acceptance_report):
    rng = np.random.default_rng(2024)
    worst, edge_cases = 0.0, 0
    for _ in range(1000):
        n, m, k = int(rng.integers(0, 9)), int(rng.integers(1, 5)), int(rng.integers(2, 5))
        P = rng.dirichlet(np.ones(k), size=n)
        for i in range(n):
            if rng.random() < 0.4:
                # Put the top confidence exactly on a bin edge (or at 1/k when the edge is lower).
                top = max(rng.integers(1, m + 1) / m, 1.0 / k)
                rest = np.full(k - 1, (1.0 - top) / (k - 1))
                P[i] = np.concatenate([[top], rest])
                rng.shuffle(P[i])
                edge_cases += 1
        y = rng.integers(0, k, n)
        worst = max(worst, abs(ece(reliability_bins(P, y, m)) - brute_force_ece(P, y, m)))
    ok = worst <= 1e-12
    acceptance_report("C6 ECE oracle", ok,
                      f"1000 cases ({edge_cases} bin-edge rows), max |diff| {worst:.2e}")
    assert ok


def test_c7_pav_oracle(acceptance_report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 7))
        scores = np.sort(rng.choice(np.linspace(0.01, 0.99, 99), n, replace=False))
        correct = rng.integers(0, 2, n).astype(float)
        w = rng.choice([1.0, 2.0, 5.0], n)
        got = fit_isotonic(scores, correct, w).map_scores(scores)
        worst = max(worst, float(np.max(np.abs(got - brute_force_isotonic(correct, w)))))
    ok = worst <= 1e-9
    acceptance_report("C7 PAV oracle", ok, f"500 cases, max |diff| {worst:.2e}")
    assert ok


def test_c8_gradient_checks(acceptance_report):
    rng = np.random.default_rng(8)
    worst = {}
    for arch, act in (("linear", "tanh"), ("mlp", "tanh"), ("mlp", "relu")):
        cfg = LearnerConfig(architecture=arch, activation=act, hidden_units=(3,))
        checked, err = 0, 0.0
        while checked < 200:
            n, d, k = int(rng.integers(1, 11)), int(rng.integers(1, 4)), int(rng.integers(2, 4))
            widths = (d,) + cfg.layer_widths + (k,)
            params = []
            for a, b in zip(widths[:-1], widths[1:]):
                params += [rng.normal(0, 1, (a, b)), rng.normal(0, 0.5, b)]
            X, y = rng.normal(size=(n, d)), rng.integers(0, k, n)
            w = rng.uniform(0, 3, n) + 1e-3
            if act == "relu" and np.min(np.abs(X @ params[0] + params[1])) < 1e-3:
                continue  # a kink within the difference stencil
            l2 = float(rng.choice([0.0, 0.1]))
            _, g = loss_and_grad(params, X, y, w, l2, act)
            num = numerical_gradient(lambda p: loss_and_grad(p, X, y, w, l2, act)[0], params)
            err = max(err, max(relative_error(a, b) for a, b in zip(g, num)))
            checked += 1
        worst[f"{arch}/{act}"] = err
    ok = all(e <= 1e-4 for e in worst.values())
    acceptance_report("C8 gradient checks", ok,
                      "200 instances each, max rel. err " +
                      ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def test_c9_temperature_invariants(s1t1, s2t2, divergence_sweep, noise_sweep, acceptance_report):
    runs = [s1t1[0], s2t2] + [r for _, r in divergence_sweep.points] + \
        [r for _, r in noise_sweep.points]
    preserved = all(r.summary()["diagnostics"]["temperature_argmax_preserved"] for r in runs)
    # Soft-label expansion: the weighted NLL equals the expected NLL under the generating
    # logistic model, so dividing the 3x-scaled logits by exactly 3 is optimal.
    rng = np.random.default_rng(9)
    Z = rng.normal(size=(2000, 3)) @ rng.normal(0, 1.5, (3, 4))
    P = softmax(Z)
    Ze = np.repeat(3.0 * Z, 4, axis=0)
    t = fit_temperature(Ze, np.tile(np.arange(4), 2000), P.reshape(-1)).temperature
    ok = preserved and abs(t / 3.0 - 1.0) <= 0.05
    acceptance_report("C9 temperature invariants", ok,
                      f"argmax preserved in all {len(runs)} runs: {preserved}; T* {t:.5f} vs 3")
    assert ok


def test_c10_weighted_source_loss_matches_target(acceptance_report):
    gen = MixtureShiftConfig.isotropic((1, 4), (4, 1), n_source=3000, n_target=3000)
    train, _, _ = generate_mixture_shift(gen, 10_000)
    model = fit(LearnerConfig(l2_penalty=0.05), train.features, train.labels)
    cal = fit_temperature(model.logits(train.features), train.labels)
    diffs = []
    for seed in range(20):
        s, t, gt = generate_mixture_shift(gen, seed)

        def losses(d):
            P = cal.apply(model.logits(d.features))
            return -np.log(np.maximum(P[np.arange(d.n), d.labels], 1e-12))

        weighted = float(np.sum(gt.values * losses(s)) / np.sum(gt.values))
        diffs.append(weighted - float(losses(t).mean()))
    diffs = np.array(diffs)
    se = diffs.std(ddof=1) / np.sqrt(diffs.size)
    ok = abs(diffs.mean()) <= 3 * se
    acceptance_report("C10 weighted source loss equals target loss", ok,
                      f"mean diff {diffs.mean():+.5f} vs 3 SE {3 * se:.5f} over 20 seeds")
    assert ok


def test_c11_determinism(tmp_path, capsys, acceptance_report):
    outs = []
    for name in ("a", "b"):
        assert cli.main(["experiment", "mixture_s1t1", "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name / "report.json").read_bytes())
    capsys.readouterr()
    ok = outs[0] == outs[1]
    digest = json.loads(outs[0])["config_digest"][:12]
    acceptance_report("C11 determinism", ok,
                      f"two experiment runs byte-identical: {ok} ({len(outs[0])} bytes, "
                      f"config {digest})")
    assert ok
