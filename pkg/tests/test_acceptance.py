"""Acceptance criteria 1-9, each checked at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that is printed in the
terminal summary under "acceptance criteria". Criteria 1, 4, 5, 8 and 9 read
the artifacts of one default desk-scale suite run (``desk_suite`` fixture).
"""

import hashlib
import json
import math
import shutil

import numpy as np
from neurotact import cli
from neurotact.classify import (
    BUCKETS, bucket_cells, fold_sizes, lda_fit, lda_predict, pca_fit,
)
from neurotact.drum_sim import FORCES, SPEEDS, Dataset
from neurotact.experiments import RunConfig, read_csv
from neurotact.force_cal import ForceScalingTable
from neurotact.features import MODES
from neurotact.pipeline import load_features
from neurotact.rt_pipeline import (
    SessionParams, VelocityProfile, crosssession_train, extrapolation_train, load_rt_datasets,
    run_stream_both, simulate_scan, trained_profiles,
)
from neurotact.spike_codec import IzhikevichParams, encode_trial, spike_counts, spike_rate
from neurotact.speed_warp import STREAMING, warp_offline
from neurotact.stats import cohen_d, cohen_h, two_prop_z, welch_t

from oracles import brute_force_pca, izhikevich_reference, student_t_two_tailed, welch_by_hand


def _repeats(out, name, pcs=50):
    df = read_csv(out / f"{name}_repeats.csv")
    df = df[df["pcs"] == pcs]
    return {v: g.sort_values("repeat")["accuracy"].to_numpy() for v, g in df.groupby("variant")}


def _check(record, number, checks):
    ok = all(c for c, _ in checks)
    record(number, ok, "; ".join(d for _, d in checks))
    assert ok, [d for c, d in checks if not c]


def test_criterion_1_calibration(desk_suite, record_criterion):
    out = desk_suite["out"]
    rep = json.loads((out / "calibration_report.json").read_text())
    table = ForceScalingTable.load(out / "force_scaling.json")
    clamped = table.coefficients[~table.converged]
    seconds = json.loads((out / "timings.json").read_text())["calibrate"]
    _check(record_criterion, 1, [
        (rep["converged_fraction"] >= 0.98, f"converged {100 * rep['converged_fraction']:.2f}%"),
        (rep["max_residual_converged"] < 0.1,
         f"max |SR-target| {rep['max_residual_converged']:.4f}"),
        (bool(np.all(clamped == 5.0)), f"{clamped.size} clamped at 5"),
        (seconds < 300, f"{seconds:.0f} s"),
    ])


def test_criterion_2_warp_exactness(desk_suite, record_criterion):
    ds = Dataset.open(desk_suite["data"])
    worst_dur = worst_rate = 0.0
    counts_ok = True
    n = 0
    for tr in ds.traces():
        speed = float(tr.condition.speed)
        for train in encode_trial(tr.samples):
            w = warp_offline(train, speed)
            worst_dur = max(worst_dur, abs(w.duration - 2.0))
            counts_ok &= len(w) == len(train)
            if len(train):
                expect = spike_rate(train) * 120.0 / speed
                worst_rate = max(worst_rate, abs(spike_rate(w) - expect) / expect)
        n += 1
    _check(record_criterion, 2, [
        (worst_dur <= 1e-3, f"{n} trials, max |T-2| {worst_dur:.2e} s"),
        (counts_ok, "counts preserved"),
        (worst_rate <= 1e-9, f"max SR rel. error {worst_rate:.1e}"),
    ])


def test_criterion_3_streaming_equals_offline(record_criterion):
    worst = 0.0
    checked = 0
    same_counts = True
    for v in (50.0, 100.0, 150.0):
        for tex, seed in (("B", 1), ("L", 2), ("N", 3)):
            profile = VelocityProfile("medium", seed, jitter=0.0, scale=v / 100.0)
            s = simulate_scan(tex, profile, SessionParams.draw(seed), seed, tracker_noise=0.0)
            out = run_stream_both(s)
            for real, scaled in zip(out.real_trains, out.scaled_trains):
                offline = warp_offline(real, v, STREAMING).times
                offline = offline[offline < 2.0]
                if offline.size != scaled.times.size:
                    same_counts = False
                    continue
                if offline.size:
                    worst = max(worst, float(np.max(np.abs(offline - scaled.times))))
                checked += offline.size
    _check(record_criterion, 3, [(same_counts, "same spikes on both paths"),
                                 (worst <= 1e-3, f"{checked} spikes, max error {worst * 1e3:.2e} ms")])


def test_criterion_4_table1_ordering(desk_suite, record_criterion):
    acc = _repeats(desk_suite["out"], "fig3a")
    pairs = [("speed_force", "speed"), ("speed", "original"),
             ("speed_force", "force"), ("force", "original")]
    checks = []
    for a, b in pairs:
        t, _, p = welch_t(acc[a], acc[b])
        checks.append((acc[a].mean() > acc[b].mean() and p < 0.05,
                       f"{a} {100 * acc[a].mean():.2f} > {b} {100 * acc[b].mean():.2f} (p={p:.1e})"))
    _check(record_criterion, 4, checks)


def test_criterion_5_extrapolation(desk_suite, record_criterion):
    out = desk_suite["out"]
    both = _repeats(out, "fig3cf_untrained-both")
    gap = both["speed_force"].mean() - both["original"].mean()
    _, _, p = welch_t(both["speed_force"], both["original"])
    checks = [(gap >= 0.10 and p < 0.01, f"3C gap {100 * gap:.1f} pp (p={p:.1e})")]
    for bucket, winners, losers, label in (
            ("untrained-force", ("force", "speed_force"), ("original", "speed"), "3D"),
            ("untrained-speed", ("speed", "speed_force"), ("original", "force"), "3E")):
        acc = _repeats(out, f"fig3cf_{bucket}")
        worst = 0.0
        ok = True
        for w in winners:
            for lo in losers:
                _, _, p = welch_t(acc[w], acc[lo])
                ok &= acc[w].mean() > acc[lo].mean() and p < 0.05
                worst = max(worst, p)
        checks.append((ok, f"{label} scaled > unscaled (max p={worst:.1e})"))
    _check(record_criterion, 5, checks)


def test_criterion_6_protocol_arithmetic(desk_suite, record_criterion):
    out = desk_suite["out"]
    cfg = RunConfig()
    mats = load_features(out / "features.npz")
    rt = load_rt_datasets(out / "realtime.npz")
    d = rt[0]
    rng = np.random.default_rng(0)
    cells = bucket_cells(SPEEDS, FORCES)
    desk_fold = fold_sizes(16 * cfg.sample_per_class())
    fig4c = read_csv(out / "fig4c_untrained-profiles.csv")
    checks = [
        (fold_sizes(8000) == (6000, 2000), "full-size folds 6000/2000"),
        (desk_fold == (1200, 400), f"desk folds {desk_fold[0]}/{desk_fold[1]}"),
        ([len(cells[b]) for b in BUCKETS] == [2, 3, 4, 6], "buckets [2,3,4,6]"),
        (16 * len(cells["trained-both"]) * 75 == 7200, "extrapolation train 7200"),
        (crosssession_train(rng, d.train).size == 75 and d.test.textures.size == 100,
         "cross-session 75/100"),
        (extrapolation_train(rng, d.train).size == 30, "rt train 30"),
        (int(trained_profiles(d.test).sum()) == 40 and int((~trained_profiles(d.test)).sum()) == 60,
         "rt tests 40/60"),
        (bool((fig4c["n"] == 300).all()), "n = 300"),
        (mats["speed"].values.shape[1] == 720 and mats["original"].values.shape[1] == 2160
         and d.train.scaled.shape[1] == 180 and MODES["realtime"] == (9, 20),
         "features 720/2160/180"),
    ]
    _check(record_criterion, 6, checks)


def test_criterion_7_numerics_oracles(record_criterion):
    unit = IzhikevichParams(k=1.0)
    drives = [0.0, 3.5, 5.0, 10.0, 40.0, 100.0, 200.0, 500.0]
    izh = max(abs(int(spike_counts(unit, np.full((1, 1000), I))[0]) - izhikevich_reference(I))
              for I in drives)

    rng = np.random.default_rng(42)
    pca_err = 0.0
    for n, p in ((6, 6), (6, 4), (5, 3)):
        X = rng.standard_normal((n, p)) * np.linspace(2, 0.5, p)
        k = min(p, n - 1)
        basis = pca_fit(X, k)
        w, V = brute_force_pca(X, k)
        pca_err = max(pca_err, np.max(np.abs(basis.explained_variance - w)),
                      np.max(np.abs(basis.components - V)))

    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    y = np.repeat(np.arange(3), 200)
    X = centers[y] + 0.1 * rng.standard_normal((600, 2))
    Xt = centers[y] + 0.1 * rng.standard_normal((600, 2))
    lda_acc = float(np.mean(lda_predict(lda_fit(X, y), Xt) == y))

    a, b = [1, 2, 3, 4, 5], [2, 3, 4, 5, 6]
    t, dof, pv = welch_t(a, b)
    t0, dof0 = welch_by_hand(a, b)
    z, pz = two_prop_z(180, 300, 150, 300)
    pool = 330 / 600
    z0 = 0.1 / math.sqrt(pool * (1 - pool) * 2 / 300)
    stat_err = max(abs(t - t0), abs(dof - dof0), abs(pv - student_t_two_tailed(t0, dof0)),
                   abs(cohen_d(a, b) + 1 / math.sqrt(2.5)), abs(z - z0),
                   abs(pz - math.erfc(z0 / math.sqrt(2))),
                   abs(cohen_h(0.6, 0.5) - (2 * math.asin(math.sqrt(0.6)) - 2 * math.asin(math.sqrt(0.5)))))
    h10 = cohen_h(1.0, 0.0)
    _check(record_criterion, 7, [
        (izh <= 1, f"Izhikevich max count diff {izh}"),
        (pca_err <= 1e-9, f"PCA err {pca_err:.1e}"),
        (lda_acc >= 0.99, f"LDA {100 * lda_acc:.1f}%"),
        (stat_err <= 1e-6, f"stats err {stat_err:.1e}"),
        (abs(h10 - math.pi) <= 1e-12, "h(1,0)=pi"),
    ])


def test_criterion_8_realtime_trend(desk_suite, record_criterion):
    df = read_csv(desk_suite["out"] / "fig4c_untrained-profiles.csv")
    at = df[df["pcs"] == 25].set_index("variant")
    ps, po = at.loc["speed", "mean_accuracy"], at.loc["original", "mean_accuracy"]
    n = int(at.loc["speed", "n"])
    z, p = two_prop_z(ps * n, n, po * n, n)
    h = cohen_h(ps, po)
    _check(record_criterion, 8, [
        (n == 300, "n = 300"),
        (ps > po and p < 0.01, f"speed {100 * ps:.1f}% vs original {100 * po:.1f}% (p={p:.1e})"),
        (h > 0.2, f"h={h:.2f}"),
    ])


def _digest(root, pattern="*"):
    h = hashlib.sha256()
    for p in sorted(root.rglob(pattern)):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _body(path):
    # the config line records the command and paths, which differ between runs
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("# config:")]


def test_criterion_9_suite_runtime_and_determinism(desk_suite, tmp_path, record_criterion):
    assert desk_suite["code"] == 0
    out = desk_suite["out"]
    # regenerate the dataset and rerun one experiment from the cached features
    cli.main(["gen", "--dataset", str(tmp_path / "data")])
    again = tmp_path / "out"
    again.mkdir()
    shutil.copy(out / "features.npz", again / "features.npz")
    cli.main(["exp-fig3cf", "--out", str(again)])
    same_data = _digest(desk_suite["data"]) == _digest(tmp_path / "data")
    same_csv = all(_body(out / f"fig3cf_{b}.csv") == _body(again / f"fig3cf_{b}.csv")
                   for b in BUCKETS)
    secs = desk_suite["seconds"]
    _check(record_criterion, 9, [
        (secs < 600, f"suite {secs:.0f} s"),
        (same_data, "dataset reproducible"),
        (same_csv, "fig3cf CSVs reproducible"),
    ])

