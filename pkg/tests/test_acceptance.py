"""Acceptance criteria 1-9, each printed as one PASS/FAIL line.

Criteria 4-9 share one end-to-end run of the command-line pipeline
(build-meta, MV training, LOOCV training on ALL-IN), timed as a whole.
"""
import json
import os
import time

import numpy as np
import pytest

import oracles
from qkselect import cli
from qkselect import datagen as dg
from qkselect import evaluator as ev
from qkselect import metalearn as ml
from qkselect import qsim

SEED = 2025
BUDGET_SECONDS = 30 * 60
FAMILY_COUNTS = {"Blobs": 42, "Circles": 24, "Moons": 21, "ConcentricRings": 24, "XOR": 18, "Spiral": 18, "Checkerboard": 27}
REFERENCE_STRUCTURE = {
    "SRx": (0, 8, 2, None),
    "HERx": (0, 14, 8, "CX"),
    "ZFM": (0, 16, 4, None),
    "ZZFM": (0, 34, 22, "CX"),
    "HD": (0, 31, 9, "SQISW"),
    "YZ_CX": (16, 20, 6, "CX"),
    "HZY_CZ": (16, 28, 13, "CRZ"),
    "PZFM": (8, 22, 10, "CX"),
    "Chebyshev": (24, 24, 10, "CRZ"),
}


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    jobs = os.cpu_count() or 1
    common = ["--out-dir", str(out), "--seed", str(SEED), "--jobs", str(jobs)]
    times = {}
    t0 = time.perf_counter()
    codes = {"build": cli.main(["build-meta", *common])}
    times["build-meta"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    codes["mv"] = cli.main(["train", *common, "--strategy", "MV", "--R", "10", "--k", "9"])
    times["train MV"] = time.perf_counter() - t1
    t2 = time.perf_counter()
    codes["loocv"] = cli.main(["train", *common, "--strategy", "LOOCV", "--loocv-modes", "ALL-IN", "--k", "3"])
    times["train LOOCV"] = time.perf_counter() - t2
    times["total"] = time.perf_counter() - t0
    return {"out": out, "codes": codes, "times": times, "jobs": jobs}


def test_criterion_1_structural_audit(verdict):
    t0 = time.perf_counter()
    rows = {c.id: (c.n_params, c.n_gates, c.depth, c.two_qubit_kind) for c in qsim.all_circuits()}
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in rows.items() if v != REFERENCE_STRUCTURE[k]}
    verdict(1, not bad and len(rows) == 9 and elapsed < 1.0, f"9 circuits match the reference table, mismatches={bad}, {elapsed:.3f} s")


def test_criterion_2_kernel_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_sym = worst_diag = worst_srx = 0.0
    min_eig = np.inf
    for c in qsim.all_circuits():
        A = rng.uniform(0, np.pi, size=(1000, 4))
        B = rng.uniform(0, np.pi, size=(1000, 4))
        Sa, Sb = qsim.encode_batch(c, A), qsim.encode_batch(c, B)
        kab = np.abs(np.einsum("ij,ij->i", Sa.conj(), Sb)) ** 2
        kba = np.abs(np.einsum("ij,ij->i", Sb.conj(), Sa)) ** 2
        kaa = np.abs(np.einsum("ij,ij->i", Sa.conj(), Sa)) ** 2
        worst_sym = max(worst_sym, np.max(np.abs(kab - kba)))
        worst_diag = max(worst_diag, np.max(np.abs(kaa - 1.0)))
        for batch in range(3):
            K = qsim.gram(c, rng.uniform(0, np.pi, size=(60, 4))).entries
            min_eig = min(min_eig, np.linalg.eigvalsh(K).min())
        if c.id == "SRx":
            worst_srx = np.max(np.abs(kab - np.prod(np.cos(A - B) ** 2, axis=1)))
    elapsed = time.perf_counter() - t0
    ok = worst_sym <= 1e-10 and worst_diag <= 1e-10 and min_eig >= -1e-8 and worst_srx <= 1e-10 and elapsed < 30
    verdict(2, ok, f"sym {worst_sym:.1e}, diag {worst_diag:.1e}, min eig {min_eig:.1e}, SRx {worst_srx:.1e}, {elapsed:.1f} s")


def test_criterion_3_evaluator_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    svc_gap = krc_gap = gpc_gap = 0.0
    for _ in range(10):
        K = oracles.random_psd(6, rng)
        y = rng.permutation([0, 0, 0, 1, 1, 1])
        res = ev.svc_fit_predict(K, y, K)
        ref, _ = oracles.svm_dual_bruteforce(K, y, C=1.0)
        svc_gap = max(svc_gap, abs(ev.svc_dual_objective(res.alpha, K, y) - ref))
        K4 = oracles.random_psd(6, rng)
        yk = rng.integers(0, 2, 6)
        krc_gap = max(krc_gap, np.max(np.abs(ev.krc_coefficients(K4, yk) - oracles.krc_direct(K4, yk))))
        K5 = oracles.random_psd(5, rng) + 1e-6 * np.eye(5)
        y5 = rng.integers(0, 2, 5)
        gpc_gap = max(gpc_gap, np.max(np.abs(ev.gpc_laplace_mode(K5, y5).f - oracles.gpc_mode_optimizer(K5, y5))))
    elapsed = time.perf_counter() - t0
    ok = svc_gap <= 1e-4 and krc_gap <= 1e-10 and gpc_gap <= 1e-5 and elapsed < 10
    verdict(3, ok, f"SVC dual gap {svc_gap:.1e}, KRC {krc_gap:.1e}, GPC mode {gpc_gap:.1e}, {elapsed:.1f} s")


def test_criterion_4_inventory(pipeline, verdict):
    inv = json.loads((pipeline["out"] / "inventory.json").read_text())
    ok = pipeline["codes"]["build"] == 0 and inv["synthetic"] == FAMILY_COUNTS and inv["n_real"] == 26 and inv["total"] == 200
    meta = ml.read_meta_csv(pipeline["out"] / "meta.csv")
    ok = ok and len(meta) == 200
    verdict(4, ok, f"synthetic {inv['synthetic']}, real {inv['n_real']}, total {inv['total']}, records {len(meta)}; notes {inv['notes']}")


def test_criterion_5_label_modes(pipeline, verdict):
    scores = ev.read_scores_csv(pipeline["out"] / "scores.csv")
    meta = ml.read_meta_csv(pipeline["out"] / "meta.csv")
    tied_total = sum(len(r.label_set) for r in meta)
    contained = all(r.target in r.label_set for r in meta)
    single_ok = all(
        ev.label(scores[r.dataset_name], ev.SINGLE, seed=dg.dataset_seed(SEED, r.dataset_name)).circuits[0] in r.label_set for r in meta
    )
    grid = [0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2]
    monotone = True
    for name, s in scores.items():
        sets = [set(ev.label(s, ev.TIED, e).circuits) for e in grid]
        monotone &= all(a <= b for a, b in zip(sets, sets[1:]))
    freq = json.loads((pipeline["out"] / "frequency.json").read_text())
    ok = 200 <= tied_total <= 1800 and contained and single_ok and monotone and len(scores) == 200
    verdict(5, ok, f"TIED memberships {tied_total}; SINGLE within TIED {contained and single_ok}; eps-monotone {monotone}; TIED counts {freq['TIED-BEST-OUT']['counts']}")


def test_criterion_6_cost_accounting(pipeline, verdict):
    mv = json.loads((pipeline["out"] / "train_MV.json").read_text())
    lo = json.loads((pipeline["out"] / "train_LOOCV.json").read_text())
    ratio, counts = ml.cost_ratio(10, 14, 200)
    ok = mv["trainings"]["evaluation"] == 140 and lo["trainings"]["evaluation"] == 2800 and counts == (140, 2800) and ratio == 1 / 20
    ok = ok and mv["cost_ratio_vs_loocv"]["ratio"] == ratio
    verdict(6, ok, f"MV {mv['trainings']['evaluation']} trainings, LOOCV {lo['trainings']['evaluation']}, ratio {ratio}")


def test_criterion_7_recommender_behaviour(pipeline, verdict):
    mv = json.loads((pipeline["out"] / "train_MV.json").read_text())
    lo = json.loads((pipeline["out"] / "train_LOOCV.json").read_text())
    tied, single = mv["hit_rates"]["TIED-BEST-OUT"], mv["hit_rates"]["SINGLE-BEST-OUT"]
    ks = range(1, 10)
    monotone = all(tied[f"top{k}"][r] <= tied[f"top{k + 1}"][r] and single[f"top{k}"][r] <= single[f"top{k + 1}"][r] for k in range(1, 9) for r in range(10))
    dominates = all(tied[f"top{k}"][r] >= single[f"top{k}"][r] for k in ks for r in range(10))
    loocv_monotone = all(lo["accuracy"]["top1"][key] <= lo["accuracy"]["top3"][key] for key in lo["accuracy"]["top1"])
    mean_tied, mean_single = float(np.mean(tied["top1"])), float(np.mean(single["top1"]))
    ok = monotone and dominates and loocv_monotone and mean_tied > mean_single and len(mv["split_seeds"]) == 10
    verdict(7, ok, f"Top-k monotone {monotone and loocv_monotone}; TIED>=SINGLE per run {dominates}; mean Top-1 TIED {mean_tied:.3f} vs SINGLE {mean_single:.3f} over 10 seeds")


def _holdout_csvs(tmp_path):
    paths = []
    for spec in dg.manifest_specs(dg.load_manifest(), "holdout"):
        d = dg.materialize(spec)
        p = tmp_path / f"{spec.name}.csv"
        dg.write_csv(d, p)
        paths.append(p)
    return paths


def test_criterion_8_no_quantum_inference(pipeline, verdict, tmp_path):
    out = pipeline["out"]
    entries, calls = qsim.KERNEL_COUNTER.kernel_entries, qsim.KERNEL_COUNTER.gram_calls
    reported = []
    for model in ("recommender_MV.pkl", "recommender_LOOCV.pkl"):
        for p in _holdout_csvs(tmp_path):
            j = tmp_path / "r.json"
            assert cli.main(["recommend", "--out-dir", str(tmp_path), "--model", str(out / model), "--dataset", str(p), "--k", "3", "--json", str(j)]) == 0
            reported.append(json.loads(j.read_text())["kernel_evaluations"])
    unchanged = qsim.KERNEL_COUNTER.kernel_entries == entries and qsim.KERNEL_COUNTER.gram_calls == calls
    verdict(8, unchanged and set(reported) == {0}, f"{len(reported)} recommend calls, kernel entries computed: {qsim.KERNEL_COUNTER.kernel_entries - entries}")


def test_criterion_9_runtime_and_reduced_search(pipeline, verdict, tmp_path):
    t = pipeline["times"]
    qsim.KERNEL_COUNTER.reset()
    code = cli.main(
        ["verify", "--out-dir", str(tmp_path), "--model", str(pipeline["out"] / "recommender_MV.pkl"), "--holdout",
         "--recommended-only", "--k", "3", "--json", str(tmp_path / "v.json")]
    )
    rows = json.loads((tmp_path / "v.json").read_text())["rows"]
    evaluated = [r["circuits_evaluated"] for r in rows]
    reduced = code == 0 and max(evaluated) <= 3 and qsim.KERNEL_COUNTER.gram_calls == 2 * sum(evaluated)
    within = t["total"] <= BUDGET_SECONDS and all(c == 0 for c in pipeline["codes"].values())
    detail = ", ".join(f"{k} {v:.0f} s" for k, v in t.items())
    verdict(9, within and reduced, f"{detail} with {pipeline['jobs']} worker(s), budget {BUDGET_SECONDS} s; verify evaluated {evaluated} circuits (of 9 each)")
