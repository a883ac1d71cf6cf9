"""Command-line pipeline: build the meta-dataset, train, recommend, verify.

Every subcommand reads defaults from ``PipelineConfig``, then an optional
YAML/JSON ``--config`` file, then explicit flags (later wins). Exit codes:
0 success, 1 input error, 2 too many per-dataset failures.

Example::

    qkselect build-meta --out-dir run
    qkselect train --out-dir run --strategy MV
    qkselect recommend --model run/recommender_MV.pkl --dataset my.csv --k 3
    qkselect verify --model run/recommender_MV.pkl --holdout --k 3
"""
from __future__ import annotations

import argparse
import json
import logging
import pickle
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml
from joblib import Parallel, delayed

from . import complexity as cx
from . import datagen as dg
from . import evaluator as ev
from . import metalearn as ml
from . import qsim

log = logging.getLogger("qkselect")

EXIT_OK, EXIT_INPUT, EXIT_FAILURES = 0, 1, 2
MAX_FAILURE_SHARE = 0.05


class InputError(Exception):
    """Bad user input; mapped to exit code 1."""


@dataclass
class PipelineConfig:
    seed: int = 2025
    manifest: str | None = None  # None: the shipped manifest
    data_dir: str | None = None
    epsilon: float = ev.DEFAULT_EPSILON
    label_mode: str = ev.TIED
    feature_mode: str = cx.ALL_IN
    strategy: str = ml.MV
    R: int = 10
    k: int = 3
    out_dir: str = "qkselect_out"
    jobs: int = 1
    loocv_modes: str = "all"  # "all", or comma-separated modes
    log_file: str | None = None  # None: <out_dir>/log.jsonl

    def validate(self) -> "PipelineConfig":
        if self.epsilon < 0:
            raise InputError("epsilon must be >= 0")
        if not 1 <= self.k <= len(qsim.CIRCUIT_IDS):
            raise InputError(f"k must be in [1, {len(qsim.CIRCUIT_IDS)}]")
        if self.R < 1:
            raise InputError("R must be >= 1")
        if self.jobs == 0 or self.jobs < -1:
            raise InputError("jobs must be positive or -1")
        if self.label_mode not in ev.LABEL_MODES:
            raise InputError(f"label_mode must be one of {ev.LABEL_MODES}")
        if self.strategy not in (ml.MV, ml.LOOCV):
            raise InputError("strategy must be MV or LOOCV")
        for path in (self.manifest, self.data_dir):
            if path is not None and not Path(path).exists():
                raise InputError(f"no such path: {path}")
        try:
            cx.mode_metrics(self.feature_mode)
            self.modes()
        except ValueError as exc:
            raise InputError(str(exc)) from None
        return self

    def modes(self) -> list[str]:
        if self.loocv_modes == "all":
            return list(cx.ALL_MODES)
        out = [m.strip() for m in self.loocv_modes.split(",") if m.strip()]
        for m in out:
            cx.mode_metrics(m)
        if not out:
            raise ValueError("loocv_modes is empty")
        return out


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such config file: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise InputError(f"{path}: {exc}") from None
    data = data or {}
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a mapping")
    out = {}
    for key, value in data.items():
        name = key.replace("-", "_")
        if name not in _FIELD_TYPES:
            raise InputError(f"{path}: unknown config key {key!r}")
        out[name] = value
    return out


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then flags that were given explicitly."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for name in _FIELD_TYPES:
        if name in vars(args):
            values[name] = getattr(args, name)
    try:
        cfg = PipelineConfig(**values)
        cfg.seed, cfg.R, cfg.k, cfg.jobs = int(cfg.seed), int(cfg.R), int(cfg.k), int(cfg.jobs)
        cfg.epsilon = float(cfg.epsilon)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad configuration: {exc}") from None
    return cfg.validate()


# ---------------------------------------------------------------------------
# logging


class JsonLinesFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "time": round(record.created, 3),
            "level": record.levelname,
            "logger": record.name,
            "event": getattr(record, "event", None),
            "message": record.getMessage(),
        }
        return json.dumps(entry)


def setup_logging(cfg: PipelineConfig) -> logging.Handler:
    path = Path(cfg.log_file) if cfg.log_file else Path(cfg.out_dir) / "log.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(JsonLinesFormatter())
    handler.setLevel(logging.INFO)
    root = logging.getLogger("qkselect")
    root.setLevel(logging.INFO)
    root.addHandler(handler)
    return handler


# ---------------------------------------------------------------------------
# build-meta


def _uses_fallback(spec: dg.DatasetSpec, data_dir) -> bool:
    cfg = spec.config
    return spec.kind == "real" and "fallback" in cfg and dg._find_real_file(cfg["file"], data_dir) is None


def _build_one(spec: dg.DatasetSpec, data_dir) -> dict:
    before = qsim.KERNEL_COUNTER.kernel_entries
    try:
        d = dg.materialize(spec, data_dir)
        feats = cx.extract(d)
        scores = ev.score_circuits(dg.preprocess(d, spec.seed))
    except (dg.DataError, ValueError, np.linalg.LinAlgError) as exc:
        return {"name": spec.name, "error": f"{type(exc).__name__}: {exc}"}
    entries = qsim.KERNEL_COUNTER.kernel_entries - before
    return {"name": spec.name, "features": feats, "scores": scores, "kernel_entries": entries, "error": None}


def inventory(specs: Sequence[dg.DatasetSpec], data_dir=None) -> dict:
    """Dataset counts per synthetic family and real source, plus substitution notes."""
    synth, real, notes = {}, {}, []
    for s in specs:
        table = synth if s.kind == "synthetic" else real
        table[s.group] = table.get(s.group, 0) + 1
    for s in specs:
        if _uses_fallback(s, data_dir):
            fb = s.config["fallback"]
            note = f"{s.group}: {s.config['file']} unavailable, substituted {fb.get('name', fb['file'])} ({fb['file']})"
            if note not in notes:
                notes.append(note)
    return {
        "synthetic": synth,
        "real": real,
        "n_synthetic": sum(synth.values()),
        "n_real": sum(real.values()),
        "total": len(specs),
        "notes": notes,
    }


def format_inventory(inv: dict) -> str:
    lines = ["Dataset inventory", f"{'Group':<24}{'Count':>6}"]
    for name, n in inv["synthetic"].items():
        lines.append(f"{name:<24}{n:>6}")
    lines.append(f"{'Synthetic total':<24}{inv['n_synthetic']:>6}")
    for name, n in inv["real"].items():
        lines.append(f"{name:<24}{n:>6}")
    lines.append(f"{'Real total':<24}{inv['n_real']:>6}")
    lines.append(f"{'Total':<24}{inv['total']:>6}")
    lines += [f"note: {n}" for n in inv["notes"]]
    return "\n".join(lines) + "\n"


def label_frequency(records: Sequence[ml.MetaRecord]) -> dict:
    counts = {c: 0 for c in qsim.CIRCUIT_IDS}
    for r in records:
        for c in r.label_set.circuits:
            counts[c] += 1
    return {"counts": counts, "n_records": len(records), "memberships": sum(counts.values())}


def format_frequency(freqs: dict[str, dict]) -> str:
    modes = list(freqs)
    lines = ["Frequency of each circuit appearing in the label sets", f"{'Circuit':<12}" + "".join(f"{m:>18}" for m in modes)]
    for c in qsim.CIRCUIT_IDS:
        lines.append(f"{c:<12}" + "".join(f"{freqs[m]['counts'][c]:>18}" for m in modes))
    lines.append(f"{'#Records':<12}" + "".join(f"{freqs[m]['n_records']:>18}" for m in modes))
    lines.append(f"{'#Labels':<12}" + "".join(f"{freqs[m]['memberships']:>18}" for m in modes))
    return "\n".join(lines) + "\n"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def cmd_build_meta(cfg: PipelineConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        manifest = dg.load_manifest(cfg.manifest)
        manifest["global_seed"] = cfg.seed
        specs = dg.manifest_specs(manifest)
    except (dg.DataError, KeyError, TypeError, OSError) as exc:
        raise InputError(f"invalid manifest: {exc}") from None
    t0 = time.perf_counter()
    results = Parallel(n_jobs=cfg.jobs)(delayed(_build_one)(s, cfg.data_dir) for s in specs)
    failed = [r for r in results if r["error"]]
    for r in failed:
        log.warning("skipped %s: %s", r["name"], r["error"], extra={"event": "dataset_skipped"})
    ok = [r for r in results if not r["error"]]
    features = {r["name"]: r["features"] for r in ok}
    scores = {r["name"]: r["scores"] for r in ok}

    cx.write_features_csv(list(features.values()), out / "features.csv")
    ev.write_scores_csv(scores, out / "scores.csv")
    records = ml.make_records(features, scores, cfg.label_mode, cfg.epsilon, cfg.seed) if ok else []
    if records:
        ml.write_meta_csv(records, out / "meta.csv")

    inv = inventory(specs, cfg.data_dir)
    (out / "inventory.txt").write_text(format_inventory(inv), encoding="utf-8")
    _write_json(out / "inventory.json", inv)
    freqs = {}
    if records:
        for mode in (ev.SINGLE, ev.TIED):
            freqs[mode] = label_frequency(ml.relabel(records, mode, cfg.epsilon, cfg.seed))
        (out / "frequency.txt").write_text(format_frequency(freqs), encoding="utf-8")
        _write_json(out / "frequency.json", freqs)

    report = {
        "config": asdict(cfg),
        "datasets": len(specs),
        "built": len(ok),
        "failed": {r["name"]: r["error"] for r in failed},
        "kernel_entries": int(sum(r["kernel_entries"] for r in ok)),
        "seconds": round(time.perf_counter() - t0, 2),
    }
    _write_json(out / "build_report.json", report)
    print(format_inventory(inv), end="")
    if freqs:
        print(format_frequency(freqs), end="")
    print(f"built {len(ok)}/{len(specs)} datasets in {report['seconds']} s; meta-dataset: {out / 'meta.csv'}")
    if len(failed) > MAX_FAILURE_SHARE * len(specs):
        print(f"error: {len(failed)} of {len(specs)} datasets failed (limit {MAX_FAILURE_SHARE:.0%})", file=sys.stderr)
        return EXIT_FAILURES
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_meta(path: Path, cfg: PipelineConfig) -> list[ml.MetaRecord]:
    if not path.is_file():
        raise InputError(f"no such meta-dataset file: {path}")
    try:
        meta = ml.read_meta_csv(path)
    except (ValueError, KeyError) as exc:
        raise InputError(f"corrupt meta-dataset: {exc}") from None
    return ml.relabel(meta, cfg.label_mode, cfg.epsilon, cfg.seed)


def _train_mv(meta, cfg: PipelineConfig) -> tuple[dict, str, ml.Recommender]:
    counter = ml.TrainingCounter()
    ks = list(range(1, cfg.k + 1))
    runs = ml.mv_predictions(meta, cfg.R, cfg.seed, cfg.feature_mode, counter)
    eval_trainings = counter.trainings
    by_mode = {}
    for mode in (ev.SINGLE, ev.TIED):
        rates = ml.hit_rates(runs, ml.relabel(meta, mode, cfg.epsilon, cfg.seed), ks)
        by_mode[mode] = {f"top{k}": rates[k] for k in ks}
    model = ml.train_final(meta, ml.MV, cfg.feature_mode, seed=cfg.seed, evaluation="MV", R=cfg.R)
    ratio, counts = ml.cost_ratio(cfg.R, len(ml.CLASSIFIER_IDS), len(meta))
    per_run = by_mode[cfg.label_mode]["top1"]
    report = {
        "strategy": ml.MV,
        "feature_mode": cfg.feature_mode,
        "label_mode": cfg.label_mode,
        "epsilon": cfg.epsilon,
        "records": len(meta),
        "split_seeds": [r.seed for r in runs],
        "per_run_accuracy": per_run,
        "mean_accuracy": float(np.mean(per_run)),
        "hit_rates": by_mode,
        "mean_hit_rates": {m: {key: float(np.mean(v)) for key, v in d.items()} for m, d in by_mode.items()},
        "trainings": {"evaluation": eval_trainings, "final": len(ml.CLASSIFIER_IDS)},
        "cost_ratio_vs_loocv": {"ratio": ratio, "mv": counts[0], "loocv_all_in": counts[1]},
    }
    lines = [f"MV evaluation: R={cfg.R}, {len(meta)} records, feature mode {cfg.feature_mode}, labels {cfg.label_mode}"]
    lines.append(f"{'Run':<5}{'Seed':>8}" + "".join(f"{'Top-' + str(k):>9}" for k in ks))
    for i, run in enumerate(runs):
        lines.append(f"{i + 1:<5}{run.seed:>8}" + "".join(f"{by_mode[cfg.label_mode][f'top{k}'][i]:>9.3f}" for k in ks))
    lines.append(f"{'Mean':<13}" + "".join(f"{report['mean_hit_rates'][cfg.label_mode][f'top{k}']:>9.3f}" for k in ks))
    for mode in (ev.SINGLE, ev.TIED):
        lines.append(f"{mode:<16} mean " + " ".join(f"Top-{k}={report['mean_hit_rates'][mode][f'top{k}']:.3f}" for k in ks))
    lines.append(f"trainings: {eval_trainings} evaluation + {len(ml.CLASSIFIER_IDS)} final")
    lines.append(f"cost ratio MV/LOOCV(ALL-IN) = {counts[0]}/{counts[1]} = {ratio:.4g}")
    return report, "\n".join(lines) + "\n", model


def _train_loocv(meta, cfg: PipelineConfig, out: Path) -> tuple[dict, str, ml.Recommender]:
    counter = ml.TrainingCounter()
    modes = cfg.modes()
    res = ml.loocv_evaluate(meta, modes, ml.CLASSIFIER_IDS, cfg.seed, cfg.jobs, counter)
    eval_trainings = counter.trainings
    grids = {k: res.accuracy(meta, k) for k in sorted({1, cfg.k})}
    cid, mode, best = res.winner(meta)
    model = ml.train_final(meta, ml.LOOCV, mode, classifier=cid, seed=cfg.seed, evaluation="LOOCV", accuracy=best)
    ratio, counts = ml.cost_ratio(cfg.R, len(ml.CLASSIFIER_IDS), len(meta))
    for k, grid in grids.items():
        with open(out / f"loocv_grid_top{k}.csv", "w", encoding="utf-8") as fh:
            fh.write("classifier," + ",".join(modes) + "\n")
            for c in ml.CLASSIFIER_IDS:
                fh.write(c + "," + ",".join(repr(grid[(c, m)]) for m in modes) + "\n")
    report = {
        "strategy": ml.LOOCV,
        "label_mode": cfg.label_mode,
        "epsilon": cfg.epsilon,
        "records": len(meta),
        "modes": modes,
        "accuracy": {f"top{k}": {f"{c}|{m}": v for (c, m), v in g.items()} for k, g in grids.items()},
        "winner": {"classifier": cid, "feature_mode": mode, "accuracy": best},
        "trainings": {"evaluation": eval_trainings, "final": 1},
        "cost_ratio_vs_loocv": {"ratio": ratio, "mv": counts[0], "loocv_all_in": counts[1]},
    }
    lines = [f"LOOCV evaluation: {len(meta)} records, {len(ml.CLASSIFIER_IDS)} classifiers x {len(modes)} feature modes, labels {cfg.label_mode}"]
    for k, grid in grids.items():
        lines.append(f"Top-{k} accuracy")
        for m in modes:
            best_c = max(ml.CLASSIFIER_IDS, key=lambda c: (grid[(c, m)], -ml.CLASSIFIER_IDS.index(c)))
            row = " ".join(f"{grid[(c, m)]:.3f}" for c in ml.CLASSIFIER_IDS)
            lines.append(f"  {m:<18} {row}  best {best_c}")
    lines.append("  columns: " + " ".join(ml.CLASSIFIER_IDS))
    lines.append(f"winner: {cid} on {mode}, Top-1 accuracy {best:.3f}")
    lines.append(f"trainings: {eval_trainings} evaluation + 1 final")
    return report, "\n".join(lines) + "\n", model


def cmd_train(cfg: PipelineConfig, meta_path: str | None = None, model_path: str | None = None) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = _load_meta(Path(meta_path) if meta_path else out / "meta.csv", cfg)
    t0 = time.perf_counter()
    if cfg.strategy == ml.MV:
        report, text, model = _train_mv(meta, cfg)
    else:
        report, text, model = _train_loocv(meta, cfg, out)
    report["seconds"] = round(time.perf_counter() - t0, 2)
    path = Path(model_path) if model_path else out / f"recommender_{cfg.strategy}.pkl"
    model.save(path)
    (out / f"train_{cfg.strategy}.txt").write_text(text, encoding="utf-8")
    _write_json(out / f"train_{cfg.strategy}.json", {k: v for k, v in report.items() if k != "seconds"})
    print(text, end="")
    print(f"recommender written to {path} ({report['seconds']} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# recommend and verify


def _load_model(path: str | None) -> ml.Recommender:
    if not path:
        raise InputError("--model is required")
    if not Path(path).is_file():
        raise InputError(f"no such recommender file: {path}")
    try:
        return ml.Recommender.load(path)
    except (pickle.UnpicklingError, EOFError, AttributeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _features_for(model: ml.Recommender, d: dg.LabeledDataset, features_csv: str | None = None) -> cx.ComplexityVector:
    wanted = cx.mode_metrics(model.feature_mode)
    if features_csv is None:
        return cx.extract(d, model.feature_mode)
    vectors = {v.dataset_name: v for v in cx.read_features_csv(features_csv)}
    if d.name not in vectors:
        raise InputError(f"{features_csv}: no row for {d.name}")
    v = vectors[d.name]
    missing = [m for m in wanted if m not in v.values]
    if missing:
        raise InputError(f"feature-mode mismatch: recommender uses {model.feature_mode}, features lack {missing}")
    return cx.ComplexityVector({m: v.values[m] for m in wanted}, v.dataset_name)


def recommend_dataset(model: ml.Recommender, d: dg.LabeledDataset, k: int, features_csv: str | None = None) -> ml.Recommendation:
    """Feature extraction and ranking only; raises if any kernel entry was computed."""
    before = qsim.KERNEL_COUNTER.kernel_entries
    x = _features_for(model, d, features_csv)
    try:
        rec = ml.recommend_topk(model, x, k)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if qsim.KERNEL_COUNTER.kernel_entries != before:
        raise RuntimeError("recommendation touched the quantum kernel")
    return rec


def cmd_recommend(cfg: PipelineConfig, model_path: str, dataset: str, json_path: str | None = None, features_csv: str | None = None) -> int:
    model = _load_model(model_path)
    d = _read_dataset(dataset)
    before = qsim.KERNEL_COUNTER.kernel_entries
    rec = recommend_dataset(model, d, cfg.k, features_csv)
    used = qsim.KERNEL_COUNTER.kernel_entries - before
    if rec.tie:
        log.info("%s: tied head %s", d.name, rec.votes, extra={"event": "vote_tie"})
    label = "votes" if model.strategy == ml.MV else "score"
    print(f"{d.name}: Top-{cfg.k} circuits ({model.strategy}, {model.feature_mode})")
    for i, c in enumerate(rec.ranked, start=1):
        print(f"{i:>3}  {c:<10} {label}={rec.votes[c]:.6g}")
    result = {
        "dataset": d.name,
        "k": cfg.k,
        "strategy": model.strategy,
        "feature_mode": model.feature_mode,
        "ranked": rec.ranked,
        "votes": {c: rec.votes[c] for c in rec.ranked},
        "tie": rec.tie,
        "kernel_evaluations": used,
    }
    if json_path:
        _write_json(Path(json_path), result)
    print(json.dumps(result))
    return EXIT_OK


def _read_dataset(path: str) -> dg.LabeledDataset:
    try:
        return dg.read_dataset_csv(path)
    except (dg.DataError, ValueError) as exc:
        raise InputError(str(exc)) from None


def verify_dataset(model: ml.Recommender, d: dg.LabeledDataset, cfg: PipelineConfig, recommended_only: bool = False) -> dict:
    rec = recommend_dataset(model, d, cfg.k)
    prep = dg.preprocess(d, dg.dataset_seed(cfg.seed, d.name))
    circuits = [qsim.build_circuit(c) for c in rec.ranked] if recommended_only else qsim.all_circuits()
    scores = ev.score_circuits(prep, circuits)
    row = {
        "dataset": d.name,
        "top1": rec.ranked[:1],
        "topk": rec.ranked,
        "circuits_evaluated": len(circuits),
        "accuracy": {s.circuit_id: s.best_accuracy for s in scores},
    }
    if recommended_only:
        best = max(scores, key=lambda s: s.best_accuracy)
        row["best_recommended"] = {"circuit": best.circuit_id, "accuracy": best.best_accuracy}
        return row
    truth = ev.label(scores, cfg.label_mode, cfg.epsilon, seed=dg.dataset_seed(cfg.seed, d.name))
    row["truth"] = list(truth.circuits)
    row["hit_top1"] = ml.hit(rec.ranked[:1], truth)
    row["hit_topk"] = ml.hit(rec.ranked, truth)
    return row


def format_verify(rows: list[dict], k: int, recommended_only: bool) -> str:
    mark = {True: "hit", False: "miss"}
    lines = []
    if recommended_only:
        lines.append(f"{'Dataset':<20}{'Predicted Top-' + str(k):<32}{'Evaluated':>10}  Best recommended")
        for r in rows:
            b = r["best_recommended"]
            lines.append(f"{r['dataset']:<20}{', '.join(r['topk']):<32}{r['circuits_evaluated']:>10}  {b['circuit']} ({b['accuracy']:.3f})")
        total = sum(r["circuits_evaluated"] for r in rows)
        lines.append(f"circuits evaluated: {total} (exhaustive search: {len(qsim.CIRCUIT_IDS) * len(rows)})")
        return "\n".join(lines) + "\n"
    lines.append(f"{'Dataset':<20}{'Top-1':<12}{'Predicted Top-' + str(k):<32}{'Ground truth':<48}{'Top-1':>6}{'Top-' + str(k):>7}")
    for r in rows:
        lines.append(
            f"{r['dataset']:<20}{r['top1'][0]:<12}{', '.join(r['topk']):<32}{', '.join(r['truth']):<48}"
            f"{mark[r['hit_top1']]:>6}{mark[r['hit_topk']]:>7}"
        )
    n = len(rows)
    h1 = sum(r["hit_top1"] for r in rows)
    hk = sum(r["hit_topk"] for r in rows)
    lines.append(f"Top-1: {h1}/{n} ({100 * h1 / n:.1f}%)")
    lines.append(f"Top-{k}: {hk}/{n} ({100 * hk / n:.1f}%)")
    return "\n".join(lines) + "\n"


def cmd_verify(
    cfg: PipelineConfig,
    model_path: str,
    datasets: Sequence[str] = (),
    holdout: bool = False,
    recommended_only: bool = False,
    json_path: str | None = None,
) -> int:
    model = _load_model(model_path)
    items = [_read_dataset(p) for p in datasets]
    if holdout:
        manifest = dg.load_manifest(cfg.manifest)
        manifest["global_seed"] = cfg.seed
        items += [dg.materialize(s, cfg.data_dir) for s in dg.manifest_specs(manifest, "holdout")]
    if not items:
        raise InputError("nothing to verify: pass --dataset and/or --holdout")
    rows = [verify_dataset(model, d, cfg, recommended_only) for d in items]
    text = format_verify(rows, cfg.k, recommended_only)
    print(text, end="")
    if json_path:
        _write_json(Path(json_path), {"k": cfg.k, "label_mode": cfg.label_mode, "epsilon": cfg.epsilon, "rows": rows})
    return EXIT_OK


# ---------------------------------------------------------------------------
# audit-circuits


def cmd_audit_circuits(write_manifest: str | None = None) -> int:
    t0 = time.perf_counter()
    audit = qsim.audit_circuits()
    print(f"{'Circuit':<12}{'#Params':>8}{'#Gates':>8}{'Depth':>7}  {'2q gate':<8}  Status")
    for cid, (got, expected, ok) in audit.items():
        kind = got[3] or "-"
        status = "ok" if ok else f"MISMATCH (expected {expected})"
        print(f"{cid:<12}{got[0]:>8}{got[1]:>8}{got[2]:>7}  {kind:<8}  {status}")
    print(f"audit took {time.perf_counter() - t0:.3f} s")
    if write_manifest:
        qsim.write_circuit_manifest(write_manifest)
        print(f"circuit manifest written to {write_manifest}")
    return EXIT_OK if all(ok for _, _, ok in audit.values()) else EXIT_FAILURES


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p: argparse.ArgumentParser, names: Sequence[str]) -> None:
    S = argparse.SUPPRESS
    help_text = {
        "seed": "global seed (dataset seeds, label tie draws, classifier seeds)",
        "manifest": "dataset manifest YAML (default: shipped manifest)",
        "data_dir": "directory searched first for real-data CSV files",
        "epsilon": "TIED-BEST-OUT tolerance",
        "label_mode": f"{ev.SINGLE} or {ev.TIED}",
        "feature_mode": "ALL-IN or SINGLE-IN:<metric>",
        "strategy": "MV or LOOCV",
        "R": "number of MV evaluation runs",
        "k": "length of the recommendation list",
        "out_dir": "directory for artifacts and reports",
        "jobs": "worker processes (-1: all cores)",
        "loocv_modes": "'all' (ALL-IN plus the 24 SINGLE-IN modes) or a comma-separated list",
        "log_file": "JSON-lines log file (default: <out-dir>/log.jsonl)",
    }
    types = {"seed": int, "epsilon": float, "R": int, "k": int, "jobs": int}
    for name in names:
        flag = "--" + name.replace("_", "-")
        kwargs = {"default": S, "dest": name, "help": help_text[name]}
        if name in types:
            kwargs["type"] = types[name]
        if name == "label_mode":
            kwargs["choices"] = list(ev.LABEL_MODES)
        if name == "strategy":
            kwargs["choices"] = [ml.MV, ml.LOOCV]
        p.add_argument(flag, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkselect", description="Recommend quantum-kernel encoding circuits from data-complexity features.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = ["seed", "out_dir", "log_file"]

    p = sub.add_parser("build-meta", help="generate datasets, score all circuits, write the meta-dataset")
    p.add_argument("--config", help="YAML or JSON config file")
    _add_config_flags(p, common + ["manifest", "data_dir", "epsilon", "label_mode", "jobs"])

    p = sub.add_parser("train", help="evaluate a strategy and train the final recommender")
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--meta", help="meta-dataset CSV (default: <out-dir>/meta.csv)")
    p.add_argument("--model", help="output recommender file (default: <out-dir>/recommender_<strategy>.pkl)")
    _add_config_flags(p, common + ["strategy", "feature_mode", "label_mode", "epsilon", "R", "k", "jobs", "loocv_modes"])

    p = sub.add_parser("recommend", help="rank circuits for a dataset without any kernel evaluation")
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--model", required=True, help="recommender file")
    p.add_argument("--dataset", required=True, help="dataset CSV: feature columns then a label column")
    p.add_argument("--features", help="precomputed features CSV (as written by build-meta)")
    p.add_argument("--json", dest="json_path", help="also write the result as JSON")
    _add_config_flags(p, common + ["k"])

    p = sub.add_parser("verify", help="compare recommendations with ground truth from the evaluator")
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--model", required=True, help="recommender file")
    p.add_argument("--dataset", action="append", default=[], help="dataset CSV (repeatable)")
    p.add_argument("--holdout", action="store_true", help="verify on the manifest's holdout datasets")
    p.add_argument("--recommended-only", action="store_true", help="evaluate only the recommended circuits")
    p.add_argument("--json", dest="json_path", help="also write the report as JSON")
    _add_config_flags(p, common + ["manifest", "data_dir", "epsilon", "label_mode", "k"])

    p = sub.add_parser("audit-circuits", help="check circuit structure against the reference table")
    p.add_argument("--write-manifest", help="export the circuit definitions to this YAML file")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "audit-circuits":
        return cmd_audit_circuits(args.write_manifest)
    handler = None
    try:
        cfg = resolve_config(args)
        handler = setup_logging(cfg)
        if args.command == "build-meta":
            return cmd_build_meta(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.meta, args.model)
        if args.command == "recommend":
            return cmd_recommend(cfg, args.model, args.dataset, args.json_path, args.features)
        if args.command == "verify":
            return cmd_verify(cfg, args.model, args.dataset, args.holdout, args.recommended_only, args.json_path)
    except (InputError, dg.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        if handler is not None:
            logging.getLogger("qkselect").removeHandler(handler)
            handler.close()
    parser.error(f"unknown command {args.command}")
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
