"""Stage orchestration: synth, preprocess, split, train, predict, evaluate,
report, and the chained pipeline.

Every stage writes its artifacts plus a manifest recording input content
hashes, the config slice it used, seeds, and output hashes. A stage whose
signature matches the existing manifest is a no-op unless forced. Artifact
bytes are deterministic; only checkpoint filenames carry timestamps.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from adens import __version__
from adens.config import RunConfig
from adens.ensemble import (
    aggregate_subject,
    make_record,
    read_predictions,
    vote_over_models,
    write_predictions,
)
from adens.errors import AdensError, StageFailed
from adens.evaluation import (
    classification_report,
    confusion_matrix,
    render_tables,
    report_to_dict,
)
from adens.ingest import (
    generate_synthetic_cohort,
    load_metadata,
    load_volume,
    write_cohort,
)
from adens.labels import ClassLabel
from adens.models import (
    DenseNetConfig,
    build_densenet,
    find_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from adens.preprocess import (
    PatchSource,
    preprocess_volume,
    read_patch_manifest,
    write_patch_manifest,
    write_subject_cache,
)
from adens.splits import load_fold_plans, save_fold_plans, stratified_kfold
from adens.training import TrainConfig, class_weights, train_model, write_history_csv

logger = logging.getLogger(__name__)

STAGES = ("synth", "preprocess", "split", "train", "predict", "evaluate", "report")

MANIFEST_NAME = "manifest.json"


# --- hashing and manifests --------------------------------------------------

def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def tree_hashes(root: Path, pattern: str = "*") -> dict[str, str]:
    """Content hashes of every matching file under root, keyed by relative path."""
    return {
        str(p.relative_to(root)): file_sha256(p)
        for p in sorted(root.rglob(pattern))
        if p.is_file() and p.name != MANIFEST_NAME
    }


def signature_of(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


def write_stage_manifest(
    stage_dir: Path,
    stage: str,
    signature: str,
    inputs: dict,
    config_echo: dict,
    seeds: dict,
) -> Path:
    manifest = {
        "stage": stage,
        "signature": signature,
        "inputs": inputs,
        "config": config_echo,
        "seeds": seeds,
        "version": __version__,
        "outputs": tree_hashes(stage_dir),
    }
    path = stage_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def stage_is_current(stage_dir: Path, signature: str) -> bool:
    """True when the manifest signature matches and every output is intact."""
    path = stage_dir / MANIFEST_NAME
    if not path.exists():
        return False
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    if manifest.get("signature") != signature:
        return False
    for rel, digest in manifest.get("outputs", {}).items():
        target = stage_dir / rel
        if not target.exists() or file_sha256(target) != digest:
            return False
    return True


def derive_seed(master_seed: int, *key: int) -> int:
    return int(np.random.SeedSequence((master_seed, *key)).generate_state(1)[0])


# --- stage directories --------------------------------------------------------

def data_dir(rc: RunConfig) -> Path:
    if "metadata_csv" in rc.data:
        return Path(rc.data["metadata_csv"]).parent
    return rc.output_dir / "data"


def patches_dir(rc: RunConfig) -> Path:
    return rc.output_dir / "patches"


def splits_dir(rc: RunConfig) -> Path:
    return rc.output_dir / "splits"


def train_dir(rc: RunConfig, fold: int | None = None) -> Path:
    base = rc.output_dir / "train"
    return base if fold is None else base / f"fold{fold}"


def predictions_dir(rc: RunConfig) -> Path:
    return rc.output_dir / "predictions"


def evaluation_dir(rc: RunConfig) -> Path:
    return rc.output_dir / "evaluation"


def report_dir(rc: RunConfig) -> Path:
    return rc.output_dir / "report"


# --- stages ---------------------------------------------------------------------

def stage_synth(rc: RunConfig, force: bool = False) -> Path:
    """Generate the synthetic cohort (no-op for external metadata configs)."""
    out = data_dir(rc)
    if "metadata_csv" in rc.data:
        logger.info("synth: external cohort %s, nothing to do", rc.data["metadata_csv"])
        return out
    spec = rc.data["synthetic"]
    seed = int(spec.get("seed", rc.seed))
    signature = signature_of({"stage": "synth", "spec": spec, "seed": seed})
    if not force and stage_is_current(out, signature):
        logger.info("synth: up to date")
        return out
    cohort = generate_synthetic_cohort(
        spec["n_subjects"], spec["class_proportions"], tuple(spec["shape"]), seed
    )
    out.mkdir(parents=True, exist_ok=True)
    write_cohort(cohort, out)
    write_stage_manifest(out, "synth", signature, {}, {"data": spec}, {"seed": seed})
    return out


def stage_preprocess(rc: RunConfig, force: bool = False) -> Path:
    """Slice every subject's first volume into cached network inputs."""
    src = data_dir(rc)
    out = patches_dir(rc)
    inputs = tree_hashes(src)
    echo = {"window": rc.window, "side": rc.side}
    signature = signature_of({"stage": "preprocess", "inputs": inputs, "config": echo})
    if not force and stage_is_current(out, signature):
        logger.info("preprocess: up to date")
        return out

    records = load_metadata(src / "metadata.csv")
    out.mkdir(parents=True, exist_ok=True)
    manifest_rows: list[dict] = []
    for record in records:
        if len(record.scan_paths) > 1:
            logger.info(
                "preprocess: subject %s has %d scans, using the first",
                record.subject_id,
                len(record.scan_paths),
            )
        scan = record.scan_paths[0]
        scan_path = Path(scan)
        if not scan_path.is_absolute():
            scan_path = src / scan_path
        vol = load_volume(scan_path, record.subject_id, record.label)
        net_inputs, patches = preprocess_volume(vol, rc.window, rc.side)
        write_subject_cache(out, record.subject_id, net_inputs, patches)
        manifest_rows.extend(
            {
                "subject_id": p.subject_id,
                "plane": p.plane,
                "slice_index": p.slice_index,
                "label": p.label,
            }
            for p in patches
        )
    write_patch_manifest(out, manifest_rows)
    write_stage_manifest(out, "preprocess", signature, inputs, echo, {})
    return out


def _cohort_labels(cache_dir: Path) -> list[tuple[str, ClassLabel]]:
    subjects: dict[str, ClassLabel] = {}
    for row in read_patch_manifest(cache_dir):
        if row["label"] is None:
            raise StageFailed("split", f"subject {row['subject_id']} has no label")
        subjects.setdefault(row["subject_id"], row["label"])
    return list(subjects.items())


def stage_split(rc: RunConfig, force: bool = False) -> Path:
    out = splits_dir(rc)
    cache = patches_dir(rc)
    inputs = {"patches.csv": file_sha256(cache / "patches.csv")}
    echo = {"k": rc.k, "seed": rc.split_seed}
    signature = signature_of({"stage": "split", "inputs": inputs, "config": echo})
    if not force and stage_is_current(out, signature):
        logger.info("split: up to date")
        return out
    subjects = _cohort_labels(cache)
    plans = stratified_kfold(subjects, rc.k, rc.split_seed)
    out.mkdir(parents=True, exist_ok=True)
    save_fold_plans(plans, out / "folds.json")
    class_counts: dict[str, int] = {}
    for _, label in subjects:
        class_counts[label.name] = class_counts.get(label.name, 0) + 1
    echo = {**echo, "cohort": {"n_subjects": len(subjects), "class_counts": class_counts}}
    write_stage_manifest(out, "split", signature, inputs, echo, {"seed": rc.split_seed})
    return out


def _fold_class_weights(source: PatchSource, train_ids: set[str]) -> tuple[float, ...]:
    counts = np.zeros(len(ClassLabel), dtype=np.int64)
    for row in read_patch_manifest(source.cache_dir):
        if row["subject_id"] in train_ids and row["label"] is not None:
            counts[int(row["label"])] += 1
    if (counts == 0).any():
        logger.warning(
            "train: classes with no training patches get unit weight (counts %s)",
            counts.tolist(),
        )
        counts = np.maximum(counts, 1)
    return tuple(float(w) for w in class_weights(counts))


def _model_config(spec) -> DenseNetConfig:
    from adens.models import CANONICAL_BLOCKS

    if spec.variant_name in CANONICAL_BLOCKS and spec.block_layers is None:
        blocks, growth, init = CANONICAL_BLOCKS[spec.variant_name]
    else:
        blocks, growth, init = spec.block_layers, spec.growth_rate, spec.init_features
    return DenseNetConfig(
        spec.variant_name, blocks, growth, init, len(ClassLabel), spec.pretrained
    )


def stage_train(rc: RunConfig, force: bool = False, fold: int | None = None) -> Path:
    out = train_dir(rc)
    cache = patches_dir(rc)
    inputs = {
        "patches": signature_of(tree_hashes(cache)),
        "folds.json": file_sha256(splits_dir(rc) / "folds.json"),
    }
    echo = {
        "models": rc.raw["models"],
        "seed": rc.seed,
        "plane_policy": "all three planes mixed into every model's training set",
    }
    signature = signature_of({"stage": "train", "inputs": inputs, "config": echo})
    if fold is None and not force and stage_is_current(out, signature):
        logger.info("train: up to date")
        return out

    plans = load_fold_plans(splits_dir(rc) / "folds.json")
    if fold is not None:
        plans = [p for p in plans if p.fold_index == fold]
        if not plans:
            raise StageFailed("train", f"no fold {fold} in the split plan")

    audit_path = out / "leakage_audit.json"
    audit = (
        json.loads(audit_path.read_text(encoding="utf-8")) if audit_path.exists() else {}
    )
    out.mkdir(parents=True, exist_ok=True)
    timestamp = time.strftime("%Y%m%dT%H%M%S")
    for plan in plans:
        fold_out = train_dir(rc, plan.fold_index)
        fold_out.mkdir(parents=True, exist_ok=True)
        for variant_idx, spec in enumerate(rc.models):
            source = PatchSource(cache)
            weights = _fold_class_weights(source, plan.train_ids)
            seed = derive_seed(rc.seed, plan.fold_index, variant_idx)
            cfg = TrainConfig(
                learning_rate=spec.learning_rate,
                momentum=spec.momentum,
                batch_size=spec.batch_size,
                max_epochs=spec.max_epochs,
                patience=spec.patience,
                seed=seed,
                class_weights=weights,
            )
            torch.manual_seed(seed)
            handle = build_densenet(_model_config(spec))
            record = train_model(handle, plan, source, cfg)
            audit[f"fold{plan.fold_index}/{spec.variant_name}"] = _audit_entry(
                source, plan
            )
            metadata = {
                "best_epoch": record.best_epoch,
                "best_val_loss": record.best_val_loss,
                "seed": seed,
                "epochs_run": len(record.history),
                "train_config": {
                    "learning_rate": cfg.learning_rate,
                    "momentum": cfg.momentum,
                    "batch_size": cfg.batch_size,
                    "max_epochs": cfg.max_epochs,
                    "patience": cfg.patience,
                    "class_weights": list(cfg.class_weights),
                },
                "patch_cache_hash": inputs["patches"],
            }
            save_checkpoint(handle, plan.fold_index, fold_out, metadata, timestamp)
            write_history_csv(
                record,
                fold_out / f"history_{spec.variant_name}_fold{plan.fold_index}.csv",
            )
    audit_path.write_text(
        json.dumps(audit, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if fold is None:
        write_stage_manifest(out, "train", signature, inputs, echo, {"seed": rc.seed})
    return out


def _audit_entry(source: PatchSource, plan) -> dict:
    reads: dict[str, set[str]] = {}
    for purpose, subject_id in source.access_log:
        reads.setdefault(purpose, set()).add(subject_id)
    violations = []
    for subject_id in reads.get("train", set()) - plan.train_ids:
        violations.append(f"train read outside train_ids: {subject_id}")
    for subject_id in reads.get("val", set()) - plan.val_ids:
        violations.append(f"val read outside val_ids: {subject_id}")
    touched = set().union(*reads.values()) if reads else set()
    for subject_id in sorted(touched & plan.test_ids):
        violations.append(f"test subject read during training: {subject_id}")
    return {
        "fold": plan.fold_index,
        "train_subjects_read": sorted(reads.get("train", set())),
        "val_subjects_read": sorted(reads.get("val", set())),
        "test_subjects_read": sorted(touched & plan.test_ids),
        "violations": violations,
    }


def stage_predict(rc: RunConfig, force: bool = False, fold: int | None = None) -> Path:
    out = predictions_dir(rc)
    cache = patches_dir(rc)
    inputs = {
        "patches": signature_of(tree_hashes(cache)),
        "folds.json": file_sha256(splits_dir(rc) / "folds.json"),
        "checkpoints": signature_of(tree_hashes(train_dir(rc), "*.pt")),
    }
    echo = {"models": [m.variant_name for m in rc.models]}
    signature = signature_of({"stage": "predict", "inputs": inputs, "config": echo})
    if fold is None and not force and stage_is_current(out, signature):
        logger.info("predict: up to date")
        return out

    plans = load_fold_plans(splits_dir(rc) / "folds.json")
    if fold is not None:
        plans = [p for p in plans if p.fold_index == fold]
        if not plans:
            raise StageFailed("predict", f"no fold {fold} in the split plan")
    out.mkdir(parents=True, exist_ok=True)
    for plan in plans:
        source = PatchSource(cache)
        records = []
        for spec in rc.models:
            ckpt = find_checkpoint(
                train_dir(rc, plan.fold_index), spec.variant_name, plan.fold_index
            )
            handle, _ = load_checkpoint(ckpt)
            handle.network.eval()
            for subject_id in sorted(plan.test_ids):
                x, _, meta = source.load(subject_id, "predict_test")
                with torch.no_grad():
                    logits = handle.network(torch.from_numpy(x).float()).numpy()
                for row, logit in zip(meta, logits):
                    records.append(
                        make_record(
                            spec.variant_name,
                            subject_id,
                            row["plane"],
                            row["slice_index"],
                            logit,
                        )
                    )
        write_predictions(records, out / f"fold{plan.fold_index}.csv")
    if fold is None:
        write_stage_manifest(out, "predict", signature, inputs, echo, {})
    return out


def _report_from_pairs(pairs: list[tuple[ClassLabel, ClassLabel]]):
    return classification_report(confusion_matrix(pairs))


def _evaluate_fold(
    records, truth: dict[tuple[str, str, int], ClassLabel], subject_truth: dict[str, ClassLabel]
) -> dict:
    """Patch-level per-model and ensemble pairs plus subject-level ensemble pairs."""
    by_model: dict[str, list[tuple[ClassLabel, ClassLabel]]] = {}
    for r in records:
        by_model.setdefault(r.model_id, []).append((truth[r.key()], r.predicted))
    votes = vote_over_models(records)
    ensemble_pairs = [(truth[key], label) for key, label in sorted(votes.items())]
    per_subject: dict[str, list[tuple[str, ClassLabel]]] = {}
    for (subject_id, _, _), label in votes.items():
        per_subject.setdefault(subject_id, []).append((subject_id, label))
    subject_pairs = [
        (subject_truth[subject_id], aggregate_subject(vote_list))
        for subject_id, vote_list in sorted(per_subject.items())
    ]
    return {
        "models": by_model,
        "ensemble_patch": ensemble_pairs,
        "ensemble_subject": subject_pairs,
    }


def stage_evaluate(rc: RunConfig, force: bool = False) -> Path:
    out = evaluation_dir(rc)
    pred_dir = predictions_dir(rc)
    inputs = {
        "predictions": signature_of(tree_hashes(pred_dir, "*.csv")),
        "patches.csv": file_sha256(patches_dir(rc) / "patches.csv"),
    }
    signature = signature_of({"stage": "evaluate", "inputs": inputs})
    if not force and stage_is_current(out, signature):
        logger.info("evaluate: up to date")
        return out

    manifest_rows = read_patch_manifest(patches_dir(rc))
    truth = {
        (row["subject_id"], row["plane"].value, row["slice_index"]): row["label"]
        for row in manifest_rows
    }
    subject_truth = {row["subject_id"]: row["label"] for row in manifest_rows}

    summary: dict = {"granularity": "patch unless noted; subject-level rows aggregate patch votes"}
    pooled: dict[str, list] = {}
    fold_files = sorted(pred_dir.glob("fold*.csv"))
    if not fold_files:
        raise StageFailed("evaluate", f"no prediction files in {pred_dir}")
    summary["folds"] = {}
    for path in fold_files:
        fold_name = path.stem
        records = read_predictions(path)
        groups = _evaluate_fold(records, truth, subject_truth)
        fold_summary = {
            "models": {
                name: report_to_dict(_report_from_pairs(pairs))
                for name, pairs in sorted(groups["models"].items())
            },
            "ensemble_patch": report_to_dict(_report_from_pairs(groups["ensemble_patch"])),
            "ensemble_subject": report_to_dict(
                _report_from_pairs(groups["ensemble_subject"])
            ),
        }
        summary["folds"][fold_name] = fold_summary
        for name, pairs in groups["models"].items():
            pooled.setdefault(f"model:{name}", []).extend(pairs)
        pooled.setdefault("ensemble_patch", []).extend(groups["ensemble_patch"])
        pooled.setdefault("ensemble_subject", []).extend(groups["ensemble_subject"])

    summary["pooled"] = {
        name: report_to_dict(_report_from_pairs(pairs))
        for name, pairs in sorted(pooled.items())
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_stage_manifest(out, "evaluate", signature, inputs, {}, {})
    return out


def _report_from_dict(payload: dict):
    from adens.evaluation import ClassMetrics, MetricsReport, CLASS_ROW_NAMES

    per_class = [
        ClassMetrics(**payload["per_class"][name]) for name in CLASS_ROW_NAMES
    ]
    weighted = ClassMetrics(**payload["weighted_avg"])
    return MetricsReport(per_class, weighted, payload["accuracy"])


def stage_report(rc: RunConfig, force: bool = False) -> Path:
    out = report_dir(rc)
    summary_path = evaluation_dir(rc) / "summary.json"
    inputs = {"summary.json": file_sha256(summary_path)}
    signature = signature_of({"stage": "report", "inputs": inputs})
    if not force and stage_is_current(out, signature):
        logger.info("report: up to date")
        return out

    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    reports = {}
    for fold_name, fold_summary in sorted(summary["folds"].items()):
        for name, payload in sorted(fold_summary["models"].items()):
            reports[f"{name} ({fold_name}, patch level)"] = _report_from_dict(payload)
        reports[f"ensemble vote ({fold_name}, patch level)"] = _report_from_dict(
            fold_summary["ensemble_patch"]
        )
        reports[f"ensemble vote ({fold_name}, subject level)"] = _report_from_dict(
            fold_summary["ensemble_subject"]
        )
    for name, payload in sorted(summary["pooled"].items()):
        if name.startswith("model:"):
            label = f"{name.removeprefix('model:')} (pooled, patch level)"
        elif name == "ensemble_patch":
            label = "ensemble vote (pooled, patch level)"
        else:
            label = "ensemble vote (pooled, subject level)"
        reports[label] = _report_from_dict(payload)

    text, csv_text = render_tables(reports)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tables.txt").write_text(text, encoding="utf-8")
    (out / "tables.csv").write_text(csv_text, encoding="utf-8")
    write_stage_manifest(out, "report", signature, inputs, {}, {})
    return out


# --- command driver ---------------------------------------------------------------

def run_command(
    command: str, rc: RunConfig, force: bool = False, fold: int | None = None
) -> None:
    """Execute one command (or the whole pipeline), wrapping stage failures."""
    if command == "pipeline":
        for stage in STAGES:
            run_command(stage, rc, force, fold)
        return
    runners = {
        "synth": lambda: stage_synth(rc, force),
        "preprocess": lambda: stage_preprocess(rc, force),
        "split": lambda: stage_split(rc, force),
        "train": lambda: stage_train(rc, force, fold),
        "predict": lambda: stage_predict(rc, force, fold),
        "evaluate": lambda: stage_evaluate(rc, force),
        "report": lambda: stage_report(rc, force),
    }
    if command not in runners:
        raise StageFailed(command, f"unknown command, expected one of {STAGES}")
    try:
        runners[command]()
    except StageFailed:
        raise
    except AdensError as exc:
        raise StageFailed(command, str(exc)) from exc
    except FileNotFoundError as exc:
        raise StageFailed(command, str(exc)) from exc
