"""Run configuration: YAML/JSON loading, schema validation, presets.

Validation collects every violation before failing so a bad config surfaces
all of its problems in one pass. The paper-mode preset pins five folds, hard
voting, and the three canonical pretrained variants.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import yaml

from adens.errors import ConfigInvalid, MissingFile
from adens.labels import NUM_CLASSES
from adens.models import CANONICAL_BLOCKS
from adens.preprocess import DEFAULT_SIDE, DEFAULT_WINDOW

PAPER_VARIANTS = ("densenet121", "densenet161", "densenet169")

_MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "variant_name": {"type": "string", "minLength": 1},
        "block_layers": {
            "type": ["array", "null"],
            "items": {"type": "integer", "minimum": 1},
            "minItems": 4,
            "maxItems": 4,
        },
        "growth_rate": {"type": "integer", "minimum": 1},
        "init_features": {"type": "integer", "minimum": 1},
        "pretrained": {"type": "boolean"},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "max_epochs": {"type": "integer", "minimum": 1},
        "patience": {"type": "integer", "minimum": 0},
    },
    "required": ["variant_name"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "output_dir": {"type": "string", "minLength": 1},
        "seed": {"type": "integer"},
        "data": {
            "type": "object",
            "properties": {
                "metadata_csv": {"type": "string", "minLength": 1},
                "synthetic": {
                    "type": "object",
                    "properties": {
                        "n_subjects": {"type": "integer", "minimum": 4},
                        "class_proportions": {
                            "type": "array",
                            "items": {"type": "number", "minimum": 0},
                            "minItems": NUM_CLASSES,
                            "maxItems": NUM_CLASSES,
                        },
                        "shape": {
                            "type": "array",
                            "items": {"type": "integer", "minimum": 1},
                            "minItems": 3,
                            "maxItems": 3,
                        },
                        "seed": {"type": "integer"},
                    },
                    "required": ["n_subjects", "class_proportions", "shape"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "preprocess": {
            "type": "object",
            "properties": {
                "window": {"type": "integer", "minimum": 1},
                "side": {"type": "integer", "minimum": 8},
            },
            "additionalProperties": False,
        },
        "split": {
            "type": "object",
            "properties": {
                "k": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "models": {"type": "array", "items": _MODEL_SCHEMA, "minItems": 1},
        "ensemble": {
            "type": "object",
            "properties": {"voting": {"type": "string", "enum": ["hard", "soft"]}},
            "additionalProperties": False,
        },
    },
    "required": ["output_dir", "data", "models"],
    "additionalProperties": False,
}

MODEL_DEFAULTS = {
    "block_layers": None,
    "growth_rate": 32,
    "init_features": 64,
    "pretrained": False,
    "learning_rate": 0.001,
    "momentum": 0.9,
    "batch_size": 32,
    "max_epochs": 100,
    "patience": 10,
}


@dataclass
class ModelSpec:
    variant_name: str
    block_layers: tuple[int, int, int, int] | None
    growth_rate: int
    init_features: int
    pretrained: bool
    learning_rate: float
    momentum: float
    batch_size: int
    max_epochs: int
    patience: int


@dataclass
class RunConfig:
    output_dir: Path
    seed: int
    data: dict
    window: int
    side: int
    k: int
    split_seed: int
    models: list[ModelSpec]
    voting: str
    raw: dict


def load_config(path: str | Path) -> dict:
    """Parse a YAML or JSON config document into a plain dict."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such config file: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        document = json.loads(text)
    else:
        document = yaml.safe_load(text)
    if not isinstance(document, dict):
        raise ConfigInvalid([f"config root must be a mapping, got {type(document).__name__}"])
    return document


def apply_paper_mode(document: dict) -> dict:
    """Pin the preset values the paper-mode run requires.

    Model entries are not invented, only defaulted; validation rejects a
    document that still lacks one of the three variants.
    """
    document = copy.deepcopy(document)
    document.setdefault("split", {}).setdefault("k", 5)
    document.setdefault("ensemble", {}).setdefault("voting", "hard")
    document.setdefault("preprocess", {})
    document["preprocess"].setdefault("window", DEFAULT_WINDOW)
    document["preprocess"].setdefault("side", DEFAULT_SIDE)
    for entry in document.get("models", []):
        if entry.get("variant_name") in PAPER_VARIANTS:
            entry.setdefault("pretrained", True)
    return document


def validate_config(document: dict, paper_mode: bool = False) -> list[str]:
    """Return every violation found; an empty list means the config is valid."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    violations = [
        f"{'/'.join(str(p) for p in error.absolute_path) or '<root>'}: {error.message}"
        for error in sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    ]
    if violations:
        return violations

    data = document["data"]
    sources = [key for key in ("metadata_csv", "synthetic") if key in data]
    if len(sources) != 1:
        violations.append(
            "data: exactly one of metadata_csv or synthetic is required, "
            f"got {sources or 'neither'}"
        )
    if "metadata_csv" in data and not Path(data["metadata_csv"]).exists():
        violations.append(f"data/metadata_csv: no such file {data['metadata_csv']!r}")
    if "synthetic" in data:
        props = data["synthetic"]["class_proportions"]
        if abs(sum(props) - 1.0) > 1e-9:
            violations.append(
                f"data/synthetic/class_proportions: sum to {sum(props)!r}, expected 1"
            )

    seen: set[str] = set()
    for i, entry in enumerate(document["models"]):
        name = entry["variant_name"]
        if name in seen:
            violations.append(f"models/{i}: duplicate variant_name {name!r}")
        seen.add(name)
        if name not in CANONICAL_BLOCKS and not entry.get("block_layers"):
            violations.append(
                f"models/{i}: variant {name!r} is not canonical and lacks block_layers"
            )
    if len(document["models"]) != 3:
        violations.append(
            f"models: majority voting needs exactly 3 entries, got {len(document['models'])}"
        )

    if paper_mode:
        for variant in PAPER_VARIANTS:
            if variant not in seen:
                violations.append(f"models: paper mode requires an entry for {variant!r}")
        for i, entry in enumerate(document["models"]):
            if entry["variant_name"] in PAPER_VARIANTS and not entry.get("pretrained", False):
                violations.append(
                    f"models/{i}: paper mode requires pretrained=true for "
                    f"{entry['variant_name']!r}"
                )
        k = document.get("split", {}).get("k")
        if k != 5:
            violations.append(f"split/k: paper mode requires 5, got {k}")
        voting = document.get("ensemble", {}).get("voting", "hard")
        if voting != "hard":
            violations.append(f"ensemble/voting: paper mode requires 'hard', got {voting!r}")
    return violations


def build_run_config(document: dict, paper_mode: bool = False) -> RunConfig:
    """Validate `document` (raising ConfigInvalid on any violation) and bind it."""
    if paper_mode:
        document = apply_paper_mode(document)
    violations = validate_config(document, paper_mode)
    if violations:
        raise ConfigInvalid(violations)

    seed = int(document.get("seed", 0))
    preprocess = document.get("preprocess", {})
    split = document.get("split", {})
    models = [
        ModelSpec(**{**MODEL_DEFAULTS, **entry, "block_layers": (
            tuple(entry["block_layers"]) if entry.get("block_layers") else None
        )})
        for entry in document["models"]
    ]
    return RunConfig(
        output_dir=Path(document["output_dir"]),
        seed=seed,
        data=document["data"],
        window=int(preprocess.get("window", DEFAULT_WINDOW)),
        side=int(preprocess.get("side", DEFAULT_SIDE)),
        k=int(split.get("k", 5)),
        split_seed=int(split.get("seed", seed)),
        models=models,
        voting=document.get("ensemble", {}).get("voting", "hard"),
        raw=copy.deepcopy(document),
    )
