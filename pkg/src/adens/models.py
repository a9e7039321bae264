"""DenseNet construction: the three canonical variants plus tiny test builds.

The depth bookkeeping follows the standard counting: a stem conv, two convs
per dense layer, one conv per transition, and the classifier, which is
5 + 2 * sum(block_layers). Canonical block configurations come from the
reference DenseNet family.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn
from torchvision.models import DenseNet
from torchvision.models import densenet as tv_densenet

from adens.errors import ConfigMismatch, WeightsUnavailable

CANONICAL_BLOCKS = {
    "densenet121": ((6, 12, 24, 16), 32, 64),
    "densenet161": ((6, 12, 36, 24), 48, 96),
    "densenet169": ((6, 12, 32, 32), 32, 64),
}


@dataclass
class DenseNetConfig:
    variant_name: str
    block_layers: tuple[int, int, int, int]
    growth_rate: int
    init_features: int
    num_classes: int = 4
    pretrained: bool = False

    def __post_init__(self) -> None:
        self.block_layers = tuple(int(b) for b in self.block_layers)
        if len(self.block_layers) != 4 or min(self.block_layers) < 1:
            raise ValueError(f"block_layers must be 4 counts >= 1, got {self.block_layers}")
        if self.growth_rate < 1:
            raise ValueError(f"growth_rate must be >= 1, got {self.growth_rate}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")


def canonical_config(
    variant_name: str, num_classes: int = 4, pretrained: bool = True
) -> DenseNetConfig:
    if variant_name not in CANONICAL_BLOCKS:
        raise ConfigMismatch(
            f"unknown canonical variant {variant_name!r}, expected one of "
            f"{sorted(CANONICAL_BLOCKS)}"
        )
    blocks, growth, init = CANONICAL_BLOCKS[variant_name]
    return DenseNetConfig(variant_name, blocks, growth, init, num_classes, pretrained)


def densenet_depth(block_layers: tuple[int, int, int, int]) -> int:
    """Stem + 2 convs per dense layer + 3 transitions + classifier."""
    if min(block_layers) < 1:
        raise ValueError(f"block_layers must all be >= 1, got {block_layers}")
    return 5 + 2 * sum(int(b) for b in block_layers)


@dataclass
class ModelHandle:
    network: nn.Module
    config: DenseNetConfig
    parameter_count: int = field(init=False)

    def __post_init__(self) -> None:
        self.parameter_count = sum(p.numel() for p in self.network.parameters())

    @property
    def feature_dim(self) -> int:
        return self.network.classifier.in_features


def count_weighted_layers(network: nn.Module) -> int:
    """Count conv and linear modules, the units of the depth formula."""
    return sum(1 for m in network.modules() if isinstance(m, (nn.Conv2d, nn.Linear)))


def _check_declared_depth(config: DenseNetConfig) -> None:
    match = re.fullmatch(r"densenet(\d+)", config.variant_name)
    if match and densenet_depth(config.block_layers) != int(match.group(1)):
        raise ConfigMismatch(
            f"variant {config.variant_name} declares depth {match.group(1)} but "
            f"block_layers {config.block_layers} give {densenet_depth(config.block_layers)}"
        )
    if config.variant_name in CANONICAL_BLOCKS:
        blocks, growth, init = CANONICAL_BLOCKS[config.variant_name]
        if (config.block_layers, config.growth_rate, config.init_features) != (
            blocks,
            growth,
            init,
        ):
            raise ConfigMismatch(
                f"{config.variant_name} requires blocks={blocks}, growth={growth}, "
                f"init={init}; got blocks={config.block_layers}, "
                f"growth={config.growth_rate}, init={config.init_features}"
            )


def _load_pretrained_backbone(config: DenseNetConfig, network: DenseNet) -> None:
    weight_enums = {
        "densenet121": "DenseNet121_Weights",
        "densenet161": "DenseNet161_Weights",
        "densenet169": "DenseNet169_Weights",
    }
    enum_name = weight_enums.get(config.variant_name)
    if enum_name is None:
        raise WeightsUnavailable(
            f"no pretrained weights exist for variant {config.variant_name!r}"
        )
    try:
        weights = getattr(tv_densenet, enum_name).IMAGENET1K_V1
        state = weights.get_state_dict(progress=False)
    except Exception as exc:
        raise WeightsUnavailable(
            f"could not obtain ImageNet weights for {config.variant_name}: {exc}"
        ) from exc
    # Older torchvision archives use dotted norm/conv keys inside dense layers.
    pattern = re.compile(
        r"^(.*denselayer\d+\.(?:norm|relu|conv))\.((?:[12])\.(?:weight|bias|running_mean|running_var))$"
    )
    state = {pattern.sub(r"\1\2", key): value for key, value in state.items()}
    state.pop("classifier.weight", None)
    state.pop("classifier.bias", None)
    missing, unexpected = network.load_state_dict(state, strict=False)
    unexpected = [k for k in unexpected]
    backbone_missing = [k for k in missing if not k.startswith("classifier.")]
    if backbone_missing or unexpected:
        raise WeightsUnavailable(
            f"pretrained state dict does not match {config.variant_name}: "
            f"missing {backbone_missing[:3]}, unexpected {unexpected[:3]}"
        )


def build_densenet(config: DenseNetConfig) -> ModelHandle:
    """Construct a DenseNet per config with a fresh num_classes-way head."""
    _check_declared_depth(config)
    network = DenseNet(
        growth_rate=config.growth_rate,
        block_config=config.block_layers,
        num_init_features=config.init_features,
        num_classes=config.num_classes,
    )
    if config.pretrained:
        _load_pretrained_backbone(config, network)
        # Re-initialize the head so only backbone weights carry over.
        head = nn.Linear(network.classifier.in_features, config.num_classes)
        network.classifier = head
    return ModelHandle(network, config)


# --- checkpoints ----------------------------------------------------------

MANIFEST_NAME = "checkpoints.json"


def checkpoint_name(variant_name: str, fold_index: int, timestamp: str | None = None) -> str:
    stamp = timestamp or time.strftime("%Y%m%dT%H%M%S")
    return f"{variant_name}_{fold_index}_{stamp}.pt"


def save_checkpoint(
    handle: ModelHandle,
    fold_index: int,
    out_dir: str | Path,
    metadata: dict | None = None,
    timestamp: str | None = None,
) -> Path:
    """Write parameters + config + metadata; register the file in the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = checkpoint_name(handle.config.variant_name, fold_index, timestamp)
    path = out_dir / name
    torch.save(
        {
            "state_dict": handle.network.state_dict(),
            "config": asdict(handle.config),
            "metadata": metadata or {},
        },
        path,
    )
    manifest_path = out_dir / MANIFEST_NAME
    manifest = (
        json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest_path.exists()
        else {"checkpoints": []}
    )
    manifest["checkpoints"] = [
        entry
        for entry in manifest["checkpoints"]
        if not (
            entry["variant_name"] == handle.config.variant_name
            and entry["fold_index"] == fold_index
        )
    ] + [
        {
            "variant_name": handle.config.variant_name,
            "fold_index": fold_index,
            "file": name,
            "parameter_count": handle.parameter_count,
            "metadata": metadata or {},
        }
    ]
    manifest["checkpoints"].sort(key=lambda e: (e["variant_name"], e["fold_index"]))
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelHandle, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = DenseNetConfig(**{**payload["config"], "pretrained": False})
    network = DenseNet(
        growth_rate=config.growth_rate,
        block_config=config.block_layers,
        num_init_features=config.init_features,
        num_classes=config.num_classes,
    )
    network.load_state_dict(payload["state_dict"])
    return ModelHandle(network, config), payload.get("metadata", {})


def find_checkpoint(out_dir: str | Path, variant_name: str, fold_index: int) -> Path:
    """Look up the manifest entry for (variant, fold) and return its file path."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest in {out_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    for entry in manifest["checkpoints"]:
        if entry["variant_name"] == variant_name and entry["fold_index"] == fold_index:
            return out_dir / entry["file"]
    raise FileNotFoundError(f"no checkpoint for {variant_name} fold {fold_index}")
