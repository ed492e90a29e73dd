"""Classifier architectures, flat-parameter access, and checkpoint I/O.

The desk-scale default is a small conv net (< 200k parameters). Parameter
vectors are flattened in ``model.parameters()`` order, which is fixed by
the module registration order of each architecture; EMA and checkpoints
rely on that order being stable.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch
from torch import nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from .errors import ConfigError


class SmallConvNet(nn.Module):
    """Two conv blocks plus a small MLP head. ~40k parameters at 16x16."""

    def __init__(self, num_classes: int, in_channels: int = 1, image_size: int = 16):
        super().__init__()
        if num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.image_size = image_size
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, 16, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        feat_dim = 32 * (image_size // 4) ** 2
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(feat_dim, 64),
            nn.ReLU(),
            nn.Linear(64, num_classes),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


class TinyMLP(nn.Module):
    """Flattened-input MLP; cheap stand-in for unit tests."""

    def __init__(self, num_classes: int, in_channels: int = 1, image_size: int = 16):
        super().__init__()
        if num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.image_size = image_size
        dim = in_channels * image_size * image_size
        self.net = nn.Sequential(
            nn.Flatten(),
            nn.Linear(dim, 32),
            nn.ReLU(),
            nn.Linear(32, num_classes),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


ARCHITECTURES = {
    "smallconv": SmallConvNet,
    "tinymlp": TinyMLP,
}


def build_model(
    arch: str,
    num_classes: int,
    in_channels: int = 1,
    image_size: int = 16,
    seed: int | None = None,
) -> nn.Module:
    """Instantiate a registered architecture, optionally with seeded init."""
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {arch!r}; known: {sorted(ARCHITECTURES)}")
    if seed is not None:
        torch.manual_seed(seed)
    return ARCHITECTURES[arch](num_classes, in_channels, image_size)


def get_flat_params(model: nn.Module) -> torch.Tensor:
    """Detached copy of all parameters as one flat vector."""
    return parameters_to_vector(model.parameters()).detach().clone()


def set_flat_params(model: nn.Module, vec: torch.Tensor) -> None:
    vector_to_parameters(vec, model.parameters())


def num_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(model: nn.Module, path: str | Path, meta: dict) -> None:
    """Write weights plus a JSON sidecar with identifying metadata."""
    path = Path(path)
    arch = next(name for name, cls in ARCHITECTURES.items() if isinstance(model, cls))
    sidecar = {
        "architecture": arch,
        "num_classes": model.num_classes,
        "in_channels": model.in_channels,
        "image_size": model.image_size,
        **meta,
    }
    torch.save(model.state_dict(), path)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    model = build_model(
        meta["architecture"], meta["num_classes"], meta["in_channels"], meta["image_size"]
    )
    model.load_state_dict(torch.load(path, weights_only=True))
    model.eval()
    return model, meta
