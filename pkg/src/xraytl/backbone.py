"""Backbone acquisition and surgery for the three training strategies.

Strategies:

  frozen          all backbone parameters fixed; a new dropout/hidden/output
                  head is trained on 3-channel input (grayscale replicated)
  single_channel  like frozen, but the first convolution is rebuilt for
                  1-channel input and trained together with the head
  full            only the output layer is replaced (2 classes); every
                  parameter trains; with pretrained=False this is the
                  from-scratch baseline

Frozen normalization layers always run with their stored statistics, so a
"frozen" backbone is bitwise fixed for the whole run, running averages
included.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import torch
import torch.nn as nn
from torchvision import models

from .errors import ConfigurationError
from .seeding import subseed

WEIGHTS_DIR_ENV = "XRAYTL_WEIGHTS_DIR"

HEAD_DROPOUT = 0.2
NUM_CLASSES = 2
VALID_N_NEURONS = (10, 100, 500)


class BackboneKind(str, Enum):
    RESNET18 = "resnet18"
    DENSENET121 = "densenet121"


class Strategy(str, Enum):
    FROZEN = "frozen"
    SINGLE_CHANNEL = "single_channel"
    FULL = "full"


FEATURE_WIDTH = {BackboneKind.RESNET18: 512, BackboneKind.DENSENET121: 1024}
WEIGHT_FILES = {
    BackboneKind.RESNET18: "resnet18-f37072fd.pth",
    BackboneKind.DENSENET121: "densenet121-a639ec97.pth",
}
WEIGHT_URLS = {
    kind: f"https://download.pytorch.org/models/{name}"
    for kind, name in WEIGHT_FILES.items()
}

# densenet checkpoints predate nested module names; keys like
# "norm.1" must be rewritten to "norm1" before load_state_dict.
_DENSENET_KEY_PATTERN = re.compile(
    r"^(.*denselayer\d+\.(?:norm|relu|conv))\.((?:[12])\.(?:weight|bias|running_mean|running_var))$"
)


@dataclass(frozen=True)
class StrategyConfig:
    """Which backbone, which strategy, and the head width."""

    backbone: BackboneKind
    strategy: Strategy
    pretrained: bool = True
    n_neurons: int = 100
    first_conv_init: str = "sum"  # "sum" (pretrained-derived) or "random"

    def __post_init__(self):
        if self.strategy is not Strategy.FULL and self.n_neurons not in VALID_N_NEURONS:
            raise ConfigurationError(
                f"n_neurons must be one of {VALID_N_NEURONS}, got {self.n_neurons}"
            )
        if self.first_conv_init not in ("sum", "random"):
            raise ConfigurationError("first_conv_init must be 'sum' or 'random'")

    @property
    def input_channels(self) -> int:
        return 1 if self.strategy is Strategy.SINGLE_CHANNEL else 3


class AdaptedModel(nn.Module):
    """A torchvision backbone plus surgery metadata and a frozen/trainable census.

    The classifier attribute of the wrapped network ("fc" for resnet,
    "classifier" for densenet) is treated as the head; everything else is
    the backbone.
    """

    def __init__(self, net: nn.Module, kind: BackboneKind, pretrained: bool,
                 weight_sha256: str | None):
        super().__init__()
        self.net = net
        self.kind = kind
        self.pretrained = pretrained
        self.weight_sha256 = weight_sha256
        self.cfg: StrategyConfig | None = None
        self._head_attr = "fc" if kind is BackboneKind.RESNET18 else "classifier"
        self._backbone_frozen = False

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    @property
    def head(self) -> nn.Module:
        return getattr(self.net, self._head_attr)

    def set_head(self, module: nn.Module) -> None:
        # nn.Module.__setattr__ would register a plain "model.head = ..."
        # as a second submodule, so head replacement goes through here.
        setattr(self.net, self._head_attr, module)

    def _is_head_param(self, name: str) -> bool:
        return name.startswith(f"net.{self._head_attr}.")

    def backbone_named_parameters(self):
        return ((n, p) for n, p in self.named_parameters() if not self._is_head_param(n))

    def head_parameters(self):
        return (p for n, p in self.named_parameters() if self._is_head_param(n))

    def trainable_parameters(self):
        return (p for p in self.parameters() if p.requires_grad)

    def census(self) -> dict[str, int]:
        """Counts of trainable and frozen parameter scalars."""
        trainable = sum(p.numel() for p in self.parameters() if p.requires_grad)
        frozen = sum(p.numel() for p in self.parameters() if not p.requires_grad)
        return {"trainable": trainable, "frozen": frozen}

    def train(self, mode: bool = True):
        # Frozen backbones keep inference-mode statistics (no BN updates,
        # no backbone dropout); only the head follows the training flag.
        super().train(mode)
        if mode and self._backbone_frozen:
            self.net.eval()
            self.head.train()
        return self


def _weight_checksum(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _locate_weight_file(kind: BackboneKind, weights_path: Path | str | None) -> Path | None:
    if weights_path is not None:
        return Path(weights_path)
    candidates = []
    env_dir = os.environ.get(WEIGHTS_DIR_ENV)
    if env_dir:
        candidates.append(Path(env_dir) / WEIGHT_FILES[kind])
    candidates.append(Path(torch.hub.get_dir()) / "checkpoints" / WEIGHT_FILES[kind])
    for path in candidates:
        if path.is_file():
            return path
    return None


def _fix_densenet_keys(state: dict) -> dict:
    out = {}
    for key, value in state.items():
        match = _DENSENET_KEY_PATTERN.match(key)
        out[match.group(1) + match.group(2) if match else key] = value
    return out


def load_backbone(
    kind: BackboneKind,
    pretrained: bool,
    seed: int = 0,
    weights_path: Path | str | None = None,
) -> AdaptedModel:
    """Instantiate an architecture, optionally loading ImageNet weights.

    Pretrained weights are read from `weights_path`, then from
    $XRAYTL_WEIGHTS_DIR, then from the torch hub cache; as a last resort a
    download is attempted. The weight file's sha256 is recorded on the
    returned model for run metadata. Without pretrained weights, the init
    is seeded, so two loads with the same seed agree bitwise.
    """
    kind = BackboneKind(kind)
    torch.manual_seed(subseed(seed, f"init:{kind.value}"))
    net = models.resnet18(weights=None) if kind is BackboneKind.RESNET18 \
        else models.densenet121(weights=None)

    checksum = None
    if pretrained:
        path = _locate_weight_file(kind, weights_path)
        if path is None:
            path = _try_download(kind)
        if not path.is_file():
            raise ConfigurationError(_missing_weights_message(kind, path))
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise ConfigurationError(
                f"could not read weight file {path}: {exc}\n" + _missing_weights_message(kind, path)
            ) from exc
        if kind is BackboneKind.DENSENET121:
            state = _fix_densenet_keys(state)
        net.load_state_dict(state)
        checksum = _weight_checksum(path)

    model = AdaptedModel(net, kind, pretrained, checksum)
    width = model.head.in_features
    if width != FEATURE_WIDTH[kind]:
        raise RuntimeError(
            f"{kind.value}: expected feature width {FEATURE_WIDTH[kind]}, found {width}"
        )
    return model


def _try_download(kind: BackboneKind) -> Path:
    target = Path(torch.hub.get_dir()) / "checkpoints" / WEIGHT_FILES[kind]
    try:
        torch.hub.load_state_dict_from_url(WEIGHT_URLS[kind], progress=False)
    except Exception as exc:
        raise ConfigurationError(_missing_weights_message(kind, target) + f"\n(download failed: {exc})")
    return target


def _missing_weights_message(kind: BackboneKind, path: Path) -> str:
    return (
        f"pretrained weights for {kind.value} not found.\n"
        f"Download {WEIGHT_URLS[kind]}\n"
        f"and place it at {path}, or point ${WEIGHTS_DIR_ENV} at a directory "
        f"containing {WEIGHT_FILES[kind]}, or pass an explicit weights path."
    )


def build_head(n_input: int, n_neurons: int, seed: int = 0) -> nn.Sequential:
    """Classifier head: dropout -> affine -> ReLU -> affine to 2 logits."""
    if n_input < 1 or n_neurons < 1:
        raise ValueError("head dimensions must be positive")
    torch.manual_seed(subseed(seed, f"head:{n_input}:{n_neurons}"))
    return nn.Sequential(
        nn.Dropout(p=HEAD_DROPOUT),
        nn.Linear(n_input, n_neurons),
        nn.ReLU(),
        nn.Linear(n_neurons, NUM_CLASSES),
    )


def _first_conv(model: AdaptedModel) -> tuple[nn.Module, str, nn.Conv2d]:
    if model.kind is BackboneKind.RESNET18:
        return model.net, "conv1", model.net.conv1
    return model.net.features, "conv0", model.net.features.conv0


def adapt_first_conv(model: AdaptedModel, seed: int = 0) -> AdaptedModel:
    """Swap the 3-channel input convolution for a 1-channel, trainable one.

    With "sum" init the new kernel is the channel-axis sum of the old one,
    which makes conv(g) identical to the original conv applied to g
    replicated across 3 channels; the strategy therefore starts from the
    same activations as the replicated-channel pipeline.
    """
    if model.cfg is None or model.cfg.strategy is not Strategy.SINGLE_CHANNEL:
        raise ConfigurationError("first-conv adaptation only applies to the single_channel strategy")
    parent, attr, conv = _first_conv(model)
    if conv.in_channels != 3:
        raise ConfigurationError("first convolution already adapted")
    new_conv = nn.Conv2d(
        1, conv.out_channels,
        kernel_size=conv.kernel_size, stride=conv.stride,
        padding=conv.padding, bias=conv.bias is not None,
    )
    if model.cfg.first_conv_init == "sum":
        with torch.no_grad():
            new_conv.weight.copy_(conv.weight.sum(dim=1, keepdim=True))
            if conv.bias is not None:
                new_conv.bias.copy_(conv.bias)
    else:
        torch.manual_seed(subseed(seed, "first_conv"))
        nn.init.kaiming_normal_(new_conv.weight, mode="fan_out", nonlinearity="relu")
    new_conv.weight.requires_grad_(True)
    setattr(parent, attr, new_conv)
    return model


def apply_strategy(model: AdaptedModel, cfg: StrategyConfig, seed: int = 0) -> AdaptedModel:
    """Perform the surgery for cfg on a freshly loaded model (in place)."""
    if model.cfg is not None:
        raise ConfigurationError("strategy already applied to this model")
    if model.pretrained != cfg.pretrained:
        raise ConfigurationError(
            f"model loaded with pretrained={model.pretrained} but config says {cfg.pretrained}"
        )
    model.cfg = cfg
    width = FEATURE_WIDTH[cfg.backbone]

    if cfg.strategy is Strategy.FULL:
        torch.manual_seed(subseed(seed, "output_layer"))
        model.set_head(nn.Linear(width, NUM_CLASSES))
        return model

    for p in model.parameters():
        p.requires_grad_(False)
    if cfg.strategy is Strategy.SINGLE_CHANNEL:
        adapt_first_conv(model, seed=seed)
    model.set_head(build_head(width, cfg.n_neurons, seed=seed))
    model._backbone_frozen = True
    model.train()  # re-apply mode flags now that freezing is known
    return model


def build_model(cfg: StrategyConfig, seed: int = 0,
                weights_path: Path | str | None = None) -> AdaptedModel:
    """Load the backbone and apply the strategy in one step."""
    model = load_backbone(cfg.backbone, cfg.pretrained, seed=seed, weights_path=weights_path)
    return apply_strategy(model, cfg, seed=seed)


def replicate_channels(image: torch.Tensor) -> torch.Tensor:
    """Turn (..., 1, H, W) into (..., 3, H, W) with three identical channels."""
    if image.shape[-3] != 1:
        raise ValueError(f"expected a single channel, got shape {tuple(image.shape)}")
    repeats = [1] * image.dim()
    repeats[-3] = 3
    return image.repeat(*repeats)


def first_conv_param_prefix(model: AdaptedModel) -> str:
    """Fully qualified name prefix of the input convolution's parameters."""
    if model.kind is BackboneKind.RESNET18:
        return "net.conv1."
    return "net.features.conv0."


def parameter_checksum(named_parameters, exclude_prefix: str | None = None) -> str:
    """sha256 over raw parameter bytes in name order; detects any bitwise change."""
    digest = hashlib.sha256()
    for name, param in sorted(named_parameters, key=lambda item: item[0]):
        if exclude_prefix is not None and name.startswith(exclude_prefix):
            continue
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(model: AdaptedModel, path: Path | str, epoch: int,
                    val_accuracy: float) -> None:
    """Weights plus enough metadata to rebuild the identical architecture."""
    cfg = model.cfg
    torch.save(
        {
            "state_dict": model.net.state_dict(),
            "backbone": cfg.backbone.value,
            "strategy": cfg.strategy.value,
            "pretrained": cfg.pretrained,
            "n_neurons": cfg.n_neurons,
            "first_conv_init": cfg.first_conv_init,
            "epoch": epoch,
            "val_accuracy": val_accuracy,
            "weight_sha256": model.weight_sha256,
        },
        path,
    )


def load_checkpoint(path: Path | str) -> tuple[AdaptedModel, dict]:
    """Rebuild a model from a checkpoint written by save_checkpoint."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    cfg = StrategyConfig(
        backbone=BackboneKind(payload["backbone"]),
        strategy=Strategy(payload["strategy"]),
        pretrained=False,  # weights come from the checkpoint itself
        n_neurons=payload["n_neurons"],
        first_conv_init=payload["first_conv_init"],
    )
    model = build_model(cfg)
    model.net.load_state_dict(payload["state_dict"])
    model.cfg = replace(cfg, pretrained=payload["pretrained"])
    model.weight_sha256 = payload["weight_sha256"]
    meta = {k: payload[k] for k in ("epoch", "val_accuracy", "weight_sha256")}
    return model, meta
