"""Networks: the RRDB generator, the discriminator, and the frozen feature
extractor behind the perceptual terms.

All three consume images in [0, 1]; the symmetric-range conversion the conv
stacks prefer happens inside the modules, never at call sites. Generator
internals follow the residual-in-residual dense design (3 dense blocks of 5
convs each, residual scaling, no batch norm); the discriminator is a strided
conv classifier with two dense layers and a sigmoid head. The feature
extractor is a VGG-19 conv stack truncated at a configurable tap, with
ImageNet weights loaded from disk when available and a frozen seeded-random
init otherwise.
"""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import CheckpointMismatch, ConfigError, FormatError, ShapeError

# ImageNet statistics for [0,1]-ranged RGB input.
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)

# Convs per block of VGG-19; a pool follows each block.
_VGG19_BLOCKS = (2, 2, 4, 4, 4)
_VGG19_CHANNELS = (64, 128, 256, 512, 512)


@dataclass(frozen=True)
class GeneratorConfig:
    n_rrdb_blocks: int = 23
    base_channels: int = 64
    growth_channels: int = 32
    scale: int = 4
    residual_scaling: float = 0.2
    img_channels: int = 3

    def __post_init__(self) -> None:
        if self.scale not in (1, 2, 4, 8):
            raise ConfigError(f"scale must be one of 1,2,4,8 (powers of 2), got {self.scale}")
        if not 0.0 < self.residual_scaling <= 1.0:
            raise ConfigError(f"residual_scaling must be in (0,1], got {self.residual_scaling}")
        if self.n_rrdb_blocks < 0:
            raise ConfigError("n_rrdb_blocks must be >= 0")


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_size: int = 256
    base_channels: int = 64
    n_downsample_stages: int = 4
    img_channels: int = 3

    def __post_init__(self) -> None:
        if self.input_size % (2**self.n_downsample_stages) != 0:
            raise ConfigError(
                f"input_size {self.input_size} not divisible by 2^{self.n_downsample_stages}"
            )


@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Where to tap the frozen VGG-19 stack.

    ``tap=(pool_index, conv_index)`` selects the conv_index-th convolution
    before the pool_index-th max-pool; the default (5, 4) taps the 4th conv
    before the 5th pool. ``weights`` is ``"random:<seed>"`` for a frozen
    seeded init or ``"imagenet:<path>"`` for a torchvision-format VGG-19
    state dict on disk.
    """

    backbone: str = "vgg19"
    tap: tuple[int, int] = (5, 4)
    pre_activation: bool = True
    weights: str = "random:0"

    def __post_init__(self) -> None:
        if self.backbone != "vgg19":
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        i, j = self.tap
        if not (1 <= i <= len(_VGG19_BLOCKS)) or not (1 <= j <= _VGG19_BLOCKS[i - 1]):
            raise ConfigError(f"tap {self.tap} does not exist in vgg19")
        kind = self.weights.split(":", 1)[0]
        if kind not in ("random", "imagenet"):
            raise ConfigError(f"weights must be 'random:<seed>' or 'imagenet:<path>', got {self.weights!r}")


class _DenseBlock(nn.Module):
    """Five convs with dense connections; residual-scaled skip."""

    def __init__(self, nf: int, gc: int, res_scale: float):
        super().__init__()
        self.res_scale = res_scale
        self.convs = nn.ModuleList(
            nn.Conv2d(nf + k * gc, gc if k < 4 else nf, 3, 1, 1) for k in range(5)
        )
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = [x]
        for k, conv in enumerate(self.convs):
            out = conv(torch.cat(feats, dim=1))
            if k < 4:
                out = self.act(out)
            feats.append(out)
        return x + self.res_scale * feats[-1]


class _RRDB(nn.Module):
    def __init__(self, nf: int, gc: int, res_scale: float):
        super().__init__()
        self.res_scale = res_scale
        self.blocks = nn.Sequential(*(_DenseBlock(nf, gc, res_scale) for _ in range(3)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.res_scale * self.blocks(x)


class Generator(nn.Module):
    """LR -> SR network; output spatial dims are exactly scale x input dims."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        nf, gc, c = cfg.base_channels, cfg.growth_channels, cfg.img_channels
        self.conv_first = nn.Conv2d(c, nf, 3, 1, 1)
        self.trunk = nn.Sequential(
            *(_RRDB(nf, gc, cfg.residual_scaling) for _ in range(cfg.n_rrdb_blocks))
        )
        self.trunk_conv = nn.Conv2d(nf, nf, 3, 1, 1)
        n_up = int(np.log2(cfg.scale))
        self.upsample = nn.ModuleList(nn.Conv2d(nf, nf, 3, 1, 1) for _ in range(n_up))
        self.conv_hr = nn.Conv2d(nf, nf, 3, 1, 1)
        self.conv_last = nn.Conv2d(nf, c, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)
        self._init_weights()

    def _init_weights(self) -> None:
        # Small residual-branch init keeps early outputs near the identity,
        # which stabilises the L1 warmup stage.
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
                m.weight.data *= 0.1
                nn.init.zeros_(m.bias)

    def forward(self, lr: torch.Tensor) -> torch.Tensor:
        if lr.ndim != 4:
            raise ShapeError(f"expected NCHW batch, got ndim={lr.ndim}")
        if lr.shape[1] != self.cfg.img_channels:
            raise ShapeError(f"expected {self.cfg.img_channels} channels, got {lr.shape[1]}")
        x = lr * 2.0 - 1.0
        fea = self.conv_first(x)
        fea = fea + self.trunk_conv(self.trunk(fea))
        for conv in self.upsample:
            fea = nn.functional.interpolate(fea, scale_factor=2, mode="nearest")
            fea = self.act(conv(fea))
        out = self.conv_last(self.act(self.conv_hr(fea)))
        return (out + 1.0) * 0.5


class Discriminator(nn.Module):
    """Real/fake classifier; returns one probability in (0, 1) per image."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        b = cfg.base_channels
        layers: list[nn.Module] = [
            nn.Conv2d(cfg.img_channels, b, 3, 1, 1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        ch = b
        for k in range(cfg.n_downsample_stages):
            layers += [
                nn.Conv2d(ch, ch, 3, 2, 1),
                nn.BatchNorm2d(ch),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            nxt = min(ch * 2, b * 8)
            if k < cfg.n_downsample_stages - 1:
                layers += [
                    nn.Conv2d(ch, nxt, 3, 1, 1),
                    nn.BatchNorm2d(nxt),
                    nn.LeakyReLU(0.2, inplace=True),
                ]
                ch = nxt
        self.features = nn.Sequential(*layers)
        spatial = cfg.input_size // (2**cfg.n_downsample_stages)
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(ch * spatial * spatial, 1024),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(1024, 1),
        )

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        if img.ndim != 4:
            raise ShapeError(f"expected NCHW batch, got ndim={img.ndim}")
        if img.shape[-2:] != (self.cfg.input_size, self.cfg.input_size):
            raise ShapeError(
                f"discriminator expects {self.cfg.input_size}x{self.cfg.input_size} input, "
                f"got {tuple(img.shape[-2:])}"
            )
        if img.shape[1] != self.cfg.img_channels:
            raise ShapeError(f"expected {self.cfg.img_channels} channels, got {img.shape[1]}")
        x = img * 2.0 - 1.0
        logits = self.classifier(self.features(x)).squeeze(1)
        return torch.sigmoid(logits)


class FeatureExtractor(nn.Module):
    """Frozen VGG-19 conv stack truncated at the configured tap.

    Input must be 3-channel in [0, 1]; ImageNet normalisation is applied
    internally. Parameters never receive gradients; the input does.
    """

    def __init__(self, spec: FeatureExtractorSpec):
        super().__init__()
        self.spec = spec
        pool_i, conv_j = spec.tap
        layers: list[nn.Module] = []
        in_ch = 3
        done = False
        for bi, (n_convs, ch) in enumerate(zip(_VGG19_BLOCKS, _VGG19_CHANNELS), start=1):
            for ci in range(1, n_convs + 1):
                layers.append(nn.Conv2d(in_ch, ch, 3, 1, 1))
                in_ch = ch
                if bi == pool_i and ci == conv_j:
                    if not spec.pre_activation:
                        layers.append(nn.ReLU(inplace=False))
                    done = True
                    break
                layers.append(nn.ReLU(inplace=True))
            if done:
                break
            layers.append(nn.MaxPool2d(2, 2))
        self.features = nn.Sequential(*layers)
        self._load_weights()
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _load_weights(self) -> None:
        kind, _, arg = self.spec.weights.partition(":")
        if kind == "random":
            with torch.random.fork_rng():
                torch.manual_seed(int(arg or 0))
                for m in self.features:
                    if isinstance(m, nn.Conv2d):
                        nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                        nn.init.zeros_(m.bias)
            return
        path = Path(arg)
        if not path.exists():
            raise FormatError(
                f"imagenet weights file {path} not found; download a torchvision vgg19 "
                "state dict or use weights='random:<seed>'"
            )
        state = torch.load(path, map_location="cpu", weights_only=True)
        own = {k: v for k, v in state.items() if k in self.state_dict()}
        missing = [k for k in self.state_dict() if k.startswith("features.") and k not in own]
        if missing:
            raise FormatError(f"weights file {path} is missing layers: {missing[:4]}...")
        self.load_state_dict(own, strict=False)

    def min_input_size(self) -> int:
        return 2 ** (self.spec.tap[0] - 1)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        if img.ndim != 4:
            raise ShapeError(f"expected NCHW batch, got ndim={img.ndim}")
        if img.shape[1] == 1:
            raise ShapeError(
                "feature extractor needs 3-channel input; replicate single-channel "
                "images upstream (see replicate_channels)"
            )
        if img.shape[1] != 3:
            raise ShapeError(f"expected 3 channels, got {img.shape[1]}")
        m = self.min_input_size()
        if img.shape[-2] < m or img.shape[-1] < m:
            raise ShapeError(f"input {tuple(img.shape[-2:])} smaller than tap minimum {m}x{m}")
        x = (img - self.mean.to(img.dtype)) / self.std.to(img.dtype)
        return self.features(x)

    def train(self, mode: bool = True) -> "FeatureExtractor":
        # Frozen module: ignore train-mode requests so it can never drift.
        return super().train(False)


def extract_features(extractor: FeatureExtractor, img: torch.Tensor) -> torch.Tensor:
    """Tap-layer feature maps for a [0,1] NCHW batch; gradients flow to img."""
    return extractor(img)


def replicate_channels(x: torch.Tensor) -> torch.Tensor:
    """Replicate a 1-channel NCHW batch to 3 channels; 3-channel passes through."""
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW batch, got ndim={x.ndim}")
    if x.shape[1] == 3:
        return x
    if x.shape[1] == 1:
        return x.expand(-1, 3, -1, -1)
    raise ShapeError(f"cannot replicate {x.shape[1]}-channel input to 3 channels")


CHECKPOINT_FORMAT = "semisr-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, payload: dict) -> None:
    """Write a versioned checkpoint; ``payload['configs']`` is the config echo."""
    out = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION}
    out.update(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        torch.save(out, fh)
        fh.flush()
    tmp.replace(path)


def load_checkpoint(path: str | Path, expected_configs: dict | None = None, override: bool = False) -> dict:
    """Load a checkpoint, refusing config mismatches unless ``override``.

    ``expected_configs`` maps names (e.g. ``"generator"``) to config dicts; any
    present key must match the checkpoint's echo exactly.
    """
    data = torch.load(Path(path), map_location="cpu", weights_only=False)
    if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointMismatch(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatch(
            f"checkpoint version {data.get('version')} != supported {CHECKPOINT_VERSION}"
        )
    if expected_configs and not override:
        stored = data.get("configs", {})
        for name, cfg in expected_configs.items():
            if name in stored and stored[name] != cfg:
                raise CheckpointMismatch(
                    f"checkpoint config {name!r} differs from the requested run config; "
                    "pass override to load anyway"
                )
    return data


def config_dict(cfg) -> dict:
    """Dataclass config -> plain dict (tuples flattened to lists for stability)."""
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
