"""Segmentation networks: base U-Net and three pretrained-encoder variants.

All four models share the same contract: single-channel input, per-pixel
softmax over the four classes, output spatial shape equal to input shape.
Inputs are reflect-padded to encoder-friendly sizes and cropped back after
decoding. The encoder variants wrap torchvision backbones and decode with
resize-then-concatenate up blocks, so non-dyadic feature sizes (notably
the Inception stem's valid convolutions) need no special casing.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torchvision import models as tvm

from .data import LabelMask, OctImage
from .errors import ConfigurationError, ContractError
from .patching import extract_patches, stitch
from .preprocess import despeckle, normalize

NUM_CLASSES = 4
ARCHS = ("base_unet", "vgg16_unet", "resnet34_unet", "inceptionv3_unet")

# Spatial granularity the padded input must satisfy, per architecture.
_PAD_MULTIPLE = 32
# The Inception stem's valid convolutions collapse small inputs before the
# deepest blocks; 96 is the smallest /32 multiple that survives the chain.
_MIN_SIDE = {"inceptionv3_unet": 96}

Model = nn.Module


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    in_channels: int = 1
    num_classes: int = NUM_CLASSES
    encoder_pretrained: bool = False

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigurationError(
                f"unknown arch {self.arch!r}; expected one of {', '.join(ARCHS)}"
            )
        if self.in_channels != 1:
            raise ConfigurationError("in_channels is fixed at 1 (grayscale B-scans)")
        if self.num_classes != NUM_CLASSES:
            raise ConfigurationError(f"num_classes is fixed at {NUM_CLASSES}")


@dataclass
class ProbabilityMap:
    """Per-pixel class probabilities, channel-first (4, H, W)."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 3 or self.probs.shape[0] != NUM_CLASSES:
            raise ContractError(f"expected ({NUM_CLASSES}, H, W) probabilities, got {self.probs.shape}")
        if self.probs.min() < -1e-9 or self.probs.max() > 1.0 + 1e-9:
            raise ContractError("probabilities outside [0, 1]")
        sums = self.probs.sum(axis=0)
        worst = np.abs(sums - 1.0).max() if sums.size else 0.0
        if worst > 1e-5:
            raise ContractError(f"per-pixel probability sums deviate from 1 by {worst:.3e}")
        self.probs = np.clip(self.probs, 0.0, 1.0)

    @property
    def shape(self) -> tuple:
        return self.probs.shape[1:]


def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def _pad_to(x: torch.Tensor, target_h: int, target_w: int) -> torch.Tensor:
    """Reflect-pad bottom/right up to the target size, chunked so the pad
    amount never reaches the current extent (a reflect-pad requirement)."""
    while x.shape[-2] < target_h or x.shape[-1] < target_w:
        dh = min(target_h - x.shape[-2], x.shape[-2] - 1)
        dw = min(target_w - x.shape[-1], x.shape[-1] - 1)
        x = F.pad(x, (0, dw, 0, dh), mode="reflect")
    return x


def _padded_size(side: int, min_side: int) -> int:
    return max(min_side, math.ceil(side / _PAD_MULTIPLE) * _PAD_MULTIPLE)


class _SizedSoftmaxNet(nn.Module):
    """Shared pad/run/crop scaffolding; subclasses implement _run."""

    arch = "base_unet"

    def forward_logits(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        min_side = _MIN_SIDE.get(self.arch, _PAD_MULTIPLE)
        xp = _pad_to(x, _padded_size(h, min_side), _padded_size(w, min_side))
        logits = self._run(xp)
        if logits.shape[-2:] != xp.shape[-2:]:
            logits = F.interpolate(logits, size=xp.shape[-2:],
                                   mode="bilinear", align_corners=False)
        return logits[..., :h, :w]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward_logits(x), dim=1)


class BaseUNet(_SizedSoftmaxNet):
    """Classic 4-level encoder-decoder with 64-128-256-512 widths and a
    1024-channel bottleneck, transposed-conv upsampling, skip concatenation."""

    arch = "base_unet"

    def __init__(self, in_channels: int = 1, num_classes: int = NUM_CLASSES):
        super().__init__()
        widths = (64, 128, 256, 512)
        self.encoders = nn.ModuleList()
        cin = in_channels
        for wch in widths:
            self.encoders.append(_double_conv(cin, wch))
            cin = wch
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(widths[-1], 1024)
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        cin = 1024
        for wch in reversed(widths):
            self.ups.append(nn.ConvTranspose2d(cin, wch, 2, stride=2))
            self.decoders.append(_double_conv(2 * wch, wch))
            cin = wch
        self.head = nn.Conv2d(widths[0], num_classes, 1)

    def _run(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        return self.head(x)


class _UpBlock(nn.Module):
    def __init__(self, cin: int, cskip: int, cout: int):
        super().__init__()
        self.conv = _double_conv(cin + cskip, cout)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        return self.conv(torch.cat([x, skip], dim=1))


def _backbone(name: str, pretrained: bool):
    builders = {
        "vgg16": (tvm.vgg16, tvm.VGG16_Weights.IMAGENET1K_V1, {}),
        "resnet34": (tvm.resnet34, tvm.ResNet34_Weights.IMAGENET1K_V1, {}),
        "inception_v3": (tvm.inception_v3, tvm.Inception_V3_Weights.IMAGENET1K_V1,
                         {"aux_logits": True, "init_weights": True}),
    }
    build, weights, kwargs = builders[name]
    if pretrained:
        try:
            return build(weights=weights, **kwargs)
        except Exception as exc:
            warnings.warn(
                f"pretrained weights for {name} unavailable ({exc}); "
                "falling back to random initialization",
                RuntimeWarning,
                stacklevel=2,
            )
    return build(weights=None, **kwargs)


class _EncoderUNet(_SizedSoftmaxNet):
    """Backbone encoder + interpolating decoder shared by the three variants.

    Grayscale input is replicated to three channels so pretrained stems keep
    their expected input statistics. Decoder stages resize to each skip's
    spatial size before concatenation, then the last stage resizes to the
    padded input size.
    """

    def __init__(self, num_classes: int = NUM_CLASSES):
        super().__init__()
        skip_chs, bottleneck_ch = self._build_encoder()
        dec_chs = [256, 128, 64, 32, 16][:len(skip_chs)]
        self.ups = nn.ModuleList()
        cin = bottleneck_ch
        for cskip, cout in zip(reversed(skip_chs), dec_chs):
            self.ups.append(_UpBlock(cin, cskip, cout))
            cin = cout
        self.final = _double_conv(cin, cin)
        self.head = nn.Conv2d(cin, num_classes, 1)

    def _run(self, x: torch.Tensor) -> torch.Tensor:
        x = x.repeat(1, 3, 1, 1)
        skips, bottom = self._encode(x)
        y = bottom
        for up, skip in zip(self.ups, reversed(skips)):
            y = up(y, skip)
        if y.shape[-2:] != x.shape[-2:]:
            y = F.interpolate(y, size=x.shape[-2:], mode="bilinear", align_corners=False)
        return self.head(self.final(y))


class VggUNet(_EncoderUNet):
    arch = "vgg16_unet"
    # feature indices of the last ReLU in each conv block of vgg16
    _TAPS = (3, 8, 15, 22, 29)

    def __init__(self, num_classes: int = NUM_CLASSES, pretrained: bool = False):
        self._pretrained = pretrained
        super().__init__(num_classes)

    def _build_encoder(self):
        self.encoder = _backbone("vgg16", self._pretrained).features
        return (64, 128, 256, 512, 512), 512

    def _encode(self, x):
        skips = []
        for i, layer in enumerate(self.encoder):
            x = layer(x)
            if i in self._TAPS:
                skips.append(x)
        return skips, x


class ResNetUNet(_EncoderUNet):
    arch = "resnet34_unet"

    def __init__(self, num_classes: int = NUM_CLASSES, pretrained: bool = False):
        self._pretrained = pretrained
        super().__init__(num_classes)

    def _build_encoder(self):
        net = _backbone("resnet34", self._pretrained)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.pool = net.maxpool
        self.layer1, self.layer2 = net.layer1, net.layer2
        self.layer3, self.layer4 = net.layer3, net.layer4
        return (64, 64, 128, 256), 512

    def _encode(self, x):
        s0 = self.stem(x)
        s1 = self.layer1(self.pool(s0))
        s2 = self.layer2(s1)
        s3 = self.layer3(s2)
        bottom = self.layer4(s3)
        return [s0, s1, s2, s3], bottom


class InceptionUNet(_EncoderUNet):
    arch = "inceptionv3_unet"

    def __init__(self, num_classes: int = NUM_CLASSES, pretrained: bool = False):
        self._pretrained = pretrained
        super().__init__(num_classes)

    def _build_encoder(self):
        self.encoder = _backbone("inception_v3", self._pretrained)
        return (64, 192, 288, 768), 2048

    def _encode(self, x):
        e = self.encoder
        x = e.Conv2d_1a_3x3(x)
        x = e.Conv2d_2a_3x3(x)
        s0 = e.Conv2d_2b_3x3(x)
        x = e.maxpool1(s0)
        x = e.Conv2d_3b_1x1(x)
        s1 = e.Conv2d_4a_3x3(x)
        x = e.maxpool2(s1)
        x = e.Mixed_5b(x)
        x = e.Mixed_5c(x)
        s2 = e.Mixed_5d(x)
        x = e.Mixed_6a(s2)
        x = e.Mixed_6b(x)
        x = e.Mixed_6c(x)
        x = e.Mixed_6d(x)
        s3 = e.Mixed_6e(x)
        x = e.Mixed_7a(s3)
        x = e.Mixed_7b(x)
        bottom = e.Mixed_7c(x)
        return [s0, s1, s2, s3], bottom


def build_model(spec: ModelSpec) -> Model:
    """Construct the network for a spec (randomly initialized unless the
    spec asks for, and the environment can provide, pretrained weights).

    Models come back in eval mode so they are immediately usable for
    inference; the trainer flips to train mode itself.
    """
    if spec.arch == "base_unet":
        model = BaseUNet(spec.in_channels, spec.num_classes)
    elif spec.arch == "vgg16_unet":
        model = VggUNet(spec.num_classes, spec.encoder_pretrained)
    elif spec.arch == "resnet34_unet":
        model = ResNetUNet(spec.num_classes, spec.encoder_pretrained)
    else:
        model = InceptionUNet(spec.num_classes, spec.encoder_pretrained)
    return model.eval()


def predict_probs(model: Model, img: OctImage,
                  patch_px: int = 128, stride_px: int = 64,
                  kernel_px: int = 3, passes: int = 1,
                  batch_size: int = 8) -> ProbabilityMap:
    """Full-frame inference: despeckle, normalize, patch, forward, stitch."""
    prepped = normalize(despeckle(img, kernel_px=kernel_px, passes=passes))
    ps = extract_patches(prepped, None, patch_px, stride_px)
    tiles = np.stack([t for t, _, _ in ps.patches])
    geoms = [g for _, _, g in ps.patches]
    model.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, len(tiles), batch_size):
            batch = torch.from_numpy(tiles[i:i + batch_size]).float().unsqueeze(1)
            probs = model(batch).double().numpy()
            outs.extend(probs)
    return stitch(list(zip(outs, geoms)), prepped.pixels.shape)


def argmax_mask(pm: ProbabilityMap) -> LabelMask:
    """Most probable class per pixel; ties go to the lowest class id."""
    return LabelMask(np.argmax(pm.probs, axis=0).astype(np.uint8))


def one_hot(mask: LabelMask) -> ProbabilityMap:
    """Exact one-hot probability map of a mask (useful as a stitch oracle)."""
    eye = np.eye(NUM_CLASSES, dtype=np.float64)
    return ProbabilityMap(np.transpose(eye[mask.labels], (2, 0, 1)))


def checkpoint_name(arch: str, when: float | None = None) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.localtime(when))
    return f"{arch}-{stamp}.ckpt"


def save_checkpoint(model: Model, spec: ModelSpec, path) -> None:
    path = Path(path)
    payload = {
        "arch": spec.arch,
        "in_channels": spec.in_channels,
        "num_classes": spec.num_classes,
        "encoder_pretrained": spec.encoder_pretrained,
        "state_dict": model.state_dict(),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[Model, ModelSpec]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    try:
        spec = ModelSpec(payload["arch"], payload["in_channels"],
                         payload["num_classes"], payload["encoder_pretrained"])
        state = payload["state_dict"]
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path}: not a model checkpoint ({exc})") from None
    model = build_model(spec)
    model.load_state_dict(state)
    model.eval()
    return model, spec
