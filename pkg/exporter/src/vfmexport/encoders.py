"""Encoder plugins: an identifier string resolves to a per-image callable.

A plugin returns the feature maps of its last stages, shallowest first and
deepest last, each shaped (channels, height, width). Pooling and layer
concatenation happen in the exporter, so plugins never deal with the output
layout. ``hash64`` is the built-in reference plugin: fully deterministic,
dependency-free vectors derived from the preprocessed pixel bytes, useful
for wiring tests and dry runs. ``resnet18`` needs the ``[torch]`` extra.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np
from PIL import Image

from .errors import ExportError

ENCODER_NAMES = ("hash64", "resnet18")

_HASH_SIDE = 32
_HASH_SHAPES = ((16, 4, 4), (32, 2, 2), (64, 1, 1))


@dataclass(frozen=True)
class EncoderPlugin:
    """Resolved encoder: provenance strings plus the encode callable."""

    name: str
    preprocess: str
    encode: Callable[[Image.Image], tuple[np.ndarray, ...]]


def _resize_center_crop(image: Image.Image, resize: int, crop: int) -> Image.Image:
    rgb = image.convert("RGB")
    width, height = rgb.size
    scale = resize / min(width, height)
    rgb = rgb.resize(
        (max(resize, round(width * scale)), max(resize, round(height * scale))),
        Image.BILINEAR,
    )
    left = (rgb.width - crop) // 2
    top = (rgb.height - crop) // 2
    return rgb.crop((left, top, left + crop, top + crop))


def _hash_encode(image: Image.Image) -> tuple[np.ndarray, ...]:
    seed = _resize_center_crop(image, _HASH_SIDE, _HASH_SIDE).tobytes()
    layers = []
    for index, shape in enumerate(_HASH_SHAPES):
        count = int(np.prod(shape))
        digest = hashlib.shake_256(seed + bytes([index])).digest(4 * count)
        values = np.frombuffer(digest, dtype="<u4").astype(np.float32)
        layers.append((values / np.float32(2**32)).reshape(shape))
    return tuple(layers)


_HASH_PLUGIN = EncoderPlugin(
    name="hash64",
    preprocess=f"RGB, resize shorter side to {_HASH_SIDE}, center crop "
    f"{_HASH_SIDE}x{_HASH_SIDE}",
    encode=_hash_encode,
)


def _resnet18_plugin(device: str) -> EncoderPlugin:
    try:
        import torch
        from torchvision import models
    except ImportError as exc:
        raise ExportError(
            "encoder 'resnet18' needs the optional torch extra: "
            "pip install vfmexport[torch]"
        ) from exc

    try:
        weights = models.ResNet18_Weights.DEFAULT
        model = models.resnet18(weights=weights)
    except Exception as exc:
        raise ExportError(f"cannot load resnet18 weights: {exc}") from exc
    model = model.eval().to(device)
    mean = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)

    def encode(image: Image.Image) -> tuple[np.ndarray, ...]:
        crop = _resize_center_crop(image, 256, 224)
        array = np.asarray(crop, dtype=np.float32) / 255.0
        tensor = torch.from_numpy(array.transpose(2, 0, 1))
        tensor = ((tensor - mean) / std).unsqueeze(0).to(device)
        with torch.no_grad():
            x = model.conv1(tensor)
            x = model.maxpool(model.relu(model.bn1(x)))
            x = model.layer1(x)
            stages = []
            for stage in (model.layer2, model.layer3, model.layer4):
                x = stage(x)
                stages.append(x[0].cpu().numpy().astype(np.float32))
        return tuple(stages)

    return EncoderPlugin(
        name="resnet18",
        preprocess="RGB, resize shorter side to 256, center crop 224x224, "
        "ImageNet mean/std normalization",
        encode=encode,
    )


def get_encoder(name: str, device: str = "cpu") -> EncoderPlugin:
    """Resolve an encoder identifier to its plugin.

    Raises:
        ExportError: unknown identifier, or a plugin's optional dependency
            is missing.
    """
    if name == "hash64":
        return _HASH_PLUGIN
    if name == "resnet18":
        return _resnet18_plugin(device)
    raise ExportError(
        f"unknown encoder {name!r}; available: {', '.join(ENCODER_NAMES)}"
    )
