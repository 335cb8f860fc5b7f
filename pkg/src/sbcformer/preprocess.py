"""Image preprocessing: shorter-side bilinear resize, center crop, per-channel
standardization. Geometry matches the common evaluation pipeline so tensors
agree with reference preprocessing to within resampler tolerance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, InputError
from .tensor import DTYPE

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class PreprocessSpec:
    resize_short: int = 256
    center_crop: int = 224
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD

    def __post_init__(self):
        if self.center_crop > self.resize_short:
            raise ConfigError(
                f"center_crop {self.center_crop} exceeds resize_short {self.resize_short}"
            )


def _resize_short(img: Image.Image, target: int) -> Image.Image:
    w, h = img.size
    if w <= h:
        new_w, new_h = target, int(target * h / w)
    else:
        new_w, new_h = int(target * w / h), target
    return img.resize((new_w, new_h), Image.BILINEAR)


def _center_crop(img: Image.Image, size: int) -> Image.Image:
    w, h = img.size
    left = int(round((w - size) / 2.0))
    top = int(round((h - size) / 2.0))
    return img.crop((left, top, left + size, top + size))


def preprocess_image(path, spec: PreprocessSpec | None = None) -> np.ndarray:
    """Decode an image file to a standardized [1, 3, crop, crop] tensor.
    Grayscale images are promoted to three channels."""
    spec = spec or PreprocessSpec()
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            img = _resize_short(img, spec.resize_short)
            img = _center_crop(img, spec.center_crop)
            arr = np.asarray(img, dtype=DTYPE) / DTYPE(255.0)
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc
    arr = arr.transpose(2, 0, 1)[None]  # HWC -> NCHW
    mean = np.asarray(spec.mean, dtype=DTYPE)[None, :, None, None]
    std = np.asarray(spec.std, dtype=DTYPE)[None, :, None, None]
    return np.ascontiguousarray((arr - mean) / std)
