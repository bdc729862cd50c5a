"""Deterministic raw-content featurization and train/test-time augmentations.

Text samples map to hashed character-trigram counts (FNV-1a into 4096
buckets, L2-normalized) plus character/word counts as auxiliary features.
Image samples map to a 16x16 area-averaged grayscale downsample plus four
global statistics, with width/height as auxiliaries. Auxiliary features are
z-scored against the labeled training set only.
"""
from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import (
    DimensionMismatchError,
    EmptyImageError,
    EmptyTextError,
    TooFewSamplesError,
)
from .numeric import RngState

TEXT_BUCKETS = 4096
TEXT_BOUNDARY = "\x02"
IMAGE_GRID = 16
IMAGE_STAT_COUNT = 4
AUX_STD_FLOOR = 1e-6

TEXT_MAIN_DIM = TEXT_BUCKETS
IMAGE_MAIN_DIM = IMAGE_GRID * IMAGE_GRID + IMAGE_STAT_COUNT

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_trigram_buckets: dict[str, int] = {}


@dataclass
class Sample:
    """One piece of content: text or an 8-bit grayscale image."""

    id: str
    modality: str  # "text" | "image"
    text: str | None = None
    pixels: np.ndarray | None = None  # (height, width) uint8
    label: str | None = None

    def __post_init__(self):
        if self.modality == "text":
            if self.text is None or self.pixels is not None:
                raise DimensionMismatchError("text sample must carry text only")
        elif self.modality == "image":
            if self.pixels is None or self.text is not None:
                raise DimensionMismatchError("image sample must carry pixels only")
        else:
            raise DimensionMismatchError(f"unknown modality {self.modality!r}")


@dataclass
class FeatureVector:
    """Main features concatenated with z-scored auxiliary features."""

    values: np.ndarray
    aux_count: int


class AugmentConfig(BaseModel):
    """Knobs for the text and image perturbations applied to augmented splits."""

    model_config = ConfigDict(extra="forbid")

    # text
    crop_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    max_crop_frac: float = Field(default=0.2, ge=0.0, lt=0.5)
    junk_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    junk_len_min: int = Field(default=1, ge=1)
    junk_len_max: int = Field(default=16, ge=1)
    junk_alphabet: str = string.ascii_letters + string.digits
    # image
    hflip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    noise_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    noise_sigma_min: float = Field(default=0.0, ge=0.0)
    noise_sigma_max: float = Field(default=8.0, ge=0.0)
    quant_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    quant_levels: tuple[int, ...] = (16, 32, 64)
    bc_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    brightness_delta: float = Field(default=20.0, ge=0.0)
    contrast_min: float = Field(default=0.8, gt=0.0)
    contrast_max: float = Field(default=1.25, gt=0.0)


def _bucket(trigram: str) -> int:
    cached = _trigram_buckets.get(trigram)
    if cached is not None:
        return cached
    h = _FNV_OFFSET
    for byte in trigram.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    b = h % TEXT_BUCKETS
    _trigram_buckets[trigram] = b
    return b


def text_main_features(text: str) -> np.ndarray:
    """Unit-norm hashed trigram counts; the text gets one boundary marker per side."""
    if len(text) == 0:
        raise EmptyTextError("cannot featurize empty text")
    padded = TEXT_BOUNDARY + text + TEXT_BOUNDARY
    counts = np.zeros(TEXT_BUCKETS, dtype=np.float64)
    ids = [_bucket(padded[i : i + 3]) for i in range(len(padded) - 2)]
    np.add.at(counts, ids, 1.0)
    return counts / np.linalg.norm(counts)


def text_aux_raw(text: str) -> np.ndarray:
    return np.array([float(len(text)), float(len(text.split()))])


def _downsample_matrix(size: int) -> np.ndarray:
    """(IMAGE_GRID x size) row matrix averaging pixel intervals into grid cells."""
    M = np.zeros((IMAGE_GRID, size), dtype=np.float64)
    cell = size / IMAGE_GRID
    for i in range(IMAGE_GRID):
        lo, hi = i * cell, (i + 1) * cell
        for p in range(int(lo), min(size, int(np.ceil(hi)))):
            overlap = min(p + 1.0, hi) - max(float(p), lo)
            if overlap > 0:
                M[i, p] = overlap / cell
    return M


def image_main_features(pixels: np.ndarray) -> np.ndarray:
    """16x16 aspect-preserving downsample in [0,1] plus global statistics.

    The image is padded to a square with centered edge replication before
    area averaging, so non-square inputs keep their aspect ratio. The four
    trailing statistics are mean, population std, and mean squared horizontal
    and vertical neighbor differences of the [0,1]-scaled original.
    """
    if pixels.ndim != 2 or pixels.size == 0:
        raise EmptyImageError("image must be a nonempty 2-D array")
    h, w = pixels.shape
    img = pixels.astype(np.float64) / 255.0

    side = max(h, w)
    pad_r, pad_c = side - h, side - w
    padded = np.pad(
        img,
        ((pad_r // 2, pad_r - pad_r // 2), (pad_c // 2, pad_c - pad_c // 2)),
        mode="edge",
    )
    R = _downsample_matrix(side)
    down = R @ padded @ R.T

    row_energy = float(np.mean((img[:, 1:] - img[:, :-1]) ** 2)) if w > 1 else 0.0
    col_energy = float(np.mean((img[1:, :] - img[:-1, :]) ** 2)) if h > 1 else 0.0
    stats = np.array([float(img.mean()), float(img.std()), row_energy, col_energy])
    return np.concatenate([down.ravel(), stats])


def image_aux_raw(pixels: np.ndarray) -> np.ndarray:
    h, w = pixels.shape
    return np.array([float(w), float(h)])


def _sample_aux_raw(sample: Sample) -> np.ndarray:
    if sample.modality == "text":
        if not sample.text:
            raise EmptyTextError(f"sample {sample.id} has empty text")
        return text_aux_raw(sample.text)
    return image_aux_raw(sample.pixels)


@dataclass
class AuxScaler:
    """Per-feature mean/std of the raw auxiliary features (population stats)."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.std


def fit_aux_scaler(samples: list[Sample]) -> AuxScaler:
    """Fit the auxiliary z-score scaler on labeled training samples only."""
    if len(samples) < 2:
        raise TooFewSamplesError("aux scaler needs at least 2 training samples")
    raw = np.stack([_sample_aux_raw(s) for s in samples])
    mean = raw.mean(axis=0)
    std = np.maximum(raw.std(axis=0), AUX_STD_FLOOR)
    return AuxScaler(mean=mean, std=std)


def featurize_text(sample: Sample, scaler: AuxScaler) -> FeatureVector:
    main = text_main_features(sample.text)
    aux = scaler.apply(text_aux_raw(sample.text))
    return FeatureVector(values=np.concatenate([main, aux]), aux_count=len(aux))


def featurize_image(sample: Sample, scaler: AuxScaler) -> FeatureVector:
    if sample.pixels.size == 0:
        raise EmptyImageError(f"sample {sample.id} has an empty image")
    main = image_main_features(sample.pixels)
    aux = scaler.apply(image_aux_raw(sample.pixels))
    return FeatureVector(values=np.concatenate([main, aux]), aux_count=len(aux))


def augment_text(sample: Sample, cfg: AugmentConfig, rng: RngState) -> Sample:
    """Random prefix/suffix crop plus one junk-string insertion; never empties the text."""
    text = sample.text
    if rng.random() < cfg.crop_prob:
        max_cut = int(cfg.max_crop_frac * len(text))
        pre = rng.randint(0, max_cut)
        suf = rng.randint(0, max_cut)
        suf = min(suf, len(text) - pre - 1)  # keep at least one character
        text = text[pre : len(text) - suf]
    if rng.random() < cfg.junk_prob:
        n = rng.randint(cfg.junk_len_min, cfg.junk_len_max)
        junk = "".join(
            cfg.junk_alphabet[rng.randrange(len(cfg.junk_alphabet))] for _ in range(n)
        )
        pos = rng.randint(0, len(text))
        text = text[:pos] + junk + text[pos:]
    return Sample(id=sample.id, modality="text", text=text, label=sample.label)


def augment_image(sample: Sample, cfg: AugmentConfig, rng: RngState) -> Sample:
    """Horizontal flip, Gaussian noise, intensity quantization (lossy-compression
    surrogate), and brightness/contrast shift, each applied with its own
    probability. Dimensions never change."""
    px = sample.pixels.astype(np.float64)
    h, w = px.shape
    if rng.random() < cfg.hflip_prob:
        px = px[:, ::-1]
    if rng.random() < cfg.noise_prob:
        sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max)
        px = px + sigma * rng.normal_array(h * w).reshape(h, w)
        px = np.clip(px, 0.0, 255.0)
    if rng.random() < cfg.quant_prob:
        levels = cfg.quant_levels[rng.randrange(len(cfg.quant_levels))]
        step = 255.0 / (levels - 1)
        px = np.round(px / step) * step
    if rng.random() < cfg.bc_prob:
        shift = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)
        scale = rng.uniform(cfg.contrast_min, cfg.contrast_max)
        px = (px - 128.0) * scale + 128.0 + shift
        px = np.clip(px, 0.0, 255.0)
    out = np.clip(np.round(px), 0, 255).astype(np.uint8)
    return Sample(id=sample.id, modality="image", pixels=out, label=sample.label)


def augment_sample(sample: Sample, cfg: AugmentConfig, rng: RngState) -> Sample:
    if sample.modality == "text":
        return augment_text(sample, cfg, rng)
    return augment_image(sample, cfg, rng)


@dataclass
class Featurizer:
    """Fitted featurization front end: fixed main features + trained aux scaler."""

    modality: str
    scaler: AuxScaler

    @classmethod
    def fit(cls, samples: list[Sample]) -> "Featurizer":
        if not samples:
            raise TooFewSamplesError("cannot fit a featurizer on an empty set")
        modalities = {s.modality for s in samples}
        if len(modalities) != 1:
            raise DimensionMismatchError("mixed modalities in one dataset")
        return cls(modality=samples[0].modality, scaler=fit_aux_scaler(samples))

    @property
    def dim(self) -> int:
        main = TEXT_MAIN_DIM if self.modality == "text" else IMAGE_MAIN_DIM
        return main + len(self.scaler.mean)

    def transform(self, sample: Sample) -> FeatureVector:
        if sample.modality != self.modality:
            raise DimensionMismatchError(
                f"featurizer is fitted for {self.modality}, got {sample.modality}"
            )
        if self.modality == "text":
            return featurize_text(sample, self.scaler)
        return featurize_image(sample, self.scaler)

    def transform_matrix(self, samples: list[Sample]) -> np.ndarray:
        return np.stack([self.transform(s).values for s in samples])
