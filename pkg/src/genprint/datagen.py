"""Synthetic multi-class datasets with tunable generator fingerprints.

Text classes are Markov chains over a 64-symbol alphabet whose transition
matrices blend a shared base process with a class-specific perturbation;
image classes are smoothed noise fields carrying a class-specific periodic
artifact. The "human" class is the unperturbed base process in both cases.
The separation knob scales how far each AI class drifts from the base, so
class overlap is controllable from chance level (0.0) to easily separable.
"""
from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .featurizer import AugmentConfig, Sample, augment_sample
from .numeric import RngState, derive_seed
from .pipeline import DatasetSplit

TEXT_ALPHABET = (
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ."
)
TEXT_LEN_MIN = 80
TEXT_LEN_MAX = 400
IMAGE_SIDE = 32
IMAGE_BASE_GRID = 8
IMAGE_BASE_LEVEL = 128.0
IMAGE_BASE_SCALE = 26.0
IMAGE_ARTIFACT_MAX = 40.0

# Blend fraction applied at separation 1.0. Calibrated once so that at the
# reference separation of 0.5 a plain-softmax training run lands in the
# low-to-mid 0.9s on the clean test split, then frozen.
TEXT_BLEND_SCALE = 0.12

HUMAN_LABEL = "human"

_TAG_PROFILE, _TAG_TRAIN, _TAG_TEST1, _TAG_TEST2, _TAG_POOL, _TAG_AUG = range(6)


class SyntheticSpec(BaseModel):
    """Shape of one synthetic dataset; a pure function of its fields."""

    model_config = ConfigDict(extra="forbid")

    modality: Literal["text", "image"] = "text"
    num_ai_classes: int | None = Field(default=None, ge=1)
    per_class_train: int = Field(default=500, ge=1)
    per_class_test: int = Field(default=100, ge=1)
    pool_size: int = Field(default=1000, ge=0)
    separation: float = Field(default=0.5, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)
    augment_pool: bool = False

    @model_validator(mode="after")
    def _default_class_count(self):
        if self.num_ai_classes is None:
            object.__setattr__(
                self, "num_ai_classes", 6 if self.modality == "text" else 5
            )
        return self


def reference_spec() -> SyntheticSpec:
    """The frozen text dataset used by the acceptance suite."""
    return SyntheticSpec(
        modality="text",
        num_ai_classes=6,
        per_class_train=500,
        per_class_test=100,
        pool_size=1000,
        separation=0.5,
        seed=42,
    )


class GeneratorProfile:
    """Sampling recipe for one content class."""

    def __init__(self, name: str, modality: str):
        self.name = name
        self.modality = modality
        self.transition: np.ndarray | None = None  # text: row-stochastic (64, 64)
        self.cumulative: np.ndarray | None = None
        self.artifact: tuple[int, int, float, float] | None = None  # image


def _random_stochastic(rng: RngState, n: int) -> np.ndarray:
    """Row-stochastic matrix with exponential (Dirichlet-1) rows."""
    raw = -np.log(
        1.0 - (rng.u64_array(n * n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    ).reshape(n, n)
    return raw / raw.sum(axis=1, keepdims=True)


def build_profiles(spec: SyntheticSpec) -> list[GeneratorProfile]:
    """Human profile (base process) followed by the AI class profiles."""
    n_sym = len(TEXT_ALPHABET)
    names = [HUMAN_LABEL] + [f"gen{i}" for i in range(spec.num_ai_classes)]
    profiles = []
    if spec.modality == "text":
        base = _random_stochastic(RngState(derive_seed(spec.seed, _TAG_PROFILE, 0)), n_sym)
        blend = TEXT_BLEND_SCALE * spec.separation
        for c, name in enumerate(names):
            profile = GeneratorProfile(name, "text")
            if c == 0:
                matrix = base
            else:
                pert = _random_stochastic(
                    RngState(derive_seed(spec.seed, _TAG_PROFILE, c)), n_sym
                )
                matrix = (1.0 - blend) * base + blend * pert
            profile.transition = matrix
            profile.cumulative = np.cumsum(matrix, axis=1)
            profiles.append(profile)
    else:
        for c, name in enumerate(names):
            profile = GeneratorProfile(name, "image")
            if c == 0:
                profile.artifact = (0, 0, 0.0, 0.0)
            else:
                rng = RngState(derive_seed(spec.seed, _TAG_PROFILE, c))
                freq_y = rng.randint(1, 6)
                freq_x = rng.randint(1, 6)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                amplitude = IMAGE_ARTIFACT_MAX * spec.separation
                profile.artifact = (freq_y, freq_x, phase, amplitude)
            profiles.append(profile)
    return profiles


def _sample_text(profile: GeneratorProfile, rng: RngState) -> str:
    length = rng.randint(TEXT_LEN_MIN, TEXT_LEN_MAX)
    cum = profile.cumulative
    current = rng.randrange(len(TEXT_ALPHABET))
    chars = [TEXT_ALPHABET[current]]
    for _ in range(length - 1):
        current = int(np.searchsorted(cum[current], rng.random(), side="right"))
        current = min(current, len(TEXT_ALPHABET) - 1)
        chars.append(TEXT_ALPHABET[current])
    return "".join(chars)


def _bilinear_upsample(grid: np.ndarray, side: int) -> np.ndarray:
    src = (np.arange(side) + 0.5) * (grid.shape[0] / side) - 0.5
    src = np.clip(src, 0.0, grid.shape[0] - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, grid.shape[0] - 1)
    frac = src - lo
    rows = grid[lo][:, lo] * np.outer(1 - frac, 1 - frac)
    rows += grid[lo][:, hi] * np.outer(1 - frac, frac)
    rows += grid[hi][:, lo] * np.outer(frac, 1 - frac)
    rows += grid[hi][:, hi] * np.outer(frac, frac)
    return rows


def _sample_image(profile: GeneratorProfile, rng: RngState) -> np.ndarray:
    grid = rng.normal_array(IMAGE_BASE_GRID * IMAGE_BASE_GRID).reshape(
        IMAGE_BASE_GRID, IMAGE_BASE_GRID
    )
    field = _bilinear_upsample(grid, IMAGE_SIDE)
    freq_y, freq_x, phase, amplitude = profile.artifact
    if amplitude > 0.0:
        yy, xx = np.meshgrid(
            np.arange(IMAGE_SIDE), np.arange(IMAGE_SIDE), indexing="ij"
        )
        wave = np.sin(2.0 * np.pi * (freq_y * yy + freq_x * xx) / IMAGE_SIDE + phase)
    else:
        wave = 0.0
    px = IMAGE_BASE_LEVEL + IMAGE_BASE_SCALE * field + amplitude * wave
    return np.clip(np.round(px), 0, 255).astype(np.uint8)


def _draw(profile: GeneratorProfile, rng: RngState, sample_id: str, label: str | None) -> Sample:
    if profile.modality == "text":
        return Sample(id=sample_id, modality="text", text=_sample_text(profile, rng), label=label)
    return Sample(id=sample_id, modality="image", pixels=_sample_image(profile, rng), label=label)


def generate_split(spec: SyntheticSpec) -> DatasetSplit:
    """Deterministic train/test/pool split; identical spec gives identical bytes.

    Pool samples carry no labels; the true pool labels are retained in a
    side table for oracle evaluation only and never reach serialized records.
    """
    profiles = build_profiles(spec)
    aug_cfg = AugmentConfig()

    train, test1, test2 = [], [], []
    for c, profile in enumerate(profiles):
        rng = RngState(derive_seed(spec.seed, _TAG_TRAIN, c))
        for i in range(spec.per_class_train):
            train.append(_draw(profile, rng, f"train-{profile.name}-{i:04d}", profile.name))
        rng = RngState(derive_seed(spec.seed, _TAG_TEST1, c))
        for i in range(spec.per_class_test):
            test1.append(_draw(profile, rng, f"test1-{profile.name}-{i:04d}", profile.name))
        rng = RngState(derive_seed(spec.seed, _TAG_TEST2, c))
        aug_rng = RngState(derive_seed(spec.seed, _TAG_AUG, c))
        for i in range(spec.per_class_test):
            clean = _draw(profile, rng, f"test2-{profile.name}-{i:04d}", profile.name)
            test2.append(augment_sample(clean, aug_cfg, aug_rng))

    pool, hidden = [], {}
    rng = RngState(derive_seed(spec.seed, _TAG_POOL, 0))
    aug_rng = RngState(derive_seed(spec.seed, _TAG_POOL, 1))
    for i in range(spec.pool_size):
        c = rng.randrange(len(profiles))
        sample = _draw(profiles[c], rng, f"pool-{i:05d}", None)
        if spec.augment_pool:
            sample = augment_sample(sample, aug_cfg, aug_rng)
        pool.append(sample)
        hidden[sample.id] = profiles[c].name

    return DatasetSplit(
        train_labeled=train,
        test_clean=test1,
        test_augmented=test2,
        unlabeled_pool=pool,
        pool_hidden_labels=hidden,
    )
