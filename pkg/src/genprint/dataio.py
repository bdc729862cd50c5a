"""File formats: JSON Lines datasets and predictions, the JSON config file,
and the binary model checkpoint wrapper.
"""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import embedder as emb
from .datagen import SyntheticSpec
from .errors import DataError
from .featurizer import Sample
from .pipeline import PipelineConfig, Prediction, TrainedModel
from .store import atomic_write


class ImageRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = Field(gt=0)
    height: int = Field(gt=0)
    pixels: list[int]


class SampleRecord(BaseModel):
    """One dataset line: exactly one of text/image, matching the modality."""

    model_config = ConfigDict(extra="forbid")

    id: str
    modality: str
    text: str | None = None
    image: ImageRecord | None = None
    label: str | None = None

    def to_sample(self) -> Sample:
        if self.modality == "text":
            if self.text is None or self.image is not None:
                raise DataError(f"record {self.id!r}: text modality needs a text field")
            return Sample(id=self.id, modality="text", text=self.text, label=self.label)
        if self.modality == "image":
            if self.image is None or self.text is not None:
                raise DataError(f"record {self.id!r}: image modality needs an image field")
            img = self.image
            if len(img.pixels) != img.width * img.height:
                raise DataError(f"record {self.id!r}: pixel count != width*height")
            if any(p < 0 or p > 255 for p in img.pixels):
                raise DataError(f"record {self.id!r}: pixel out of 8-bit range")
            px = np.asarray(img.pixels, dtype=np.uint8).reshape(img.height, img.width)
            return Sample(id=self.id, modality="image", pixels=px, label=self.label)
        raise DataError(f"record {self.id!r}: unknown modality {self.modality!r}")

    @classmethod
    def from_sample(cls, s: Sample, include_label: bool = True) -> "SampleRecord":
        image = None
        if s.modality == "image":
            h, w = s.pixels.shape
            image = ImageRecord(width=w, height=h, pixels=s.pixels.ravel().tolist())
        return cls(
            id=s.id,
            modality=s.modality,
            text=s.text,
            image=image,
            label=s.label if include_label else None,
        )


def read_samples(path: str) -> list[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = SampleRecord.model_validate_json(line)
                samples.append(record.to_sample())
            except (ValidationError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad sample record: {exc}") from exc
    return samples


def write_samples(path: str, samples: list[Sample], include_labels: bool = True) -> None:
    lines = []
    for s in samples:
        record = SampleRecord.from_sample(s, include_label=include_labels)
        lines.append(record.model_dump_json(exclude_none=True))
    atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))


def write_predictions(path: str, preds: list[Prediction]) -> None:
    lines = [
        json.dumps({"id": p.sample_id, "label": p.label, "confidence": p.confidence})
        for p in preds
    ]
    atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))


def read_labeled_ids(path: str) -> dict[str, str]:
    """id -> label map from any JSONL whose records carry id and label."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                sample_id, label = record["id"], record["label"]
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: need id and label fields") from exc
            if sample_id in out:
                raise DataError(f"{path}:{lineno}: duplicate id {sample_id!r}")
            out[sample_id] = label
    return out


class ConfigFile(BaseModel):
    """Top-level JSON config; unknown keys are rejected everywhere."""

    model_config = ConfigDict(extra="forbid")

    synthetic: SyntheticSpec | None = None
    pipeline: PipelineConfig | None = None


def load_config(path: str) -> ConfigFile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    try:
        return ConfigFile.model_validate(payload)
    except ValidationError as exc:
        raise DataError(f"config {path} failed schema validation: {exc}") from exc


def save_model(path: str, model: TrainedModel) -> None:
    atomic_write(
        path,
        emb.serialize_params(
            model.params, model.featurizer.modality, model.featurizer.scaler
        ),
    )


def load_model(path: str) -> TrainedModel:
    with open(path, "rb") as fh:
        params, modality, scaler = emb.deserialize_params(fh.read())
    from .featurizer import Featurizer

    return TrainedModel(
        params=params, featurizer=Featurizer(modality=modality, scaler=scaler)
    )


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
