"""Request/response models for the HTTP service."""
from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..datagen import SyntheticSpec
from ..dataio import SampleRecord
from ..pipeline import PipelineConfig


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    spec: SyntheticSpec
    out_dir: str


class GenerateResponse(BaseModel):
    counts: dict[str, int]
    paths: dict[str, str]


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: PipelineConfig = PipelineConfig()
    train_path: str
    pool_path: str | None = None
    model_out: str
    store_out: str


class EpochRow(BaseModel):
    epoch: int
    mean_loss: float
    train_accuracy: float
    pseudo_count: int


class TrainResponse(BaseModel):
    model: str
    store: str
    labels: list[str]
    entries: int
    size_bits: int
    epochs: list[EpochRow]


class LoadSessionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model_path: str
    store_path: str


class StoreInfo(BaseModel):
    dim: int
    labels: list[str]
    entries: int
    entries_per_label: dict[str, int]
    size_bits: int


class ClassifyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: list[SampleRecord] = Field(min_length=1)


class PredictionRow(BaseModel):
    id: str
    label: str
    confidence: float


class ClassifyResponse(BaseModel):
    predictions: list[PredictionRow]


class AdaptRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    class_name: str
    samples: list[SampleRecord] = Field(min_length=1)
    persist_path: str | None = None


class PruneRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    retention: float = Field(gt=0.0, le=1.0)
    persist_path: str | None = None


class PruneResponse(BaseModel):
    entries_before: int
    entries_after: int
    size_bits: int


class LabeledRow(BaseModel):
    id: str
    label: str


class EvaluateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    predictions: list[LabeledRow]
    truths: list[LabeledRow]
    human_label: str = "human"


class MetricsResponse(BaseModel):
    task_a_accuracy: float
    task_a_f1: float
    task_b_accuracy: float
    task_b_macro_f1: float
    per_class_recall: dict[str, float]


class ExperimentRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: PipelineConfig = PipelineConfig()
    train_path: str
    test1_path: str
    test2_path: str | None = None
    pool_path: str | None = None
    exclude: list[str] = []
    exemplars: int = Field(default=50, ge=1)
