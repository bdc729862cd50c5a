"""FastAPI service wrapping the core package.

A session holds one loaded model/store pair in memory for classification and
retraining-free class addition. Store mutations take an exclusive lock;
classification runs lock-free against the current snapshot.
"""
from __future__ import annotations

import os
import threading

from fastapi import FastAPI, HTTPException

from .. import __version__, dataio, datagen, pipeline
from .. import store as hstore
from ..errors import (
    DataError,
    DuplicateLabelError,
    FormatError,
    GenprintError,
    NumericError,
)
from ..pipeline import DatasetSplit, TrainedModel
from . import schemas


class Session:
    def __init__(self):
        self.model: TrainedModel | None = None
        self.store: hstore.HashStore | None = None
        self.lock = threading.Lock()

    def require(self) -> tuple[TrainedModel, hstore.HashStore]:
        if self.model is None or self.store is None:
            raise HTTPException(status_code=409, detail="no model/store loaded")
        return self.model, self.store


def _store_info(store: hstore.HashStore) -> schemas.StoreInfo:
    per_label = {
        name: int((store.label_ids == i).sum()) for i, name in enumerate(store.labels)
    }
    return schemas.StoreInfo(
        dim=store.dim,
        labels=store.labels,
        entries=store.entry_count,
        entries_per_label=per_label,
        size_bits=hstore.size_bits(store),
    )


def _http_error(exc: GenprintError) -> HTTPException:
    if isinstance(exc, DuplicateLabelError):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, (DataError, FormatError)):
        return HTTPException(status_code=422, detail=str(exc))
    if isinstance(exc, NumericError):
        return HTTPException(status_code=500, detail=str(exc))
    return HTTPException(status_code=400, detail=str(exc))


def create_app() -> FastAPI:
    app = FastAPI(title="genprint", version=__version__)
    session = Session()
    app.state.session = session

    @app.exception_handler(GenprintError)
    async def _domain_error(_, exc: GenprintError):
        raise _http_error(exc)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/datasets/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        split = datagen.generate_split(req.spec)
        os.makedirs(req.out_dir, exist_ok=True)
        paths = {
            name: os.path.join(req.out_dir, f"{name}.jsonl")
            for name in ("train", "test1", "test2", "pool")
        }
        dataio.write_samples(paths["train"], split.train_labeled)
        dataio.write_samples(paths["test1"], split.test_clean)
        dataio.write_samples(paths["test2"], split.test_augmented)
        dataio.write_samples(paths["pool"], split.unlabeled_pool, include_labels=False)
        counts = {
            "train": len(split.train_labeled),
            "test1": len(split.test_clean),
            "test2": len(split.test_augmented),
            "pool": len(split.unlabeled_pool),
        }
        return schemas.GenerateResponse(counts=counts, paths=paths)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        data = DatasetSplit(
            train_labeled=dataio.read_samples(req.train_path),
            test_clean=[],
            test_augmented=[],
            unlabeled_pool=dataio.read_samples(req.pool_path) if req.pool_path else [],
        )
        model, store, log = pipeline.run_training_stage(data, req.config)
        dataio.save_model(req.model_out, model)
        hstore.save(store, req.store_out)
        with session.lock:
            session.model, session.store = model, store
        return schemas.TrainResponse(
            model=req.model_out,
            store=req.store_out,
            labels=store.labels,
            entries=store.entry_count,
            size_bits=hstore.size_bits(store),
            epochs=[schemas.EpochRow(**row) for row in log],
        )

    @app.post("/session/load", response_model=schemas.StoreInfo)
    def load_session(req: schemas.LoadSessionRequest):
        try:
            model = dataio.load_model(req.model_path)
            store = hstore.load(req.store_path)
        except OSError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        with session.lock:
            session.model, session.store = model, store
        return _store_info(store)

    @app.get("/session", response_model=schemas.StoreInfo)
    def session_info():
        _, store = session.require()
        return _store_info(store)

    @app.post("/session/classify", response_model=schemas.ClassifyResponse)
    def classify(req: schemas.ClassifyRequest):
        model, store = session.require()
        samples = [record.to_sample() for record in req.samples]
        preds = pipeline.run_inference_stage(model, store, samples)
        return schemas.ClassifyResponse(
            predictions=[
                schemas.PredictionRow(id=p.sample_id, label=p.label, confidence=p.confidence)
                for p in preds
            ]
        )

    @app.post("/session/adapt", response_model=schemas.StoreInfo)
    def adapt(req: schemas.AdaptRequest):
        model, store = session.require()
        samples = [record.to_sample() for record in req.samples]
        with session.lock:
            store = pipeline.run_adaptation_stage(model, store, req.class_name, samples)
            session.store = store
            if req.persist_path:
                hstore.save(store, req.persist_path)
        return _store_info(store)

    @app.post("/session/prune", response_model=schemas.PruneResponse)
    def prune(req: schemas.PruneRequest):
        _, store = session.require()
        with session.lock:
            before = store.entry_count
            store = hstore.prune(store, req.retention)
            session.store = store
            if req.persist_path:
                hstore.save(store, req.persist_path)
        return schemas.PruneResponse(
            entries_before=before,
            entries_after=store.entry_count,
            size_bits=hstore.size_bits(store),
        )

    @app.post("/evaluate", response_model=schemas.MetricsResponse)
    def evaluate(req: schemas.EvaluateRequest):
        preds = {row.id: row.label for row in req.predictions}
        truths = {row.id: row.label for row in req.truths}
        if set(preds) != set(truths):
            raise HTTPException(status_code=422, detail="id sets differ")
        ids = sorted(preds)
        metrics = pipeline.evaluate(
            [preds[i] for i in ids], [truths[i] for i in ids], req.human_label
        )
        return schemas.MetricsResponse(**metrics.as_dict())

    @app.post("/experiment")
    def experiment(req: schemas.ExperimentRequest):
        data = DatasetSplit(
            train_labeled=dataio.read_samples(req.train_path),
            test_clean=dataio.read_samples(req.test1_path),
            test_augmented=dataio.read_samples(req.test2_path) if req.test2_path else [],
            unlabeled_pool=dataio.read_samples(req.pool_path) if req.pool_path else [],
        )
        report = pipeline.leave_k_out_experiment(
            data, req.config, req.exclude, adaptation_exemplars=req.exemplars
        )
        return report.as_dict()

    return app
