# tests/test_run_store.py
from types import SimpleNamespace

import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from app.align.checkpoint import Admission
from app.align.errors import DivergenceError
from app.align.kg import split_seeds
from app.align.run_store import RunRecorder, get_run, list_runs, run_key
from app.align.trainer import ObserverChain, TrainingObserver, evaluate_checkpoint, train
from app.database import init_db
from conftest import desk_config


@pytest.fixture
def session_factory():
    engine = create_engine("sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool)
    init_db(engine)
    yield sessionmaker(bind=engine, autoflush=False, future=True)
    engine.dispose()


class _AdmissionLog(TrainingObserver):
    def __init__(self):
        self.admissions = []

    def on_admissions(self, admissions, sim):
        self.admissions.extend(admissions)


def _train(pair, recorder, **overrides):
    cfg = desk_config(**overrides)
    split = split_seeds(pair.seeds, (0.3, 0.1, 0.6), cfg.rng_seed)
    return train(pair.kg1, pair.kg2, split, cfg, pair.features1, pair.features2, observer=recorder)


class TestRunRecorder:
    def test_finished_run(self, small_pair, session_factory):
        recorder = RunRecorder(session_factory)
        log = _AdmissionLog()
        ckpt = _train(small_pair, ObserverChain(recorder, log))
        report = evaluate_checkpoint(ckpt)
        recorder.complete(report, "out/checkpoint.json")

        db = session_factory()
        try:
            run = get_run(db, recorder.run_id)
        finally:
            db.close()
        assert run["status"] == "finished"
        assert run["run_key"] == run_key(ckpt.config_digest, 0, 0)
        assert run["best_epoch"] == ckpt.best_epoch
        assert run["best_val_hit1"] == ckpt.best_val_hit1
        assert run["test_metrics"] == report
        assert run["checkpoint_path"] == "out/checkpoint.json"
        assert [m["epoch"] for m in run["epochs"]] == [r.epoch for r in ckpt.history]
        assert run["epochs"][0]["loss"] is None
        assert len(run["admissions"]) == len(log.admissions)
        selected = [(a["epoch"], a["kg1_id"], a["kg2_id"]) for a in run["admissions"] if a["selected"]]
        assert selected == [(a.epoch, a.kg1_id, a.kg2_id) for a in ckpt.admissions]
        assert run["config"]["epochs"] == ckpt.config.epochs
        assert run["finished_at"] is not None

    def test_admissions_after_the_checkpoint_epoch_stay_unselected(self, session_factory, small_pair):
        recorder = RunRecorder(session_factory)
        split = split_seeds(small_pair.seeds, (0.3, 0.1, 0.6), 0)
        recorder.on_start(desk_config(), split, "e" * 64)
        recorder.on_admissions([Admission(2, 1, 101, 0.97), Admission(2, 3, 103, 0.96)], None)
        recorder.on_admissions([Admission(4, 5, 105, 0.99)], None)
        recorder.on_finish(SimpleNamespace(epoch=2, best_epoch=2, best_val_hit1=0.5))
        run_id = recorder.run_id
        recorder.close()

        db = session_factory()
        try:
            run = get_run(db, run_id)
        finally:
            db.close()
        assert [(a["kg1_id"], a["selected"]) for a in run["admissions"]] == [(1, True), (3, True), (5, False)]
        assert run["best_epoch"] == 2

    def test_failure_marks_diverged(self, session_factory, small_pair):
        recorder = RunRecorder(session_factory)
        cfg = desk_config()
        split = split_seeds(small_pair.seeds, (0.3, 0.1, 0.6), 0)
        recorder.on_start(cfg, split, "d" * 64)
        run_id = recorder.run_id
        recorder.on_failure(DivergenceError(3, last_finite_epoch=2, last_finite_loss=0.5))

        db = session_factory()
        try:
            run = get_run(db, run_id)
        finally:
            db.close()
        assert run["status"] == "diverged"
        assert "epoch 3" in run["error"]

    def test_failure_before_start_is_ignored(self, session_factory):
        RunRecorder(session_factory).on_failure(RuntimeError("boom"))


class TestReads:
    def test_list_newest_first_with_limit(self, small_pair, session_factory):
        for seed in (1, 2, 3):
            recorder = RunRecorder(session_factory)
            _train(small_pair, recorder, epochs=1, rng_seed=seed)
            recorder.close()
        db = session_factory()
        try:
            rows = list_runs(db, limit=2)
            missing = get_run(db, 999)
        finally:
            db.close()
        assert [r["rng_seed"] for r in rows] == [3, 2]
        assert all(r["status"] == "running" for r in rows)
        assert missing is None
