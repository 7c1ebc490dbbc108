"""HTTP surface around the shared command handlers.

Error mapping: tab/schema validation problems return 422, infeasible
inputs (unplayable fingerings) return 409, and failed verification
checks return 412; every error body carries ``kind`` and ``message``.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import api
from .oracle import FingeringError, PlacementError
from .tab import TabError

ERROR_STATUS = {"validation": 422, "infeasible": 409, "check-failure": 412}


class TabRequest(BaseModel):
    tab: dict


class AugmentRequest(BaseModel):
    tab: dict
    shift: int | None = None
    shift_range: int = 0
    tempo_jitter: float = 0.0
    seed: int | None = None


class QuantizeRequest(BaseModel):
    bpm: float
    shortest_note_beats: str = "1/4"


class ScoreRequest(BaseModel):
    tab: dict
    trajectory_jsonl: str
    rewards: bool = False


class SyncCheckRequest(BaseModel):
    seed: int = 0
    pairs: int = Field(default=32, ge=1, le=4096)


class TrainToyRequest(BaseModel):
    iters: int = Field(default=20, ge=1, le=1000)
    seed: int = 7
    workers: int = Field(default=4, ge=1, le=64)
    mode: str = "left"
    probe_every: int = 0


def create_app() -> FastAPI:
    app = FastAPI(title="fretsync", version="0.1.0")

    @app.exception_handler(TabError)
    async def _validation(request: Request, exc: TabError):
        return JSONResponse(
            status_code=ERROR_STATUS["validation"],
            content={"kind": "validation", "message": str(exc)},
        )

    @app.exception_handler(FingeringError)
    @app.exception_handler(PlacementError)
    async def _infeasible(request: Request, exc: Exception):
        return JSONResponse(
            status_code=ERROR_STATUS["infeasible"],
            content={"kind": "infeasible", "message": str(exc)},
        )

    @app.exception_handler(api.CheckFailure)
    async def _check_failure(request: Request, exc: api.CheckFailure):
        return JSONResponse(
            status_code=ERROR_STATUS["check-failure"],
            content={"kind": "check-failure", "message": str(exc),
                     "detail": exc.detail},
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "artifact_versions": api.ARTIFACT_VERSIONS}

    @app.post("/tab/validate")
    def tab_validate(req: TabRequest):
        return api.handle_tab_validate(json.dumps(req.tab))

    @app.post("/tab/augment")
    def tab_augment(req: AugmentRequest):
        return api.handle_tab_augment(
            json.dumps(req.tab), shift=req.shift, shift_range=req.shift_range,
            tempo_jitter=req.tempo_jitter, seed=req.seed,
        )

    @app.post("/tab/quantize")
    def tab_quantize(req: QuantizeRequest):
        return api.handle_tab_quantize(req.bpm, req.shortest_note_beats)

    @app.post("/play")
    def play_tab(req: TabRequest):
        report, result = api.handle_play(json.dumps(req.tab))
        return {
            "report": report,
            "trajectory_jsonl": result.trajectory_jsonl(),
            "warnings": result.warnings,
        }

    @app.post("/score")
    def score_trajectory(req: ScoreRequest):
        return api.handle_score(
            json.dumps(req.tab), req.trajectory_jsonl, rewards=req.rewards)

    @app.post("/net/check-sync-init")
    def check_sync_init(req: SyncCheckRequest):
        return api.handle_check_sync_init(seed=req.seed, pairs=req.pairs)

    @app.post("/net/train-toy")
    def train_toy(req: TrainToyRequest):
        return api.handle_train_toy(
            iters=req.iters, seed=req.seed, workers=req.workers,
            mode=req.mode, probe_every=req.probe_every,
        )

    return app


app = create_app()
