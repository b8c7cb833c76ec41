"""HTTP front end over the core package. Stateless except for the optional
checkpoints used by ``/track``."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__, nnkit
from ..dda import CapacityError, dda_forward, match_tracks_to_objects
from ..metrics import TgospaParams, taa, tgospa
from ..partitioner import partition
from ..pipeline.config import PRESETS
from ..pipeline.train import CheckpointError, load_model
from ..simkit import TASKS, get_task, scene_to_dict, simulate_scenes
from ..smoother import ExtractedTrajectory, ds_forward, extract_trajectories
from .schemas import (
    SimulateRequest,
    SimulateResponse,
    TaaRequest,
    TaaResponse,
    TgospaRequest,
    TgospaResponse,
    TrackRequest,
    TrackResponse,
    TrajectoryIn,
)


def run_tgospa(req: TgospaRequest) -> TgospaResponse:
    params = TgospaParams(**req.params.model_dump())
    X = [ExtractedTrajectory(t.t_s, np.asarray(t.states, dtype=float).reshape(-1, 4)) for t in req.truths]
    Y = [ExtractedTrajectory(t.t_s, np.asarray(t.states, dtype=float).reshape(-1, 4)) for t in req.estimates]
    T = req.T if req.T is not None else max([tr.t_end for tr in X + Y], default=0)
    res = tgospa(X, Y, params, T=T)
    return TgospaResponse(**res.to_dict(), params=req.params, T=T)


def run_taa(req: TaaRequest) -> TaaResponse:
    A = np.asarray(req.A, dtype=float)
    match = match_tracks_to_objects(A, req.labels, req.clutter_target)
    return TaaResponse(taa=taa(A, req.labels, match), s_star=[int(s) for s in match.s_star])


def run_simulate(req: SimulateRequest) -> SimulateResponse:
    task_id = req.task if isinstance(req.task, str) else "custom"
    cfg = get_task(req.task) if isinstance(req.task, str) else req.task
    scenes = [scene_to_dict(s) for s in simulate_scenes(cfg, req.seed, req.count, task_id)]
    return SimulateResponse(task=task_id, seed=req.seed, scenes=scenes)


def create_app(checkpoints: Optional[Path] = None) -> FastAPI:
    """``checkpoints`` is a directory holding ``dda/`` and ``ds/`` as written by training."""
    app = FastAPI(title="mosmooth", version=__version__)
    models = {}
    if checkpoints is not None:
        models["dda"] = load_model(Path(checkpoints) / "dda")
        models["ds"] = load_model(Path(checkpoints) / "ds")
        if models["dda"].cfg.T != models["ds"].cfg.T:
            raise CheckpointError("associator and smoother use different windows")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__, "tracking": bool(models)}

    @app.get("/presets")
    def presets() -> dict:
        return {"tasks": sorted(TASKS), "runs": sorted(PRESETS)}

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest) -> SimulateResponse:
        try:
            return run_simulate(req)
        except KeyError as err:
            raise HTTPException(404, str(err)) from None

    @app.post("/tgospa", response_model=TgospaResponse)
    def score(req: TgospaRequest) -> TgospaResponse:
        try:
            return run_tgospa(req)
        except ValueError as err:
            raise HTTPException(422, str(err)) from None

    @app.post("/taa", response_model=TaaResponse)
    def accuracy(req: TaaRequest) -> TaaResponse:
        try:
            return run_taa(req)
        except (nnkit.ShapeError, CapacityError) as err:
            raise HTTPException(422, str(err)) from None

    @app.post("/track", response_model=TrackResponse)
    def track(req: TrackRequest) -> TrackResponse:
        if not models:
            raise HTTPException(503, "service started without checkpoints")
        if not req.z:
            return TrackResponse(trajectories=[], association=[])
        dda, ds = models["dda"], models["ds"]
        try:
            A = dda_forward(req.z, req.times, dda).detach().numpy()
        except (nnkit.PositionError, ValueError) as err:
            raise HTTPException(422, str(err)) from None
        tracks = partition(A, req.z, req.times, dda.cfg.T)
        out = extract_trajectories(ds_forward(tracks, ds)) if tracks else []
        return TrackResponse(
            trajectories=[TrajectoryIn(**tr.to_dict()) for tr in out],
            association=A.tolist(),
        )

    return app
