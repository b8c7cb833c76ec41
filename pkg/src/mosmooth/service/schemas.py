"""Request and response bodies for the HTTP service."""
from __future__ import annotations

from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from ..dda import CLUTTER_TARGETS, SINGLE_COLUMN
from ..simkit import TaskConfig


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrajectoryIn(_Body):
    t_s: int = Field(ge=1)
    states: list[list[float]]
    p_bar: Optional[float] = None


class TgospaParamsIn(_Body):
    p: float = Field(default=1.0, ge=1.0)
    c: float = Field(default=20.0, gt=0)
    gamma: float = Field(default=2.0, gt=0)
    base: str = "L1"


class TgospaRequest(_Body):
    truths: list[TrajectoryIn]
    estimates: list[TrajectoryIn]
    params: TgospaParamsIn = TgospaParamsIn()
    T: Optional[int] = Field(default=None, ge=0)


class TgospaResponse(_Body):
    total: float
    loc: float
    miss: float
    false: float
    switch: float
    params: TgospaParamsIn
    T: int


class TaaRequest(_Body):
    A: list[list[float]]
    labels: list[int]
    clutter_target: str = Field(default=SINGLE_COLUMN, pattern="|".join(CLUTTER_TARGETS))


class TaaResponse(_Body):
    taa: Optional[float]
    s_star: list[int]


class SimulateRequest(_Body):
    task: Union[str, TaskConfig] = "desk"
    seed: int = Field(default=0, ge=0)
    count: int = Field(default=1, ge=0, le=10_000)


class SimulateResponse(_Body):
    task: str
    seed: int
    scenes: list[dict]


class TrackRequest(_Body):
    z: list[list[float]]
    times: list[int]


class TrackResponse(_Body):
    trajectories: list[TrajectoryIn]
    association: list[list[float]]
