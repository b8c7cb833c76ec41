"""Run configuration: task, model sizes, training schedule, evaluation."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..dda import CLUTTER_TARGETS, SINGLE_COLUMN, DDAConfig
from ..metrics import TgospaParams
from ..simkit import TaskConfig, get_task
from ..smoother import DSConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    d: int = Field(default=32, ge=1)
    n_h: int = Field(default=2, ge=1)
    N: int = Field(default=2, ge=1)
    ffn_hidden: int = Field(default=64, ge=1)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    B: int = Field(default=8, ge=2)
    dda_head_hidden: int = Field(default=64, ge=1)
    dda_head_layers: int = Field(default=3, ge=1)
    ds_state_hidden: int = Field(default=64, ge=1)
    ds_state_layers: int = Field(default=3, ge=1)
    ds_exist_hidden: int = Field(default=32, ge=1)
    ds_exist_layers: int = Field(default=2, ge=1)
    clutter_target: str = SINGLE_COLUMN

    @field_validator("clutter_target")
    @classmethod
    def _target(cls, v):
        if v not in CLUTTER_TARGETS:
            raise ValueError(f"clutter_target must be one of {CLUTTER_TARGETS}")
        return v


class TrainConfig(_Strict):
    dda_steps: int = Field(default=20_000, ge=0)
    ds_steps: int = Field(default=10_000, ge=0)
    dda_batch: int = Field(default=8, ge=1)
    ds_batch: int = Field(default=8, ge=1)
    lr: float = Field(default=2e-3, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    plateau_window: int = Field(default=200, ge=1)
    plateau_patience: int = Field(default=1_000, ge=1)
    log_every: int = Field(default=0, ge=0)


class EvalConfig(_Strict):
    scenes: int = Field(default=500, ge=1)
    p: float = Field(default=1.0, ge=1.0)
    c: float = Field(default=20.0, gt=0)
    gamma: float = Field(default=2.0, gt=0)

    def tgospa_params(self) -> TgospaParams:
        return TgospaParams(p=self.p, c=self.c, gamma=self.gamma)


class RunConfig(_Strict):
    task: Union[str, TaskConfig] = "desk"
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    seed: int = Field(default=0, ge=0, lt=2**64)

    @property
    def task_config(self) -> TaskConfig:
        return get_task(self.task) if isinstance(self.task, str) else self.task

    @property
    def task_id(self) -> str:
        return self.task if isinstance(self.task, str) else "custom"

    def dda_config(self) -> DDAConfig:
        m, task = self.model, self.task_config
        box = task.fov_box
        return DDAConfig(
            d=m.d, n_h=m.n_h, N=m.N, ffn_hidden=m.ffn_hidden, dropout=m.dropout, B=m.B,
            head_hidden=m.dda_head_hidden, head_layers=m.dda_head_layers, T=task.T,
            clutter_target=m.clutter_target, z_lo=tuple(box[:, 0]), z_hi=tuple(box[:, 1]),
        )

    def ds_config(self) -> DSConfig:
        m, task = self.model, self.task_config
        return DSConfig(
            d=m.d, n_h=m.n_h, N=m.N, ffn_hidden=m.ffn_hidden, dropout=m.dropout, T=task.T,
            state_hidden=m.ds_state_hidden, state_layers=m.ds_state_layers,
            exist_hidden=m.ds_exist_hidden, exist_layers=m.ds_exist_layers,
        )


PRESETS: dict[str, RunConfig] = {
    "desk": RunConfig(),
    # documentation only: far beyond a single CPU
    "paper": RunConfig(
        task="task1",
        model=ModelConfig(
            d=128, n_h=8, N=6, ffn_hidden=2048, dropout=0.1, B=20,
            dda_head_hidden=128, dda_head_layers=3, ds_state_hidden=128, ds_state_layers=3,
            ds_exist_hidden=64, ds_exist_layers=2,
        ),
        train=TrainConfig(
            dda_steps=2_000_000, ds_steps=2_000_000, dda_batch=32, ds_batch=16, lr=5e-5,
            plateau_window=2_000, plateau_patience=100_000,
        ),
        eval=EvalConfig(scenes=1_000),
    ),
}


def load_config(path: Union[str, Path, None] = None, preset: str = "desk") -> RunConfig:
    if path is None:
        return PRESETS[preset].model_copy(deep=True)
    return RunConfig.model_validate(json.loads(Path(path).read_text()))
