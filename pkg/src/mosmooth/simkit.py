"""Multi-object scene simulator: NCV motion, Poisson births and clutter, and a
range/Doppler/bearing radar with state-dependent noise."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, Iterator, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

CLUTTER = -1

# FOV edges used by the quadratic noise schedule (range, bearing).
_R_NEAR = 0.5
_R_SPAN = 14.5
_THETA_EDGE = 1.3


class BirthSchedule(str, Enum):
    every_step = "every-step"
    initial_only = "initial-only"


class TaskConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    p_d: float = Field(ge=0.0, le=1.0)
    sigma_q2: float = Field(ge=0.0)
    sigma_r_min2: float = Field(gt=0.0)
    sigma_r_max2: float = Field(default=0.04, gt=0.0)
    sigma_rdot2: float = Field(gt=0.0)
    sigma_theta_min2: float = Field(gt=0.0)
    sigma_theta_max2: float = Field(default=0.04, gt=0.0)
    lambda_c: float = Field(ge=0.0)
    birth_rate: float = Field(default=6.0, ge=0.0)
    # extra Poisson births at t=1 on top of the schedule
    initial_birth_rate: float = Field(default=0.0, ge=0.0)
    birth_mean: tuple[float, float, float, float] = (7.0, 0.0, 0.0, 0.0)
    birth_cov: tuple[tuple[float, ...], ...] = (
        (10.0, 0.0, 0.0, 0.0),
        (0.0, 30.0, 0.0, 0.0),
        (0.0, 0.0, 16.0, 0.0),
        (0.0, 0.0, 0.0, 16.0),
    )
    p_s: float = Field(default=0.98, ge=0.0, le=1.0)
    delta_t: float = Field(default=0.1, gt=0.0)
    T: int = Field(default=10, ge=1)
    fov_r: tuple[float, float] = (0.5, 15.0)
    fov_rdot: tuple[float, float] = (0.0, 8.0)
    fov_theta: tuple[float, float] = (-1.3, 1.3)
    birth_schedule: BirthSchedule = BirthSchedule.every_step

    @model_validator(mode="after")
    def _check(self) -> "TaskConfig":
        if self.sigma_r_min2 > self.sigma_r_max2:
            raise ValueError("sigma_r_min2 must not exceed sigma_r_max2")
        if self.sigma_theta_min2 > self.sigma_theta_max2:
            raise ValueError("sigma_theta_min2 must not exceed sigma_theta_max2")
        for name in ("fov_r", "fov_rdot", "fov_theta"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be a nonempty interval")
        cov = np.asarray(self.birth_cov, dtype=float)
        if cov.shape != (4, 4):
            raise ValueError("birth_cov must be 4x4")
        if np.any(np.linalg.eigvalsh((cov + cov.T) / 2) < -1e-12):
            raise ValueError("birth_cov must be positive semi-definite")
        return self

    @property
    def fov_box(self) -> np.ndarray:
        return np.array([self.fov_r, self.fov_rdot, self.fov_theta], dtype=float)

    @property
    def fov_volume(self) -> float:
        box = self.fov_box
        return float(np.prod(box[:, 1] - box[:, 0]))


def _task(p_d, sigma_q2, sigma_r_min2, sigma_rdot2, sigma_theta_min2, lambda_c):
    return TaskConfig(
        p_d=p_d,
        sigma_q2=sigma_q2,
        sigma_r_min2=sigma_r_min2,
        sigma_rdot2=sigma_rdot2,
        sigma_theta_min2=sigma_theta_min2,
        lambda_c=lambda_c,
    )


TASKS: dict[str, TaskConfig] = {
    "task1": _task(0.99, 1.0, 1e-4, 0.01, 1e-4, 1.6e-2),
    "task2": _task(0.99, 1.0, 1e-4, 0.01, 1e-4, 3.2e-2),
    "task3": _task(0.85, 1.0, 1e-4, 0.01, 1e-4, 6.6e-2),
    "task4": _task(0.99, 1.0, 1e-4, 0.01, 1e-4, 1.3e-1),
    "task5": _task(0.70, 4.0, 1e-4, 0.01, 1e-4, 6.6e-2),
    "task6": _task(0.70, 2.0, 1e-3, 1.00, 1e-3, 6.6e-2),
    "task7": _task(0.60, 3.0, 1e-2, 1.00, 1e-2, 6.6e-2),
    "task8": _task(0.70, 3.0, 1e-4, 0.01, 1e-4, 1.3e-1),
    "task9": _task(0.70, 1.0, 1e-3, 1.00, 1e-3, 1.3e-1),
    "task10": _task(0.60, 3.0, 1e-2, 1.00, 1e-2, 1.3e-1),
}

TASKS["desk"] = TASKS["task1"].model_copy(
    update=dict(
        T=5,
        p_d=0.95,
        lambda_c=5e-3,
        birth_rate=0.2,
        initial_birth_rate=1.5,
    )
)


def get_task(name: str) -> TaskConfig:
    try:
        return TASKS[name]
    except KeyError:
        raise KeyError(f"unknown task preset {name!r}; choose from {sorted(TASKS)}") from None


@dataclass
class GroundTruthTrajectory:
    object_id: int
    t_s: int
    states: np.ndarray  # (l+1, 4)

    @property
    def t_end(self) -> int:
        return self.t_s + len(self.states) - 1


@dataclass
class Measurement:
    z: np.ndarray  # (r, rdot, theta)
    t: int
    b: int = CLUTTER


@dataclass
class Scene:
    config: TaskConfig
    truths: list[GroundTruthTrajectory] = field(default_factory=list)
    measurements: list[Measurement] = field(default_factory=list)
    config_id: str = "custom"

    @property
    def z(self) -> np.ndarray:
        if not self.measurements:
            return np.zeros((0, 3))
        return np.stack([m.z for m in self.measurements])

    @property
    def times(self) -> np.ndarray:
        return np.array([m.t for m in self.measurements], dtype=int)

    @property
    def labels(self) -> np.ndarray:
        return np.array([m.b for m in self.measurements], dtype=int)


def transition_matrices(delta_t: float) -> tuple[np.ndarray, np.ndarray]:
    """NCV transition F and unit-magnitude process covariance Q."""
    eye = np.eye(2)
    F = np.block([[eye, delta_t * eye], [np.zeros((2, 2)), eye]])
    Q = np.block(
        [
            [eye * delta_t**3 / 3, eye * delta_t**2 / 2],
            [eye * delta_t**2 / 2, eye * delta_t],
        ]
    )
    return F, Q


@lru_cache(maxsize=16)
def _motion_factors(delta_t: float) -> tuple[np.ndarray, np.ndarray]:
    F, Q = transition_matrices(delta_t)
    L = np.linalg.cholesky(Q)
    F.flags.writeable = False
    L.flags.writeable = False
    return F, L


def motion_step(x: np.ndarray, cfg: TaskConfig, rng: np.random.Generator) -> np.ndarray:
    F, L = _motion_factors(cfg.delta_t)
    mean = F @ np.asarray(x, dtype=float)
    noise = math.sqrt(cfg.sigma_q2) * (L @ rng.standard_normal(4))
    return mean + noise


def radar_project(x: np.ndarray) -> np.ndarray:
    px, py, vx, vy = np.asarray(x, dtype=float)
    r = math.hypot(px, py)
    if r == 0.0:
        raise ValueError("radar projection undefined for a state at the sensor origin")
    return np.array([r, (px * vx + py * vy) / r, math.atan2(py, px)])


def noise_covariance(z_clean: np.ndarray, cfg: TaskConfig) -> np.ndarray:
    r, _, theta = z_clean
    f_r = (cfg.sigma_r_max2 - cfg.sigma_r_min2) / _R_SPAN**2 * (r - _R_NEAR) ** 2 + cfg.sigma_r_min2
    f_theta = (cfg.sigma_theta_max2 - cfg.sigma_theta_min2) / _THETA_EDGE**2 * theta**2 + cfg.sigma_theta_min2
    return np.diag([f_r, cfg.sigma_rdot2, f_theta])


def in_fov(z: np.ndarray, cfg: TaskConfig) -> bool:
    r, rdot, theta = (float(v) for v in z)
    return (
        cfg.fov_r[0] <= r <= cfg.fov_r[1]
        and cfg.fov_rdot[0] <= rdot <= cfg.fov_rdot[1]
        and cfg.fov_theta[0] <= theta <= cfg.fov_theta[1]
    )


def sample_clutter(cfg: TaskConfig, t: int, rng: np.random.Generator) -> list[Measurement]:
    count = rng.poisson(cfg.lambda_c * cfg.fov_volume)
    box = cfg.fov_box
    points = rng.uniform(box[:, 0], box[:, 1], size=(count, 3))
    return [Measurement(z=p, t=t, b=CLUTTER) for p in points]


def sample_births(cfg: TaskConfig, t: int, rng: np.random.Generator) -> list[np.ndarray]:
    rate = 0.0
    if cfg.birth_schedule is BirthSchedule.every_step or t == 1:
        rate += cfg.birth_rate
    if t == 1:
        rate += cfg.initial_birth_rate
    count = rng.poisson(rate)
    if count == 0:
        return []
    draws = rng.multivariate_normal(np.asarray(cfg.birth_mean), np.asarray(cfg.birth_cov), size=count)
    return list(draws)


def simulate_scene(cfg: TaskConfig, rng: np.random.Generator, config_id: str = "custom") -> Scene:
    truths: list[GroundTruthTrajectory] = []
    measurements: list[Measurement] = []
    alive: dict[int, list[np.ndarray]] = {}
    starts: dict[int, int] = {}
    next_id = 0

    def detect(obj_id: int, x: np.ndarray, t: int) -> None:
        if rng.uniform() < cfg.p_d:
            clean = radar_project(x)
            cov = noise_covariance(clean, cfg)
            z = clean + np.sqrt(np.diag(cov)) * rng.standard_normal(3)
            measurements.append(Measurement(z=z, t=t, b=obj_id))

    for t in range(1, cfg.T + 1):
        if t > 1:
            for obj_id in list(alive):
                x_next = motion_step(alive[obj_id][-1], cfg, rng)
                survived = rng.uniform() < cfg.p_s
                if survived and _projects_inside(x_next, cfg):
                    alive[obj_id].append(x_next)
                else:
                    truths.append(GroundTruthTrajectory(obj_id, starts.pop(obj_id), np.array(alive.pop(obj_id))))
        for x in sample_births(cfg, t, rng):
            if not _projects_inside(x, cfg):
                continue
            alive[next_id] = [x]
            starts[next_id] = t
            next_id += 1
        for obj_id in sorted(alive):
            detect(obj_id, alive[obj_id][-1], t)
        measurements.extend(sample_clutter(cfg, t, rng))

    for obj_id in list(alive):
        truths.append(GroundTruthTrajectory(obj_id, starts[obj_id], np.array(alive[obj_id])))
    truths.sort(key=lambda tr: tr.object_id)
    return Scene(config=cfg, truths=truths, measurements=measurements, config_id=config_id)


def _projects_inside(x: np.ndarray, cfg: TaskConfig) -> bool:
    if x[0] == 0.0 and x[1] == 0.0:
        return False
    return in_fov(radar_project(x), cfg)


def scene_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for scene `index` of a dataset drawn with `seed`."""
    return np.random.default_rng([seed, index])


def simulate_scenes(cfg: TaskConfig, seed: int, count: int, config_id: str = "custom") -> Iterator[Scene]:
    for i in range(count):
        yield simulate_scene(cfg, scene_rng(seed, i), config_id=config_id)


# -- serialization -----------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "config_id": scene.config_id,
        "truths": [
            {"id": int(tr.object_id), "t_s": int(tr.t_s), "states": [[float(v) for v in s] for s in tr.states]}
            for tr in scene.truths
        ],
        "measurements": [
            {"z": [float(v) for v in m.z], "t": int(m.t), "b": int(m.b)} for m in scene.measurements
        ],
    }


def scene_from_dict(d: dict, cfg: Optional[TaskConfig] = None) -> Scene:
    config_id = d.get("config_id", "custom")
    if cfg is None:
        cfg = TASKS.get(config_id)
        if cfg is None:
            raise ValueError(f"scene config {config_id!r} is not a preset; pass the TaskConfig explicitly")
    truths = [
        GroundTruthTrajectory(int(tr["id"]), int(tr["t_s"]), np.asarray(tr["states"], dtype=float).reshape(-1, 4))
        for tr in d["truths"]
    ]
    meas = [Measurement(np.asarray(m["z"], dtype=float), int(m["t"]), int(m["b"])) for m in d["measurements"]]
    return Scene(config=cfg, truths=truths, measurements=meas, config_id=config_id)


def dump_scene(scene: Scene) -> str:
    # json emits shortest round-trip float reprs, so reloading is exact
    return json.dumps(scene_to_dict(scene), separators=(",", ":"))


def write_scenes(path, scenes: Iterable[Scene], header: str) -> int:
    n = 0
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for scene in scenes:
            fh.write(dump_scene(scene) + "\n")
            n += 1
    return n


def read_scenes(path, cfg: Optional[TaskConfig] = None) -> list[Scene]:
    scenes = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            scenes.append(scene_from_dict(json.loads(line), cfg))
    return scenes
